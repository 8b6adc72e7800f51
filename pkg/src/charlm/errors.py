"""Exception hierarchy shared across the toolkit."""


class CharLMError(Exception):
    """Base class for every error raised by charlm."""


class ShapeMismatch(CharLMError, ValueError):
    pass


class IndexOutOfRange(CharLMError, IndexError):
    pass


class NotScalar(CharLMError, ValueError):
    pass


class NonFiniteError(CharLMError, FloatingPointError):
    """A forward value became NaN or infinite."""


class NonFiniteGradient(CharLMError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class EmptyCorpus(CharLMError, ValueError):
    pass


class UnknownChar(CharLMError, ValueError):
    def __init__(self, char, offset):
        super().__init__(f"character {char!r} at offset {offset} is not in the vocabulary")
        self.char = char
        self.offset = offset


class CorpusTooSmall(CharLMError, ValueError):
    pass


class MissingInclude(CharLMError, FileNotFoundError):
    def __init__(self, path):
        super().__init__(f"cannot resolve included file {path!r}")
        self.path = path


class CyclicInclude(CharLMError, RecursionError):
    def __init__(self, chain):
        super().__init__("cyclic include: " + " -> ".join(chain))
        self.chain = list(chain)


class LayerCountMismatch(CharLMError, ValueError):
    pass


class InvalidConfig(CharLMError, ValueError):
    pass


class UnknownPreset(InvalidConfig):
    pass


class NegativeInput(CharLMError, ValueError):
    pass


class EmptySplit(CharLMError, ValueError):
    pass


class NonPositiveTemperature(CharLMError, ValueError):
    pass


class InvalidDistribution(CharLMError, ValueError):
    pass


class CheckpointError(CharLMError, ValueError):
    """Corrupt or incompatible checkpoint file."""


class VocabularyMismatch(CheckpointError):
    pass


class EmptyInput(CharLMError, ValueError):
    pass
