"""Structural well-formedness checks for LaTeX text.

The grammar is deliberately small: ``\\begin``/``\\end`` names nest LIFO,
braces balance within an environment, and ``$``/``$$`` math toggles close
before the enclosing environment or paragraph ends.  Defects are data,
each tagged with the byte offset where the problem is visible.
"""
import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, field

from .errors import EmptyInput

BEGIN_ENV, END_ENV = "begin_env", "end_env"
OPEN_BRACE, CLOSE_BRACE = "open_brace", "close_brace"
MATH_DOLLAR, DISPLAY_DOLLAR = "math_dollar", "display_dollar"
COMMAND, TEXT = "command", "text"

UNCLOSED_ENV = "UnclosedEnvironment"
UNOPENED_END = "UnopenedEnd"
MISMATCHED_ENV = "MismatchedEnvironment"
BRACE_IMBALANCE = "BraceImbalance"
MATH_PARITY = "MathParity"
DEFECT_CODES = (UNCLOSED_ENV, UNOPENED_END, MISMATCHED_ENV, BRACE_IMBALANCE, MATH_PARITY)

VERBATIM_ENVS = frozenset({"verbatim", "verbatim*", "lstlisting", "minted", "comment",
                           "Verbatim", "alltt"})
_ESCAPABLE = set("{}$%&#_\\ ~^")
_ENV = re.compile(r"\\(begin|end)\s*\{([^{}\\\s]+)\}")
_CMD = re.compile(r"\\([A-Za-z@]+\*?|.)", re.S)
_PARBREAK = re.compile(r"\n[ \t]*\n")


@dataclass(frozen=True)
class TokenEvent:
    kind: str
    byte_offset: int
    line: int
    name: str = None
    text: str = ""
    byte_length: int = 0


@dataclass(frozen=True)
class Defect:
    code: str
    detail: str
    byte_offset: int


@dataclass
class ValidationReport:
    defects: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not self.defects

    def counts(self):
        return Counter(d.code for d in self.defects)

    def to_dict(self):
        return {"defects": [asdict(d) for d in self.defects], "stats": dict(self.stats)}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


# ---------------------------------------------------------------------------
# lexer
# ---------------------------------------------------------------------------

class _Offsets:
    """Character index -> (byte offset, line number), O(1) after one pass."""

    def __init__(self, text):
        self.bytes = [0] * (len(text) + 1)
        self.lines = [1] * (len(text) + 1)
        b, ln = 0, 1
        for i, c in enumerate(text):
            self.bytes[i], self.lines[i] = b, ln
            b += len(c.encode("utf-8"))
            ln += c == "\n"
        self.bytes[len(text)], self.lines[len(text)] = b, ln

    def __call__(self, i):
        return self.bytes[i], self.lines[i]


def lex(text):
    """Single pass over ``text`` producing structural events and text runs.

    Escaped characters, comments, ``\\verb`` arguments and the bodies of
    verbatim environments only ever appear inside text runs.
    """
    pos = _Offsets(text)
    events = []
    run_start = None
    i, n = 0, len(text)

    def emit(kind, start, end, name=None):
        flush(start)
        b, ln = pos(start)
        events.append(TokenEvent(kind, b, ln, name, text[start:end], pos(end)[0] - b))

    def flush(upto):
        nonlocal run_start
        if run_start is not None and upto > run_start:
            b, ln = pos(run_start)
            events.append(TokenEvent(TEXT, b, ln, text=text[run_start:upto],
                                     byte_length=pos(upto)[0] - b))
        run_start = None

    def text_from(start):
        nonlocal run_start
        if run_start is None:
            run_start = start

    while i < n:
        c = text[i]
        if c == "\\":
            env = _ENV.match(text, i)
            if env:
                kind = BEGIN_ENV if env.group(1) == "begin" else END_ENV
                name = env.group(2)
                emit(kind, i, env.end(), name)
                i = env.end()
                if kind == BEGIN_ENV and name in VERBATIM_ENVS:
                    close = text.find("\\end{%s}" % name, i)
                    stop = n if close < 0 else close
                    text_from(i)
                    i = stop
                continue
            nxt = text[i + 1] if i + 1 < n else ""
            if nxt in _ESCAPABLE or nxt == "":
                text_from(i)
                i += 2
                continue
            cmd = _CMD.match(text, i)
            name = cmd.group(1)
            emit(COMMAND, i, cmd.end(), name)
            i = cmd.end()
            if name in ("verb", "verb*") and i < n:
                delim = text[i]
                close = text.find(delim, i + 1)
                stop = n if close < 0 else close + 1
                text_from(i)
                i = stop
            continue
        if c == "%":
            eol = text.find("\n", i)
            text_from(i)
            i = n if eol < 0 else eol
            continue
        if c == "{":
            emit(OPEN_BRACE, i, i + 1)
        elif c == "}":
            emit(CLOSE_BRACE, i, i + 1)
        elif c == "$":
            if text.startswith("$$", i):
                emit(DISPLAY_DOLLAR, i, i + 2)
                i += 2
                continue
            emit(MATH_DOLLAR, i, i + 1)
        else:
            text_from(i)
        i += 1
    flush(n)
    return events


# ---------------------------------------------------------------------------
# structure check
# ---------------------------------------------------------------------------

def _next_env_event(events, k, skip):
    for j in range(k + 1, len(events)):
        if events[j].kind in (BEGIN_ENV, END_ENV) and j not in skip:
            return j
    return None


def _run(events, allow_cross=True):
    """Pushdown pass.  Returns (defects, stats).

    A crossed pair ``\\end{a}\\end{b}`` closing ``\\begin{a}\\begin{b}`` can be
    read as one mismatch or as an unclosed ``b`` plus a stray ``\\end{b}``;
    both readings are simulated and the one with fewer defects wins.
    """
    defects = []
    envs = []                # (name, offset, brace depth at \begin)
    braces = []              # offsets of open braces
    math = None              # (kind, offset, env_depth) of the open math toggle
    skip = set()
    stats = Counter()
    max_depth = 0

    def close_scope(index):
        """Report braces and math left open inside ``envs[index]``."""
        nonlocal math
        while len(braces) > envs[index][2]:
            defects.append(Defect(BRACE_IMBALANCE, "unclosed '{' at end of environment",
                                  braces.pop()))
        if math is not None and math[2] > index:
            defects.append(Defect(MATH_PARITY, f"unclosed {math[0]} math", math[1]))
            math = None

    for k, ev in enumerate(events):
        if k in skip:
            continue
        if ev.kind == BEGIN_ENV:
            stats["env_opens"] += 1
            envs.append((ev.name, ev.byte_offset, len(braces)))
        elif ev.kind == END_ENV:
            stats["env_closes"] += 1
            names = [e[0] for e in envs]
            if envs and envs[-1][0] == ev.name:
                close_scope(len(envs) - 1)
                envs.pop()
            elif ev.name in names:
                crossed = False
                j = _next_env_event(events, k, skip)
                if (allow_cross and len(envs) >= 2 and envs[-2][0] == ev.name
                        and j is not None and events[j].kind == END_ENV
                        and events[j].name == envs[-1][0]):
                    crossed = _prefer_cross(events, k, j)
                if crossed:
                    defects.append(Defect(
                        MISMATCHED_ENV,
                        f"\\end{{{ev.name}}} closes \\begin{{{envs[-1][0]}}}", ev.byte_offset))
                    close_scope(len(envs) - 2)
                    envs.pop()
                    envs.pop()
                    skip.add(j)
                else:
                    while envs[-1][0] != ev.name:
                        name, off, depth = envs.pop()
                        defects.append(Defect(UNCLOSED_ENV, f"\\begin{{{name}}} never ended", off))
                    close_scope(len(envs) - 1)
                    envs.pop()
            else:
                defects.append(Defect(UNOPENED_END, f"\\end{{{ev.name}}} without \\begin",
                                      ev.byte_offset))
        elif ev.kind == OPEN_BRACE:
            braces.append(ev.byte_offset)
            max_depth = max(max_depth, len(braces))
        elif ev.kind == CLOSE_BRACE:
            floor = envs[-1][2] if envs else 0
            if len(braces) > floor:
                braces.pop()
            elif braces:
                # "{\begin{a}}": the brace closes over environments that never ended
                while envs and envs[-1][2] >= len(braces):
                    close_scope(len(envs) - 1)
                    name, off, _ = envs.pop()
                    defects.append(Defect(UNCLOSED_ENV, f"\\begin{{{name}}} never ended", off))
                braces.pop()
            else:
                defects.append(Defect(BRACE_IMBALANCE, "unmatched '}'", ev.byte_offset))
        elif ev.kind in (MATH_DOLLAR, DISPLAY_DOLLAR):
            kind = "inline" if ev.kind == MATH_DOLLAR else "display"
            if math is None:
                math = (kind, ev.byte_offset, len(envs))
            elif math[0] == kind:
                math = None
            elif math[0] == "inline":
                # inline math ends at a single '$'; the spare '$' then opens
                # display math if another '$' follows at once ("$a$$$b$$"),
                # otherwise inline math ("$a$$b$")
                nxt = events[k + 1] if k + 1 < len(events) else None
                if (nxt is not None and nxt.kind == MATH_DOLLAR
                        and nxt.byte_offset == ev.byte_offset + 2):
                    math = ("display", ev.byte_offset + 1, len(envs))
                    skip.add(k + 1)
                else:
                    math = ("inline", ev.byte_offset + 1, len(envs))
            else:
                defects.append(Defect(MATH_PARITY, "inline '$' inside display math",
                                      ev.byte_offset))
        elif ev.kind == TEXT and math is not None and _PARBREAK.search(ev.text):
            defects.append(Defect(MATH_PARITY, f"unclosed {math[0]} math before paragraph break",
                                  math[1]))
            math = None

    if math is not None:
        defects.append(Defect(MATH_PARITY, f"unclosed {math[0]} math at end of input", math[1]))
    while braces:
        defects.append(Defect(BRACE_IMBALANCE, "unclosed '{' at end of input", braces.pop()))
    for name, off, depth in envs:
        defects.append(Defect(UNCLOSED_ENV, f"\\begin{{{name}}} never ended", off))
    stats["brace_depth_max"] = max_depth
    return defects, stats


def _prefer_cross(events, k, j):
    """Decide the crossed reading by comparing defect totals of both readings."""
    as_cross, _ = _run_from_prefix(events, k, j, cross=True)
    as_unclosed, _ = _run_from_prefix(events, k, j, cross=False)
    return as_cross < as_unclosed


def _run_from_prefix(events, k, j, cross):
    if cross:
        # model the crossed reading by swapping the two end events
        swapped = list(events)
        swapped[k], swapped[j] = events[j], events[k]
        defects, _ = _run(swapped, allow_cross=False)
        return len(defects) + 1, None
    defects, _ = _run(events, allow_cross=False)
    return len(defects), None


def check_structure(events, chars_scanned=None):
    defects, stats = _run(list(events))
    defects.sort(key=lambda d: d.byte_offset)
    stats = dict(stats)
    stats.setdefault("env_opens", 0)
    stats.setdefault("env_closes", 0)
    if chars_scanned is not None:
        stats["chars_scanned"] = chars_scanned
    return ValidationReport(defects, stats)


# ---------------------------------------------------------------------------
# surface heuristics and scoring
# ---------------------------------------------------------------------------

_SENT_SPLIT = re.compile(r"(?<=[.!?])\s+|\n[ \t]*\n")
_WORD = re.compile(r"[A-Za-z]+")


def plain_text(events):
    """Prose content: text runs outside math, with comments and escapes dropped."""
    parts, in_math = [], False
    for ev in events:
        if ev.kind in (MATH_DOLLAR, DISPLAY_DOLLAR):
            in_math = not in_math
            parts.append(" ")
        elif ev.kind == TEXT and not in_math:
            parts.append(re.sub(r"(?<!\\)%.*", "", ev.text))
        elif ev.kind in (BEGIN_ENV, END_ENV):
            parts.append("\n\n")
    return "".join(parts)


def sentence_stats(events):
    """Count prose sentences that open with a capital and end in punctuation."""
    total = good = 0
    for chunk in _SENT_SPLIT.split(plain_text(events)):
        chunk = " ".join(chunk.split())
        if len(_WORD.findall(chunk)) < 3:
            continue
        total += 1
        if chunk[0].isupper() and chunk[-1] in ".!?:;":
            good += 1
    return total, good


def validate_text(text):
    events = lex(text)
    report = check_structure(events, chars_scanned=len(text))
    total, good = sentence_stats(events)
    report.stats["bytes_scanned"] = len(text.encode("utf-8"))
    report.stats["sentences"] = total
    report.stats["well_formed_sentences"] = good
    return report


def score(reports):
    """Aggregate per-sample reports into corpus-level numbers."""
    reports = list(reports)
    if not reports:
        raise EmptyInput("score() needs at least one report")
    n_defects = sum(len(r.defects) for r in reports)
    kb = sum(r.stats.get("bytes_scanned", r.stats.get("chars_scanned", 0)) for r in reports) / 1000.0
    sentences = sum(r.stats.get("sentences", 0) for r in reports)
    good = sum(r.stats.get("well_formed_sentences", 0) for r in reports)
    hist = Counter()
    for r in reports:
        hist.update(r.counts())
    return {
        "samples": len(reports),
        "defects": n_defects,
        "defects_per_kb": n_defects / kb if kb else 0.0,
        "clean_fraction": sum(r.ok for r in reports) / len(reports),
        "histogram": {code: hist.get(code, 0) for code in DEFECT_CODES},
        "well_formed_sentence_fraction": good / sentences if sentences else None,
    }
