import json

import pytest
from hypothesis import assume, given, settings, strategies as st

from charlm.errors import EmptyInput
from charlm.validator import (
    BEGIN_ENV, BRACE_IMBALANCE, CLOSE_BRACE, COMMAND, DEFECT_CODES, DISPLAY_DOLLAR, END_ENV,
    MATH_DOLLAR, MATH_PARITY, MISMATCHED_ENV, OPEN_BRACE, TEXT, UNCLOSED_ENV, UNOPENED_END,
    ValidationReport, Defect, check_structure, lex, plain_text, score, validate_text,
)

# -- hand-lexed fixture --------------------------------------------------------

FIXTURE = "\n".join([
    r"\documentclass{article}",
    r"\begin{document}",
    r"% a comment with { and $ inside",
    r"Costs \$5 and 100\% of \{x\}.",
    r"\section{Intro}",
    r"Inline $a+b$ math.",
    r"$$",
    r"x^{2}",
    r"$$",
    r"\begin{itemize}",
    r"\item one",
    r"\end{itemize}",
    r"\verb|{$|",
    r"\begin{verbatim}",
    r"\end{table} {$",
    r"\end{verbatim}",
    r"Line break \\ here.",
    r"\textbf{bold}",
    "Done, caf\u00e9.",
    r"\end{document}",
]) + "\n"

# (kind, line, name, text) for every structural event, written out by hand
ORACLE = [
    (COMMAND, 1, "documentclass", r"\documentclass"),
    (OPEN_BRACE, 1, None, "{"),
    (CLOSE_BRACE, 1, None, "}"),
    (BEGIN_ENV, 2, "document", r"\begin{document}"),
    (COMMAND, 5, "section", r"\section"),
    (OPEN_BRACE, 5, None, "{"),
    (CLOSE_BRACE, 5, None, "}"),
    (MATH_DOLLAR, 6, None, "$"),
    (MATH_DOLLAR, 6, None, "$"),
    (DISPLAY_DOLLAR, 7, None, "$$"),
    (OPEN_BRACE, 8, None, "{"),
    (CLOSE_BRACE, 8, None, "}"),
    (DISPLAY_DOLLAR, 9, None, "$$"),
    (BEGIN_ENV, 10, "itemize", r"\begin{itemize}"),
    (COMMAND, 11, "item", r"\item"),
    (END_ENV, 12, "itemize", r"\end{itemize}"),
    (COMMAND, 13, "verb", r"\verb"),
    (BEGIN_ENV, 14, "verbatim", r"\begin{verbatim}"),
    (END_ENV, 16, "verbatim", r"\end{verbatim}"),
    (COMMAND, 18, "textbf", r"\textbf"),
    (OPEN_BRACE, 18, None, "{"),
    (CLOSE_BRACE, 18, None, "}"),
    (END_ENV, 20, "document", r"\end{document}"),
]


def test_fixture_matches_hand_oracle():
    events = lex(FIXTURE)
    got = [(e.kind, e.line, e.name, e.text) for e in events if e.kind != TEXT]
    assert got == ORACLE


def test_fixture_byte_offsets_point_at_event_text():
    raw = FIXTURE.encode("utf-8")
    for e in lex(FIXTURE):
        assert raw[e.byte_offset:e.byte_offset + e.byte_length] == e.text.encode("utf-8")
    # the last event sits after the two-byte e-acute
    last = [e for e in lex(FIXTURE) if e.kind == END_ENV][-1]
    assert last.byte_offset == FIXTURE.index(r"\end{document}") + 1


def test_fixture_is_clean():
    report = validate_text(FIXTURE)
    assert report.ok, report.defects
    assert report.stats["env_opens"] == report.stats["env_closes"] == 3
    assert report.stats["chars_scanned"] == len(FIXTURE)
    assert report.stats["bytes_scanned"] == len(FIXTURE.encode("utf-8"))


# -- lexer examples ------------------------------------------------------------

def test_begin_table_single_event():
    events = lex("\\begin{table}")
    assert [(e.kind, e.name) for e in events] == [(BEGIN_ENV, "table")]


@pytest.mark.parametrize("text", ["\\$5", "\\{", "\\}", "\\%", "\\\\", "50\\% of \\$3"])
def test_escapes_are_text_only(text):
    assert all(e.kind == TEXT for e in lex(text))


def test_comment_hides_structure():
    assert [e.kind for e in lex("a % \\begin{x} { $\nb")] == [TEXT]


def test_verbatim_body_is_opaque():
    events = lex("\\begin{verbatim}\\end{a} { $ }}\\end{verbatim}")
    assert [e.kind for e in events] == [BEGIN_ENV, TEXT, END_ENV]


# -- lexer properties ------------------------------------------------------------

latexish = st.text(alphabet="ab \n{}$\\%|", max_size=60)


@given(latexish)
def test_every_byte_covered_once(text):
    events = lex(text)
    offset = 0
    for e in events:
        assert e.byte_offset == offset and e.byte_length > 0
        offset += e.byte_length
    assert offset == len(text.encode("utf-8"))


@given(latexish)
def test_offsets_strictly_increasing(text):
    offs = [e.byte_offset for e in lex(text)]
    assert offs == sorted(set(offs))


# boundary pieces: each ends where no token can continue into the next piece
pieces = st.sampled_from(["\\begin{a}", "\\end{a}", "{", "}", "$", "x y ", "\\cmd ",
                          "\\{", "% note\n", "\n"])


def _shift(events, by_bytes, by_lines):
    return [(e.kind, e.byte_offset + by_bytes, e.line + by_lines, e.name, e.text)
            for e in events]


def _merge_text(rows):
    out = []
    for row in rows:
        if out and row[0] == TEXT and out[-1][0] == TEXT:
            prev = out.pop()
            row = (TEXT, prev[1], prev[2], None, prev[4] + row[4])
        out.append(row)
    return out


@given(st.lists(pieces, max_size=8), st.lists(pieces, max_size=8))
def test_lex_of_concatenation(a_parts, b_parts):
    a, b = "".join(a_parts), "".join(b_parts)
    # "$" + "$" fuses into one display token, so the seam is not a boundary
    assume(not (a.endswith("$") and b.startswith("$")))
    whole = _shift(lex(a + b), 0, 0)
    left = _shift(lex(a), 0, 0)
    right = _shift(lex(b), len(a.encode("utf-8")), a.count("\n"))
    # adjacent text runs on the seam fuse into one run
    assert whole == _merge_text(left + right)


# -- checker examples ------------------------------------------------------------

def codes(text):
    return [d.code for d in validate_text(text).defects]


def test_simple_env_clean():
    assert codes("\\begin{a}x\\end{a}") == []


def test_unclosed_table():
    report = validate_text("\\begin{table} x")
    assert [(d.code, d.byte_offset) for d in report.defects] == [(UNCLOSED_ENV, 0)]
    assert "table" in report.defects[0].detail


def test_crossed_pair_mismatch_at_first_end():
    text = "\\begin{a}\\begin{b}\\end{a}\\end{b}"
    report = validate_text(text)
    assert [(d.code, d.byte_offset) for d in report.defects] == [
        (MISMATCHED_ENV, text.index("\\end{a}"))]


@pytest.mark.parametrize("text,expected", [
    ("\\end{a}", [UNOPENED_END]),
    ("{x", [BRACE_IMBALANCE]),
    ("x}", [BRACE_IMBALANCE]),
    ("\\begin{a}{\\end{a}}", [BRACE_IMBALANCE, BRACE_IMBALANCE]),
    ("$x\n\ny$", [MATH_PARITY, MATH_PARITY]),
    ("$a$$b$", []),
    ("$$ a $ b $$", [MATH_PARITY]),
    ("\\begin{a}$x\\end{a}", [MATH_PARITY]),
    ("\\begin{a}\\begin{b}\\end{a}", [UNCLOSED_ENV]),
])
def test_defect_codes(text, expected):
    assert codes(text) == expected


def test_defects_sorted_by_offset():
    report = validate_text("}\\end{q} {\\begin{z}")
    offs = [d.byte_offset for d in report.defects]
    assert offs == sorted(offs) and len(offs) == 4


def test_report_json_schema():
    report = validate_text("\\begin{a}")
    data = json.loads(report.to_json())
    assert data["defects"] == [{"code": UNCLOSED_ENV, "detail": "\\begin{a} never ended",
                                "byte_offset": 0}]
    assert data["stats"]["env_opens"] == 1


def test_plain_text_skips_math_and_comments():
    assert "secret" not in plain_text(lex("Hi $secret$ there % secret\n"))


def test_sentence_stats():
    report = validate_text("This is fine. this is not fine. Also good here!\n")
    assert (report.stats["sentences"], report.stats["well_formed_sentences"]) == (3, 2)


# -- reference grammar -----------------------------------------------------------

ENV_NAMES = ["table", "figure", "itemize", "equation", "a", "b"]
words = st.text(alphabet="abc xyz\n", min_size=1, max_size=6).map(
    lambda w: w.replace("\n\n", "\n"))
math_words = st.text(alphabet="abcxyz+^_ ", min_size=1, max_size=5)


def math_body():
    return st.recursive(math_words, lambda inner: st.builds(
        lambda xs: "".join(xs), st.lists(st.one_of(inner, inner.map("{{{}}}".format)),
                                         min_size=1, max_size=3)), max_leaves=6)


def documents(spaced=False):
    pad = " {} " if spaced else "{}"
    leaf = st.one_of(
        words,
        st.sampled_from(["\\item ", "\\cmd ", "\\\\ ", "\\$ ", "\\{ ", "\\} "]),
        math_body().map("${}$".format).map(pad.format),
        math_body().map("$${}$$".format).map(pad.format),
    )

    def extend(inner):
        body = st.lists(inner, max_size=4).map("".join)
        return st.one_of(
            body.map("{{{}}}".format),
            st.tuples(st.sampled_from(ENV_NAMES), body).map(
                lambda t: "\\begin{%s}%s\\end{%s}" % (t[0], t[1], t[0])),
        )

    return st.lists(st.recursive(leaf, extend, max_leaves=20), max_size=6).map(
        lambda xs: " ".join(xs))


@settings(max_examples=300)
@given(documents())
def test_grammar_soundness(doc):
    assert validate_text(doc).defects == []


def _drop_event(doc, kind):
    """Yield every single-deletion mutant removing one event of ``kind``."""
    for e in lex(doc):
        if e.kind == kind:
            raw = doc.encode("utf-8")
            yield (raw[:e.byte_offset] + raw[e.byte_offset + e.byte_length:]).decode("utf-8")


MUTATIONS = [(END_ENV, UNCLOSED_ENV), (CLOSE_BRACE, BRACE_IMBALANCE), (MATH_DOLLAR, MATH_PARITY)]


@settings(max_examples=150)
@given(documents())
def test_single_mutation_completeness(doc):
    for kind, code in MUTATIONS:
        for mutant in _drop_event(doc, kind):
            found = codes(mutant)
            assert code in found, (mutant, found)


# a '$' dropped right next to '$$' is ambiguous even to TeX, so the exact
# count is checked on documents whose math groups are set off by spaces
@settings(max_examples=150)
@given(documents(spaced=True))
def test_single_mutation_exactly_one_defect(doc):
    for kind, code in MUTATIONS:
        for mutant in _drop_event(doc, kind):
            assert codes(mutant) == [code], mutant


# -- scoring --------------------------------------------------------------------

def _report(n_defects, n_bytes):
    return ValidationReport([Defect(UNCLOSED_ENV, "x", 0)] * n_defects,
                            {"bytes_scanned": n_bytes})


def test_score_all_clean():
    s = score([_report(0, 500), _report(0, 1500)])
    assert s["defects_per_kb"] == 0.0 and s["clean_fraction"] == 1.0
    assert set(s["histogram"]) == set(DEFECT_CODES)


def test_score_one_defect_in_two_kb():
    s = score([_report(1, 2000)])
    assert s["defects_per_kb"] == 0.5 and s["clean_fraction"] == 0.0
    assert s["histogram"][UNCLOSED_ENV] == 1


def test_score_empty():
    with pytest.raises(EmptyInput):
        score([])


CLEAN_FIXTURES = [
    "\\begin{table}\\begin{tabular}{cc} a & b \\\\ \\end{tabular}\\end{table}\n",
    "\\section{Intro} Text with $x^{2}$ and more.\n",
    "\\begin{itemize}\n\\item one\n\\item two\n\\end{itemize}\n",
    "$$ \\frac{a}{b} $$\n",
    "\\begin{figure}\\centering\\caption{A}\\end{figure}\n",
    "\\begin{equation} e = mc^{2} \\end{equation}\n",
    "Prices \\$5 and 50\\% off \\{set\\}.\n",
    "\\begin{a}\\begin{b}{x}\\end{b}\\end{a}\n",
    "\\textbf{bold \\emph{nested}} $a$$b$\n",
    "\\begin{abstract}y\\end{abstract}\\begin{verbatim} \\end{x} { \\end{verbatim}\n",
]


def test_clean_fixtures_and_mutation_oracle():
    assert all(validate_text(t).ok for t in CLEAN_FIXTURES)
    mutated = []
    for text in CLEAN_FIXTURES:
        if "\\end{" not in text:
            text = "\\begin{wrap}" + text + "\\end{wrap}"
        first_end = text.index("\\end{")
        stop = text.index("}", first_end) + 1
        mutated.append(validate_text(text[:first_end] + text[stop:]))
    assert score(mutated)["histogram"] == {**dict.fromkeys(DEFECT_CODES, 0), UNCLOSED_ENV: 10}
