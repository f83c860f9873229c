import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crane.regex_dfa import RegexError, compile_dfa, literal, parse_regex


def dfa(pattern: str):
    return compile_dfa(parse_regex(pattern))


@pytest.mark.parametrize(
    "pattern, yes, no",
    [
        ("[0-9]+(\\.[0-9]+)?", ["0", "12", "3.14"], ["", ".", "1.", "a"]),
        ("[a-zA-Z_][a-zA-Z0-9_]*", ["x", "tf", "end_hour", "_a1"], ["", "1a", "a-b"]),
        (":::.*\\n", [":::\n", "::: note\n"], [":::", "::\n", ":::a\nb\n"]),
        ("a{2,3}", ["aa", "aaa"], ["a", "aaaa"]),
        ("[^ab]", ["c", "\n"], ["a", "b", ""]),
        ("(?:ab|c)*", ["", "ab", "cabc"], ["a", "abb"]),
        ("\\d\\s\\w", ["1 a", "9\t_"], ["a a", "1a1"]),
    ],
)
def test_examples(pattern, yes, no):
    d = dfa(pattern)
    for s in yes:
        assert d.matches(s.encode()), s
    for s in no:
        assert not d.matches(s.encode()), s


def test_literal_matches_exactly_itself():
    d = compile_dfa(literal(b"<<"))
    assert d.matches(b"<<")
    assert not d.matches(b"<")
    assert not d.matches(b"<<<")


def test_non_ascii_literal_is_utf8_bytes():
    d = dfa("é+")
    assert d.matches("éé".encode())
    assert not d.matches("é".encode()[:1])


@pytest.mark.parametrize("pattern", ["(", "a)", "*a", "[a", "a{3,1}", "^a", "\\q", "[z-a]", "(?=a)"])
def test_errors(pattern):
    with pytest.raises(RegexError):
        parse_regex(pattern)


# small random regexes over {a, b, c}, compared with Python's re
_atoms = st.sampled_from(["a", "b", "c", "[ab]", "[^a]", "."])


def _regex(depth: int = 3):
    if depth == 0:
        return _atoms
    sub = _regex(depth - 1)
    return st.one_of(
        _atoms,
        st.tuples(sub, sub).map(lambda p: p[0] + p[1]),
        st.tuples(sub, sub).map(lambda p: f"(?:{p[0]}|{p[1]})"),
        sub.map(lambda s: f"(?:{s})*"),
        sub.map(lambda s: f"(?:{s})+"),
        sub.map(lambda s: f"(?:{s})?"),
    )


@settings(max_examples=200, deadline=None)
@given(_regex(), st.lists(st.text(alphabet="abcd", max_size=6), min_size=1, max_size=10))
def test_agrees_with_re(pattern, samples):
    d = dfa(pattern)
    ref = re.compile(pattern)
    for s in samples:
        assert d.matches(s.encode()) == (ref.fullmatch(s) is not None), (pattern, s)


def test_compile_is_cached_per_node():
    node = parse_regex("[0-9]+")
    assert compile_dfa(node) is compile_dfa(node)
