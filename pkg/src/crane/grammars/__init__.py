"""Bundled grammar sources."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

from ..grammar import GrammarSpec, parse_grammar_text

__all__ = ["grammar_text", "load_grammar", "gsm_answer_grammar"]

_GSM_DELIMITED_START = 'start: space? "<" "<" space? expr space? ">" ">" space?'


def grammar_text(name: str) -> str:
    """Source text of a bundled grammar (``"gsm"`` or ``"prover9"``)."""
    return resources.files(__name__).joinpath(f"{name}.lark").read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def load_grammar(name: str) -> GrammarSpec:
    """Load a bundled grammar by name, or a grammar file by path."""
    if name in ("gsm", "prover9"):
        return parse_grammar_text(grammar_text(name))
    if name == "gsm_answer":
        return gsm_answer_grammar()
    with open(name, encoding="utf-8") as fh:
        return parse_grammar_text(fh.read())


@lru_cache(maxsize=None)
def gsm_answer_grammar() -> GrammarSpec:
    """The GSM expression grammar without its ``<<``/``>>`` wrapper.

    Delimiting it with ``augment_with_delimiters(g, "<<", ">>")`` gives the
    language of the bundled ``gsm`` grammar minus its optional outer spaces.
    """
    text = grammar_text("gsm")
    assert _GSM_DELIMITED_START in text
    return parse_grammar_text(text.replace(_GSM_DELIMITED_START, "start: space? expr space?"))
