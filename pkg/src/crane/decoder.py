"""Generation loops: free, fully constrained, and delimiter-switched.

The switched loop generates freely until the opening delimiter appears in
the text produced since the last closed window. From there on every step is
masked against ``G' = s1 G s2`` until the window text ends with the closing
delimiter and is a complete member, which hands control back to free
generation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .grammar import GrammarSpec, augment_with_delimiters
from .lm import LanguageModel
from .recognizer import RecognizerState, advance, init
from .token_mask import MaskBits, NoViableToken, Vocabulary, apply_mask, compute_mask, masked_distribution

__all__ = [
    "Greedy",
    "Temperature",
    "DecodeConfig",
    "DecodeSession",
    "StepRecord",
    "Generation",
    "NoViableToken",
    "extract_constrained",
    "crane_step",
    "crane_generate",
    "constrained_generate",
    "unconstrained_generate",
    "parse_strategy",
    "write_step_log",
]

GSM_MAX_NEW_TOKENS = 600
FOLIO_MAX_NEW_TOKENS = 800


@dataclass(frozen=True)
class Greedy:
    pass


@dataclass(frozen=True)
class Temperature:
    t: float
    seed: int = 0

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("temperature must be positive")


def parse_strategy(text: str, seed: int = 0) -> Greedy | Temperature:
    """``"greedy"`` or ``"temp:T"``."""
    if text == "greedy":
        return Greedy()
    if text.startswith("temp:"):
        return Temperature(float(text[5:]), seed)
    raise ValueError(f"unknown strategy {text!r}; use 'greedy' or 'temp:T'")


@dataclass(frozen=True)
class DecodeConfig:
    s1: bytes = b"<<"
    s2: bytes = b">>"
    strategy: Greedy | Temperature = Greedy()
    max_new_tokens: int = GSM_MAX_NEW_TOKENS
    on_no_viable: Literal["abort", "close_window"] = "abort"

    def __post_init__(self):
        for name in ("s1", "s2"):
            value = getattr(self, name)
            if isinstance(value, str):
                object.__setattr__(self, name, value.encode("utf-8"))
        if not self.s1 or not self.s2:
            raise ValueError("delimiters must be non-empty")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be at least 1")
        if self.on_no_viable not in ("abort", "close_window"):
            raise ValueError(f"unknown on_no_viable policy {self.on_no_viable!r}")


@dataclass(frozen=True)
class StepRecord:
    index: int
    token_id: int
    bytes: bytes
    mode: str  # "free", "masked", or "forced" (window closed by policy)

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "token_id": self.token_id,
            "bytes": self.bytes.decode("utf-8", "backslashreplace"),
            "mode": self.mode,
        }


@dataclass
class DecodeSession:
    """Loop state. ``pointer`` is where the current free stretch starts."""

    tokens: list
    pointer: int
    grammar: GrammarSpec  # G', the delimited grammar
    is_constrained: bool = False
    constrained_text: bytes = b""
    recognizer: RecognizerState | None = None
    step_log: list = field(default_factory=list)
    prompt_len: int = 0
    finished: bool = False
    rng: np.random.Generator | None = None

    @classmethod
    def start(cls, prompt_tokens: Sequence[int], grammar_prime: GrammarSpec, cfg: DecodeConfig) -> "DecodeSession":
        tokens = list(prompt_tokens)
        seed = cfg.strategy.seed if isinstance(cfg.strategy, Temperature) else None
        return cls(
            tokens=tokens,
            pointer=len(tokens),
            grammar=grammar_prime,
            prompt_len=len(tokens),
            rng=np.random.default_rng(seed),
        )

    @property
    def generated(self) -> list:
        return self.tokens[self.prompt_len :]


@dataclass
class Generation:
    tokens: list  # generated ids, EOS included if emitted
    step_log: list
    text: bytes  # detokenized generation, EOS excluded
    stop_reason: str  # "eos" or "max_new_tokens"
    incomplete_window: bool = False

    def masked_spans(self) -> list[tuple[int, int]]:
        """Maximal runs of masked steps as half-open ``(start, end)`` indices."""
        spans = []
        start = None
        for rec in self.step_log:
            if rec.mode == "masked":
                if start is None:
                    start = rec.index
            elif start is not None:
                spans.append((start, rec.index))
                start = None
        if start is not None:
            spans.append((start, self.step_log[-1].index + 1))
        return spans


def write_step_log(records: Sequence[StepRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_json() for r in records], fh, indent=1)


def extract_constrained(curr_gen: bytes, s1: bytes) -> bytes:
    """Suffix of ``curr_gen`` from the first occurrence of ``s1``."""
    i = curr_gen.find(s1)
    if i < 0:
        raise ValueError(f"{s1!r} does not occur in the current generation")
    return curr_gen[i:]


def _select(scores: np.ndarray, mask: MaskBits | None, strategy, rng: np.random.Generator) -> int:
    scores = np.asarray(scores, dtype=float)
    if isinstance(strategy, Greedy):
        return int(np.argmax(scores if mask is None else apply_mask(scores, mask)))
    logits = scores / strategy.t
    if mask is None:
        mask = MaskBits(np.ones(len(scores), dtype=bool))
    p = masked_distribution(logits, mask)
    return int(rng.choice(len(p), p=p))


def _diagnostic(state: RecognizerState, text: bytes, scores: np.ndarray, vocab: Vocabulary) -> NoViableToken:
    top = [int(i) for i in np.argsort(-np.asarray(scores, dtype=float), kind="stable")[:10]]
    blocked = ", ".join(repr(vocab.tokens[i]) for i in top)
    msg = (
        f"no admissible token: recognizer {state.status.value} after {state.consumed} bytes; "
        f"window tail {text[-32:]!r}; top blocked tokens: {blocked}"
    )
    return NoViableToken(msg, text=text, blocked=top)


def _window_state(session: DecodeSession, window: bytes) -> RecognizerState:
    # the window only ever grows while it is open, so advance incrementally
    st = session.recognizer
    done = session.constrained_text
    if st is None or not window.startswith(done):
        st, done = init(session.grammar), b""
    return advance(st, window[len(done) :])


def crane_step(session: DecodeSession, lm: LanguageModel, cfg: DecodeConfig) -> tuple[DecodeSession, int]:
    """One iteration of the switched loop; mutates and returns ``session``."""
    if session.finished:
        raise RuntimeError("session already emitted EOS")
    vocab = lm.vocabulary()
    curr_gen = vocab.detokenize(session.tokens[session.pointer :])
    session.is_constrained = cfg.s1 in curr_gen
    scores = lm.scores(session.tokens)
    index = len(session.tokens) - session.prompt_len

    if not session.is_constrained:
        tok = _select(scores, None, cfg.strategy, session.rng)
        session.tokens.append(tok)
        session.step_log.append(StepRecord(index, tok, vocab.token_bytes(tok), "free"))
        session.finished = tok == vocab.eos_id
        return session, tok

    window = extract_constrained(curr_gen, cfg.s1)
    state = _window_state(session, window)
    session.constrained_text, session.recognizer = window, state
    mask = None if state.is_dead else compute_mask(state, vocab, strict=False)
    if mask is None or not mask.bits.any():
        if cfg.on_no_viable == "abort":
            raise _diagnostic(state, window, scores, vocab)
        return _force_close(session, vocab, cfg, index), session.tokens[-1]

    tok = _select(scores, mask, cfg.strategy, session.rng)
    piece = vocab.token_bytes(tok)
    session.tokens.append(tok)
    session.step_log.append(StepRecord(index, tok, piece, "masked"))
    session.finished = tok == vocab.eos_id
    window += piece
    state = advance(state, piece)
    session.constrained_text, session.recognizer = window, state
    if window.endswith(cfg.s2) and state.is_complete:
        _close(session)
    return session, tok


def _close(session: DecodeSession) -> None:
    session.pointer = len(session.tokens)
    session.is_constrained = False
    session.constrained_text = b""
    session.recognizer = None


def _force_close(session: DecodeSession, vocab: Vocabulary, cfg: DecodeConfig, index: int) -> DecodeSession:
    for tok in vocab.encode(cfg.s2):
        session.tokens.append(tok)
        session.step_log.append(StepRecord(index, tok, vocab.token_bytes(tok), "forced"))
        index += 1
    _close(session)
    return session


def _finish(session: DecodeSession, vocab: Vocabulary, incomplete: bool) -> Generation:
    gen = session.generated
    return Generation(
        tokens=gen,
        step_log=session.step_log,
        text=vocab.detokenize(gen),
        stop_reason="eos" if session.finished else "max_new_tokens",
        incomplete_window=incomplete,
    )


def crane_generate(
    prompt_tokens: Sequence[int], lm: LanguageModel, cfg: DecodeConfig, grammar: GrammarSpec
) -> Generation:
    """Switched generation with answer grammar ``grammar`` (G, undelimited)."""
    return crane_generate_prime(prompt_tokens, lm, cfg, augment_with_delimiters(grammar, cfg.s1, cfg.s2))


def crane_generate_prime(
    prompt_tokens: Sequence[int], lm: LanguageModel, cfg: DecodeConfig, grammar_prime: GrammarSpec
) -> Generation:
    """Switched generation with an already delimited grammar G'."""
    session = DecodeSession.start(prompt_tokens, grammar_prime, cfg)
    forced = False
    while not session.finished and len(session.generated) < cfg.max_new_tokens:
        crane_step(session, lm, cfg)
        forced = forced or (session.step_log and session.step_log[-1].mode == "forced")
    vocab = lm.vocabulary()
    open_window = cfg.s1 in vocab.detokenize(session.tokens[session.pointer :])
    return _finish(session, vocab, incomplete=open_window or forced)


def constrained_generate(
    prompt_tokens: Sequence[int], lm: LanguageModel, g: GrammarSpec, cfg: DecodeConfig
) -> Generation:
    """Every generated token masked against ``g`` from the first step.

    Raises NoViableToken if the mask ever empties.
    """
    vocab = lm.vocabulary()
    session = DecodeSession.start(prompt_tokens, g, cfg)
    state = init(g)
    while not session.finished and len(session.generated) < cfg.max_new_tokens:
        scores = lm.scores(session.tokens)
        if state.is_dead:
            raise _diagnostic(state, vocab.detokenize(session.generated), scores, vocab)
        mask = compute_mask(state, vocab, strict=False)
        if not mask.bits.any():
            raise _diagnostic(state, vocab.detokenize(session.generated), scores, vocab)
        tok = _select(scores, mask, cfg.strategy, session.rng)
        piece = vocab.token_bytes(tok)
        session.step_log.append(StepRecord(len(session.generated), tok, piece, "masked"))
        session.tokens.append(tok)
        session.finished = tok == vocab.eos_id
        state = advance(state, piece)
    return _finish(session, vocab, incomplete=not state.is_complete)


def unconstrained_generate(prompt_tokens: Sequence[int], lm: LanguageModel, cfg: DecodeConfig) -> Generation:
    vocab = lm.vocabulary()
    rng = np.random.default_rng(cfg.strategy.seed if isinstance(cfg.strategy, Temperature) else None)
    tokens = list(prompt_tokens)
    start = len(tokens)
    log = []
    finished = False
    while not finished and len(tokens) - start < cfg.max_new_tokens:
        tok = _select(lm.scores(tokens), None, cfg.strategy, rng)
        log.append(StepRecord(len(tokens) - start, tok, vocab.token_bytes(tok), "free"))
        tokens.append(tok)
        finished = tok == vocab.eos_id
    gen = tokens[start:]
    return Generation(gen, log, vocab.detokenize(gen), "eos" if finished else "max_new_tokens")
