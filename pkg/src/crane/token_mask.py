"""Vocabulary masks: which next tokens keep the text a viable prefix.

``compute_mask`` is exact: bit ``i`` is set iff ``advance(state, token_i)``
is not dead. ``naive_mask`` is that definition as a loop and serves as the
reference. The fast path precomputes, per partial-terminal state, a trie of
the terminal sequences each token can lex into; at mask time only the
sequences the parser can accept are walked.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .recognizer import ChartSet, CompiledGrammar, PrefixStatus, RecognizerState, scan_terminal

__all__ = [
    "Vocabulary",
    "MaskBits",
    "NoViableToken",
    "TokenIndex",
    "token_index",
    "compute_mask",
    "naive_mask",
    "apply_mask",
    "masked_distribution",
]


class Vocabulary:
    """Token id -> bytes table with a dedicated end-of-sequence id."""

    def __init__(self, tokens: Sequence[bytes | str], eos_id: int):
        self.tokens: list[bytes] = [t.encode("utf-8") if isinstance(t, str) else bytes(t) for t in tokens]
        if not 0 <= eos_id < len(self.tokens):
            raise ValueError(f"eos_id {eos_id} out of range for {len(self.tokens)} tokens")
        self.eos_id = eos_id
        self._trie: list[dict[int, int]] | None = None
        self._ends: list[list[int]] | None = None
        self._lookup: dict[bytes, int] | None = None

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_strings(cls, tokens: Iterable[str], eos: str = "<eos>") -> "Vocabulary":
        """Build a vocabulary from strings plus an EOS token with empty bytes."""
        toks = [t.encode("utf-8") for t in tokens]
        return cls(toks + [b""], eos_id=len(toks)) if eos else cls(toks, eos_id=0)

    def token_bytes(self, token_id: int) -> bytes:
        return b"" if token_id == self.eos_id else self.tokens[token_id]

    def detokenize(self, ids: Iterable[int]) -> bytes:
        eos = self.eos_id
        return b"".join(self.tokens[i] for i in ids if i != eos)

    def id_of(self, piece: bytes | str) -> int:
        if isinstance(piece, str):
            piece = piece.encode("utf-8")
        if self._lookup is None:
            self._lookup = {}
            for i, t in enumerate(self.tokens):
                if i != self.eos_id:
                    self._lookup.setdefault(t, i)
        return self._lookup[piece]

    def _build_trie(self) -> None:
        children: list[dict[int, int]] = [{}]
        ends: list[list[int]] = [[]]
        for tid, data in enumerate(self.tokens):
            if tid == self.eos_id:
                continue
            node = 0
            for b in data:
                nxt = children[node].get(b)
                if nxt is None:
                    nxt = len(children)
                    children[node][b] = nxt
                    children.append({})
                    ends.append([])
                node = nxt
            ends[node].append(tid)
        self._trie, self._ends = children, ends

    @property
    def trie(self) -> tuple[list[dict[int, int]], list[list[int]]]:
        if self._trie is None:
            self._build_trie()
        return self._trie, self._ends

    def encode(self, text: bytes | str) -> list[int]:
        """Greedy longest-match tokenization."""
        if isinstance(text, str):
            text = text.encode("utf-8")
        children, ends = self.trie
        out = []
        pos = 0
        while pos < len(text):
            node, best, best_len = 0, None, 0
            for j in range(pos, len(text)):
                node = children[node].get(text[j])
                if node is None:
                    break
                if ends[node]:
                    best, best_len = ends[node][0], j + 1 - pos
            if best is None:
                raise ValueError(f"cannot tokenize byte {text[pos]!r} at offset {pos}")
            out.append(best)
            pos += best_len
        return out

    def to_json(self) -> dict:
        import base64

        return {"tokens": [base64.b64encode(t).decode("ascii") for t in self.tokens], "eos_id": self.eos_id}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        import base64

        return cls([base64.b64decode(t) for t in obj["tokens"]], int(obj["eos_id"]))


@dataclass(frozen=True)
class MaskBits:
    bits: np.ndarray  # bool, length |V|

    def __len__(self) -> int:
        return len(self.bits)

    def __getitem__(self, i: int) -> bool:
        return bool(self.bits[i])

    @property
    def allowed(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, MaskBits) and np.array_equal(self.bits, other.bits)

    @classmethod
    def from_int(cls, value: int, size: int) -> "MaskBits":
        raw = np.frombuffer(value.to_bytes((size + 7) // 8, "little"), dtype=np.uint8)
        return cls(np.unpackbits(raw, bitorder="little")[:size].astype(bool))


class NoViableToken(RuntimeError):
    """No vocabulary token (nor EOS) keeps the constrained text viable."""

    def __init__(self, msg: str, *, text: bytes = b"", blocked: Sequence[int] = ()):
        super().__init__(msg)
        self.text = text
        self.blocked = list(blocked)


# --- lexing tries ----------------------------------------------------------


class _LexNode:
    __slots__ = ("children", "mask")

    def __init__(self):
        self.children: dict[int, _LexNode] = {}
        self.mask = 0

    def child(self, tid: int) -> "_LexNode":
        node = self.children.get(tid)
        if node is None:
            node = self.children[tid] = _LexNode()
        return node

    def prune(self) -> bool:
        """Drop subtrees without tokens; True if this node is empty."""
        for tid in [t for t, c in self.children.items() if c.prune()]:
            del self.children[tid]
        return not self.children and not self.mask


def _terminal_follow(cg: CompiledGrammar) -> list[frozenset]:
    """For each terminal, the terminals that may directly follow it."""
    nt = len(cg.nt_names)
    n_terms = len(cg.dfas)
    first: list[set[int]] = [set() for _ in range(nt)]
    changed = True
    while changed:
        changed = False
        for lhs, rhs in cg.prods:
            before = len(first[lhs])
            for sym in rhs:
                if sym < 0:
                    first[lhs].add(-1 - sym)
                    break
                first[lhs] |= first[sym]
                if sym not in cg.nullable:
                    break
            if len(first[lhs]) != before:
                changed = True

    def first_of(seq) -> tuple[set[int], bool]:
        out: set[int] = set()
        for sym in seq:
            if sym < 0:
                out.add(-1 - sym)
                return out, False
            out |= first[sym]
            if sym not in cg.nullable:
                return out, False
        return out, True

    follow_nt: list[set[int]] = [set() for _ in range(nt)]
    follow_t: list[set[int]] = [set() for _ in range(n_terms)]
    changed = True
    while changed:
        changed = False
        for lhs, rhs in cg.prods:
            for i, sym in enumerate(rhs):
                f, nullable_rest = first_of(rhs[i + 1 :])
                if nullable_rest:
                    f = f | follow_nt[lhs]
                target = follow_t[-1 - sym] if sym < 0 else follow_nt[sym]
                if not f <= target:
                    target |= f
                    changed = True
    everything = frozenset(range(n_terms))
    out = []
    for tid in range(n_terms):
        if tid in cg.ignore:
            out.append(everything)
        else:
            out.append(frozenset(follow_t[tid] | cg.ignore))
    return out


class TokenIndex:
    """Per-(grammar, vocabulary) tables for fast exact masks."""

    def __init__(self, cg: CompiledGrammar, vocab: Vocabulary, eager: bool = True):
        self.cg = cg
        self.vocab = vocab
        self.follow = _terminal_follow(cg)
        self.all_terms = tuple(range(len(cg.dfas)))
        self.empty_tokens = 0
        for tid, data in enumerate(vocab.tokens):
            if not data and tid != vocab.eos_id:
                self.empty_tokens |= 1 << tid
        self._tries: dict = {}
        if eager:
            self._tries[None] = self._build(None)
            for tid, dfa in enumerate(cg.dfas):
                for d in dfa.extensible:
                    self._tries[(tid, d)] = self._build((tid, d))

    def trie(self, key) -> _LexNode:
        node = self._tries.get(key)
        if node is None:
            node = self._tries[key] = self._build(key)
        return node

    def _build(self, key) -> _LexNode:
        children, ends = self.vocab.trie
        dfas = self.cg.dfas
        follow = self.follow
        all_terms = self.all_terms
        root = _LexNode()
        # lexing state: (lex node, terminal or -1, dfa state, may_complete)
        if key is None:
            start = frozenset([(root, -1, 0, False)])
        else:
            start = frozenset([(root, key[0], key[1], False)])
        stack = [(0, start)]
        while stack:
            tnode, states = stack.pop()
            for byte, child in children[tnode].items():
                nxt = set()
                for ln, tid, d, may_complete in states:
                    if tid < 0:
                        for x in all_terms:
                            d2 = dfas[x].trans[0][byte]
                            if d2 >= 0:
                                nxt.add((ln.child(x), x, d2, True))
                        continue
                    dfa = dfas[tid]
                    d2 = dfa.trans[d][byte]
                    if d2 >= 0:
                        nxt.add((ln, tid, d2, True))
                    if may_complete and d in dfa.accept:
                        for x in follow[tid]:
                            d3 = dfas[x].trans[0][byte]
                            if d3 >= 0:
                                nxt.add((ln.child(x), x, d3, True))
                if not nxt:
                    continue
                toks = ends[child]
                if toks:
                    bits = 0
                    for t in toks:
                        bits |= 1 << t
                    for ln, _, _, _ in nxt:
                        ln.mask |= bits
                stack.append((child, frozenset(nxt)))
        root.prune()
        return root

    def mask_int(self, state: RecognizerState) -> int:
        st = state.status
        if st is PrefixStatus.DEAD:
            return 0
        mask = self.empty_tokens
        if state.boundary is not None:
            mask |= _walk(self.trie(None), state.boundary)
        for (tid, d), origins in state.scans.items():
            node = self.trie((tid, d))
            mask |= node.mask
            if node.children:
                mask |= _walk(node, scan_terminal(self.cg, tid, origins))
        if st.is_member:
            mask |= 1 << self.vocab.eos_id
        return mask


def _walk(node: _LexNode, chart: ChartSet) -> int:
    mask = 0
    expected = chart.expected
    ignore = chart.cg.ignore
    for tid, child in node.children.items():
        if tid in expected or tid in ignore:
            mask |= child.mask
            if child.children:
                mask |= _walk(child, chart.step(tid))
    return mask


def token_index(state_or_cg, vocab: Vocabulary) -> TokenIndex:
    cg = state_or_cg.cg if isinstance(state_or_cg, RecognizerState) else state_or_cg
    cache = cg.__dict__.setdefault("_token_indexes", {})
    entry = cache.get(id(vocab))
    if entry is None or entry[0] is not vocab:
        entry = cache[id(vocab)] = (vocab, TokenIndex(cg, vocab))
    return entry[1]


def compute_mask(state: RecognizerState, vocab: Vocabulary, *, strict: bool = True) -> MaskBits:
    """Admissible next tokens for ``state``.

    Raises NoViableToken when nothing (not even EOS) is admissible, unless
    ``strict`` is False, in which case the empty mask is returned.
    """
    value = token_index(state, vocab).mask_int(state)
    if not value and strict:
        raise NoViableToken(f"no admissible token after {state.consumed} bytes ({state.status.value})")
    return MaskBits.from_int(value, vocab.size)


def naive_mask(state: RecognizerState, vocab: Vocabulary) -> MaskBits:
    """Reference mask: advance every token separately."""
    bits = np.zeros(vocab.size, dtype=bool)
    if state.is_dead:
        return MaskBits(bits)
    for tid, data in enumerate(vocab.tokens):
        if tid == vocab.eos_id:
            bits[tid] = state.status.is_member
        else:
            bits[tid] = not state.advance(data).is_dead
    return MaskBits(bits)


def apply_mask(scores, mask: MaskBits) -> np.ndarray:
    """Set inadmissible logits to -inf."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != mask.bits.shape:
        raise ValueError(f"score length {scores.shape} does not match mask length {mask.bits.shape}")
    return np.where(mask.bits, scores, -np.inf)


def masked_distribution(scores, mask: MaskBits) -> np.ndarray:
    """Softmax over the admissible tokens, zero elsewhere."""
    logits = apply_mask(scores, mask)
    if not np.isfinite(logits).any():
        raise ValueError("mask admits no token")
    z = logits - logits[np.isfinite(logits)].max()
    p = np.exp(z)
    return p / p.sum()
