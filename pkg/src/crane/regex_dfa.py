"""Byte-level regular expressions compiled to minimal, trimmed DFAs.

Terminals in a grammar are matched one byte at a time, so patterns are
compiled over the 256-symbol byte alphabet. Non-ASCII literal characters
become their UTF-8 byte sequence; ``.`` and negated classes range over
single bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

__all__ = [
    "RegexError",
    "Node",
    "Bytes",
    "Concat",
    "Alt",
    "Repeat",
    "literal",
    "parse_regex",
    "DFA",
    "compile_dfa",
]

ALL_BYTES = frozenset(range(256))
_DIGITS = frozenset(range(ord("0"), ord("9") + 1))
_WORD = (
    _DIGITS
    | frozenset(range(ord("a"), ord("z") + 1))
    | frozenset(range(ord("A"), ord("Z") + 1))
    | {ord("_")}
)
_SPACE = frozenset(b" \t\n\r\f\v")
_CLASS_ESCAPES = {
    "d": _DIGITS,
    "D": ALL_BYTES - _DIGITS,
    "w": _WORD,
    "W": ALL_BYTES - _WORD,
    "s": _SPACE,
    "S": ALL_BYTES - _SPACE,
}
_CHAR_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "f": "\f", "v": "\v", "0": "\0"}


class RegexError(ValueError):
    pass


# --- AST -----------------------------------------------------------------


class Node:
    pass


@dataclass(frozen=True)
class Bytes(Node):
    """Matches exactly one byte from ``allowed``."""

    allowed: frozenset


@dataclass(frozen=True)
class Concat(Node):
    parts: tuple


@dataclass(frozen=True)
class Alt(Node):
    options: tuple


@dataclass(frozen=True)
class Repeat(Node):
    body: Node
    lo: int
    hi: int | None  # None = unbounded


def literal(data: bytes) -> Node:
    return Concat(tuple(Bytes(frozenset([b])) for b in data))


def _char_bytes(ch: str) -> Node:
    data = ch.encode("utf-8")
    if len(data) == 1:
        return Bytes(frozenset(data))
    return literal(data)


class _RegexParser:
    def __init__(self, pattern: str):
        self.src = pattern
        self.pos = 0

    def error(self, msg: str) -> RegexError:
        return RegexError(f"{msg} at offset {self.pos} in /{self.src}/")

    def peek(self) -> str | None:
        return self.src[self.pos] if self.pos < len(self.src) else None

    def take(self) -> str:
        ch = self.src[self.pos]
        self.pos += 1
        return ch

    def parse(self) -> Node:
        node = self.alternation()
        if self.pos != len(self.src):
            raise self.error("unbalanced ')'")
        return node

    def alternation(self) -> Node:
        options = [self.sequence()]
        while self.peek() == "|":
            self.take()
            options.append(self.sequence())
        return options[0] if len(options) == 1 else Alt(tuple(options))

    def sequence(self) -> Node:
        parts = []
        while self.peek() not in (None, "|", ")"):
            parts.append(self.quantified())
        return parts[0] if len(parts) == 1 else Concat(tuple(parts))

    def quantified(self) -> Node:
        atom = self.atom()
        while True:
            ch = self.peek()
            if ch == "*":
                self.take()
                atom = Repeat(atom, 0, None)
            elif ch == "+":
                self.take()
                atom = Repeat(atom, 1, None)
            elif ch == "?":
                self.take()
                atom = Repeat(atom, 0, 1)
            elif ch == "{" and self._looks_like_count():
                atom = self._count(atom)
            else:
                break
            if self.peek() == "?":
                # lazy modifier: irrelevant for membership
                self.take()
        return atom

    def _looks_like_count(self) -> bool:
        end = self.src.find("}", self.pos)
        if end < 0:
            return False
        body = self.src[self.pos + 1 : end]
        return bool(body) and all(c.isdigit() or c == "," for c in body) and body[0] != ","

    def _count(self, atom: Node) -> Node:
        end = self.src.index("}", self.pos)
        body = self.src[self.pos + 1 : end]
        self.pos = end + 1
        if "," in body:
            lo_s, hi_s = body.split(",", 1)
            lo, hi = int(lo_s), (int(hi_s) if hi_s else None)
        else:
            lo = hi = int(body)
        if hi is not None and hi < lo:
            raise self.error("bad repetition bounds")
        return Repeat(atom, lo, hi)

    def atom(self) -> Node:
        ch = self.take()
        if ch == "(":
            if self.src.startswith("?:", self.pos):
                self.pos += 2
            elif self.peek() == "?":
                raise self.error("unsupported group syntax")
            node = self.alternation()
            if self.peek() != ")":
                raise self.error("missing ')'")
            self.take()
            return node
        if ch == "[":
            return self.char_class()
        if ch == ".":
            return Bytes(ALL_BYTES - {ord("\n")})
        if ch == "\\":
            return self.escape(in_class=False)
        if ch in "*+?":
            raise self.error(f"nothing to repeat before {ch!r}")
        if ch in "^$":
            raise self.error("anchors are not supported")
        return _char_bytes(ch)

    def escape(self, in_class: bool) -> Node | int:
        if self.peek() is None:
            raise self.error("dangling backslash")
        ch = self.take()
        if ch in _CLASS_ESCAPES:
            return Bytes(_CLASS_ESCAPES[ch])
        if ch in _CHAR_ESCAPES:
            return Bytes(frozenset([ord(_CHAR_ESCAPES[ch])]))
        if ch == "x":
            hexits = self.src[self.pos : self.pos + 2]
            if len(hexits) != 2:
                raise self.error("bad \\x escape")
            self.pos += 2
            return Bytes(frozenset([int(hexits, 16)]))
        if ch.isalnum():
            raise self.error(f"unsupported escape \\{ch}")
        return _char_bytes(ch)

    def _class_item(self) -> frozenset:
        ch = self.take()
        if ch == "\\":
            node = self.escape(in_class=True)
            if not isinstance(node, Bytes):
                raise self.error("multi-byte escape inside class")
            return node.allowed
        data = ch.encode("utf-8")
        if len(data) != 1:
            raise self.error("non-ASCII character inside class")
        return frozenset(data)

    def char_class(self) -> Node:
        negate = False
        if self.peek() == "^":
            self.take()
            negate = True
        allowed: set[int] = set()
        first = True
        while True:
            ch = self.peek()
            if ch is None:
                raise self.error("unterminated character class")
            if ch == "]" and not first:
                self.take()
                break
            first = False
            lo = self._class_item()
            if self.peek() == "-" and self.src[self.pos + 1 : self.pos + 2] not in ("]", ""):
                self.take()
                hi = self._class_item()
                if len(lo) != 1 or len(hi) != 1:
                    raise self.error("bad range in character class")
                a, b = min(lo), min(hi)
                if b < a:
                    raise self.error("reversed range in character class")
                allowed.update(range(a, b + 1))
            else:
                allowed.update(lo)
        result = frozenset(allowed)
        return Bytes(ALL_BYTES - result if negate else result)


def parse_regex(pattern: str) -> Node:
    return _RegexParser(pattern).parse()


# --- NFA / DFA -------------------------------------------------------------


class _NFA:
    def __init__(self):
        self.eps: list[list[int]] = []
        self.edges: list[list[tuple[frozenset, int]]] = []

    def state(self) -> int:
        self.eps.append([])
        self.edges.append([])
        return len(self.eps) - 1

    def build(self, node: Node, start: int, end: int) -> None:
        if isinstance(node, Bytes):
            self.edges[start].append((node.allowed, end))
        elif isinstance(node, Concat):
            if not node.parts:
                self.eps[start].append(end)
                return
            cur = start
            for part in node.parts[:-1]:
                nxt = self.state()
                self.build(part, cur, nxt)
                cur = nxt
            self.build(node.parts[-1], cur, end)
        elif isinstance(node, Alt):
            for option in node.options:
                self.build(option, start, end)
        elif isinstance(node, Repeat):
            cur = start
            for _ in range(node.lo):
                nxt = self.state()
                self.build(node.body, cur, nxt)
                cur = nxt
            if node.hi is None:
                loop = self.state()
                self.eps[cur].append(loop)
                inner = self.state()
                self.build(node.body, loop, inner)
                self.eps[inner].append(loop)
                self.eps[loop].append(end)
            else:
                for _ in range(node.hi - node.lo):
                    nxt = self.state()
                    self.eps[cur].append(end)
                    self.build(node.body, cur, nxt)
                    cur = nxt
                self.eps[cur].append(end)
        else:
            raise TypeError(node)

    def closure(self, states: Iterable[int]) -> frozenset:
        seen = set(states)
        stack = list(seen)
        while stack:
            s = stack.pop()
            for t in self.eps[s]:
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        return frozenset(seen)


@dataclass(frozen=True)
class DFA:
    """Trimmed DFA over bytes; state 0 is the start state.

    ``trans[s][b]`` is the successor of ``s`` on byte ``b`` or ``-1``. Every
    state can reach an accepting state, so "not -1" means "still viable".
    """

    trans: tuple
    accept: frozenset
    # states with at least one outgoing byte
    extensible: frozenset

    @property
    def size(self) -> int:
        return len(self.trans)

    def step(self, state: int, byte: int) -> int:
        return self.trans[state][byte]

    def run(self, data: bytes, state: int = 0) -> int:
        for b in data:
            state = self.trans[state][b]
            if state < 0:
                return -1
        return state

    def matches(self, data: bytes) -> bool:
        return self.run(data) in self.accept

    @property
    def matches_empty(self) -> bool:
        return 0 in self.accept


def _determinize(nfa: _NFA, start: int, end: int):
    init = nfa.closure([start])
    index = {init: 0}
    order = [init]
    rows: list[list[int]] = []
    i = 0
    while i < len(order):
        cur = order[i]
        i += 1
        targets: dict[int, set[int]] = {}
        for s in cur:
            for allowed, t in nfa.edges[s]:
                for b in allowed:
                    targets.setdefault(b, set()).add(t)
        row = [-1] * 256
        cache: dict[frozenset, int] = {}
        for b, ts in targets.items():
            key = frozenset(ts)
            if key not in cache:
                closed = nfa.closure(ts)
                if closed not in index:
                    index[closed] = len(order)
                    order.append(closed)
                cache[key] = index[closed]
            row[b] = cache[key]
        rows.append(row)
    accept = {i for i, st in enumerate(order) if end in st}
    return rows, accept


def _trim(rows, accept):
    n = len(rows)
    rev: list[set[int]] = [set() for _ in range(n)]
    for s, row in enumerate(rows):
        for t in row:
            if t >= 0:
                rev[t].add(s)
    live = set(accept)
    stack = list(accept)
    while stack:
        t = stack.pop()
        for s in rev[t]:
            if s not in live:
                live.add(s)
                stack.append(s)
    if 0 not in live:
        return None
    return [[t if t in live else -1 for t in row] if s in live else [-1] * 256 for s, row in enumerate(rows)], live


def _minimize(rows, accept, live):
    # Moore partition refinement over live states, on byte classes (bytes
    # whose columns agree in every row behave identically)
    states = sorted(live)
    columns: dict[tuple, int] = {}
    reps = []
    for b in range(256):
        col = tuple(rows[s][b] for s in states)
        if col not in columns:
            columns[col] = b
            reps.append(b)
    block = {s: (1 if s in accept else 0) for s in states}
    while True:
        sig = {}
        new_block = {}
        for s in states:
            row = rows[s]
            key = (block[s],) + tuple(block.get(row[b], -1) if row[b] >= 0 else -1 for b in reps)
            new_block[s] = sig.setdefault(key, len(sig))
        if len(sig) == len(set(block.values())):
            block = new_block
            break
        block = new_block
    # renumber so the start state's block becomes 0, in BFS order
    order = {}
    queue = [block[0]]
    order[block[0]] = 0
    rep = {}
    for s in states:
        rep.setdefault(block[s], s)
    i = 0
    while i < len(queue):
        b = queue[i]
        i += 1
        for t in rows[rep[b]]:
            if t >= 0 and block[t] not in order:
                order[block[t]] = len(order)
                queue.append(block[t])
    trans = [None] * len(order)
    for b, new_id in order.items():
        trans[new_id] = tuple(order[block[t]] if t >= 0 else -1 for t in rows[rep[b]])
    acc = frozenset(order[block[s]] for s in states if s in accept and block[s] in order)
    return tuple(trans), acc


@lru_cache(maxsize=4096)
def compile_dfa(node: Node) -> DFA:
    """Compile a regex AST into a minimal trimmed DFA.

    Raises RegexError if the language is empty.
    """
    nfa = _NFA()
    start, end = nfa.state(), nfa.state()
    nfa.build(node, start, end)
    rows, accept = _determinize(nfa, start, end)
    trimmed = _trim(rows, accept)
    if trimmed is None:
        raise RegexError("pattern matches nothing")
    rows, live = trimmed
    trans, acc = _minimize(rows, accept, live)
    extensible = frozenset(s for s, row in enumerate(trans) if any(t >= 0 for t in row))
    return DFA(trans=trans, accept=acc, extensible=extensible)
