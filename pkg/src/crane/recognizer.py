"""Incremental, scannerless Earley recognition over bytes.

Terminals are compiled to DFAs and scanned byte by byte in parallel with the
Earley chart. A chart set exists at every position where some terminal may
have ended; partial terminal scans remember the set they started from.
States are immutable snapshots, so probing many continuations from one state
is cheap and safe.
"""

from __future__ import annotations

import enum
from collections import defaultdict

from .grammar import GrammarSpec
from .regex_dfa import DFA, compile_dfa

__all__ = [
    "PrefixStatus",
    "RecognizerState",
    "CompiledGrammar",
    "compile_grammar",
    "init",
    "advance",
    "is_member",
    "tokenize",
]


class PrefixStatus(enum.Enum):
    VALID_PREFIX = "ValidPrefix"
    COMPLETE = "Complete"
    COMPLETE_AND_EXTENSIBLE = "CompleteAndExtensible"
    DEAD = "Dead"

    @property
    def is_member(self) -> bool:
        return self in (PrefixStatus.COMPLETE, PrefixStatus.COMPLETE_AND_EXTENSIBLE)

    @property
    def is_viable(self) -> bool:
        return self is not PrefixStatus.DEAD


class CompiledGrammar:
    """Integer-coded grammar tables shared by every state of one grammar.

    Symbols on right-hand sides are ints: ``>= 0`` is a nonterminal id,
    ``< 0`` is terminal ``-1 - sym``.
    """

    INTERN_LIMIT = 200_000

    def __init__(self, g: GrammarSpec):
        self.spec = g
        self.term_names = [t.name for t in g.terminals]
        self.term_index = {n: i for i, n in enumerate(self.term_names)}
        self.dfas: list[DFA] = [compile_dfa(t.node) for t in g.terminals]
        self.ignore = frozenset(self.term_index[n] for n in g.ignore)

        nts = sorted(g.nonterminals)
        self.root = len(nts)  # synthetic S' -> start
        self.nt_names = nts + ["$root"]
        nt_index = {n: i for i, n in enumerate(nts)}

        def code(sym):
            return -1 - self.term_index[sym.name] if sym.is_terminal else nt_index[sym.name]

        raw = [(nt_index[p.lhs], tuple(code(s) for s in p.rhs)) for p in g.productions]
        raw.append((self.root, (nt_index[g.start],)))

        productive: set[int] = set()
        changed = True
        while changed:
            changed = False
            for lhs, rhs in raw:
                if lhs not in productive and all(s < 0 or s in productive for s in rhs):
                    productive.add(lhs)
                    changed = True
        self.empty_language = self.root not in productive
        self.prods = [(lhs, rhs) for lhs, rhs in raw if all(s < 0 or s in productive for s in rhs)]

        nullable: set[int] = set()
        changed = True
        while changed:
            changed = False
            for lhs, rhs in self.prods:
                if lhs not in nullable and all(s >= 0 and s in nullable for s in rhs):
                    nullable.add(lhs)
                    changed = True
        self.nullable = frozenset(nullable)
        self.predictions: dict[int, list[int]] = defaultdict(list)
        for i, (lhs, _) in enumerate(self.prods):
            self.predictions[lhs].append(i)

        self.root_nullable = self.root in self.nullable
        # Hash-consing of chart sets: items point at canonical origin sets,
        # so equal contents mean equal behaviour and step caches can be shared.
        self.interned: dict = {}
        self.advance_memo: dict = {}
        self._build_prediction_tables()
        self._initial: ChartSet | None = None

    def _build_prediction_tables(self) -> None:
        # Items predicted inside a set never depend on earlier sets, so the
        # closure of predicting a nonterminal is computed once per grammar.
        n = len(self.nt_names)
        static: list[list[tuple]] = [[] for _ in range(n)]
        direct: list[set[int]] = [set() for _ in range(n)]
        for y in range(n):
            for p in self.predictions.get(y, ()):
                rhs = self.prods[p][1]
                for dot in range(len(rhs) + 1):
                    if dot == len(rhs):
                        break
                    sym = rhs[dot]
                    static[y].append((sym, (p, dot, None)))
                    if sym >= 0:
                        direct[y].add(sym)
                    if sym < 0 or sym not in self.nullable:
                        break
        grouped = []
        for y in range(n):
            by_sym: dict[int, list] = defaultdict(list)
            for sym, item in static[y]:
                by_sym[sym].append(item)
            grouped.append(tuple((sym, tuple(its)) for sym, its in by_sym.items()))
        self.static_waiting = grouped
        closure = []
        for y in range(n):
            seen = {y}
            stack = [y]
            while stack:
                z = stack.pop()
                for w in direct[z]:
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            closure.append(tuple(seen))
        self.prediction_closure = closure

    @property
    def initial_set(self) -> "ChartSet":
        if self._initial is None:
            self._initial = ChartSet.build(self, (), predict=(self.root,))
        return self._initial


class ChartSet:
    """One Earley set. Items are ``(production, dot, origin_set)``.

    Items predicted in this very set are not stored one by one: ``predicted``
    holds the nonterminals whose static prediction closure is part of the set
    (those items have origin ``None``). Sets are position-free, so a set can
    be reused wherever its items are valid.
    """

    __slots__ = ("cg", "items", "predicted", "waiting", "expected", "complete", "_steps")

    def __init__(self, cg: CompiledGrammar):
        self.cg = cg
        self.items: set = set()
        self.predicted: set = set()
        self.waiting: dict = {}
        self.expected: frozenset = frozenset()
        self.complete = False
        self._steps: dict = {}

    @classmethod
    def build(cls, cg: CompiledGrammar, kernel, predict=(), complete=False) -> "ChartSet":
        s = cls(cg)
        s.complete = complete
        prods, nullable = cg.prods, cg.nullable
        closure, static_wait = cg.prediction_closure, cg.static_waiting
        items, predicted = s.items, s.predicted
        waiting: dict = defaultdict(list)

        def predict_nt(sym):
            for y in closure[sym]:
                if y not in predicted:
                    predicted.add(y)
                    for wsym, its in static_wait[y]:
                        waiting[wsym].extend(its)

        for sym in predict:
            predict_nt(sym)
        agenda = list(kernel)
        while agenda:
            item = agenda.pop()
            if item in items:
                continue
            items.add(item)
            p, dot, origin = item
            lhs, rhs = prods[p]
            if dot == len(rhs):
                if lhs == cg.root:
                    s.complete = True
                elif origin is not None:
                    for wp, wd, wo in origin.waiting.get(lhs, ()):
                        agenda.append((wp, wd + 1, wo if wo is not None else origin))
                continue
            sym = rhs[dot]
            waiting[sym].append(item)
            if sym >= 0:
                if sym not in predicted:
                    predict_nt(sym)
                if sym in nullable:
                    agenda.append((p, dot + 1, origin))
        if cg.root_nullable and cg.root in predicted:
            s.complete = True
        # Completed items have already done their work and never wait on
        # anything, so they are dropped; otherwise every set would remember
        # its predecessor and no two positions could share a set.
        kept = frozenset(it for it in items if it[1] < len(prods[it[0]][1]))
        s.items = kept
        key = (kept, frozenset(predicted), s.complete)
        known = cg.interned.get(key)
        if known is not None:
            return known
        s.expected = frozenset(-1 - sym for sym in waiting if sym < 0)
        s.waiting = dict(waiting)
        if len(cg.interned) >= cg.INTERN_LIMIT:
            cg.interned.clear()
        cg.interned[key] = s
        return s

    def step(self, tid: int) -> "ChartSet":
        """Set reached by scanning one whole terminal (memoised)."""
        nxt = self._steps.get(tid)
        if nxt is None:
            nxt = self._steps[tid] = scan_terminal(self.cg, tid, (self,))
        return nxt

    def accepts(self, tid: int) -> bool:
        return tid in self.expected or tid in self.cg.ignore


def _advanced_kernel(origin: ChartSet, sym: int):
    for p, d, o in origin.waiting.get(sym, ()):
        yield (p, d + 1, o if o is not None else origin)


def scan_terminal(cg: CompiledGrammar, tid: int, origins) -> ChartSet:
    """Chart set after terminal ``tid`` spanning from any of ``origins``."""
    if tid in cg.ignore:
        return origins[0] if len(origins) == 1 else _merge(cg, origins)
    sym = -1 - tid
    kernel = [it for o in origins for it in _advanced_kernel(o, sym)]
    return ChartSet.build(cg, kernel)


def _merge(cg: CompiledGrammar, sets) -> ChartSet:
    # all merged sets describe the same position, so self-predicted items
    # (origin None) stay anchored to the merged set
    return ChartSet.build(
        cg,
        [it for s in sets for it in s.items],
        predict=[y for s in sets for y in s.predicted],
        complete=any(s.complete for s in sets),
    )


def compile_grammar(g: GrammarSpec) -> CompiledGrammar:
    cg = g._cache.get("compiled")
    if cg is None:
        cg = g._cache["compiled"] = CompiledGrammar(g)
    return cg


class RecognizerState:
    """Recognition progress after ``consumed`` bytes.

    ``boundary`` is the chart set at the current position (``None`` when no
    terminal can end here). ``scans`` maps ``(terminal, dfa_state)`` to the
    tuple of chart sets the partial terminal started from.
    """

    __slots__ = ("cg", "consumed", "boundary", "scans", "_status")

    def __init__(self, cg: CompiledGrammar, consumed: int, boundary, scans: dict):
        self.cg = cg
        self.consumed = consumed
        self.boundary = boundary
        self.scans = scans
        self._status = None

    @property
    def grammar(self) -> GrammarSpec:
        return self.cg.spec

    @property
    def status(self) -> PrefixStatus:
        if self._status is None:
            b = self.boundary
            complete = b is not None and b.complete
            extensible = bool(self.scans) or (b is not None and bool(b.expected or self.cg.ignore))
            if complete:
                st = PrefixStatus.COMPLETE_AND_EXTENSIBLE if extensible else PrefixStatus.COMPLETE
            else:
                st = PrefixStatus.VALID_PREFIX if extensible else PrefixStatus.DEAD
            self._status = st
        return self._status

    @property
    def is_dead(self) -> bool:
        return self.status is PrefixStatus.DEAD

    @property
    def is_complete(self) -> bool:
        return self.status.is_member

    def advance(self, data: bytes) -> "RecognizerState":
        return advance(self, data)

    def __repr__(self) -> str:
        return f"RecognizerState(consumed={self.consumed}, status={self.status.value})"


def _step_byte(cg: CompiledGrammar, boundary, scans: dict, byte: int):
    dfas = cg.dfas
    new_scans: dict = {}
    completed: dict = {}

    def feed(tid, d, origins):
        dfa = dfas[tid]
        d2 = dfa.trans[d][byte]
        if d2 < 0:
            return
        if d2 in dfa.accept:
            prev = completed.get(tid)
            completed[tid] = origins if prev is None else _union(prev, origins)
        if d2 in dfa.extensible:
            key = (tid, d2)
            prev = new_scans.get(key)
            new_scans[key] = origins if prev is None else _union(prev, origins)

    for (tid, d), origins in scans.items():
        feed(tid, d, origins)
    if boundary is not None:
        here = (boundary,)
        for tid in boundary.expected:
            feed(tid, 0, here)
        for tid in cg.ignore:
            feed(tid, 0, here)

    new_boundary = None
    if completed:
        parts = [scan_terminal(cg, tid, origins) for tid, origins in completed.items()]
        uniq = list({id(p): p for p in parts}.values())
        new_boundary = uniq[0] if len(uniq) == 1 else _merge(cg, uniq)
    return new_boundary, new_scans


def _union(a: tuple, b: tuple) -> tuple:
    seen = {id(x) for x in a}
    return a + tuple(x for x in b if id(x) not in seen)


def init(g: GrammarSpec) -> RecognizerState:
    cg = compile_grammar(g)
    if cg.empty_language:
        return RecognizerState(cg, 0, None, {})
    return RecognizerState(cg, 0, cg.initial_set, {})


def advance(state: RecognizerState, data: bytes | str) -> RecognizerState:
    """State after additionally consuming ``data``. ``state`` is untouched."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    if not data:
        return state
    cg = state.cg
    boundary, scans = state.boundary, state.scans
    if boundary is None and not scans:
        return RecognizerState(cg, state.consumed + len(data), None, {})
    # chart sets are canonical, so the configuration is a valid memo key
    key = (boundary, frozenset(scans.items()), data)
    hit = cg.advance_memo.get(key)
    if hit is None:
        for byte in data:
            boundary, scans = _step_byte(cg, boundary, scans, byte)
            if boundary is None and not scans:
                break
        if len(cg.advance_memo) >= cg.INTERN_LIMIT:
            cg.advance_memo.clear()
        hit = cg.advance_memo[key] = (boundary, scans)
    return RecognizerState(cg, state.consumed + len(data), hit[0], hit[1])


def is_member(g: GrammarSpec, s: bytes | str) -> bool:
    return advance(init(g), s).status.is_member


def tokenize(g: GrammarSpec, text: bytes | str) -> list[tuple[str, bytes]]:
    """Context-free lexing with priority > longest match > declaration order.

    Returns ``(terminal name, lexeme)`` pairs, including ignored terminals.
    Raises ValueError where no terminal matches.
    """
    if isinstance(text, str):
        text = text.encode("utf-8")
    cg = compile_grammar(g)
    prios = [t.priority for t in g.terminals]
    out = []
    pos = 0
    while pos < len(text):
        best = None
        for tid, dfa in enumerate(cg.dfas):
            state, longest = 0, 0
            for j in range(pos, len(text)):
                state = dfa.trans[state][text[j]]
                if state < 0:
                    break
                if state in dfa.accept:
                    longest = j + 1 - pos
            if longest:
                key = (-prios[tid], -longest, tid)
                if best is None or key < best[0]:
                    best = (key, tid, longest)
        if best is None:
            raise ValueError(f"no terminal matches at byte {pos}: {text[pos:pos + 10]!r}")
        _, tid, n = best
        out.append((cg.term_names[tid], text[pos : pos + n]))
        pos += n
    return out
