"""Grammar definitions: parsing, delimiter augmentation, reasoning grammars.

The source format is a small Lark-like dialect::

    start: space? "<" "<" space? expr space? ">" ">" space?
    ?neg_expr: "{not}" quantified_expr -> neg
             | atom
    TYPE.4: "int"
    VAR.-1: /[a-z][a-zA-Z0-9_]*/ | /[0-9]+/
    %ignore WS

Lowercase names are rules, uppercase names are terminals (optionally with a
``.N`` priority). Postfix ``?``, ``*`` and ``+`` and parenthesised groups are
desugared into fresh helper rules. ``-> alias`` labels are recorded but have
no effect on the language.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple

from .regex_dfa import Alt, Concat, Node, RegexError, Repeat, literal, parse_regex

__all__ = [
    "GrammarError",
    "SymbolRef",
    "TerminalDef",
    "Production",
    "GrammarSpec",
    "parse_grammar_text",
    "augment_with_delimiters",
    "build_reasoning_grammar",
    "specialize_terminal",
    "with_start",
]


class GrammarError(ValueError):
    """Malformed grammar source or an invalid grammar transformation."""

    def __init__(self, msg: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            msg = f"{msg} (line {line}, column {column})"
        super().__init__(msg)


class SymbolRef(NamedTuple):
    kind: str  # "nonterminal" | "terminal"
    name: str

    @property
    def is_terminal(self) -> bool:
        return self.kind == "terminal"


def NT(name: str) -> SymbolRef:
    return SymbolRef("nonterminal", name)


def T(name: str) -> SymbolRef:
    return SymbolRef("terminal", name)


@dataclass(frozen=True)
class TerminalDef:
    name: str
    # literal bytes, or the regex/expression source text when ``is_regex``
    pattern: bytes | str
    is_regex: bool
    priority: int
    node: Node = field(repr=False)

    @classmethod
    def from_literal(cls, name: str, data: bytes, priority: int = 0) -> "TerminalDef":
        if not data:
            raise GrammarError(f"terminal {name} matches the empty string")
        return cls(name, data, False, priority, literal(data))


@dataclass(frozen=True)
class Production:
    lhs: str
    rhs: tuple
    alias: str | None = None

    @property
    def is_epsilon(self) -> bool:
        return not self.rhs


@dataclass(frozen=True)
class GrammarSpec:
    """An immutable context-free grammar with byte-level terminals."""

    productions: tuple
    terminals: tuple  # TerminalDef, in declaration order
    start: str
    ignore: tuple = ()
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        names = self.nonterminals
        if self.start not in names:
            raise GrammarError(f"start rule {self.start!r} has no productions")
        tmap = self.terminal_map
        if len(tmap) != len(self.terminals):
            raise GrammarError("duplicate terminal definition")
        for p in self.productions:
            for sym in p.rhs:
                if sym.is_terminal and sym.name not in tmap:
                    raise GrammarError(f"undefined terminal {sym.name} in rule {p.lhs}")
                if not sym.is_terminal and sym.name not in names:
                    raise GrammarError(f"undefined rule {sym.name} in rule {p.lhs}")
        for name in self.ignore:
            if name not in tmap:
                raise GrammarError(f"undefined terminal {name} in %ignore")

    @property
    def nonterminals(self) -> frozenset:
        return frozenset(p.lhs for p in self.productions)

    @property
    def terminal_map(self) -> dict:
        tmap = self._cache.get("tmap")
        if tmap is None:
            tmap = self._cache["tmap"] = {t.name: t for t in self.terminals}
        return tmap

    def terminal(self, name: str) -> TerminalDef:
        try:
            return self.terminal_map[name]
        except KeyError:
            raise GrammarError(f"unknown terminal {name!r}") from None

    def rules_for(self, lhs: str) -> list:
        return [p for p in self.productions if p.lhs == lhs]

    def fresh_name(self, base: str) -> str:
        taken = self.nonterminals | {t.name for t in self.terminals}
        name, i = base, 0
        while name in taken:
            i += 1
            name = f"{base}_{i}"
        return name


# --- source tokenizer ------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\f\r]+)
  | (?P<comment>//[^\n]*)
  | (?P<nl>\n)
  | (?P<directive>%[a-z]+)
  | (?P<arrow>->)
  | (?P<string>"(?:[^"\\\n]|\\.)*"i?)
  | (?P<regex>/(?:[^/\\\n]|\\.)+/[imslux]*)
  | (?P<rule>[a-z_][a-z_0-9]*)
  | (?P<term>_?[A-Z][A-Z_0-9]*)
  | (?P<prio>\.-?[0-9]+)
  | (?P<op>[:|()?*+\[\]~])
    """,
    re.VERBOSE,
)


class _Tok(NamedTuple):
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise GrammarError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            toks.append(_Tok("nl", "\n", line, pos - line_start + 1))
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    # a newline followed by '|' continues the previous definition
    out: list[_Tok] = []
    for i, tok in enumerate(toks):
        if tok.kind == "nl":
            j = i + 1
            while j < len(toks) and toks[j].kind == "nl":
                j += 1
            if j < len(toks) and toks[j].text == "|":
                continue
            if out and out[-1].kind == "nl":
                continue
        out.append(tok)
    return out


def _unquote(text: str, tok: _Tok) -> bytes:
    if text.endswith("i"):
        raise GrammarError("case-insensitive literals are not supported", tok.line, tok.col)
    body = text[1:-1]
    out = []
    i = 0
    escapes = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", '"': '"', "0": "\0"}
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            out.append(escapes.get(nxt, "\\" + nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out).encode("utf-8")


# --- expression trees (pre-desugaring) ---------------------------------------


@dataclass(frozen=True)
class _Lit:
    data: bytes
    src: str


@dataclass(frozen=True)
class _Re:
    pattern: str
    src: str


@dataclass(frozen=True)
class _Ref:
    name: str
    is_terminal: bool


@dataclass(frozen=True)
class _Op:
    op: str  # '?', '*', '+'
    body: object


@dataclass(frozen=True)
class _Group:
    alts: tuple  # tuple of (items tuple, alias)


class _SourceParser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, msg: str, tok: _Tok | None = None) -> GrammarError:
        tok = tok or self.peek() or (self.toks[-1] if self.toks else _Tok("eof", "", 1, 1))
        return GrammarError(msg, tok.line, tok.col)

    def expect(self, text: str) -> _Tok:
        tok = self.peek()
        if tok is None or tok.text != text:
            raise self.error(f"expected {text!r}, found {tok.text if tok else 'end of input'!r}")
        return self.take()

    def statements(self):
        while True:
            tok = self.peek()
            if tok is None:
                return
            if tok.kind == "nl":
                self.take()
                continue
            if tok.kind == "directive":
                self.take()
                if tok.text != "%ignore":
                    raise self.error(f"unsupported directive {tok.text}", tok)
                yield ("ignore", self.alternatives(), tok)
            elif tok.kind in ("rule", "term") or (
                tok.text in ("?", "!")
                and self.i + 1 < len(self.toks)
                and self.toks[self.i + 1].kind == "rule"
            ):
                if tok.kind == "op":
                    # ?rule / !rule: inlining hints, no effect on the language
                    self.take()
                    tok = self.peek()
                self.take()
                prio = 0
                if self.peek() is not None and self.peek().kind == "prio":
                    prio_tok = self.take()
                    if tok.kind == "rule":
                        raise self.error("rule priorities are not supported", prio_tok)
                    prio = int(prio_tok.text[1:])
                self.expect(":")
                yield (tok.kind, (tok.text, prio, self.alternatives()), tok)
            else:
                raise self.error(f"unexpected {tok.text!r}", tok)
            end = self.peek()
            if end is not None and end.kind != "nl":
                raise self.error(f"unexpected {end.text!r}", end)

    def alternatives(self) -> tuple:
        alts = [self.sequence()]
        while self.peek() is not None and self.peek().text == "|":
            self.take()
            alts.append(self.sequence())
        return tuple(alts)

    def sequence(self):
        items = []
        alias = None
        while True:
            tok = self.peek()
            if tok is None or tok.kind == "nl" or tok.text in ("|", ")"):
                break
            if tok.kind == "arrow":
                self.take()
                name = self.peek()
                if name is None or name.kind != "rule":
                    raise self.error("expected alias name after '->'")
                alias = self.take().text
                continue
            if alias is not None:
                raise self.error("alias must end the alternative", tok)
            items.append(self.item())
        if not items:
            raise self.error("empty alternative")
        return (tuple(items), alias)

    def item(self):
        node = self.atom()
        while self.peek() is not None and self.peek().text in ("?", "*", "+"):
            node = _Op(self.take().text, node)
        return node

    def atom(self):
        tok = self.take()
        if tok.kind == "string":
            data = _unquote(tok.text, tok)
            if not data:
                raise self.error("empty literal", tok)
            return _Lit(data, tok.text)
        if tok.kind == "regex":
            body, _, flags = tok.text[1:].rpartition("/")
            if flags:
                raise self.error(f"regex flags {flags!r} are not supported", tok)
            return _Re(body, tok.text)
        if tok.kind == "rule":
            return _Ref(tok.text, False)
        if tok.kind == "term":
            return _Ref(tok.text, True)
        if tok.text == "(":
            alts = self.alternatives()
            self.expect(")")
            return _Group(alts)
        raise self.error(f"unexpected {tok.text!r}", tok)


class _Builder:
    def __init__(self):
        self.productions: list[Production] = []
        self.rule_names: list[str] = []
        self.terminals: dict[str, TerminalDef] = {}
        self.term_sources: dict[str, tuple] = {}
        self.term_prio: dict[str, int] = {}
        self.term_order: list[str] = []
        self.anon: dict[str, str] = {}
        self.counter = 0

    def fresh(self, base: str) -> str:
        self.counter += 1
        return f"__{base}_{self.counter}"

    def anon_terminal(self, node) -> str:
        if node.src in self.anon:
            return self.anon[node.src]
        name = node.src
        self.anon[node.src] = name
        self.term_order.append(name)
        self.term_sources[name] = (((node,), None),)
        self.term_prio[name] = 0
        return name

    def symbol(self, node, owner: str) -> SymbolRef:
        if isinstance(node, (_Lit, _Re)):
            return T(self.anon_terminal(node))
        if isinstance(node, _Ref):
            return T(node.name) if node.is_terminal else NT(node.name)
        if isinstance(node, _Group):
            name = self.fresh(f"{owner}_group")
            self.add_rule(name, node.alts)
            return NT(name)
        if isinstance(node, _Op):
            inner = self.symbol(node.body, owner)
            if node.op == "?":
                name = self.fresh(f"{owner}_opt")
                self.productions += [Production(name, (inner,)), Production(name, ())]
            elif node.op == "*":
                name = self.fresh(f"{owner}_star")
                self.productions += [Production(name, (NT(name), inner)), Production(name, ())]
            else:
                name = self.fresh(f"{owner}_plus")
                self.productions += [Production(name, (NT(name), inner)), Production(name, (inner,))]
            self.rule_names.append(name)
            return NT(name)
        raise TypeError(node)

    def add_rule(self, name: str, alts) -> None:
        self.rule_names.append(name)
        for items, alias in alts:
            rhs = tuple(self.symbol(item, name.lstrip("_")) for item in items)
            self.productions.append(Production(name, rhs, alias))

    def terminal_node(self, name: str, stack: tuple = ()) -> Node:
        if name in stack:
            raise GrammarError(f"recursive terminal definition {name}")
        if name not in self.term_sources:
            raise GrammarError(f"undefined terminal {name}")

        def build(node) -> Node:
            if isinstance(node, _Lit):
                return literal(node.data)
            if isinstance(node, _Re):
                try:
                    return parse_regex(node.pattern)
                except RegexError as exc:
                    raise GrammarError(f"bad regex {node.src} in {name}: {exc}") from None
            if isinstance(node, _Ref):
                if not node.is_terminal:
                    raise GrammarError(f"terminal {name} refers to rule {node.name}")
                return self.terminal_node(node.name, stack + (name,))
            if isinstance(node, _Group):
                return alternatives(node.alts)
            if isinstance(node, _Op):
                lo, hi = {"?": (0, 1), "*": (0, None), "+": (1, None)}[node.op]
                return Repeat(build(node.body), lo, hi)
            raise TypeError(node)

        def alternatives(alts) -> Node:
            options = []
            for items, alias in alts:
                if alias is not None:
                    raise GrammarError(f"alias inside terminal {name}")
                parts = tuple(build(i) for i in items)
                options.append(parts[0] if len(parts) == 1 else Concat(parts))
            return options[0] if len(options) == 1 else Alt(tuple(options))

        return alternatives(self.term_sources[name])

    def terminal_def(self, name: str) -> TerminalDef:
        alts = self.term_sources[name]
        node = self.terminal_node(name)
        single = alts[0][0][0] if len(alts) == 1 and len(alts[0][0]) == 1 else None
        if isinstance(single, _Lit):
            pattern, is_regex = single.data, False
        elif isinstance(single, _Re):
            pattern, is_regex = single.pattern, True
        else:
            pattern = " | ".join(" ".join(_item_src(i) for i in items) for items, _ in alts)
            is_regex = True
        return TerminalDef(name, pattern, is_regex, self.term_prio[name], node)


def _item_src(node) -> str:
    if isinstance(node, (_Lit, _Re)):
        return node.src
    if isinstance(node, _Ref):
        return node.name
    if isinstance(node, _Op):
        return _item_src(node.body) + node.op
    if isinstance(node, _Group):
        return "(" + " | ".join(" ".join(_item_src(i) for i in items) for items, _ in node.alts) + ")"
    raise TypeError(node)


def parse_grammar_text(text: str | bytes, start: str = "start") -> GrammarSpec:
    """Parse grammar source into a :class:`GrammarSpec`.

    Raises :class:`GrammarError` on syntax errors (with line and column),
    undefined or duplicate symbols, and regexes that fail to compile.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    parser = _SourceParser(text)
    b = _Builder()
    rules: list[tuple[str, tuple]] = []
    seen_rules: set[str] = set()
    ignore_defs = []
    for kind, payload, tok in parser.statements():
        if kind == "ignore":
            ignore_defs.append((payload, tok))
            continue
        name, prio, alts = payload
        if kind == "rule":
            if name in seen_rules:
                what = "start rule" if name == start else "rule"
                raise GrammarError(f"duplicate {what} {name!r}", tok.line, tok.col)
            seen_rules.add(name)
            rules.append((name, alts))
        else:
            if name in b.term_sources:
                raise GrammarError(f"duplicate terminal {name!r}", tok.line, tok.col)
            b.term_sources[name] = alts
            b.term_prio[name] = prio
            b.term_order.append(name)
    for name, alts in rules:
        b.add_rule(name, alts)

    ignore = []
    for alts, tok in ignore_defs:
        if len(alts) == 1 and len(alts[0][0]) == 1 and isinstance(alts[0][0][0], _Ref):
            ref = alts[0][0][0]
            if not ref.is_terminal:
                raise GrammarError("%ignore needs a terminal", tok.line, tok.col)
            ignore.append(ref.name)
        elif len(alts) == 1 and len(alts[0][0]) == 1 and isinstance(alts[0][0][0], (_Lit, _Re)):
            ignore.append(b.anon_terminal(alts[0][0][0]))
        else:
            raise GrammarError("%ignore takes a single terminal", tok.line, tok.col)

    # only terminals reachable from rules or %ignore are kept
    used = {s.name for p in b.productions for s in p.rhs if s.is_terminal} | set(ignore)
    for name in used:
        if name not in b.term_sources:
            raise GrammarError(f"undefined terminal {name}")
    terminals = []
    for name in b.term_order:
        if name not in used:
            continue
        tdef = b.terminal_def(name)
        _check_nonempty(tdef)
        terminals.append(tdef)
    if start not in seen_rules:
        raise GrammarError(f"missing start rule {start!r}")
    return GrammarSpec(tuple(b.productions), tuple(terminals), start, tuple(ignore))


def _check_nonempty(tdef: TerminalDef) -> None:
    from .regex_dfa import compile_dfa

    try:
        dfa = compile_dfa(tdef.node)
    except RegexError as exc:
        raise GrammarError(f"terminal {tdef.name}: {exc}") from None
    if dfa.matches_empty:
        raise GrammarError(f"terminal {tdef.name} matches the empty string")


def _as_bytes(s: str | bytes) -> bytes:
    return s.encode("utf-8") if isinstance(s, str) else bytes(s)


def augment_with_delimiters(g: GrammarSpec, s1: str | bytes, s2: str | bytes) -> GrammarSpec:
    """Return G' with L(G') = { s1 . w . s2 : w in L(g) }."""
    s1, s2 = _as_bytes(s1), _as_bytes(s2)
    if not s1 or not s2:
        raise GrammarError("delimiters must be non-empty")
    start = g.fresh_name("__delimited")
    open_t = g.fresh_name("__S1")
    close_t = g.fresh_name("__S2")
    top = max((t.priority for t in g.terminals), default=0)
    terminals = g.terminals + (
        TerminalDef.from_literal(open_t, s1, top),
        TerminalDef.from_literal(close_t, s2, top),
    )
    prods = (Production(start, (T(open_t), NT(g.start), T(close_t))),) + g.productions
    return GrammarSpec(prods, terminals, start, g.ignore)


def build_reasoning_grammar(g: GrammarSpec, encodings: Iterable[str | bytes]) -> GrammarSpec:
    """Return G_a -> R_M G with R_M -> R_M S | eps and S -> one encoding.

    L(G_a) = encodings* . L(g).
    """
    encs = [_as_bytes(e) for e in encodings]
    if not encs:
        raise GrammarError("at least one configuration encoding is required")
    if len(set(encs)) != len(encs):
        raise GrammarError("duplicate configuration encoding")
    if any(not e for e in encs):
        raise GrammarError("empty configuration encoding")
    start = g.fresh_name("__augmented")
    reasoning = g.fresh_name("__reasoning")
    step = g.fresh_name("__step")
    terminals = list(g.terminals)
    prods = [
        Production(start, (NT(reasoning), NT(g.start))),
        # left recursion keeps Earley sets identical across reasoning steps;
        # the language is the same as with R_M -> S R_M
        Production(reasoning, (NT(reasoning), NT(step))),
        Production(reasoning, ()),
    ]
    taken = {t.name for t in terminals} | g.nonterminals
    for i, enc in enumerate(encs):
        name = f"__ENC{i}"
        while name in taken:
            name = "_" + name
        terminals.append(TerminalDef.from_literal(name, enc))
        prods.append(Production(step, (T(name),)))
    return GrammarSpec(tuple(prods) + g.productions, tuple(terminals), start, g.ignore)


def specialize_terminal(g: GrammarSpec, terminal: str, allowed: Iterable[str | bytes]) -> GrammarSpec:
    """Restrict terminal ``terminal`` to exactly the literal strings in ``allowed``."""
    old = g.terminal(terminal)
    words = sorted({_as_bytes(a) for a in allowed})
    if not words:
        raise GrammarError("allowed set must be non-empty")
    if any(not w for w in words):
        raise GrammarError("allowed strings must be non-empty")
    top = max(t.priority for t in g.terminals) + 1
    node = literal(words[0]) if len(words) == 1 else Alt(tuple(literal(w) for w in words))
    pattern = "|".join(re.escape(w.decode("utf-8", "backslashreplace")) for w in words)
    new = TerminalDef(old.name, pattern if len(words) > 1 else words[0], len(words) > 1, top, node)
    terminals = tuple(new if t.name == terminal else t for t in g.terminals)
    return replace(g, terminals=terminals, _cache={})


def with_start(g: GrammarSpec, start: str) -> GrammarSpec:
    """Same rules, different start symbol."""
    if start not in g.nonterminals:
        raise GrammarError(f"unknown rule {start!r}")
    key = ("with_start", start)
    if key not in g._cache:
        g._cache[key] = replace(g, start=start, _cache={})
    return g._cache[key]
