"""Multi-tape Turing machines, step encodings and the reasoning-grammar demo.

Tape 0 is the read-only input tape, tapes ``1..k`` are work tapes and tape
``k+1`` is the output tape. A transition reads one symbol under every head,
writes to tapes ``1..k+1`` and moves every head by -1, 0 or +1.

Each step is summarised by one encoding token naming the state entered, the
symbols written and the head moves. Head positions are not part of the
token, so a configuration can only be rebuilt by replaying from the start.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping

__all__ = [
    "TuringMachine",
    "Configuration",
    "StepBudget",
    "BudgetExceeded",
    "MachineError",
    "RunResult",
    "initial_configuration",
    "tm_step",
    "tm_run",
    "encode_config",
    "encode_transition",
    "enumerate_encodings",
    "load_machine",
    "bundled_machine",
    "output_grammar",
    "BUNDLED_MACHINES",
    "Prop34Report",
    "demo_prop34",
]

_MOVES = {-1: "L", 0: "S", 1: "R"}
_MOVE_CODES = {"L": -1, "S": 0, "R": 1, -1: -1, 0: 0, 1: 1}
_RESERVED = set("<>;,$")


class MachineError(ValueError):
    """Ill-formed machine, or a step the machine does not define."""


@dataclass(frozen=True)
class TuringMachine:
    input_alphabet: frozenset
    tape_alphabet: frozenset
    work_tapes: int
    blank: str
    states: frozenset
    initial: str
    # (state, reads[k+2]) -> (state, writes[k+1], moves[k+2])
    delta: Mapping
    halting: frozenset
    name: str = "machine"

    def __post_init__(self):
        if self.blank in self.input_alphabet:
            raise MachineError("blank must not be an input symbol")
        if not self.input_alphabet <= self.tape_alphabet or self.blank not in self.tape_alphabet:
            raise MachineError("tape alphabet must contain the input alphabet and the blank")
        if self.initial not in self.states or not self.halting <= self.states:
            raise MachineError("initial and halting states must be states")
        for sym in self.tape_alphabet | self.states:
            if not sym or _RESERVED & set(sym):
                raise MachineError(f"name {sym!r} is empty or uses one of {''.join(sorted(_RESERVED))}")
        n = self.work_tapes + 2
        for (q, reads), (q2, writes, moves) in self.delta.items():
            if q in self.halting:
                raise MachineError(f"transition out of halting state {q!r}")
            if q not in self.states or q2 not in self.states:
                raise MachineError(f"unknown state in transition {q!r} -> {q2!r}")
            if len(reads) != n or len(writes) != n - 1 or len(moves) != n:
                raise MachineError(f"transition from {q!r} has the wrong arity")
            if not set(reads) | set(writes) <= self.tape_alphabet:
                raise MachineError(f"transition from {q!r} uses symbols outside the tape alphabet")
            if not set(moves) <= {-1, 0, 1}:
                raise MachineError(f"transition from {q!r} has a move outside -1, 0, +1")

    @property
    def n_tapes(self) -> int:
        return self.work_tapes + 2

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "input_alphabet": sorted(self.input_alphabet),
            "tape_alphabet": sorted(self.tape_alphabet),
            "work_tapes": self.work_tapes,
            "blank": self.blank,
            "states": sorted(self.states),
            "initial": self.initial,
            "halting": sorted(self.halting),
            "delta": [
                {"state": q, "read": list(r), "next": q2, "write": list(w), "move": [_MOVES[d] for d in mv]}
                for (q, r), (q2, w, mv) in sorted(self.delta.items())
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TuringMachine":
        """Build from the JSON form; ``"*"`` in a read row matches any symbol.

        In a write row, ``"*"`` writes back the symbol read on that tape
        (write ``i`` goes to tape ``i + 1``). Explicit rows win over rows
        produced by wildcards.
        """
        gamma = sorted(obj["tape_alphabet"])
        delta: dict = {}
        explicit: set = set()
        for row in obj["delta"]:
            options = [gamma if r == "*" else [r] for r in row["read"]]
            combos = [()]
            for opts in options:
                combos = [c + (s,) for c in combos for s in opts]
            is_explicit = "*" not in row["read"]
            for reads in combos:
                key = (row["state"], reads)
                if key in explicit and not is_explicit:
                    continue
                if is_explicit and key in explicit:
                    raise MachineError(f"duplicate transition for {key}")
                writes = tuple(reads[i + 1] if w == "*" else w for i, w in enumerate(row["write"]))
                moves = tuple(_MOVE_CODES[d] for d in row["move"])
                delta[key] = (row["next"], writes, moves)
                if is_explicit:
                    explicit.add(key)
        return cls(
            input_alphabet=frozenset(obj["input_alphabet"]),
            tape_alphabet=frozenset(gamma),
            work_tapes=int(obj["work_tapes"]),
            blank=obj["blank"],
            states=frozenset(obj["states"]),
            initial=obj["initial"],
            delta=delta,
            halting=frozenset(obj["halting"]),
            name=obj.get("name", "machine"),
        )


@dataclass(frozen=True)
class Configuration:
    state: str
    tapes: tuple  # one dict per tape: index -> symbol; missing cells are blank
    heads: tuple
    step: int = 0

    def read(self, blank: str) -> tuple:
        return tuple(t.get(h, blank) for t, h in zip(self.tapes, self.heads))

    def tape_text(self, tape: int, blank: str) -> str:
        cells = self.tapes[tape]
        if not cells:
            return ""
        lo, hi = min(cells), max(cells)
        return "".join(cells.get(i, blank) for i in range(lo, hi + 1))


@dataclass(frozen=True)
class StepBudget:
    max_steps: int

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("step budget must be positive")


@dataclass(frozen=True)
class BudgetExceeded:
    """Marker returned by tm_run when the machine did not halt in budget."""

    steps: int


@dataclass(frozen=True)
class RunResult:
    output: str | BudgetExceeded
    trace: list = field(repr=False)

    @property
    def halted(self) -> bool:
        return not isinstance(self.output, BudgetExceeded)

    @property
    def steps(self) -> int:
        return len(self.trace) - 1


def initial_configuration(m: TuringMachine, x) -> Configuration:
    symbols = list(x)
    bad = [s for s in symbols if s not in m.input_alphabet]
    if bad:
        raise MachineError(f"input symbols {bad!r} are not in the input alphabet")
    tapes = ({i: s for i, s in enumerate(symbols)},) + tuple({} for _ in range(m.work_tapes + 1))
    return Configuration(m.initial, tapes, (0,) * m.n_tapes, 0)


def tm_step(m: TuringMachine, c: Configuration) -> Configuration:
    if c.state in m.halting:
        raise MachineError(f"cannot step: state {c.state!r} is halting")
    reads = c.read(m.blank)
    try:
        q2, writes, moves = m.delta[(c.state, reads)]
    except KeyError:
        raise MachineError(f"no transition for state {c.state!r} reading {reads!r}") from None
    tapes = [c.tapes[0]]
    for t, sym in enumerate(writes, start=1):
        cells = dict(c.tapes[t])
        if sym == m.blank:
            cells.pop(c.heads[t], None)
        else:
            cells[c.heads[t]] = sym
        tapes.append(cells)
    heads = tuple(h + d for h, d in zip(c.heads, moves))
    return Configuration(q2, tuple(tapes), heads, c.step + 1)


def read_output(m: TuringMachine, c: Configuration) -> str:
    """Output tape from the output head up to (not including) the first blank."""
    out_tape, pos = c.tapes[-1], c.heads[-1]
    symbols = []
    while out_tape.get(pos, m.blank) != m.blank:
        symbols.append(out_tape[pos])
        pos += 1
    return "".join(symbols)


def tm_run(m: TuringMachine, x, budget: StepBudget) -> RunResult:
    c = initial_configuration(m, x)
    trace = [c]
    while c.state not in m.halting:
        if c.step >= budget.max_steps:
            return RunResult(BudgetExceeded(c.step), trace)
        c = tm_step(m, c)
        trace.append(c)
    return RunResult(read_output(m, c), trace)


def encode_transition(m: TuringMachine, state: str, writes, moves) -> str:
    return "<" + state + ";" + ",".join(writes) + ";" + "".join(_MOVES[d] for d in moves) + ">"


def encode_config(m: TuringMachine, prev: Configuration, next: Configuration) -> str:
    """Token for the step ``prev -> next``: state entered, writes, moves."""
    if next.step != prev.step + 1:
        raise MachineError("configurations are not adjacent")
    if prev.state in m.halting:
        raise MachineError("previous configuration is halting")
    reads = prev.read(m.blank)
    entry = m.delta.get((prev.state, reads))
    if entry is None:
        raise MachineError(f"no transition for state {prev.state!r} reading {reads!r}")
    q2, writes, moves = entry
    moved = tuple(b - a for a, b in zip(prev.heads, next.heads))
    if q2 != next.state or moved != moves:
        raise MachineError("next is not the successor of prev")
    return encode_transition(m, q2, writes, moves)


def enumerate_encodings(m: TuringMachine) -> list[str]:
    """Every encoding token the machine can produce, sorted."""
    return sorted({encode_transition(m, q2, w, mv) for q2, w, mv in m.delta.values()})


# --- bundled machines -----------------------------------------------------------

_MACHINE_DIR = Path(__file__).parent / "machines"
BUNDLED_MACHINES = ("copy", "parity", "unary_increment")

# Output languages containing M(x) for every input of the bundled machines.
_OUTPUT_GRAMMARS = {
    "copy": 'start: BIT*\nBIT: "0" | "1"\n',
    "parity": 'start: "0" | "1"\n',
    "unary_increment": 'start: "1"+\n',
}


def load_machine(path: str | Path) -> TuringMachine:
    with open(path, encoding="utf-8") as fh:
        return TuringMachine.from_json(json.load(fh))


@lru_cache(maxsize=None)
def bundled_machine(name: str) -> TuringMachine:
    if name not in BUNDLED_MACHINES:
        raise KeyError(f"unknown machine {name!r}; bundled: {', '.join(BUNDLED_MACHINES)}")
    return load_machine(_MACHINE_DIR / f"{name}.json")


@lru_cache(maxsize=None)
def output_grammar(name: str):
    """Grammar of the output language of a bundled machine."""
    from .grammar import parse_grammar_text

    return parse_grammar_text(_OUTPUT_GRAMMARS[name])


# --- reasoning-grammar demonstration --------------------------------------------


@dataclass
class Prop34Report:
    """Outcome of decoding one input under the reasoning grammar."""

    machine: str
    input: str
    passed: bool
    expected: bytes
    produced: bytes
    steps: int
    reasoning_tokens: int
    output_tokens: int
    reason: str = ""


def demo_prop34(m: TuringMachine, g, x, budget: StepBudget, *, lm=None, grammar=None) -> Prop34Report:
    """Decode ``x`` with the machine-backed LM under ``R_M g`` and check the result.

    The generation must equal the step encodings of the direct run followed
    by ``M(x)``; the encoding part must lie in the reasoning language and the
    rest in ``L(g)``. ``lm`` and ``grammar`` may be passed in to reuse them
    across many inputs.
    """
    from .decoder import DecodeConfig, constrained_generate
    from .grammar import build_reasoning_grammar, with_start
    from .lm import TMBackedLM
    from .recognizer import is_member

    x = "".join(x)
    if lm is None:
        lm = TMBackedLM(m, budget=budget)
    if grammar is None:
        grammar = build_reasoning_grammar(g, enumerate_encodings(m))
    run = tm_run(m, x, budget)
    if not run.halted:
        return Prop34Report(m.name, x, False, b"", b"", run.steps, 0, 0, reason="step budget exceeded")
    encodings = [encode_config(m, a, b) for a, b in zip(run.trace, run.trace[1:])]
    expected = ("".join(encodings) + run.output).encode()
    cfg = DecodeConfig(max_new_tokens=len(encodings) + len(run.output) + 2)
    gen = constrained_generate(lm.encode_input(x), lm, grammar, cfg)
    produced = gen.text
    reasoning_text = produced[: len(produced) - len(run.output.encode())]
    output_text = produced[len(reasoning_text) :]
    reasons = []
    if produced != expected:
        reasons.append("generation differs from the direct run")
    reasoning_rule = grammar.productions[0].rhs[0].name  # G_a -> R_M G
    if not is_member(with_start(grammar, reasoning_rule), reasoning_text):
        reasons.append("reasoning prefix is not a sequence of encodings")
    if not is_member(g, output_text):
        reasons.append("output suffix is not in the output grammar")
    if gen.stop_reason != "eos":
        reasons.append(f"generation stopped by {gen.stop_reason}")
    n_out = sum(1 for t in gen.tokens if t != lm.vocab.eos_id) - len(encodings)
    return Prop34Report(
        machine=m.name,
        input=x,
        passed=not reasons,
        expected=expected,
        produced=produced,
        steps=run.steps,
        reasoning_tokens=len(encodings),
        output_tokens=n_out,
        reason="; ".join(reasons),
    )
