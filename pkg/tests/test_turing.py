import itertools
import json
from pathlib import Path

import pytest

from crane.decoder import DecodeConfig, constrained_generate
from crane.grammar import build_reasoning_grammar
from crane.lm import TMBackedLM
from crane.recognizer import init, is_member
from crane.token_mask import compute_mask
from crane.turing import (
    BUNDLED_MACHINES,
    BudgetExceeded,
    MachineError,
    StepBudget,
    TuringMachine,
    bundled_machine,
    demo_prop34,
    encode_config,
    encode_transition,
    enumerate_encodings,
    initial_configuration,
    load_machine,
    output_grammar,
    tm_run,
    tm_step,
)

HERE = Path(__file__).parent
BUDGET = StepBudget(10_000)


def inputs(machine, max_len):
    sigma = sorted(machine.input_alphabet)
    for n in range(max_len + 1):
        yield from map("".join, itertools.product(sigma, repeat=n))


def naive_run(m: TuringMachine, x: str, max_steps: int = 10_000):
    """Second simulator: list-backed tapes grown on demand, written from the definition."""
    n = m.n_tapes
    tapes = [list(x) or [m.blank]] + [[m.blank] for _ in range(n - 1)]
    origin = [0] * n  # list index of tape cell 0
    heads = [0] * n
    q, steps = m.initial, 0
    while q not in m.halting:
        assert steps < max_steps
        for t in range(n):
            pos = heads[t] + origin[t]
            if pos < 0:
                tapes[t].insert(0, m.blank)
                origin[t] += 1
            elif pos >= len(tapes[t]):
                tapes[t].append(m.blank)
        reads = tuple(tapes[t][heads[t] + origin[t]] for t in range(n))
        q, writes, moves = m.delta[(q, reads)]
        for t, sym in enumerate(writes, start=1):
            tapes[t][heads[t] + origin[t]] = sym
        heads = [h + d for h, d in zip(heads, moves)]
        steps += 1
    out_tape, pos = tapes[-1], heads[-1] + origin[-1]
    out = []
    while 0 <= pos < len(out_tape) and out_tape[pos] != m.blank:
        out.append(out_tape[pos])
        pos += 1
    return "".join(out), steps


# --- tm_step -----------------------------------------------------------------


def test_copy_ab_first_step():
    m = load_machine(HERE / "fixtures" / "copy_ab.json")
    c0 = initial_configuration(m, "ab")
    c1 = tm_step(m, c0)
    assert c1.tapes[-1] == {0: "a"}
    assert c1.heads == (1, 1)
    assert c1.state == "copy" and c1.step == 1
    assert c0.tapes[-1] == {} and c0.heads == (0, 0)  # previous configuration untouched
    assert tm_run(m, "ab", BUDGET).output == "ab"


def test_step_from_halting_state_is_an_error():
    m = TuringMachine(
        frozenset("1"), frozenset("1_"), 0, "_", frozenset({"h"}), "h", {}, frozenset({"h"})
    )
    with pytest.raises(MachineError):
        tm_step(m, initial_configuration(m, "1"))
    assert tm_run(m, "1", BUDGET).output == ""


def test_heads_may_go_negative():
    delta = {
        ("s", ("_", "_", "_")): ("t", ("a", "_"), (-1, -1, 0)),
        ("t", ("_", "_", "_")): ("h", ("b", "c"), (-1, -1, 0)),
    }
    m = TuringMachine(frozenset("a"), frozenset("abc_"), 1, "_", frozenset("sth"), "s", delta, frozenset("h"))
    run = tm_run(m, "", BUDGET)
    last = run.trace[-1]
    assert last.heads == (-2, -2, 0)
    assert last.tapes[1] == {0: "a", -1: "b"}
    assert run.output == "c"


def test_missing_transition_is_an_error():
    m = TuringMachine(frozenset("1"), frozenset("1_"), 0, "_", frozenset("sh"), "s", {}, frozenset("h"))
    with pytest.raises(MachineError, match="no transition"):
        tm_step(m, initial_configuration(m, "1"))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(input_alphabet=frozenset("1_")),  # blank inside the input alphabet
        dict(initial="nope"),
        dict(halting=frozenset({"zz"})),
        dict(delta={("h", ("1", "_")): ("h", ("1",), (0, 0))}),  # leaves a halting state
        dict(delta={("s", ("1",)): ("h", ("1",), (0, 0))}),  # wrong arity
        dict(delta={("s", ("1", "_")): ("h", ("1",), (0, 2))}),  # bad move
    ],
)
def test_machine_validation(kwargs):
    base = dict(
        input_alphabet=frozenset("1"),
        tape_alphabet=frozenset("1_"),
        work_tapes=0,
        blank="_",
        states=frozenset("sh"),
        initial="s",
        delta={},
        halting=frozenset("h"),
    )
    base.update(kwargs)
    with pytest.raises(MachineError):
        TuringMachine(**base)


def test_input_outside_alphabet():
    with pytest.raises(MachineError):
        tm_run(bundled_machine("parity"), "2", BUDGET)


# --- tm_run ------------------------------------------------------------------


@pytest.mark.parametrize(
    "name, x, output, steps",
    [
        ("copy", "101", "101", 8),  # |x| copies, one turn, |x| + 1 rewinds
        ("copy", "", "", 2),
        ("parity", "1011", "1", 5),
        ("parity", "", "0", 1),
        ("parity", "00", "0", 3),
        ("unary_increment", "111", "1111", 8),
        ("unary_increment", "", "1", 2),
    ],
)
def test_run_examples(name, x, output, steps):
    run = tm_run(bundled_machine(name), x, BUDGET)
    assert run.halted
    assert run.output == output
    assert run.steps == steps
    assert len(run.trace) == steps + 1


def test_budget_exhaustion_is_reported():
    delta = {("s", ("_", "_")): ("s", ("_",), (1, 0))}
    m = TuringMachine(frozenset("1"), frozenset("1_"), 0, "_", frozenset("sh"), "s", delta, frozenset("h"))
    run = tm_run(m, "", StepBudget(50))
    assert not run.halted
    assert run.output == BudgetExceeded(50)
    with pytest.raises(ValueError):
        StepBudget(0)


@pytest.mark.parametrize("name", BUNDLED_MACHINES)
def test_simulators_agree(name):
    m = bundled_machine(name)
    for x in inputs(m, 8):
        run = tm_run(m, x, BUDGET)
        assert (run.output, run.steps) == naive_run(m, x), x


# --- encodings -----------------------------------------------------------------


GOLDEN = json.loads((HERE / "golden" / "encodings.json").read_text())


@pytest.mark.parametrize("name", BUNDLED_MACHINES)
def test_golden_encodings(name):
    m, gold = bundled_machine(name), GOLDEN[name]
    run = tm_run(m, gold["input"], BUDGET)
    assert run.output == gold["output"]
    assert [encode_config(m, a, b) for a, b in zip(run.trace, run.trace[1:])] == gold["encodings"]
    assert enumerate_encodings(m) == gold["alphabet"]


def test_copy_first_step_token_is_stable():
    m = bundled_machine("copy")
    run = tm_run(m, "1", BUDGET)
    assert encode_config(m, run.trace[0], run.trace[1]) == "<copy;1;RR>"


@pytest.mark.parametrize("name", BUNDLED_MACHINES)
def test_encoding_is_injective_on_transition_signatures(name):
    m = bundled_machine(name)
    seen = {}
    for q2, writes, moves in m.delta.values():
        tok = encode_transition(m, q2, writes, moves)
        assert seen.setdefault(tok, (q2, writes, moves)) == (q2, writes, moves)
    assert len(seen) == len(enumerate_encodings(m))


def test_parity_alphabet_size_matches_hand_count():
    # halt with (work, out) in {(_,0), (0,0), (1,1)}; scan writing 0 or 1 to the work tape
    assert len(enumerate_encodings(bundled_machine("parity"))) == 5


@pytest.mark.parametrize("name", BUNDLED_MACHINES)
def test_every_taken_step_is_enumerated(name):
    m = bundled_machine(name)
    alphabet = set(enumerate_encodings(m))
    for x in inputs(m, 7):
        run = tm_run(m, x, BUDGET)
        for a, b in zip(run.trace, run.trace[1:]):
            assert encode_config(m, a, b) in alphabet


def test_encode_rejects_non_adjacent_configurations():
    m = bundled_machine("copy")
    run = tm_run(m, "11", BUDGET)
    with pytest.raises(MachineError):
        encode_config(m, run.trace[0], run.trace[2])
    with pytest.raises(MachineError):
        encode_config(m, run.trace[1], run.trace[1])


@pytest.mark.parametrize("name", BUNDLED_MACHINES)
def test_json_round_trip(name):
    m = bundled_machine(name)
    again = TuringMachine.from_json(json.loads(json.dumps(m.to_json())))
    assert again == m


def test_wildcard_rows_expand():
    obj = {
        "input_alphabet": ["1"],
        "tape_alphabet": ["1", "_"],
        "work_tapes": 0,
        "blank": "_",
        "states": ["s", "h"],
        "initial": "s",
        "halting": ["h"],
        "delta": [
            {"state": "s", "read": ["*", "_"], "next": "h", "write": ["*"], "move": ["S", "S"]},
            {"state": "s", "read": ["_", "_"], "next": "h", "write": ["1"], "move": ["S", "S"]},
        ],
    }
    m = TuringMachine.from_json(obj)
    assert m.delta[("s", ("1", "_"))] == ("h", ("_",), (0, 0))  # "*" writes back tape 1's symbol
    assert m.delta[("s", ("_", "_"))] == ("h", ("1",), (0, 0))  # explicit row wins


# --- the reasoning-grammar demonstration ------------------------------------------


def test_demo_parity_example():
    m = bundled_machine("parity")
    rep = demo_prop34(m, output_grammar("parity"), "1011", BUDGET)
    assert rep.passed, rep.reason
    assert rep.produced.endswith(b"1")
    assert rep.reasoning_tokens == tm_run(m, "1011", BUDGET).steps == 5
    assert rep.produced == ("".join(GOLDEN["parity"]["encodings"]) + "1").encode()


def test_demo_copy_empty_input():
    m = bundled_machine("copy")
    rep = demo_prop34(m, output_grammar("copy"), "", BUDGET)
    assert rep.passed, rep.reason
    assert rep.produced == b"<rewind;_;SL><halt;_;SR>"
    assert rep.output_tokens == 0


@pytest.mark.parametrize("name", BUNDLED_MACHINES)
def test_demo_small_inputs(name):
    m = bundled_machine(name)
    g = output_grammar(name)
    lm = TMBackedLM(m, budget=BUDGET)
    ga = build_reasoning_grammar(g, enumerate_encodings(m))
    for x in inputs(m, 5):
        rep = demo_prop34(m, g, x, BUDGET, lm=lm, grammar=ga)
        assert rep.passed, (x, rep.reason)


def test_demo_reports_budget_exhaustion():
    rep = demo_prop34(bundled_machine("copy"), output_grammar("copy"), "1111", StepBudget(3))
    assert not rep.passed and "budget" in rep.reason


def test_restrictive_grammar_contrast():
    m = bundled_machine("parity")
    g = output_grammar("parity")
    lm = TMBackedLM(m, budget=BUDGET)
    vocab = lm.vocabulary()
    mask = compute_mask(init(g), vocab)
    assert not any(mask[vocab.id_of(e)] for e in enumerate_encodings(m))
    gen = constrained_generate(lm.encode_input("1011"), lm, g, DecodeConfig())
    assert is_member(g, gen.text)
    assert all(rec.bytes not in {e.encode() for e in lm.encodings} for rec in gen.step_log)
    assert len(gen.step_log) == 2  # one output symbol, then EOS
    # the model wanted a reasoning token at step one
    assert vocab.tokens[int(lm.scores(lm.encode_input("1011")).argmax())].startswith(b"<")


def test_output_grammars_cover_outputs():
    for name in BUNDLED_MACHINES:
        m = bundled_machine(name)
        g = output_grammar(name)
        for x in inputs(m, 6):
            assert is_member(g, tm_run(m, x, BUDGET).output)
    with pytest.raises(KeyError):
        bundled_machine("nope")
