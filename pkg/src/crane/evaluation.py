"""Answer extraction, parse and equivalence checks, and dataset-level reports.

Equivalence of arithmetic answers is decided by evaluating both expressions
on random integer assignments with exact rational arithmetic. The check is
one-sided: it never rejects equivalent expressions, and accepts an
inequivalent pair only if every trial happens to agree.
"""

from __future__ import annotations

import ast
import json
import math
import random
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Literal, Sequence

from .decoder import (
    DecodeConfig,
    Generation,
    constrained_generate,
    crane_generate,
    unconstrained_generate,
)
from .grammar import GrammarSpec, augment_with_delimiters, specialize_terminal
from .grammars import gsm_answer_grammar, load_grammar
from .lm import LanguageModel
from .recognizer import is_member

__all__ = [
    "TaskInstance",
    "InstanceRecord",
    "MethodRow",
    "EvalReport",
    "EquivalenceOracle",
    "EvaluationError",
    "METHODS",
    "extract_final_answer",
    "check_parse",
    "check_equivalence",
    "check_prover9_compiles",
    "load_dataset",
    "answer_grammar",
    "build_prompt",
    "run_eval",
]

METHODS = ("crane", "constrained", "unconstrained", "unconstrained_no_cot")
Method = Literal["crane", "constrained", "unconstrained", "unconstrained_no_cot"]

COT_TEMPLATE = "{prompt}\n"
NO_COT_TEMPLATE = "{prompt}\nAnswer: "


class EvaluationError(ValueError):
    """An expression could not be evaluated (for example, an unbound name)."""


@dataclass(frozen=True)
class TaskInstance:
    id: str
    prompt: str
    variables: tuple
    ground_truth: str
    grammar_id: str = "gsm"

    @classmethod
    def from_json(cls, obj: dict) -> "TaskInstance":
        return cls(
            id=str(obj["id"]),
            prompt=obj["prompt"],
            variables=tuple(obj.get("variables", ())),
            ground_truth=obj["ground_truth"],
            grammar_id=obj.get("grammar_id", "gsm"),
        )


def load_dataset(path) -> list[TaskInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(TaskInstance.from_json(json.loads(line)))
    return out


# --- extraction and parsing -------------------------------------------------------------


def extract_final_answer(output: bytes | str, s1: bytes | str = b"<<", s2: bytes | str = b">>") -> bytes | None:
    """Interior of the last complete ``s1 ... s2`` block, or None."""
    output, s1, s2 = (x.encode("utf-8") if isinstance(x, str) else x for x in (output, s1, s2))
    best = None
    pos = 0
    while True:
        i = output.find(s1, pos)
        if i < 0:
            return best
        j = output.find(s2, i + len(s1))
        if j < 0:
            return best
        best = output[i + len(s1) : j]
        pos = j + len(s2)


def answer_grammar(grammar_id: str) -> GrammarSpec:
    """Undelimited answer grammar G for a dataset grammar id."""
    if grammar_id == "gsm":
        return gsm_answer_grammar()
    return load_grammar(grammar_id)


def check_parse(expr: bytes | str, g: GrammarSpec | None = None) -> bool:
    """Is ``expr`` a member of the answer grammar (GSM by default)?"""
    return is_member(gsm_answer_grammar() if g is None else g, expr)


def check_prover9_compiles(output: bytes | str, g: GrammarSpec | None = None) -> bool:
    """Syntactic check of a Predicates/Premises/Conclusion program.

    Comments run to end of line, so a missing final newline is supplied.
    """
    if isinstance(output, str):
        output = output.encode("utf-8")
    if not output.endswith(b"\n"):
        output += b"\n"
    return is_member(load_grammar("prover9") if g is None else g, output)


# --- equivalence --------------------------------------------------------------------


@dataclass(frozen=True)
class EquivalenceOracle:
    trials: int = 100
    value_range: tuple = (1, 100)
    seed: int = 0
    division: Literal["exact", "float"] = "exact"
    tolerance: float = 1e-9  # relative, for division="float"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        lo, hi = self.value_range
        if lo > hi:
            raise ValueError("empty value range")


class _ZeroDivision(Exception):
    pass


def _floordiv(a, b):
    if b == 0:
        raise _ZeroDivision
    return Fraction(math.floor(a / b))


def _mod(a, b):
    if b == 0:
        raise _ZeroDivision
    return a - b * math.floor(a / b)


def _truediv(a, b):
    if b == 0:
        raise _ZeroDivision
    return a / b


_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: _truediv,
    ast.FloorDiv: _floordiv,
    ast.Mod: _mod,
}


def _parse_expr(expr: str) -> ast.expr:
    try:
        return ast.parse(expr.strip(), mode="eval").body
    except SyntaxError as exc:
        raise EvaluationError(f"cannot parse expression {expr!r}") from exc


def _free_names(node: ast.expr) -> set[str]:
    callees = set()
    for sub in ast.walk(node):
        if isinstance(sub, ast.Call):
            if not (isinstance(sub.func, ast.Name) and sub.func.id == "int" and len(sub.args) == 1 and not sub.keywords):
                raise EvaluationError("only int(...) calls are supported")
            callees.add(id(sub.func))
    return {sub.id for sub in ast.walk(node) if isinstance(sub, ast.Name) and id(sub) not in callees}


def _eval(node: ast.expr, env: dict, division: str):
    if isinstance(node, ast.BinOp):
        op = _BINOPS.get(type(node.op))
        if op is None:
            raise EvaluationError(f"unsupported operator {type(node.op).__name__}")
        a, b = _eval(node.left, env, division), _eval(node.right, env, division)
        if division == "float" and isinstance(node.op, ast.Div):
            if b == 0:
                raise _ZeroDivision
            return float(a) / float(b)
        return op(a, b)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval(node.operand, env, division)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return Fraction(repr(node.value)) if isinstance(node.value, float) else Fraction(node.value)
    if isinstance(node, ast.Name):
        try:
            return env[node.id]
        except KeyError:
            raise EvaluationError(f"unbound variable {node.id!r}") from None
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id == "int":
        v = _eval(node.args[0], env, division)
        return Fraction(int(v))  # truncates toward zero
    raise EvaluationError(f"unsupported syntax {type(node).__name__}")


def _close(a, b, tol: float) -> bool:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return math.isclose(float(a), float(b), rel_tol=tol, abs_tol=tol)


def check_equivalence(
    a: str, b: str, oracle: EquivalenceOracle = EquivalenceOracle(), vars: Iterable[str] | None = None
) -> bool:
    """Randomised functional equivalence of two arithmetic expressions.

    Assignments that divide by zero on either side are redrawn. Raises
    EvaluationError for names outside ``vars`` or unsupported syntax.
    """
    ta, tb = _parse_expr(a), _parse_expr(b)
    names = _free_names(ta) | _free_names(tb)
    if vars is not None:
        extra = names - set(vars)
        if extra:
            raise EvaluationError(f"unbound variables {sorted(extra)}")
    if ast.dump(ta) == ast.dump(tb):
        return True
    names = sorted(names)
    rng = random.Random(oracle.seed)
    lo, hi = oracle.value_range
    done = redraws = 0
    while done < oracle.trials:
        env = {n: Fraction(rng.randint(lo, hi)) for n in names}
        try:
            va = _eval(ta, env, oracle.division)
            vb = _eval(tb, env, oracle.division)
        except _ZeroDivision:
            redraws += 1
            if redraws > 100 * oracle.trials:
                raise EvaluationError("could not find assignments avoiding division by zero") from None
            continue
        if not _close(va, vb, oracle.tolerance):
            return False
        done += 1
    return True


# --- reports -----------------------------------------------------------------------


@dataclass
class InstanceRecord:
    id: str
    method: str
    extracted: str | None
    parsed: bool
    equivalent: bool
    token_count: int
    error: str | None = None


@dataclass
class MethodRow:
    accuracy_pct: float
    parse_pct: float
    avg_tokens: float
    n: int


@dataclass
class EvalReport:
    rows: dict = field(default_factory=dict)  # method -> MethodRow
    records: list = field(default_factory=list)

    def merge(self, other: "EvalReport") -> "EvalReport":
        return EvalReport({**self.rows, **other.rows}, self.records + other.records)

    def to_json(self) -> dict:
        return {
            "rows": {m: asdict(r) for m, r in self.rows.items()},
            "records": [asdict(r) for r in self.records],
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    def table(self) -> str:
        lines = [f"{'method':<22}{'Acc. (%)':>10}{'Parse (%)':>11}{'Tokens':>9}"]
        for m, r in self.rows.items():
            lines.append(f"{m:<22}{r.accuracy_pct:>10.1f}{r.parse_pct:>11.1f}{r.avg_tokens:>9.1f}")
        return "\n".join(lines)


def _row(records: Sequence[InstanceRecord]) -> MethodRow:
    n = len(records)
    if n == 0:
        return MethodRow(0.0, 0.0, 0.0, 0)
    return MethodRow(
        accuracy_pct=100.0 * sum(r.equivalent for r in records) / n,
        parse_pct=100.0 * sum(r.parsed for r in records) / n,
        avg_tokens=sum(r.token_count for r in records) / n,
        n=n,
    )


def build_prompt(inst: TaskInstance, method: str) -> str:
    template = NO_COT_TEMPLATE if method == "unconstrained_no_cot" else COT_TEMPLATE
    return template.format(prompt=inst.prompt)


def _instance_grammar(inst: TaskInstance) -> GrammarSpec:
    g = answer_grammar(inst.grammar_id)
    if inst.variables and "VARIABLE" in g.terminal_map:
        g = specialize_terminal(g, "VARIABLE", inst.variables)
    return g


def _generate(inst: TaskInstance, method: str, lm: LanguageModel, cfg: DecodeConfig) -> Generation:
    vocab = lm.vocabulary()
    prompt = vocab.encode(build_prompt(inst, method))
    if method == "crane":
        return crane_generate(prompt, lm, cfg, _instance_grammar(inst))
    if method == "constrained":
        g_prime = augment_with_delimiters(_instance_grammar(inst), cfg.s1, cfg.s2)
        return constrained_generate(prompt, lm, g_prime, cfg)
    return unconstrained_generate(prompt, lm, cfg)


def _evaluate(inst: TaskInstance, method: str, lm, cfg: DecodeConfig, oracle: EquivalenceOracle) -> InstanceRecord:
    vocab = lm.vocabulary()
    try:
        gen = _generate(inst, method, lm, cfg)
    except Exception as exc:  # recorded per instance; the run continues
        return InstanceRecord(inst.id, method, None, False, False, 0, f"{type(exc).__name__}: {exc}")
    n_tokens = sum(1 for t in gen.tokens if t != vocab.eos_id)
    raw = extract_final_answer(gen.text, cfg.s1, cfg.s2)
    if raw is None:
        return InstanceRecord(inst.id, method, None, False, False, n_tokens)
    text = raw.decode("utf-8", "replace")
    if inst.grammar_id == "prover9":
        parsed = check_prover9_compiles(raw)
        equivalent = parsed and " ".join(text.split()) == " ".join(inst.ground_truth.split())
        return InstanceRecord(inst.id, method, text, parsed, equivalent, n_tokens)
    parsed = check_parse(raw, answer_grammar(inst.grammar_id))
    equivalent, error = False, None
    if parsed:
        try:
            equivalent = check_equivalence(text, inst.ground_truth, oracle, inst.variables or None)
        except EvaluationError as exc:
            error = str(exc)
    return InstanceRecord(inst.id, method, text, parsed, equivalent, n_tokens, error)


def run_eval(
    dataset: str | Path | Sequence[TaskInstance],
    method: Method,
    lm: LanguageModel,
    cfg: DecodeConfig = DecodeConfig(),
    oracle: EquivalenceOracle = EquivalenceOracle(),
) -> EvalReport:
    """Generate, extract, parse-check and equivalence-check every instance."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    instances = load_dataset(dataset) if isinstance(dataset, (str, Path)) else list(dataset)
    records = [_evaluate(inst, method, lm, cfg, oracle) for inst in instances]
    return EvalReport({method: _row(records)}, records)
