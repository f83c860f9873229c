"""Command line: ``decode`` one prompt, or ``eval`` a JSONL dataset."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .decoder import (
    DecodeConfig,
    constrained_generate,
    crane_generate,
    parse_strategy,
    unconstrained_generate,
    write_step_log,
)
from .evaluation import METHODS, EquivalenceOracle, load_dataset, run_eval
from .grammar import build_reasoning_grammar
from .grammars import gsm_answer_grammar, load_grammar
from .lm import RemoteLM, ScriptedLM, TMBackedLM
from .token_mask import NoViableToken
from .turing import BUNDLED_MACHINES, load_machine, output_grammar


def make_lm(spec: str):
    """``scripted:FILE``, ``tm:FILE`` or ``remote:URL``."""
    kind, _, arg = spec.partition(":")
    if not arg:
        raise argparse.ArgumentTypeError(f"bad --lm {spec!r}; use scripted:FILE, tm:FILE or remote:URL")
    if kind == "scripted":
        return ScriptedLM.load(arg)
    if kind == "tm":
        return TMBackedLM(load_machine(arg))
    if kind == "remote":
        return RemoteLM(arg)
    raise argparse.ArgumentTypeError(f"unknown LM kind {kind!r}")


def _resolve_grammar(name: str, mode: str):
    # the bundled gsm listing already carries its << >> wrapper
    if name == "gsm" and mode == "crane":
        return gsm_answer_grammar()
    if name in BUNDLED_MACHINES:
        return output_grammar(name)
    return load_grammar(name)


def cmd_decode(args) -> int:
    lm = make_lm(args.lm)
    cfg = DecodeConfig(
        s1=args.s1,
        s2=args.s2,
        strategy=parse_strategy(args.strategy, args.seed),
        max_new_tokens=args.max_new_tokens,
        on_no_viable=args.on_no_viable,
    )
    prompt_text = Path(args.prompt).read_text(encoding="utf-8")
    if isinstance(lm, TMBackedLM):
        prompt = lm.encode_input(prompt_text.strip())
    else:
        prompt = lm.vocabulary().encode(prompt_text)
    try:
        if args.mode == "unconstrained":
            gen = unconstrained_generate(prompt, lm, cfg)
        else:
            g = _resolve_grammar(args.grammar, args.mode)
            if args.mode == "crane":
                gen = crane_generate(prompt, lm, cfg, g)
            else:
                if isinstance(lm, TMBackedLM):
                    # the machine emits its step encodings before the output
                    g = build_reasoning_grammar(g, lm.encodings)
                gen = constrained_generate(prompt, lm, g, cfg)
    except NoViableToken as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(gen.text.decode("utf-8", "replace") + "\n")
    if gen.incomplete_window:
        print("warning: generation ended inside an unclosed constrained window", file=sys.stderr)
    if args.log_steps:
        write_step_log(gen.step_log, args.log_steps)
    return 0


def cmd_eval(args) -> int:
    lm = make_lm(args.lm)
    cfg = DecodeConfig(s1=args.s1, s2=args.s2, max_new_tokens=args.max_new_tokens)
    oracle = EquivalenceOracle(trials=args.trials, seed=args.seed)
    instances = load_dataset(args.dataset)
    if args.grammar:
        instances = [dataclasses.replace(i, grammar_id=args.grammar) for i in instances]
    report = run_eval(instances, args.method, lm, cfg, oracle)
    if args.report:
        report.write(args.report)
    print(report.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crane", description="Grammar-constrained decoding with reasoning windows.")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("decode", help="generate from one prompt")
    d.add_argument("--grammar", default="gsm", help="gsm, prover9, a bundled machine name, or a grammar file")
    d.add_argument("--s1", default="<<")
    d.add_argument("--s2", default=">>")
    d.add_argument("--mode", choices=("crane", "constrained", "unconstrained"), default="crane")
    d.add_argument("--lm", required=True, help="scripted:FILE, tm:FILE or remote:URL")
    d.add_argument("--prompt", required=True, help="file holding the prompt text (machine input for tm:)")
    d.add_argument("--max-new-tokens", type=int, default=600)
    d.add_argument("--strategy", default="greedy", help="greedy or temp:T")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--on-no-viable", choices=("abort", "close_window"), default="abort")
    d.add_argument("--log-steps", metavar="OUT.json")
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", help="evaluate one method on a JSONL dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--method", choices=METHODS, required=True)
    e.add_argument("--lm", required=True)
    e.add_argument("--grammar", help="override every instance's grammar: gsm, prover9 or a file")
    e.add_argument("--report", metavar="OUT.json")
    e.add_argument("--trials", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--s1", default="<<")
    e.add_argument("--s2", default=">>")
    e.add_argument("--max-new-tokens", type=int, default=600)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))


if __name__ == "__main__":
    raise SystemExit(main())
