"""A machine-backed model needs room to reason: R_M G versus G alone."""

from crane.decoder import DecodeConfig, constrained_generate
from crane.lm import TMBackedLM
from crane.recognizer import init
from crane.token_mask import compute_mask
from crane.turing import StepBudget, bundled_machine, demo_prop34, enumerate_encodings, output_grammar, tm_run

budget = StepBudget(10_000)
for name, x in [("parity", "1011"), ("copy", "101"), ("unary_increment", "111")]:
    m = bundled_machine(name)
    run = tm_run(m, x, budget)
    rep = demo_prop34(m, output_grammar(name), x, budget)
    print(f"{name}({x!r}) = {run.output!r} in {run.steps} steps; reasoning grammar run passed: {rep.passed}")
    print("   ", rep.produced.decode())

m = bundled_machine("parity")
g = output_grammar("parity")
lm = TMBackedLM(m, budget=budget)
vocab = lm.vocabulary()
mask = compute_mask(init(g), vocab)
print("\nstep-one mask under the output grammar alone:")
for enc in enumerate_encodings(m):
    print(f"    {enc:<18} {'admissible' if mask[vocab.id_of(enc)] else 'blocked'}")
gen = constrained_generate(lm.encode_input("1011"), lm, g, DecodeConfig())
print(f"constrained output without reasoning room: {gen.text.decode()!r} (correct answer {tm_run(m, '1011', budget).output!r})")
print(f"model contexts off its own run: {lm.malformed}")
