"""Parse the bundled grammars, recognise prefixes, and compute token masks."""

from crane.grammars import gsm_answer_grammar, load_grammar
from crane.grammar import augment_with_delimiters
from crane.recognizer import advance, init, tokenize
from crane.token_mask import Vocabulary, apply_mask, compute_mask

gsm = load_grammar("gsm")
prover9 = load_grammar("prover9")
print(f"gsm: {len(gsm.productions)} productions, TYPE priority {gsm.terminal_map['TYPE'].priority}")
print(f"prover9: {len(prover9.productions)} productions, VAR priority {prover9.terminal_map['VAR'].priority}")

print("\nprefix statuses under the answer grammar with << >> delimiters:")
g_prime = augment_with_delimiters(gsm_answer_grammar(), "<<", ">>")
for text in ["<<", "<<tf -", "<<tf - t>>", "<<tf - t>>>", "<<x.total_seconds()"]:
    print(f"  {text!r:24} {advance(init(g_prime), text).status.name}")

print("\npriority-aware lexing of 'intx + 3':", tokenize(gsm_answer_grammar(), "intx + 3"))

vocab = Vocabulary.from_strings(["tf", "(", "3", ">>", "<<", " ", "-", ".total_seconds()"])
state = advance(init(g_prime), "<<tf")
mask = compute_mask(state, vocab)
print("\nadmissible after '<<tf':", [vocab.tokens[i].decode() or "<eos>" for i in mask.allowed])

scores = [0.1, 0.0, 0.0, 0.2, 0.0, 0.3, 0.0, 2.0, 0.0]
best = int(apply_mask(scores, mask).argmax())
print(f"model prefers {vocab.tokens[7].decode()!r}; masked argmax picks {vocab.tokens[best].decode()!r}")
