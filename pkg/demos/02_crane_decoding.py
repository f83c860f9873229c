"""Reason freely, constrain only inside << >>: a scripted model with one bad habit.

The model's favourite continuation after "(end_hour - start_hour)" is a
method call the answer grammar does not allow; its runner-up is the
well-formed path. Unconstrained decoding keeps the bad call, constraining
the whole output blocks the reasoning text, and CRANE repairs just the
window.
"""

from _shared import word_vocab
from crane.decoder import DecodeConfig, constrained_generate, crane_generate, unconstrained_generate
from crane.evaluation import check_parse, extract_final_answer
from crane.grammar import augment_with_delimiters
from crane.grammars import gsm_answer_grammar
from crane.lm import ScriptedLM, completion_table

PROMPT = "Q: how much does the rental cost?\n"
GOOD = (
    "Let's think step by step. The paid hours are <<(end_hour - start_hour) - free_hours>>. "
    "The final answer is <<first_hour_cost + ((end_hour - start_hour) - free_hours - 1) * multiplier * first_hour_cost>>."
)
HEAD = GOOD[: GOOD.index(")") + 1]
BAD = HEAD + ".total_seconds() / 3600>>. The final answer is <<(end_hour - start_hour).total_seconds() * multiplier>>."

vocab = word_vocab([PROMPT + GOOD, BAD], extra=[".total_seconds()"])
table = completion_table(vocab, PROMPT, GOOD)
table.update(completion_table(vocab, PROMPT, BAD))
fork = (PROMPT + HEAD).encode()
table[fork] = {".total_seconds()": 5.0, vocab.tokens[completion_table(vocab, PROMPT, GOOD)[fork]]: 4.0}
lm = ScriptedLM(vocab, table)

G = gsm_answer_grammar()
cfg = DecodeConfig(max_new_tokens=80)
prompt = vocab.encode(PROMPT)

runs = {
    "unconstrained": unconstrained_generate(prompt, lm, cfg),
    "constrained": constrained_generate(prompt, lm, augment_with_delimiters(G, "<<", ">>"), cfg),
    "crane": crane_generate(prompt, lm, cfg, G),
}
for name, gen in runs.items():
    answer = extract_final_answer(gen.text)
    ok = answer is not None and check_parse(answer)
    print(f"--- {name} ({len(gen.tokens)} tokens, stop: {gen.stop_reason}, answer parses: {ok})")
    print(gen.text.decode())

gen = runs["crane"]
print("\nmasked step spans:", gen.masked_spans())
print("step modes:", "".join({"free": ".", "masked": "m", "forced": "f"}[r.mode] for r in gen.step_log))
