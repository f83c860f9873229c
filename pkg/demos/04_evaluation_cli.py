"""Write a small dataset and scripted model to disk, then score every method via the CLI."""

import json
import tempfile
from pathlib import Path

from _shared import word_vocab
from crane.cli import main
from crane.lm import ScriptedLM, completion_table

# (variables, ground truth, model's final answer); the model's answer is equivalent to the truth
PROBLEMS = [
    (("apples", "pears"), "apples + pears", "pears + apples"),
    (("total", "spent"), "total - spent", "total - spent"),
    (("rate", "hours", "bonus"), "rate * hours + bonus", "bonus + hours * rate"),
    (("start", "end", "price"), "(end - start) * price", "(end - start) * price"),
    (("boxes", "per_box"), "boxes * per_box", "per_box * boxes"),
]
MALFORMED = {3}  # prefers "(end - start).days" inside the answer

rows, table, texts, forks = [], {}, [], []
for i, (names, truth, answer) in enumerate(PROBLEMS):
    prompt = f"Problem {i}: use " + ", ".join(f"{{{n}}}" for n in names) + "."
    text = f"Let's think step by step. The final answer is <<{answer}>>."
    rows.append({"id": f"d{i}", "prompt": prompt, "variables": list(names), "ground_truth": truth})
    texts.append((prompt + "\n", text))
    if i in MALFORMED:
        head = text[: text.index(")") + 1]
        texts.append((prompt + "\n", head + ".days * price>>."))
        forks.append((prompt + "\n", text, (prompt + "\n" + head).encode()))
vocab = word_vocab([p + t for p, t in texts], extra=[".days"])
for prompt, text in texts:
    table.update(completion_table(vocab, prompt, text))
for prompt, text, fork in forks:
    good_next = completion_table(vocab, prompt, text)[fork]
    table[fork] = {".days": 5.0, vocab.tokens[good_next]: 4.0}

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    (tmp / "data.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    ScriptedLM(vocab, table).save(tmp / "lm.json")
    for method in ("crane", "unconstrained"):
        print(f"$ crane eval --method {method} ...")
        main(["eval", "--dataset", str(tmp / "data.jsonl"), "--method", method,
              "--lm", f"scripted:{tmp / 'lm.json'}", "--report", str(tmp / f"{method}.json")])
        bad = json.loads((tmp / f"{method}.json").read_text())["records"][3]
        print(f"  instance d3 extracted {bad['extracted']!r}, parsed {bad['parsed']}\n")

    (tmp / "prompt.txt").write_text(texts[0][0])
    print("$ crane decode --lm scripted:lm.json --prompt prompt.txt")
    main(["decode", "--lm", f"scripted:{tmp / 'lm.json'}", "--prompt", str(tmp / "prompt.txt")])
