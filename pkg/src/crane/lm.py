"""Language-model back ends that the decoders can drive.

Every model exposes ``vocabulary()`` and ``scores(token_ids)``; the latter
returns one real score per vocabulary token for the next position and is
deterministic for a fixed context.
"""

from __future__ import annotations

import base64
import json
import socket
import urllib.error
import urllib.request
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .token_mask import Vocabulary
from .turing import StepBudget, TuringMachine, encode_config, enumerate_encodings, tm_run

__all__ = [
    "LanguageModel",
    "ScriptedLM",
    "scripted_scores",
    "TMBackedLM",
    "tm_lm_scores",
    "RemoteLM",
    "RemoteError",
    "Timeout",
    "SchemaMismatch",
    "VocabMismatch",
    "remote_scores",
]


class LanguageModel(Protocol):
    def vocabulary(self) -> Vocabulary: ...

    def scores(self, tokens: Sequence[int]) -> np.ndarray: ...


def _one_hot(size: int, index: int) -> np.ndarray:
    out = np.zeros(size)
    out[index] = 1.0
    return out


# --- scripted -----------------------------------------------------------------


class ScriptedLM:
    """Table-driven model keyed on the longest matching context suffix.

    ``table`` maps a context suffix (bytes or str) to a designated next token
    (id or token text), a full score list, or a ``{token: score}`` dict where
    unlisted tokens score 0. Contexts matching no key get ``default``
    (uniform zeros unless given).
    """

    def __init__(self, vocab: Vocabulary, table: Mapping, default=None):
        self.vocab = vocab
        self._table: dict[bytes, np.ndarray] = {}
        for suffix, value in table.items():
            key = suffix.encode("utf-8") if isinstance(suffix, str) else bytes(suffix)
            self._table[key] = self._as_scores(value)
        self._lengths = sorted({len(k) for k in self._table}, reverse=True)
        self.default = np.zeros(vocab.size) if default is None else self._as_scores(default)

    def _token_id(self, token) -> int:
        return token if isinstance(token, (int, np.integer)) else self.vocab.id_of(token)

    def _as_scores(self, value) -> np.ndarray:
        size = self.vocab.size
        if isinstance(value, (int, np.integer, str, bytes)):
            return _one_hot(size, self._token_id(value))
        if isinstance(value, Mapping):
            out = np.zeros(size)
            for tok, s in value.items():
                out[self._token_id(int(tok) if isinstance(tok, str) and tok.isdigit() else tok)] = s
            return out
        arr = np.asarray(value, dtype=float)
        if arr.shape != (size,):
            raise ValueError(f"score vector has shape {arr.shape}, expected ({size},)")
        return arr

    def vocabulary(self) -> Vocabulary:
        return self.vocab

    def scores(self, tokens: Sequence[int]) -> np.ndarray:
        context = self.vocab.detokenize(tokens)
        for n in self._lengths:
            if n <= len(context):
                hit = self._table.get(context[len(context) - n :])
                if hit is not None:
                    return hit.copy()
        return self.default.copy()

    @classmethod
    def from_completion(
        cls, vocab: Vocabulary, prompt: bytes | str, completion: bytes | str, *, eos: bool = True, table=None
    ) -> "ScriptedLM":
        """Model whose greedy continuation of ``prompt`` is ``completion``.

        The completion is split with the vocabulary's longest-match encoder;
        each full context maps to its next token, and EOS follows the last.
        Pass ``table`` to add entries to an existing table.
        """
        table = dict(table or {})
        table.update(completion_table(vocab, prompt, completion, eos=eos))
        return cls(vocab, table)

    @classmethod
    def from_json(cls, obj: dict) -> "ScriptedLM":
        """Load ``{vocab, entries: [{suffix, next_token | scores}], default}``.

        ``vocab`` is either ``{"tokens": [base64...], "eos_id": n}`` or a plain
        list of token strings (EOS appended).
        """
        raw = obj["vocab"]
        vocab = Vocabulary.from_strings(raw) if isinstance(raw, list) else Vocabulary.from_json(raw)
        table = {}
        for entry in obj.get("entries", []):
            table[entry["suffix"]] = entry["next_token"] if "next_token" in entry else entry["scores"]
        return cls(vocab, table, obj.get("default"))

    @classmethod
    def load(cls, path) -> "ScriptedLM":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        """Fixture form; score vectors are stored sparsely as ``{id: score}``."""

        def sparse(arr):
            return {str(i): float(arr[i]) for i in np.flatnonzero(arr)}

        entries = [
            {"suffix": k.decode("utf-8"), "scores": sparse(v)} for k, v in self._table.items()
        ]
        return {"vocab": self.vocab.to_json(), "entries": entries, "default": sparse(self.default)}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)


def completion_table(vocab: Vocabulary, prompt: bytes | str, completion: bytes | str, *, eos: bool = True) -> dict:
    prompt = prompt.encode("utf-8") if isinstance(prompt, str) else prompt
    completion = completion.encode("utf-8") if isinstance(completion, str) else completion
    table: dict = {}
    context = prompt
    for tid in vocab.encode(completion):
        table[context] = tid
        context += vocab.tokens[tid]
    if eos:
        table[context] = vocab.eos_id
    return table


def scripted_scores(lm: ScriptedLM, tokens: Sequence[int]) -> np.ndarray:
    return lm.scores(tokens)


# --- Turing-machine backed -------------------------------------------------------------


@dataclass
class _Replay:
    x: str
    expected: tuple  # token ids after the input marker, ending with EOS


class TMBackedLM:
    """Next-token function that emits a machine's step encodings, then M(x).

    Context layout: the input symbols of ``x``, one ``"$"`` end-of-input
    token, then generated tokens. The model puts score 1 on the unique
    correct next token and 0 elsewhere. A context that is not a prefix of
    that layout gets uniform scores and is counted in ``malformed``.
    """

    END_OF_INPUT = "$"

    def __init__(self, machine: TuringMachine, budget: StepBudget = StepBudget(10_000), extra_tokens=()):
        self.machine = machine
        self.budget = budget
        self.encodings = enumerate_encodings(machine)
        symbols = sorted(machine.tape_alphabet)
        pieces = symbols + [self.END_OF_INPUT] + self.encodings
        pieces += [t for t in extra_tokens if t not in pieces]
        self.vocab = Vocabulary.from_strings(pieces)
        self._ids = {p: i for i, p in enumerate(pieces)}
        self._end = self._ids[self.END_OF_INPUT]
        self._input_ids = {self._ids[s]: s for s in machine.input_alphabet}
        self._runs: OrderedDict[str, _Replay | None] = OrderedDict()
        self.malformed = 0
        self.last_error: str | None = None

    def vocabulary(self) -> Vocabulary:
        return self.vocab

    def encode_input(self, x) -> list[int]:
        return [self._ids[s] for s in x] + [self._end]

    def _replay(self, x: str) -> _Replay | None:
        hit = self._runs.get(x)
        if hit is not None or x in self._runs:
            return hit
        run = tm_run(self.machine, x, self.budget)
        rep = None
        if run.halted:
            m = self.machine
            ids = [self._ids[encode_config(m, a, b)] for a, b in zip(run.trace, run.trace[1:])]
            ids += [self._ids[s] for s in run.output]
            rep = _Replay(x, tuple(ids) + (self.vocab.eos_id,))
        self._runs[x] = rep
        if len(self._runs) > 4096:
            self._runs.popitem(last=False)
        return rep

    def _malformed(self, why: str) -> np.ndarray:
        self.malformed += 1
        self.last_error = why
        return np.zeros(self.vocab.size)

    def scores(self, tokens: Sequence[int]) -> np.ndarray:
        tokens = list(tokens)
        try:
            cut = tokens.index(self._end)
        except ValueError:
            return self._malformed("no end-of-input marker in context")
        symbols = [self._input_ids.get(t) for t in tokens[:cut]]
        if None in symbols:
            return self._malformed("context input contains a non-input token")
        rep = self._replay("".join(symbols))
        if rep is None:
            return self._malformed("machine exceeded its step budget")
        generated = tuple(tokens[cut + 1 :])
        n = len(generated)
        if n >= len(rep.expected) or rep.expected[:n] != generated:
            return self._malformed("generated tokens diverge from the machine run")
        return _one_hot(self.vocab.size, rep.expected[n])


def tm_lm_scores(lm: TMBackedLM, tokens: Sequence[int]) -> np.ndarray:
    return lm.scores(tokens)


# --- remote ---------------------------------------------------------------------


class RemoteError(RuntimeError):
    pass


class Timeout(RemoteError):
    pass


class SchemaMismatch(RemoteError):
    pass


class VocabMismatch(RemoteError):
    pass


@dataclass
class RemoteLM:
    """Client for a JSON scoring server.

    ``POST /score`` with ``{"token_ids": [...]}`` returns ``{"scores": [...]}``;
    ``GET /vocab`` returns ``{"tokens": [base64...], "eos_id": n}``. Requests
    are not retried.
    """

    endpoint: str
    timeout: float = 30.0
    _vocab: Vocabulary | None = field(default=None, repr=False)

    def _request(self, path: str, payload: dict | None = None) -> dict:
        url = self.endpoint.rstrip("/") + path
        data = None if payload is None else json.dumps(payload).encode("utf-8")
        req = urllib.request.Request(url, data=data, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except (socket.timeout, TimeoutError) as exc:
            raise Timeout(f"{url} did not answer within {self.timeout} s") from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise Timeout(f"{url} did not answer within {self.timeout} s") from exc
            raise RemoteError(f"{url}: {exc.reason}") from exc
        try:
            obj = json.loads(body)
        except ValueError as exc:
            raise SchemaMismatch(f"{url} returned invalid JSON") from exc
        if not isinstance(obj, dict):
            raise SchemaMismatch(f"{url} returned {type(obj).__name__}, expected an object")
        return obj

    def vocabulary(self) -> Vocabulary:
        if self._vocab is None:
            obj = self._request("/vocab")
            try:
                tokens = [base64.b64decode(t, validate=True) for t in obj["tokens"]]
                self._vocab = Vocabulary(tokens, int(obj["eos_id"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaMismatch(f"bad /vocab response: {exc}") from exc
        return self._vocab

    def scores(self, tokens: Sequence[int]) -> np.ndarray:
        size = self.vocabulary().size
        obj = self._request("/score", {"token_ids": [int(t) for t in tokens]})
        raw = obj.get("scores")
        if not isinstance(raw, list):
            raise SchemaMismatch("response has no 'scores' list")
        try:
            arr = np.asarray(raw, dtype=float)
        except (TypeError, ValueError) as exc:
            raise SchemaMismatch("scores are not numbers") from exc
        if arr.ndim != 1:
            raise SchemaMismatch("scores must be a flat list")
        if len(arr) != size:
            raise VocabMismatch(f"server sent {len(arr)} scores for a vocabulary of {size}")
        return arr


def remote_scores(lm: RemoteLM, tokens: Sequence[int]) -> np.ndarray:
    return lm.scores(tokens)
