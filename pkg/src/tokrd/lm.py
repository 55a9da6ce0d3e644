"""Subword-level conditional log-probability backends.

All log-probabilities are natural-log (nats).  ``EOS`` is a sentinel id
appended once per document; every conditional distribution normalises over
the vocabulary plus EOS.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from typing import Iterable, Sequence

from .tokeniser import Tokeniser

__all__ = [
    "EOS",
    "LMError",
    "UniformBackend",
    "NgramBackend",
    "PerfectOracleBackend",
    "ExternalLogProbBackend",
    "SyntheticLanguage",
    "train_ngram",
    "perfect_oracle",
    "load_external_logprobs",
]

EOS = -1


class LMError(Exception):
    pass


class UniformBackend:
    """Assigns 1/(vocabulary_size + 1) to every continuation, EOS included."""

    kind = "uniform"

    def __init__(self, vocabulary_size: int):
        if vocabulary_size < 1:
            raise LMError("vocabulary_size must be >= 1")
        self.vocabulary_size = vocabulary_size
        self._lp = -math.log(vocabulary_size + 1)

    def logprob(self, context: Sequence[int], next_id: int) -> float:
        if next_id != EOS and not (0 <= next_id < self.vocabulary_size):
            raise LMError(f"unknown subword id {next_id}")
        return self._lp

    def support(self) -> list[int]:
        return list(range(self.vocabulary_size)) + [EOS]


class NgramBackend:
    """Add-alpha smoothed n-gram over subword ids.

    Conditioning context is the last ``order - 1`` tokens (fewer near a
    document start; each training position contributes to the table keyed by
    exactly the context visible to it, so normalisation holds per key).
    """

    kind = "ngram"

    def __init__(self, order: int, alpha: float, vocab: Sequence[int],
                 counts: dict, totals: dict):
        self.order = order
        self.alpha = alpha
        self.vocab = sorted(vocab)
        self._vocab_set = set(self.vocab)
        self._counts = counts
        self._totals = totals
        self._n_events = len(self.vocab) + 1  # + EOS

    @property
    def vocabulary_size(self) -> int:
        return len(self.vocab)

    def _key(self, context: Sequence[int]) -> tuple:
        if self.order == 1:
            return ()
        return tuple(context[-(self.order - 1):])

    def logprob(self, context: Sequence[int], next_id: int) -> float:
        if next_id != EOS and next_id not in self._vocab_set:
            raise LMError(f"unknown subword id {next_id}")
        key = self._key(context)
        c = self._counts.get(key, {}).get(next_id, 0)
        total = self._totals.get(key, 0)
        return math.log((c + self.alpha) / (total + self.alpha * self._n_events))

    def support(self) -> list[int]:
        return self.vocab + [EOS]


def train_ngram(
    token_corpus: Iterable[Sequence[int]],
    order: int = 3,
    smoothing_alpha: float = 0.1,
    vocab: Sequence[int] | None = None,
) -> NgramBackend:
    """Count-based add-alpha n-gram; one EOS is appended per document."""
    if order < 1:
        raise LMError("order must be >= 1")
    if smoothing_alpha <= 0:
        raise LMError("smoothing_alpha must be > 0")
    counts: dict[tuple, Counter] = {}
    totals: dict[tuple, int] = {}
    seen: set[int] = set()
    n_docs = 0
    for doc in token_corpus:
        n_docs += 1
        seen.update(doc)
        toks = list(doc) + [EOS]
        for t, nxt in enumerate(toks):
            key = tuple(toks[max(0, t - (order - 1)):t]) if order > 1 else ()
            counts.setdefault(key, Counter())[nxt] += 1
            totals[key] = totals.get(key, 0) + 1
    if n_docs == 0:
        raise LMError("token corpus is empty")
    if vocab is None:
        vocab = sorted(seen)
    else:
        unknown = seen - set(vocab)
        if unknown:
            raise LMError(f"corpus contains ids outside the given vocabulary: {sorted(unknown)[:5]}")
    return NgramBackend(order, smoothing_alpha, vocab, counts, totals)


class SyntheticLanguage:
    """A finite distribution over character-strings."""

    def __init__(self, support: Sequence[tuple[str, float]]):
        strings = [s for s, _ in support]
        probs = [p for _, p in support]
        if len(set(strings)) != len(strings):
            raise LMError("support strings must be distinct")
        if any(p <= 0 for p in probs):
            raise LMError("support probabilities must be positive")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise LMError(f"support probabilities sum to {sum(probs)}, expected 1")
        self.support = list(support)

    def __len__(self) -> int:
        return len(self.support)


class PerfectOracleBackend:
    """Exact conditionals of a synthetic language under canonical tokenisation.

    p(next | context) is the mass of support strings whose tokenisation
    extends context + next, over the mass extending context; p(EOS | context)
    is the mass tokenising to exactly the context.
    """

    kind = "perfect_oracle"

    def __init__(self, lang: SyntheticLanguage, tok: Tokeniser):
        if len(lang) > 10_000:
            raise LMError("synthetic language support too large for exhaustive enumeration")
        self._prefix_mass: dict[tuple, float] = {}
        self._exact_mass: dict[tuple, float] = {}
        self._continuations: dict[tuple, set[int]] = {}
        vocab_ids: set[int] = set()
        for chars, p in lang.support:
            toks = tuple(tok.tokenise(chars))
            vocab_ids.update(toks)
            self._exact_mass[toks] = self._exact_mass.get(toks, 0.0) + p
            for i in range(len(toks) + 1):
                prefix = toks[:i]
                self._prefix_mass[prefix] = self._prefix_mass.get(prefix, 0.0) + p
                if i < len(toks):
                    self._continuations.setdefault(prefix, set()).add(toks[i])
        self.vocab = sorted(vocab_ids)
        self.lang = lang
        self.tokeniser = tok

    @property
    def vocabulary_size(self) -> int:
        return len(self.vocab)

    def logprob(self, context: Sequence[int], next_id: int) -> float:
        key = tuple(context)
        denom = self._prefix_mass.get(key, 0.0)
        if denom <= 0.0:
            raise LMError("conditional undefined: context has zero mass")
        if next_id == EOS:
            num = self._exact_mass.get(key, 0.0)
        else:
            num = self._prefix_mass.get(key + (next_id,), 0.0)
        if num <= 0.0:
            return -math.inf
        return math.log(num) - math.log(denom)

    def support(self) -> list[int]:
        return self.vocab + [EOS]


def perfect_oracle(lang: SyntheticLanguage, tok: Tokeniser) -> PerfectOracleBackend:
    return PerfectOracleBackend(lang, tok)


class ExternalLogProbBackend:
    """Positional log-probabilities ingested from a real model's outputs.

    Answers lookups by (doc, position) only; it carries no conditional
    distribution, so ``logprob`` raises.
    """

    kind = "external_logprobs"

    def __init__(self, records: dict[tuple[int, int], tuple[int, float]]):
        self._records = records

    def __len__(self) -> int:
        return len(self._records)

    def logprob(self, context: Sequence[int], next_id: int) -> float:
        raise LMError("external log-prob backends only answer positional lookups")

    def logprob_at(self, doc_id: int, position: int) -> tuple[int, float]:
        """Returns (subword id, logprob) recorded at the position."""
        rec = self._records.get((doc_id, position))
        if rec is None:
            raise LMError(f"no record for doc {doc_id} position {position}")
        return rec


def load_external_logprobs(path: str) -> ExternalLogProbBackend:
    """Read the JSON-lines file: {"doc": int, "pos": int, "id": int, "lp": float}."""
    records: dict[tuple[int, int], tuple[int, float]] = {}
    last_key = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                key = (int(rec["doc"]), int(rec["pos"]))
                value = (int(rec["id"]), float(rec["lp"]))
            except (ValueError, KeyError, TypeError) as e:
                raise LMError(f"{path}:{lineno}: malformed record ({e})") from None
            if value[1] > 0:
                raise LMError(f"{path}:{lineno}: logprob must be <= 0, got {value[1]}")
            if key in records:
                raise LMError(f"{path}:{lineno}: duplicate (doc, pos) key {key}")
            if last_key is not None and key < last_key:
                raise LMError(f"{path}:{lineno}: records not sorted by (doc, pos)")
            records[key] = value
            last_key = key
    return ExternalLogProbBackend(records)
