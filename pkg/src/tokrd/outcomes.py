"""Occurrence scanning and per-candidate outcome aggregation.

For each candidate subword around a cutoff, every boundary-aligned character
occurrence in the evaluation corpus contributes one log-probability sample:
the sum over the tokens spanning the occurrence of log p(token | all tokens
from document start).  Misaligned occurrences are dropped, never repaired.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lm import ExternalLogProbBackend
from .tokeniser import RankedVocabulary, Tokeniser

__all__ = [
    "CandidateSubword",
    "OutcomeRecord",
    "OutcomesError",
    "AGGREGATE_STATS",
    "enumerate_candidates",
    "exclude_nested",
    "collect_outcomes",
    "aggregate",
    "write_outcomes_csv",
    "read_outcomes_csv",
]

AGGREGATE_STATS = ("mean", "std", "median", "iqr")


class OutcomesError(Exception):
    pass


@dataclass(frozen=True)
class CandidateSubword:
    subword_id: int
    chars: str
    rank: int
    treated: bool


@dataclass
class OutcomeRecord:
    candidate: CandidateSubword
    n_samples: int
    aggregates: dict[str, float]
    n_dropped_mismatch: int = 0
    samples: list[float] = field(default_factory=list, repr=False)


def enumerate_candidates(vocab: RankedVocabulary, cutoff: int, window: int) -> list[CandidateSubword]:
    """Candidates with ranks in [cutoff - window + 1, cutoff + window]."""
    if window < 1:
        raise OutcomesError("window must be >= 1")
    if cutoff - window + 1 < 1 or cutoff + window > vocab.k_plus:
        raise OutcomesError(
            f"window {window} around cutoff {cutoff} exceeds available ranks [1, {vocab.k_plus}]"
        )
    out = []
    for rank in range(cutoff - window + 1, cutoff + window + 1):
        m = vocab.merges[rank - 1]
        out.append(
            CandidateSubword(
                subword_id=m.result,
                chars=vocab.subword_string(m.result),
                rank=rank,
                treated=rank <= cutoff,
            )
        )
    return out


def exclude_nested(candidates: Sequence[CandidateSubword], vocabulary: set[str]) -> list[CandidateSubword]:
    """Drop candidates whose string is a proper substring of a vocabulary item."""
    kept = []
    for c in candidates:
        nested = any(c.chars != v and c.chars in v for v in vocabulary)
        if not nested:
            kept.append(c)
    return kept


def aggregate(samples: Sequence[float], stat: str) -> float:
    """mean / population std / median / IQR (linear-interpolation quantiles)."""
    if len(samples) == 0:
        raise OutcomesError("cannot aggregate an empty sample list")
    x = np.asarray(samples, dtype=float)
    if stat == "mean":
        return float(np.mean(x))
    if stat == "std":
        return float(np.std(x))
    if stat == "median":
        return float(np.median(x))
    if stat == "iqr":
        return float(np.percentile(x, 75) - np.percentile(x, 25))
    raise OutcomesError(f"unknown aggregate stat {stat!r}")


def _doc_boundaries(tokens: Sequence[int], tok: Tokeniser) -> tuple[dict[int, int], int]:
    """Map char offset -> token index for token starts; also total char length."""
    starts = {}
    off = 0
    for i, t in enumerate(tokens):
        starts[off] = i
        off += len(tok.subword_string(t))
    return starts, off


def collect_outcomes(
    eval_corpus: Sequence[str],
    tok: Tokeniser,
    backend,
    candidates: Sequence[CandidateSubword],
    *,
    min_occurrences: int = 5,
    include_doc_start: bool = True,
) -> list[OutcomeRecord]:
    """Scan the corpus and aggregate per-candidate log-probability samples.

    Occurrences are kept only when the candidate's characters align exactly
    with token boundaries and the span length matches the treatment arm
    (1 for treated, >= 2 for control); everything else counts as a
    tokenisation mismatch.  Candidates with fewer than ``min_occurrences``
    samples are dropped from the result.
    """
    positional = isinstance(backend, ExternalLogProbBackend)
    docs = []
    for d, text in enumerate(eval_corpus):
        tokens = tok.tokenise(text)
        starts, total = _doc_boundaries(tokens, tok)
        docs.append((d, text, tokens, starts, total))

    records = []
    for cand in candidates:
        samples: list[float] = []
        dropped = 0
        clen = len(cand.chars)
        for d, text, tokens, starts, total in docs:
            o = text.find(cand.chars)
            while o != -1:
                t0 = starts.get(o)
                end = o + clen
                t1 = len(tokens) if end == total else starts.get(end)
                if t0 is None or t1 is None:
                    dropped += 1
                else:
                    span = tokens[t0:t1]
                    span_ok = len(span) == 1 if cand.treated else len(span) >= 2
                    if not span_ok:
                        dropped += 1
                    elif include_doc_start or t0 > 0:
                        if positional:
                            lp = 0.0
                            ok = True
                            for i, sid in enumerate(span):
                                rec_id, rec_lp = backend.logprob_at(d, t0 + i)
                                if rec_id != sid:
                                    ok = False
                                    break
                                lp += rec_lp
                            if ok:
                                samples.append(lp)
                            else:
                                dropped += 1
                        else:
                            lp = 0.0
                            for i, sid in enumerate(span):
                                lp += backend.logprob(tokens[: t0 + i], sid)
                            samples.append(lp)
                o = text.find(cand.chars, o + 1)
        if len(samples) < min_occurrences:
            continue
        records.append(
            OutcomeRecord(
                candidate=cand,
                n_samples=len(samples),
                aggregates={stat: aggregate(samples, stat) for stat in AGGREGATE_STATS},
                n_dropped_mismatch=dropped,
                samples=samples,
            )
        )
    return records


_CSV_COLUMNS = ["rank", "subword", "treated", "n_samples", "mean", "std", "median", "iqr", "n_dropped_mismatch"]


def write_outcomes_csv(records: Sequence[OutcomeRecord], path: str) -> None:
    import os
    import tempfile

    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(_CSV_COLUMNS)
            for r in records:
                w.writerow(
                    [
                        r.candidate.rank,
                        r.candidate.chars,
                        int(r.candidate.treated),
                        r.n_samples,
                        repr(r.aggregates["mean"]),
                        repr(r.aggregates["std"]),
                        repr(r.aggregates["median"]),
                        repr(r.aggregates["iqr"]),
                        r.n_dropped_mismatch,
                    ]
                )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_outcomes_csv(path: str) -> list[OutcomeRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            cand = CandidateSubword(
                subword_id=-1,
                chars=row["subword"],
                rank=int(row["rank"]),
                treated=bool(int(row["treated"])),
            )
            aggs = {stat: float(row[stat]) for stat in AGGREGATE_STATS}
            records.append(
                OutcomeRecord(
                    candidate=cand,
                    n_samples=int(row["n_samples"]),
                    aggregates=aggs,
                    n_dropped_mismatch=int(row["n_dropped_mismatch"]),
                )
            )
    return records
