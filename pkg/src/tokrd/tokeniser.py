"""Ranked bottom-up tokeniser training and deterministic encoding.

A ranked vocabulary is the full ordered merge list produced by greedy
sequential selection (count or PMI objective).  Truncating it at any cutoff
yields a concrete tokeniser, either merge-based (apply merges in rank order)
or longest-prefix (greedy prefix matching against the truncated vocabulary).
"""

from __future__ import annotations

import heapq
import json
import os
import re
import tempfile
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

__all__ = [
    "Merge",
    "RankedVocabulary",
    "Tokeniser",
    "TokeniserError",
    "UnknownSymbolError",
    "train_ranked_vocab",
    "apply_merge",
    "objective_bpe",
    "objective_wp",
    "pretokenise",
    "save_vocab",
    "load_vocab",
    "write_token_stream",
    "read_token_stream",
]

VOCAB_FILE_VERSION = 1

# Chunks are maximal runs of non-whitespace or whitespace; merges never
# cross a chunk boundary.
_CHUNK_RE = re.compile(r"\S+|\s+")


class TokeniserError(Exception):
    pass


class UnknownSymbolError(TokeniserError):
    def __init__(self, symbol: str, offset: int):
        self.symbol = symbol
        self.offset = offset
        super().__init__(f"symbol {symbol!r} at offset {offset} is not in the alphabet")


@dataclass(frozen=True)
class Merge:
    """One selected merge: ids of its halves, the new id, and when/why."""

    left: int
    right: int
    result: int
    rank: int
    score: float


def pretokenise(text: str) -> list[str]:
    """Split text into chunks (runs of whitespace or non-whitespace).

    Lossless: ``"".join(pretokenise(t)) == t``.
    """
    return _CHUNK_RE.findall(text)


class RankedVocabulary:
    """An alphabet plus the full ordered merge list with selection scores.

    Subword ids are stable under truncation: alphabet symbols get ids
    ``0..len(alphabet)-1`` and the merge at rank ``k`` produces id
    ``len(alphabet)+k-1``.
    """

    def __init__(
        self,
        alphabet: Sequence[str],
        merges: Sequence[Merge],
        objective_kind: str,
        *,
        pretokenised: bool = True,
        truncated: bool = False,
    ):
        if not alphabet:
            raise TokeniserError("alphabet must be non-empty")
        if len(set(alphabet)) != len(alphabet):
            raise TokeniserError("alphabet contains duplicate symbols")
        if objective_kind not in ("bpe_count", "wp_pmi"):
            raise TokeniserError(f"unknown objective kind: {objective_kind!r}")
        self.alphabet = tuple(alphabet)
        self.merges = list(merges)
        self.objective_kind = objective_kind
        self.pretokenised = pretokenised
        self.truncated = truncated

        strings = list(self.alphabet)
        seen = set(strings)
        for k, m in enumerate(self.merges, start=1):
            if m.rank != k:
                raise TokeniserError(f"merge ranks must be 1..K+ ascending, got {m.rank} at {k}")
            if not (0 <= m.left < len(strings) and 0 <= m.right < len(strings)):
                raise TokeniserError(f"merge at rank {k} references an undefined subword id")
            s = strings[m.left] + strings[m.right]
            if m.result != len(strings):
                raise TokeniserError(f"merge at rank {k} has result id {m.result}, expected {len(strings)}")
            if s in seen:
                raise TokeniserError(f"duplicate subword string {s!r} at rank {k}")
            strings.append(s)
            seen.add(s)
        self._strings = strings

    @property
    def k_plus(self) -> int:
        return len(self.merges)

    def subword_string(self, subword_id: int) -> str:
        if not (0 <= subword_id < len(self._strings)):
            raise TokeniserError(f"unresolvable subword id {subword_id}")
        return self._strings[subword_id]

    @property
    def subword_table(self) -> dict[int, str]:
        return dict(enumerate(self._strings))

    def vocabulary_at(self, cutoff: int) -> set[str]:
        """Subword strings available at a given cutoff (alphabet included)."""
        if not (0 <= cutoff <= self.k_plus):
            raise TokeniserError(f"cutoff {cutoff} out of range [0, {self.k_plus}]")
        return set(self._strings[: len(self.alphabet) + cutoff])

    def detokenise(self, ids: Iterable[int]) -> str:
        return "".join(self.subword_string(i) for i in ids)

    def truncate(self, cutoff: int, tok_fn_kind: str = "merge_based") -> "Tokeniser":
        return Tokeniser(self, cutoff, tok_fn_kind)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RankedVocabulary):
            return NotImplemented
        return (
            self.alphabet == other.alphabet
            and self.merges == other.merges
            and self.objective_kind == other.objective_kind
            and self.pretokenised == other.pretokenised
            and self.truncated == other.truncated
        )


class Tokeniser:
    """A view over the first ``cutoff`` merges of a ranked vocabulary.

    Immutable after construction (the chunk cache is an internal memo and
    does not affect observable behaviour), so instances are safe to share
    across threads.
    """

    def __init__(self, source: RankedVocabulary, cutoff: int, tok_fn_kind: str = "merge_based"):
        if not (0 <= cutoff <= source.k_plus):
            raise TokeniserError(f"cutoff {cutoff} exceeds available merges ({source.k_plus})")
        if tok_fn_kind not in ("merge_based", "longest_prefix"):
            raise TokeniserError(f"unknown tokenisation function kind: {tok_fn_kind!r}")
        self.source = source
        self.cutoff = cutoff
        self.tok_fn_kind = tok_fn_kind

        self._alpha_ids = {c: i for i, c in enumerate(source.alphabet)}
        self._pair_table = {(m.left, m.right): m for m in source.merges[:cutoff]}
        n_vocab = len(source.alphabet) + cutoff
        self._str_to_id = {source.subword_string(i): i for i in range(n_vocab)}
        self._max_len = max((len(s) for s in self._str_to_id), default=1)
        self._cache: dict[str, tuple[int, ...]] = {}

    @property
    def vocab_strings(self) -> set[str]:
        return set(self._str_to_id)

    @property
    def vocab_ids(self) -> list[int]:
        return list(range(len(self.source.alphabet) + self.cutoff))

    @property
    def vocab_size(self) -> int:
        return len(self.source.alphabet) + self.cutoff

    def tokenise(self, chars: str) -> list[int]:
        if self.tok_fn_kind == "merge_based":
            encode = self._encode_chunk_merge
        else:
            encode = self._encode_chunk_longest
        chunks = pretokenise(chars) if self.source.pretokenised else ([chars] if chars else [])
        out: list[int] = []
        offset = 0
        for chunk in chunks:
            cached = self._cache.get(chunk)
            if cached is None:
                try:
                    cached = tuple(encode(chunk))
                except UnknownSymbolError as e:
                    raise UnknownSymbolError(e.symbol, offset + e.offset) from None
                self._cache[chunk] = cached
            out.extend(cached)
            offset += len(chunk)
        return out

    def _chunk_ids(self, chunk: str) -> list[int]:
        ids = []
        for i, c in enumerate(chunk):
            sid = self._alpha_ids.get(c)
            if sid is None:
                raise UnknownSymbolError(c, i)
            ids.append(sid)
        return ids

    def _encode_chunk_merge(self, chunk: str) -> list[int]:
        # Equivalent to folding apply_merge over merges 1..cutoff: at each
        # step the lowest-rank merge beyond the already-applied prefix with
        # an occurrence is applied once; merges skipped in between have no
        # occurrences, so the fold is unchanged.
        seq = self._chunk_ids(chunk)
        applied_up_to = 0
        while len(seq) > 1:
            best = None
            for i in range(len(seq) - 1):
                m = self._pair_table.get((seq[i], seq[i + 1]))
                if m is not None and m.rank > applied_up_to and (best is None or m.rank < best.rank):
                    best = m
            if best is None:
                break
            seq = _merge_ids(seq, best.left, best.right, best.result)
            applied_up_to = best.rank
        return seq

    def _encode_chunk_longest(self, chunk: str) -> list[int]:
        out = []
        i = 0
        n = len(chunk)
        while i < n:
            for length in range(min(self._max_len, n - i), 0, -1):
                sid = self._str_to_id.get(chunk[i : i + length])
                if sid is not None:
                    out.append(sid)
                    i += length
                    break
            else:
                raise UnknownSymbolError(chunk[i], i)
        return out

    def detokenise(self, ids: Iterable[int]) -> str:
        return self.source.detokenise(ids)

    def subword_string(self, subword_id: int) -> str:
        return self.source.subword_string(subword_id)


def _merge_ids(seq: Sequence[int], left: int, right: int, result: int) -> list[int]:
    out = []
    i = 0
    n = len(seq)
    while i < n:
        if i < n - 1 and seq[i] == left and seq[i + 1] == right:
            out.append(result)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def apply_merge(s: Sequence[int], m: Merge) -> list[int]:
    """Replace adjacent (left, right) occurrences with the merged id.

    Single left-to-right pass, non-overlapping: a replacement consumes both
    symbols and scanning resumes after it.
    """
    return _merge_ids(s, m.left, m.right, m.result)


def objective_bpe(pair_count: int) -> float:
    """Count objective: the raw adjacent-occurrence count of the pair."""
    return float(pair_count)


def objective_wp(pair_count: int, left_count: int, right_count: int) -> float:
    """PMI objective: pair count over the product of the unit counts.

    Raises if either unit count is zero (the score is undefined there and
    such pairs are excluded from candidacy by the trainer).
    """
    if left_count <= 0 or right_count <= 0:
        raise ZeroDivisionError("PMI undefined for zero unit counts")
    return pair_count / (left_count * right_count)


def count_adjacent_pairs(words: Iterable[tuple[Sequence[int], int]]) -> Counter:
    """Raw adjacency counts over a corpus of (id-sequence, multiplicity).

    Overlapping adjacencies all count, e.g. (a, a, a) contributes 2 to the
    (a, a) pair.
    """
    counts: Counter = Counter()
    for w, c in words:
        for i in range(len(w) - 1):
            counts[(w[i], w[i + 1])] += c
    return counts


class _TrainerState:
    """Mutable corpus state with incrementally maintained pair/unit counts."""

    def __init__(self, chunk_counts: Counter, alpha_ids: dict[str, int]):
        self.words: list[list[int]] = []
        self.wcounts: list[int] = []
        for chunk, c in sorted(chunk_counts.items()):
            self.words.append([alpha_ids[ch] for ch in chunk])
            self.wcounts.append(c)
        self.pair_counts: Counter = Counter()
        self.pair_where: dict[tuple[int, int], set[int]] = {}
        self.unit_counts: Counter = Counter()
        for idx, (w, c) in enumerate(zip(self.words, self.wcounts)):
            for sid in w:
                self.unit_counts[sid] += c
            for i in range(len(w) - 1):
                pair = (w[i], w[i + 1])
                self.pair_counts[pair] += c
                self.pair_where.setdefault(pair, set()).add(idx)

    def apply(self, pair: tuple[int, int], new_id: int) -> set[int]:
        """Merge `pair` into `new_id` in every word containing it.

        Returns the set of pairs whose counts changed.
        """
        left, right = pair
        changed: set[tuple[int, int]] = set()
        for idx in sorted(self.pair_where.get(pair, ())):
            old = self.words[idx]
            c = self.wcounts[idx]
            new = _merge_ids(old, left, right, new_id)
            if len(new) == len(old):
                continue
            old_pairs = [(old[i], old[i + 1]) for i in range(len(old) - 1)]
            new_pairs = [(new[i], new[i + 1]) for i in range(len(new) - 1)]
            for p in old_pairs:
                self.pair_counts[p] -= c
                changed.add(p)
            for p in new_pairs:
                self.pair_counts[p] += c
                changed.add(p)
            new_pair_set = set(new_pairs)
            for p in set(old_pairs) - new_pair_set:
                where = self.pair_where.get(p)
                if where is not None:
                    where.discard(idx)
            for p in new_pair_set:
                self.pair_where.setdefault(p, set()).add(idx)
            for sid in old:
                self.unit_counts[sid] -= c
            for sid in new:
                self.unit_counts[sid] += c
            self.words[idx] = new
        return changed


def train_ranked_vocab(
    corpus: Sequence[str],
    objective_kind: str = "bpe_count",
    k_plus: int = 1,
    *,
    pretokenised: bool = True,
    byte_alphabet: bool = False,
) -> RankedVocabulary:
    """Greedily select ``k_plus`` merges maximising the objective.

    At each step the adjacent pair with the highest objective value over the
    current re-tokenised corpus is merged; ties break on the lexicographically
    smallest (left string, right string).  Pairs whose concatenation already
    names an existing subword are ineligible (the result string would be a
    duplicate).  If the corpus runs out of mergeable pairs early, the shorter
    merge list is returned with ``truncated=True``.
    """
    if not corpus:
        raise TokeniserError("corpus must be non-empty")
    if k_plus < 0:
        raise TokeniserError("k_plus must be >= 0")
    if objective_kind not in ("bpe_count", "wp_pmi"):
        raise TokeniserError(f"unknown objective kind: {objective_kind!r}")

    chunk_counts: Counter = Counter()
    for doc in corpus:
        if pretokenised:
            chunk_counts.update(pretokenise(doc))
        elif doc:
            chunk_counts[doc] += 1

    if byte_alphabet:
        alphabet = [chr(i) for i in range(256)]
        for chunk in chunk_counts:
            for ch in chunk:
                if ord(ch) > 255:
                    raise TokeniserError(f"symbol {ch!r} outside the byte alphabet")
    else:
        alphabet = sorted({ch for chunk in chunk_counts for ch in chunk})
        if not alphabet:
            raise TokeniserError("corpus contains no symbols")

    alpha_ids = {c: i for i, c in enumerate(alphabet)}
    strings = list(alphabet)
    existing = set(strings)
    state = _TrainerState(chunk_counts, alpha_ids)
    wp = objective_kind == "wp_pmi"

    # Lazy max-heap.  Entries carry the state snapshot they were scored
    # under; stale entries are discarded on pop.  A fresh entry is pushed
    # whenever a pair's count (or, for PMI, either unit count) changes.
    heap: list = []

    if wp:
        pairs_by_unit: dict[int, set[tuple[int, int]]] = {}
        for p in state.pair_counts:
            pairs_by_unit.setdefault(p[0], set()).add(p)
            pairs_by_unit.setdefault(p[1], set()).add(p)

    def push(pair: tuple[int, int]) -> None:
        pc = state.pair_counts[pair]
        if pc <= 0:
            return
        l, r = pair
        if wp:
            lc = state.unit_counts[l]
            rc = state.unit_counts[r]
            if lc <= 0 or rc <= 0:
                return
            score = objective_wp(pc, lc, rc)
            heapq.heappush(heap, (-score, strings[l], strings[r], l, r, pc, lc, rc))
        else:
            heapq.heappush(heap, (-float(pc), strings[l], strings[r], l, r, pc, 0, 0))

    for pair in sorted(state.pair_counts):
        push(pair)

    merges: list[Merge] = []
    truncated = False
    while len(merges) < k_plus:
        selected = None
        while heap:
            neg_score, _, _, l, r, pc, lc, rc = heapq.heappop(heap)
            pair = (l, r)
            if state.pair_counts[pair] != pc or pc <= 0:
                continue
            if wp and (state.unit_counts[l] != lc or state.unit_counts[r] != rc):
                continue
            if strings[l] + strings[r] in existing:
                continue
            selected = (pair, -neg_score)
            break
        if selected is None:
            truncated = True
            break
        pair, score = selected
        new_id = len(strings)
        new_str = strings[pair[0]] + strings[pair[1]]
        strings.append(new_str)
        existing.add(new_str)
        merges.append(Merge(pair[0], pair[1], new_id, len(merges) + 1, score))

        changed = state.apply(pair, new_id)
        if wp:
            touched_units = {pair[0], pair[1], new_id}
            for p in changed:
                for u in p:
                    pairs_by_unit.setdefault(u, set()).add(p)
            repush = set(changed)
            for u in touched_units:
                repush |= pairs_by_unit.get(u, set())
            for p in sorted(repush):
                push(p)
        else:
            for p in sorted(changed):
                push(p)

    return RankedVocabulary(
        alphabet,
        merges,
        objective_kind,
        pretokenised=pretokenised,
        truncated=truncated,
    )


# ---------------------------------------------------------------------------
# File formats


def _atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_vocab(vocab: RankedVocabulary, path: str) -> None:
    """Write the versioned ranked-vocabulary JSON file."""
    payload = {
        "version": VOCAB_FILE_VERSION,
        "objective_kind": vocab.objective_kind,
        "pretokenised": vocab.pretokenised,
        "truncated": vocab.truncated,
        "alphabet": list(vocab.alphabet),
        "merges": [
            {"rank": m.rank, "left": m.left, "right": m.right, "result": m.result, "score": m.score}
            for m in vocab.merges
        ],
    }
    _atomic_write_text(path, json.dumps(payload, ensure_ascii=False))


def load_vocab(path: str) -> RankedVocabulary:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("version") != VOCAB_FILE_VERSION:
        raise TokeniserError(f"{path}: unsupported vocabulary file version {payload.get('version')!r}")
    merges = [
        Merge(m["left"], m["right"], m["result"], m["rank"], m["score"])
        for m in payload["merges"]
    ]
    return RankedVocabulary(
        payload["alphabet"],
        merges,
        payload["objective_kind"],
        pretokenised=payload.get("pretokenised", True),
        truncated=payload.get("truncated", False),
    )


def write_token_stream(docs: Iterable[Sequence[int]], path: str, sidecar_path: str, table: dict[int, str]) -> None:
    """One document per line, space-separated subword ids, plus an id->string sidecar."""
    lines = [" ".join(str(i) for i in doc) for doc in docs]
    _atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))
    _atomic_write_text(sidecar_path, json.dumps({str(k): v for k, v in table.items()}, ensure_ascii=False))


def read_token_stream(path: str) -> list[list[int]]:
    docs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            docs.append([int(t) for t in line.split()] if line else [])
    return docs
