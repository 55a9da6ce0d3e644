"""End-to-end acceptance checks.

Each test prints a single ``[criterion N] PASS/FAIL`` line so the suite can
be scanned at a glance.  Tolerances are stated inline next to each check.
"""

import itertools
import math
import random
import string
import time
from pathlib import Path

import numpy as np
import pytest

from tokrd import (
    RDDataset,
    SyntheticLanguage,
    UniformBackend,
    aggregate,
    collect_outcomes,
    dataset_from_outcomes,
    enumerate_candidates,
    exclude_nested,
    fit_rd,
    perfect_oracle,
    train_ngram,
    train_ranked_vocab,
    window_sweep,
)
from tokrd.outcomes import CandidateSubword

from helpers import naive_iqr, naive_mean, naive_median, naive_std, reference_train

DATA_DIR = Path(__file__).parent / "data"


def report(number: int, ok: bool, detail: str) -> None:
    print(f"[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {number} failed: {detail}"


def word_corpus(words_with_counts):
    """One document per word, the word repeated count times."""
    return [" ".join([w] * n) for w, n in words_with_counts]


def two_char_words(letters, n):
    pairs = [a + b for a, b in itertools.permutations(letters, 2)]
    assert len(pairs) >= n
    return pairs[:n]


def run_pipeline(vocab, cutoff, window, backend, eval_corpus, *, min_occurrences=5, tok=None):
    tok = tok or vocab.truncate(cutoff)
    candidates = exclude_nested(enumerate_candidates(vocab, cutoff, window), tok.vocab_strings)
    records = collect_outcomes(eval_corpus, tok, backend, candidates, min_occurrences=min_occurrences)
    return fit_rd(dataset_from_outcomes(records, cutoff, window, "mean")), records


class TestCriterion1UniformClosedForm:
    """Uniform backend, |vocab + EOS| = 257: tau_hat equals log 257."""

    def test_all_controls_two_subwords(self):
        t0 = time.monotonic()
        letters = string.ascii_lowercase[:17]
        words = two_char_words(letters, 258)
        counts = [600 - 2 * i for i in range(1, 259)]
        corpus = word_corpus(zip(words, counts))
        vocab = train_ranked_vocab(corpus, "bpe_count", 258)
        assert [vocab.subword_string(m.result) for m in vocab.merges] == words
        cutoff = 256 - 18  # 17 letters + space; vocab incl. EOS then has 257 entries
        tok = vocab.truncate(cutoff)
        assert tok.vocab_size + 1 == 257
        fit, _ = run_pipeline(vocab, cutoff, 20, UniformBackend(tok.vocab_size), corpus, tok=tok)
        elapsed = time.monotonic() - t0
        err = abs(fit.tau_hat - math.log(257))
        report(
            1,
            err <= 1e-6 and elapsed < 10,
            f"two-subword controls: tau_hat={fit.tau_hat:.8f} vs log 257={math.log(257):.8f} "
            f"(|err|={err:.2e}, tol 1e-6), {elapsed:.1f}s",
        )

    def test_mixed_control_lengths_lower_bound(self):
        t0 = time.monotonic()
        letters = string.ascii_lowercase[:17]
        words = two_char_words(letters, 255)
        counts = [600 - 2 * i for i in range(1, 256)]
        # Each 3-char word contributes two merges (u+v, then uv+w).  Odd
        # counts slot them at known ranks between the even 2-char counts,
        # placed symmetrically in the control window so the 3-subword
        # outcomes do not tilt the shared slope.
        pairs = list(zip(words, counts)) + [("uvw", 131), ("xyz", 109)]
        corpus = word_corpus(pairs)
        vocab = train_ranked_vocab(corpus, "bpe_count", 259)
        strings = [vocab.subword_string(m.result) for m in vocab.merges]
        assert strings[234:236] == ["uv", "uvw"] and strings[247:249] == ["xy", "xyz"]
        cutoff = 256 - 24  # 17 letters + u, v, w, x, y, z + space
        tok = vocab.truncate(cutoff)
        assert tok.vocab_size + 1 == 257
        fit, records = run_pipeline(vocab, cutoff, 20, UniformBackend(tok.vocab_size), corpus, tok=tok)
        elapsed = time.monotonic() - t0
        lengths = {
            round(r.aggregates["mean"] / -math.log(257))
            for r in records
            if not r.candidate.treated
        }
        assert lengths == {2, 3}
        report(
            1,
            fit.tau_hat >= math.log(257) - 1e-6 and elapsed < 10,
            f"mixed controls: tau_hat={fit.tau_hat:.6f} >= log 257 - 1e-6 = "
            f"{math.log(257) - 1e-6:.6f}, {elapsed:.1f}s",
        )


class TestCriterion2PerfectModelZeroBias:
    def test_perfect_oracle_near_zero_effect(self):
        t0 = time.monotonic()
        letters = string.ascii_lowercase[:17]
        words = two_char_words(letters, 260)
        counts = [600 - 2 * i for i in range(1, 261)]
        train = word_corpus(zip(words, counts))
        vocab = train_ranked_vocab(train, "bpe_count", 260)
        assert [vocab.subword_string(m.result) for m in vocab.merges] == words

        # True string distribution with log-probability exactly linear in
        # merge rank, so a correctly specified fit recovers zero jump.
        raw = [math.exp(-0.4 * (r / 1000.0)) for r in range(1, 261)]
        z = sum(raw)
        lang = SyntheticLanguage([(w, p / z) for w, p in zip(words, raw)])
        eval_corpus = words  # one occurrence of every string, <= 500 strings

        cutoff = 150
        taus = {}
        outcome_by_cutoff = {}
        for k in (cutoff, cutoff - 1):  # tokenisers differing in one merge at the cutoff
            tok = vocab.truncate(k)
            backend = perfect_oracle(lang, tok)
            fit, records = run_pipeline(
                vocab, k, 40, backend, eval_corpus, min_occurrences=1, tok=tok
            )
            taus[k] = (fit.tau_hat, fit.se_tau)
            outcome_by_cutoff[k] = {
                r.candidate.chars: r.aggregates["mean"] for r in records
            }
        # The toggled subword's string keeps the same total log-probability.
        toggled = words[cutoff - 1]
        assert outcome_by_cutoff[cutoff][toggled] == pytest.approx(
            outcome_by_cutoff[cutoff - 1][toggled], abs=1e-12
        )
        elapsed = time.monotonic() - t0
        ok = all(abs(t) <= max(1e-6, 3 * se) for t, se in taus.values()) and elapsed < 30
        detail = ", ".join(
            f"K={k}: |tau_hat|={abs(t):.2e} <= max(1e-6, 3*{se:.2e})" for k, (t, se) in taus.items()
        )
        report(2, ok, f"{detail}, {elapsed:.1f}s")


class TestCriterion3EstimatorExactness:
    def test_noiseless_recovery(self):
        ranks = np.arange(1, 4001, dtype=float)
        treated = ranks <= 2000
        alpha, beta, tau = -4.25, 0.75, 2.0
        y = alpha + beta * ranks / 1000.0 + tau * treated.astype(float)
        fit = fit_rd(RDDataset(ranks, treated, y, 2000, 2000))
        errs = (
            abs(fit.alpha_hat - alpha),
            abs(fit.beta_hat - beta),
            abs(fit.tau_hat - tau),
        )
        report(
            3,
            max(errs) <= 1e-9,
            f"noiseless (alpha, beta, tau) errors {tuple(f'{e:.1e}' for e in errs)}, tol 1e-9",
        )

    def test_noisy_coverage(self):
        ranks = np.arange(1, 4001, dtype=float)
        treated = ranks <= 2000
        signal = -4.0 + 0.5 * ranks / 1000.0 + 2.0 * treated.astype(float)
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            y = signal + rng.normal(0.0, 0.5, len(ranks))
            fit = fit_rd(RDDataset(ranks, treated, y, 2000, 2000))
            if abs(fit.tau_hat - 2.0) <= 3 * fit.se_tau:
                hits += 1
        report(3, hits >= 99, f"noisy tau within 3*se in {hits}/100 replications (need >= 99)")


class TestCriterion4TokeniserOracle:
    def test_training_matches_exhaustive_reference(self):
        rng = random.Random(42)
        for trial in range(200):
            alphabet = "abcd "
            n_docs = rng.randint(1, 4)
            budget = 200
            docs = []
            for _ in range(n_docs):
                length = rng.randint(1, max(1, budget // n_docs))
                docs.append("".join(rng.choices(alphabet, k=length)))
            k_plus = rng.randint(1, 8)
            objective = "bpe_count" if trial % 2 == 0 else "wp_pmi"
            vocab = train_ranked_vocab(docs, objective, k_plus)
            _, ref = reference_train(docs, objective, k_plus)
            got = [
                (vocab.subword_string(m.left), vocab.subword_string(m.right))
                for m in vocab.merges
            ]
            want = [(left, right) for left, right, _ in ref]
            assert got == want, f"trial {trial}: {got} != {want}"
            for m, (_, _, score) in zip(vocab.merges, ref):
                assert m.score == pytest.approx(score, abs=1e-12)
        report(4, True, "200 random corpora match the exhaustive recount reference exactly")

    def test_round_trip_both_tokenisation_functions(self):
        rng = random.Random(7)
        alphabet = "abcdef .!"
        train = ["".join(rng.choices(alphabet, k=400)) for _ in range(5)] + [alphabet]
        vocab = train_ranked_vocab(train, "bpe_count", 50)
        merge_tok = vocab.truncate(50, "merge_based")
        prefix_tok = vocab.truncate(50, "longest_prefix")
        for _ in range(10_000):
            s = "".join(rng.choices(alphabet, k=rng.randint(0, 30)))
            assert merge_tok.detokenise(merge_tok.tokenise(s)) == s
            assert prefix_tok.detokenise(prefix_tok.tokenise(s)) == s
        report(4, True, "10000 random strings round-trip under both tokenisation functions")


@pytest.fixture(scope="module")
def desk_records():
    train = (DATA_DIR / "train.txt").read_text(encoding="utf-8").splitlines()
    eval_corpus = (DATA_DIR / "eval.txt").read_text(encoding="utf-8").splitlines()
    t0 = time.monotonic()
    vocab = train_ranked_vocab(train, "bpe_count", 4000)
    tok = vocab.truncate(2000)
    backend = train_ngram([tok.tokenise(d) for d in train], 3, 0.1, vocab=tok.vocab_ids)
    candidates = exclude_nested(enumerate_candidates(vocab, 2000, 1000), tok.vocab_strings)
    records = collect_outcomes(eval_corpus, tok, backend, candidates, min_occurrences=5)
    return records, time.monotonic() - t0


class TestCriterion5DeskScaleBias:
    def test_positive_significant_effect(self, desk_records):
        records, build_time = desk_records
        t0 = time.monotonic()
        sub = [r for r in records if 2000 - 500 + 1 <= r.candidate.rank <= 2000 + 500]
        fit = fit_rd(dataset_from_outcomes(sub, 2000, 500, "mean"))
        elapsed = build_time + (time.monotonic() - t0)
        report(
            5,
            fit.tau_hat > 0 and fit.tau_hat > 2 * fit.se_tau and elapsed < 300,
            f"ngram(3, 0.1), K=2000, window=500: tau_hat={fit.tau_hat:.3f} nats, "
            f"se={fit.se_tau:.3f} (need tau_hat > 0 and > 2*se), {elapsed:.1f}s",
        )


class TestCriterion6WindowStability:
    def test_sweep_spread(self, desk_records):
        records, _ = desk_records
        fits, skipped = window_sweep(records, 2000, [250, 500, 1000], "mean")
        assert not skipped
        taus = [f.tau_hat for f in fits]
        max_se = max(f.se_tau for f in fits)
        spread = max(taus) - min(taus)
        report(
            6,
            spread < 4 * max_se,
            f"windows {{250, 500, 1000}}: tau_hats={[f'{t:.3f}' for t in taus]}, "
            f"spread={spread:.3f} < 4*max(se)={4 * max_se:.3f}",
        )


class TestCriterion7NestedExclusion:
    def test_he_excluded_when_hello_present(self):
        candidates = [
            CandidateSubword(subword_id=10, chars="he", rank=5, treated=True),
            CandidateSubword(subword_id=11, chars="hello", rank=6, treated=True),
        ]
        vocabulary = {"h", "e", "l", "o", "he", "hello"}
        kept = exclude_nested(candidates, vocabulary)
        report(
            7,
            [c.chars for c in kept] == ["hello"],
            f"vocabulary with 'he' and 'hello': kept {[c.chars for c in kept]} (expected ['hello'])",
        )


class TestCriterion8Aggregates:
    def test_match_naive_reference(self):
        rng = random.Random(99)
        refs = {"mean": naive_mean, "std": naive_std, "median": naive_median, "iqr": naive_iqr}
        worst = 0.0
        for _ in range(1000):
            samples = [rng.uniform(-20.0, 0.0) for _ in range(rng.randint(1, 40))]
            for stat, ref in refs.items():
                err = abs(aggregate(samples, stat) - ref(samples))
                worst = max(worst, err)
        report(8, worst <= 1e-12, f"mean/std/median/iqr worst |err|={worst:.2e} over 1000 samples, tol 1e-12")
