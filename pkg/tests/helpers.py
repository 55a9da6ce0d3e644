"""Independent reference implementations used as test oracles.

Deliberately naive: everything is recounted from scratch at every step and
no state is shared with the package's fast paths.
"""

import math

from tokrd.tokeniser import pretokenise


def reference_train(corpus, objective_kind, k_plus, pretokenised=True):
    """Exhaustive recount-every-step greedy trainer.

    Returns (alphabet, merges) where merges are (left_str, right_str, score)
    tuples in selection order.
    """
    words = []
    for doc in corpus:
        chunks = pretokenise(doc) if pretokenised else ([doc] if doc else [])
        for chunk in chunks:
            words.append(list(chunk))
    alphabet = sorted({c for w in words for c in w})
    existing = set(alphabet)
    merges = []
    for _ in range(k_plus):
        pair_counts = {}
        unit_counts = {}
        for w in words:
            for u in w:
                unit_counts[u] = unit_counts.get(u, 0) + 1
            for i in range(len(w) - 1):
                p = (w[i], w[i + 1])
                pair_counts[p] = pair_counts.get(p, 0) + 1
        best = None
        for (l, r), c in pair_counts.items():
            if c <= 0 or l + r in existing:
                continue
            if objective_kind == "wp_pmi":
                if unit_counts[l] <= 0 or unit_counts[r] <= 0:
                    continue
                score = c / (unit_counts[l] * unit_counts[r])
            else:
                score = float(c)
            key = (-score, l, r)
            if best is None or key < best[0]:
                best = (key, (l, r), score)
        if best is None:
            break
        (l, r), score = best[1], best[2]
        new = l + r
        existing.add(new)
        merges.append((l, r, score))
        next_words = []
        for w in words:
            out = []
            i = 0
            while i < len(w):
                if i < len(w) - 1 and w[i] == l and w[i + 1] == r:
                    out.append(new)
                    i += 2
                else:
                    out.append(w[i])
                    i += 1
            next_words.append(out)
        words = next_words
    return alphabet, merges


def naive_mean(xs):
    return sum(xs) / len(xs)


def naive_std(xs):
    m = naive_mean(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / len(xs))


def naive_quantile(xs, q):
    """Linear interpolation between order statistics."""
    s = sorted(xs)
    if len(s) == 1:
        return s[0]
    pos = q * (len(s) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    frac = pos - lo
    return s[lo] + (s[hi] - s[lo]) * frac


def naive_median(xs):
    return naive_quantile(xs, 0.5)


def naive_iqr(xs):
    return naive_quantile(xs, 0.75) - naive_quantile(xs, 0.25)


def solve_normal_equations_3x3(ranks, treated, y):
    """Explicit 3x3 normal-equation solve for [1, r/1000, W] regression."""
    rows = [[1.0, r / 1000.0, 1.0 if w else 0.0] for r, w in zip(ranks, treated)]
    A = [[sum(row[i] * row[j] for row in rows) for j in range(3)] for i in range(3)]
    b = [sum(row[i] * yi for row, yi in zip(rows, y)) for i in range(3)]

    def det3(m):
        return (
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        )

    d = det3(A)
    theta = []
    for col in range(3):
        M = [list(row) for row in A]
        for i in range(3):
            M[i][col] = b[i]
        theta.append(det3(M) / d)
    return theta
