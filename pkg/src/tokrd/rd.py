"""Discontinuity estimation at the vocabulary cutoff.

The primary estimator is ordinary least squares on the regressors
[1, rank/1000, treated], so the treated coefficient is the jump in the
conditional mean at the cutoff.  A locally weighted linear fit per side
provides a nonparametric robustness check.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .outcomes import OutcomeRecord

__all__ = [
    "RDDataset",
    "RDFit",
    "RDError",
    "LocalRegressionResult",
    "dataset_from_outcomes",
    "fit_rd",
    "window_sweep",
    "local_regression_check",
    "uniform_model_bound_check",
    "write_fit_report",
    "write_fitted_values_csv",
]


class RDError(Exception):
    pass


@dataclass
class RDDataset:
    ranks: np.ndarray
    treated: np.ndarray
    y: np.ndarray
    cutoff: int
    window: int
    outcome_stat: str = "mean"

    def __post_init__(self):
        self.ranks = np.asarray(self.ranks, dtype=float)
        self.treated = np.asarray(self.treated, dtype=bool)
        self.y = np.asarray(self.y, dtype=float)
        if not (len(self.ranks) == len(self.treated) == len(self.y)):
            raise RDError("ranks, treated, and y must have equal lengths")
        lo, hi = self.cutoff - self.window + 1, self.cutoff + self.window
        if len(self.ranks) and (self.ranks.min() < lo or self.ranks.max() > hi):
            raise RDError(f"ranks outside window [{lo}, {hi}]")
        if np.any(self.treated != (self.ranks <= self.cutoff)):
            raise RDError("treatment flags must equal (rank <= cutoff)")


@dataclass
class RDFit:
    tau_hat: float
    alpha_hat: float
    beta_hat: float
    se_tau: float
    n_treated: int
    n_control: int
    cutoff: int
    window: int
    outcome_stat: str
    coefficients: np.ndarray = field(repr=False, default=None)

    def predict(self, ranks: np.ndarray, treated: np.ndarray) -> np.ndarray:
        X = _design(np.asarray(ranks, float), np.asarray(treated, bool), len(self.coefficients) - 2)
        return X @ self.coefficients


def dataset_from_outcomes(
    records: Sequence[OutcomeRecord], cutoff: int, window: int, stat: str = "mean"
) -> RDDataset:
    ranks = [r.candidate.rank for r in records]
    treated = [r.candidate.treated for r in records]
    y = [r.aggregates[stat] for r in records]
    return RDDataset(np.array(ranks), np.array(treated), np.array(y), cutoff, window, stat)


def _design(ranks: np.ndarray, treated: np.ndarray, degree: int) -> np.ndarray:
    # Running variable scaled by 1000 so the slope is per 1000 ranks.
    r = ranks / 1000.0
    cols = [np.ones_like(r)] + [r**d for d in range(1, degree + 1)] + [treated.astype(float)]
    return np.column_stack(cols)


def fit_rd(
    data: RDDataset,
    *,
    degree: int = 1,
    robust_se: bool = False,
    weights: np.ndarray | None = None,
) -> RDFit:
    """OLS of outcome on [1, rank/1000 (up to ``degree``), treated].

    Standard errors are classical homoskedastic by default; ``robust_se``
    switches to HC1.  ``weights`` (e.g. per-candidate sample counts) turn
    this into weighted least squares.
    """
    n_treated = int(data.treated.sum())
    n_control = int((~data.treated).sum())
    if n_treated < 2 or n_control < 2:
        raise RDError(f"need >= 2 points on each side, got {n_treated} treated / {n_control} control")
    X = _design(data.ranks, data.treated, degree)
    y = data.y
    n, p = X.shape
    if weights is not None:
        w = np.sqrt(np.asarray(weights, dtype=float))
        Xw, yw = X * w[:, None], y * w
    else:
        Xw, yw = X, y
    xtx = Xw.T @ Xw
    if np.linalg.matrix_rank(xtx) < p:
        raise RDError("design matrix is rank-deficient")
    xtx_inv = np.linalg.inv(xtx)
    theta = xtx_inv @ (Xw.T @ yw)
    resid = yw - Xw @ theta
    dof = max(n - p, 1)
    if robust_se:
        meat = Xw.T @ (Xw * (resid**2)[:, None])
        cov = xtx_inv @ meat @ xtx_inv * (n / dof)
    else:
        sigma2 = float(resid @ resid) / dof
        cov = sigma2 * xtx_inv
    se_tau = math.sqrt(max(cov[-1, -1], 0.0))
    return RDFit(
        tau_hat=float(theta[-1]),
        alpha_hat=float(theta[0]),
        beta_hat=float(theta[1]),
        se_tau=se_tau,
        n_treated=n_treated,
        n_control=n_control,
        cutoff=data.cutoff,
        window=data.window,
        outcome_stat=data.outcome_stat,
        coefficients=theta,
    )


def window_sweep(
    records: Sequence[OutcomeRecord],
    cutoff: int,
    window_sizes: Sequence[int],
    stat: str = "mean",
    **fit_kwargs,
) -> tuple[list[RDFit], list[tuple[int, str]]]:
    """One fit per feasible window size, in input order.

    Returns (fits, skipped) where skipped holds (window, reason) pairs for
    infeasible windows.
    """
    fits: list[RDFit] = []
    skipped: list[tuple[int, str]] = []
    for w in window_sizes:
        sub = [r for r in records if cutoff - w + 1 <= r.candidate.rank <= cutoff + w]
        try:
            if w < 1:
                raise RDError("window must be >= 1")
            data = dataset_from_outcomes(sub, cutoff, w, stat)
            fits.append(fit_rd(data, **fit_kwargs))
        except RDError as e:
            skipped.append((w, str(e)))
    return fits, skipped


@dataclass
class LocalRegressionResult:
    gap: float
    treated_grid: np.ndarray
    treated_fit: np.ndarray
    control_grid: np.ndarray
    control_fit: np.ndarray
    bandwidth: float


def _local_linear(x: np.ndarray, y: np.ndarray, x0: float, bandwidth: float) -> float:
    n = len(x)
    if bandwidth >= 1.0:
        w = np.ones(n)
    else:
        k = max(2, int(math.ceil(bandwidth * n)))
        d = np.abs(x - x0)
        h = np.sort(d)[min(k - 1, n - 1)]
        h = max(h, 1e-12)
        u = np.clip(d / h, 0.0, 1.0)
        w = (1.0 - u**3) ** 3
        if w.sum() <= 0 or np.count_nonzero(w) < 2:
            w = np.ones(n)
    X = np.column_stack([np.ones(n), x - x0])
    xtwx = X.T @ (X * w[:, None])
    xtwy = X.T @ (w * y)
    beta = np.linalg.lstsq(xtwx, xtwy, rcond=None)[0]
    return float(beta[0])


def local_regression_check(data: RDDataset, bandwidth: float, grid_points: int = 25) -> LocalRegressionResult:
    """Tricube-weighted local linear fits per side, evaluated on a rank grid.

    The gap between the two side-limits at the cutoff is a nonparametric
    estimate of the jump.  ``bandwidth`` is the fraction of a side's points
    entering each local fit; at 1.0 the fit degenerates to the per-side
    global line.
    """
    if not (0 < bandwidth <= 1):
        raise RDError("bandwidth must be in (0, 1]")
    tx, ty = data.ranks[data.treated], data.y[data.treated]
    cx, cy = data.ranks[~data.treated], data.y[~data.treated]
    if len(tx) < 10 or len(cx) < 10:
        raise RDError(f"need >= 10 points per side, got {len(tx)} treated / {len(cx)} control")
    boundary = float(data.cutoff)
    tgrid = np.linspace(tx.min(), boundary, grid_points)
    cgrid = np.linspace(boundary, cx.max(), grid_points)
    tfit = np.array([_local_linear(tx, ty, g, bandwidth) for g in tgrid])
    cfit = np.array([_local_linear(cx, cy, g, bandwidth) for g in cgrid])
    gap = tfit[-1] - cfit[0]
    return LocalRegressionResult(gap, tgrid, tfit, cgrid, cfit, bandwidth)


def uniform_model_bound_check(fit: RDFit, vocab_size: int, tolerance: float = 1e-6) -> bool:
    """True iff the estimated jump clears log(vocab_size) minus tolerance.

    ``vocab_size`` is the number of events the uniform model spreads its
    mass over (vocabulary plus EOS).
    """
    return fit.tau_hat >= math.log(vocab_size) - tolerance


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_fit_report(fit: RDFit, path: str) -> None:
    payload = {
        "cutoff": fit.cutoff,
        "window": fit.window,
        "stat": fit.outcome_stat,
        "tau_hat": fit.tau_hat,
        "se_tau": fit.se_tau,
        "alpha_hat": fit.alpha_hat,
        "beta_hat": fit.beta_hat,
        "n_treated": fit.n_treated,
        "n_control": fit.n_control,
    }
    _atomic_write(path, json.dumps(payload, indent=2) + "\n")


def write_fitted_values_csv(data: RDDataset, fit: RDFit, path: str) -> None:
    """Per-rank observed and fitted values, plus the counterfactual line
    (treated side with the jump removed) for plotting."""
    order = np.argsort(data.ranks, kind="stable")
    fitted = fit.predict(data.ranks, data.treated)
    counterfactual = fit.predict(data.ranks, np.zeros(len(data.ranks), dtype=bool))
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["rank", "treated", "y", "fitted", "counterfactual"])
            for i in order:
                w.writerow(
                    [
                        int(data.ranks[i]),
                        int(data.treated[i]),
                        repr(float(data.y[i])),
                        repr(float(fitted[i])),
                        repr(float(counterfactual[i])),
                    ]
                )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
