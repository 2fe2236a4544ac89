"""Pareto-smoothed importance-sampling leave-one-out cross-validation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .model import loglik_pointwise

K_FLOOR = -0.5
K_BINS = ((-math.inf, 0.5), (0.5, 0.7), (0.7, 1.0), (1.0, math.inf))
K_BIN_LABELS = ("(-Inf, 0.5]", "(0.5, 0.7]", "(0.7, 1]", "(1, Inf)")


def gpd_fit(x: np.ndarray, prior_bs: float = 3.0, prior_k: float = 10.0) -> tuple[float, float]:
    """Shape and scale of a generalized Pareto fit to positive exceedances.

    Profile-posterior estimator of Zhang and Stephens (2009), with the shape
    shrunk toward 0.5 by ``prior_k`` pseudo-observations.
    """
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    m = 30 + int(math.sqrt(n))
    b = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    b = b / (prior_bs * x[int(n / 4 + 0.5) - 1]) + 1.0 / x[-1]
    k = np.log1p(-b[:, None] * x).mean(axis=1)
    len_scale = n * (np.log(-(b / k)) - k - 1.0)
    weights = softmax(len_scale)
    keep = weights >= 10 * np.finfo(float).eps
    weights = weights[keep] / weights[keep].sum()
    b_post = float(np.sum(b[keep] * weights))
    k_post = float(np.log1p(-b_post * x).mean())
    sigma = -k_post / b_post
    k_post = (n * k_post + prior_k * 0.5) / (n + prior_k)
    return k_post, sigma


def gpd_quantile(p, k: float, sigma: float):
    p = np.asarray(p, dtype=float)
    if abs(k) < np.finfo(float).eps:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def tail_length(S: int) -> int:
    return int(min(math.ceil(0.2 * S), math.ceil(3 * math.sqrt(S))))


def psis_smooth(log_ratios) -> tuple[np.ndarray, float]:
    """Smooth one observation's log importance ratios.

    Returns
    -------
    log_weights : ndarray
        Normalized smoothed log weights.
    k_hat : float
        Estimated Pareto shape; ``K_FLOOR`` when the ratios carry no tail.
    """
    lw = np.asarray(log_ratios, dtype=float).copy()
    S = lw.size
    if S < 100:
        warnings.warn(f"PSIS with only {S} draws is unreliable", RuntimeWarning, stacklevel=2)
    lw -= lw.max()
    M = tail_length(S)
    order = np.argsort(lw, kind="stable")
    tail_idx = order[-M:]
    cutoff = max(lw[order[-M - 1]], math.log(np.finfo(float).tiny))
    tail = lw[tail_idx]
    exceed = np.exp(tail) - math.exp(cutoff)
    if M < 5 or np.ptp(tail) <= 0 or np.count_nonzero(exceed > 0) < 5:
        k = K_FLOOR
    else:
        k, sigma = gpd_fit(np.maximum(exceed, np.finfo(float).tiny))
        if math.isfinite(k) and sigma > 0:
            probs = (np.arange(1, M + 1) - 0.5) / M
            smoothed = np.log(gpd_quantile(probs, k, sigma) + math.exp(cutoff))
            lw[tail_idx] = np.minimum(smoothed, 0.0)  # truncate at the raw maximum
        else:
            k = math.inf
    return lw - logsumexp(lw), float(k)


@dataclass
class LooReport:
    elpd_loo: float
    se_elpd_loo: float
    p_loo: float
    se_p_loo: float
    looic: float
    se_looic: float
    pointwise_elpd: np.ndarray = field(repr=False)
    pointwise_p: np.ndarray = field(repr=False)
    k_hat: np.ndarray = field(repr=False)
    flagged: list[int] = field(default_factory=list)

    def bin_shares(self) -> dict[str, float]:
        return k_bins(self.k_hat)

    def to_dict(self) -> dict:
        return {
            "elpd_loo": self.elpd_loo, "se_elpd_loo": self.se_elpd_loo,
            "p_loo": self.p_loo, "se_p_loo": self.se_p_loo,
            "looic": self.looic, "se_looic": self.se_looic,
            "k_bins": self.bin_shares(), "n": int(self.k_hat.size), "flagged": self.flagged,
        }


def k_bins(k_hat) -> dict[str, float]:
    """Shares of observations per Pareto-k bin."""
    k = np.asarray(k_hat, dtype=float)
    out = {}
    for (lo, hi), label in zip(K_BINS, K_BIN_LABELS):
        out[label] = float(np.mean((k > lo) & (k <= hi))) if k.size else 0.0
    return out


def loo_report(loglik) -> LooReport:
    """PSIS-LOO summary of a pointwise log-likelihood matrix ``(draws, observations)``."""
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim != 2:
        raise ValueError("log-likelihood must be a (draws, observations) matrix")
    S, n = ll.shape
    elpd = np.empty(n)
    k_hat = np.empty(n)
    lpd = logsumexp(ll, axis=0) - math.log(S)
    for i in range(n):
        lw, k_hat[i] = psis_smooth(-ll[:, i])
        if np.ptp(ll[:, i]) == 0:
            # no parameter uncertainty: flat ratios, and both lpd and elpd are the loglik itself
            lpd[i] = elpd[i] = ll[0, i]
        else:
            elpd[i] = logsumexp(lw + ll[:, i])
    p = lpd - elpd
    flagged = [int(i) for i in np.flatnonzero(~np.isfinite(elpd))]
    ok = np.isfinite(elpd)
    se = math.sqrt(n) * float(np.std(elpd[ok], ddof=1)) if ok.sum() > 1 else math.nan
    se_p = math.sqrt(n) * float(np.std(p[ok], ddof=1)) if ok.sum() > 1 else math.nan
    total = float(elpd[ok].sum())
    return LooReport(
        elpd_loo=total, se_elpd_loo=se, p_loo=float(p[ok].sum()), se_p_loo=se_p,
        looic=-2.0 * total, se_looic=2.0 * se, pointwise_elpd=elpd, pointwise_p=p,
        k_hat=k_hat, flagged=flagged,
    )


def pointwise_matrix(model, draws_u: np.ndarray, batch: int = 200) -> np.ndarray:
    """Pointwise log-likelihood ``(draws, persons)`` for unconstrained draws of a coverage model."""
    U = np.asarray(draws_u, dtype=float)
    out = np.empty((U.shape[0], model.data.n_persons))
    for i in range(0, U.shape[0], batch):
        out[i:i + batch] = loglik_pointwise(model.constrain(U[i:i + batch]), model.data)
    return out
