"""Convergence diagnostics: rank-normalized split R-hat and bulk ESS.

Both statistics follow the rank-normalization recipe of modern MCMC
practice: pooled draws are replaced by normal scores of their average
ranks, each chain is split in half, and the classic between/within
variance ratio (for R-hat) or the combined autocorrelation sum with
Geyer's initial monotone sequence (for ESS) is computed on the scores.
"""

from __future__ import annotations

import numpy as np
from scipy import special, stats


def _rank_normalize(draws: np.ndarray) -> np.ndarray:
    """Normal scores of average ranks, preserving shape (chains, n)."""
    flat = draws.ravel()
    ranks = stats.rankdata(flat, method="average")
    z = special.ndtri((ranks - 0.375) / (flat.size + 0.25))
    return z.reshape(draws.shape)


def _split_chains(draws: np.ndarray) -> np.ndarray:
    m, n = draws.shape
    half = n // 2
    return np.vstack([draws[:, :half], draws[:, n - half:]])


def split_rhat(draws: np.ndarray) -> float:
    """Rank-normalized split R-hat for one parameter; draws is (chains, n).

    A single chain is allowed: splitting yields the two half-chains the
    between/within comparison is made on.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[0] < 1:
        raise ValueError("need draws shaped (chains, iterations)")
    z = _split_chains(_rank_normalize(draws))
    m, n = z.shape
    if n < 4:
        return np.nan
    chain_means = z.mean(axis=1)
    b = n * np.var(chain_means, ddof=1)
    w = np.mean(np.var(z, axis=1, ddof=1))
    if w == 0:
        return 1.0
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance by FFT, normalized by n."""
    n = x.size
    xc = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real / n
    return acov


def ess_bulk(draws: np.ndarray) -> float:
    """Bulk effective sample size on rank-normalized split chains."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2:
        raise ValueError("need draws shaped (chains, iterations)")
    z = _split_chains(_rank_normalize(draws))
    m, n = z.shape
    if n < 4:
        return np.nan
    acov = np.vstack([_autocovariance(z[c]) for c in range(m)])
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    mean_acov = acov.mean(axis=0)
    var_plus = w * (n - 1) / n + np.var(z.mean(axis=1), ddof=1) if m > 1 else w
    if var_plus == 0:
        return float(m * n)

    rho = 1.0 - (w - mean_acov) / var_plus
    rho[0] = 1.0
    # Geyer initial positive + monotone sequence over (2k, 2k+1) lag pairs
    tau_sum = 0.0
    prev_pair = np.inf
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        pair = min(pair, prev_pair)
        prev_pair = pair
        tau_sum += pair
        k += 1
    tau = max(-1.0 + 2.0 * tau_sum, 1e-12)
    ess = m * n / tau
    return float(min(ess, m * n))


def summarize(draws_by_param: dict) -> dict:
    """R-hat and bulk ESS per parameter name; draws are (chains, n)."""
    out = {}
    for name, draws in draws_by_param.items():
        out[name] = {
            "rhat": split_rhat(draws),
            "ess_bulk": ess_bulk(draws),
            "mean": float(np.mean(draws)),
            "sd": float(np.std(draws)),
            "q2.5": float(np.quantile(draws, 0.025)),
            "q50": float(np.quantile(draws, 0.5)),
            "q97.5": float(np.quantile(draws, 0.975)),
        }
    return out
