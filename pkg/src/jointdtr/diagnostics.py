"""Convergence diagnostics: split R-hat and autocorrelation-based ESS."""

from __future__ import annotations

import csv
import warnings
from pathlib import Path

import numpy as np


def autocorrelation(x: np.ndarray, max_lag: int | None = None) -> np.ndarray:
    """Sample autocorrelations rho_0..rho_maxlag via FFT."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if max_lag is None:
        max_lag = n - 1
    xc = x - x.mean()
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conjugate(f))[: max_lag + 1] / n
    if acov[0] <= 0:
        return np.concatenate([[1.0], np.zeros(max_lag)])
    return acov / acov[0]


def ess(x: np.ndarray) -> float:
    """Effective sample size with Geyer's initial-positive-sequence cutoff."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4 or np.ptp(x) == 0:
        return float(n)
    rho = autocorrelation(x)
    # sum consecutive-lag pairs while they stay positive
    pair_sums = rho[1:-1:2] + rho[2::2]
    tau = 1.0
    for ps in pair_sums:
        if ps <= 0:
            break
        tau += 2.0 * ps
    return float(min(n, n / tau))


def split_rhat(chains: np.ndarray) -> float:
    """Split potential-scale-reduction factor.

    ``chains`` is (n_chains, n_iter); each chain is halved, then the usual
    between/within variance ratio is computed over the 2c half-chains.
    Returns NaN (with a warning) for degenerate chains.
    """
    chains = np.asarray(chains, dtype=float)
    c, n = chains.shape
    half = n // 2
    if half < 2:
        raise ValueError("chains too short to split")
    splits = np.vstack([chains[:, :half], chains[:, half: 2 * half]])
    w = splits.var(axis=1, ddof=1).mean()
    if w == 0:
        warnings.warn("zero within-chain variance; R-hat undefined", RuntimeWarning)
        return float("nan")
    b = half * splits.mean(axis=1).var(ddof=1)
    var_plus = (half - 1) / half * w + b / half
    return float(np.sqrt(var_plus / w))


def diagnostics(draws) -> dict:
    """Per-parameter ESS and split R-hat for a PosteriorDraws object.
    R-hat is omitted (with a warning) when only one chain is present."""
    chain_ids = np.unique(draws.chain)
    out: dict[str, dict] = {"ess": {}, "rhat": {}}
    for j, name in enumerate(draws.names):
        col = draws.samples[:, j]
        out["ess"][name] = float(sum(ess(col[draws.chain == c]) for c in chain_ids))
        if len(chain_ids) >= 2:
            per = np.vstack([col[draws.chain == c] for c in chain_ids])
            out["rhat"][name] = split_rhat(per)
    if len(chain_ids) < 2:
        warnings.warn("single chain: split R-hat omitted", RuntimeWarning)
        out.pop("rhat")
    return out


def export_trace_csv(draws, path: str | Path) -> None:
    """Per-draw trace table (chain, iteration, parameters) for plotting."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "iter"] + list(draws.names))
        for c, it, row in zip(draws.chain, draws.iteration, draws.samples):
            w.writerow([int(c), int(it)] + [repr(float(v)) for v in row])
