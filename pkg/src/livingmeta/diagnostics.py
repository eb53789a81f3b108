"""Rank-normalized split R-hat and bulk/tail effective sample size.

Arrays are shaped (chains, draws).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

RHAT_MAX = 1.01
ESS_BULK_MIN = 400


def split_chains(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    half = x.shape[1] // 2
    return np.vstack([x[:, :half], x[:, -half:]])


def z_scale(x):
    """Normal scores of the pooled ranks (Blom offsets)."""
    x = np.asarray(x, dtype=float)
    r = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((r - 0.375) / (x.size + 0.25))


def _rhat(x):
    n = x.shape[1]
    W = x.var(axis=1, ddof=1).mean()
    B = n * x.mean(axis=1).var(ddof=1)
    if not W > 0:
        return np.nan
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


def rhat(x) -> float:
    """max(bulk, folded) rank-normalized split R-hat; nan for constant chains."""
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        return np.nan
    bulk = _rhat(z_scale(split_chains(x)))
    folded = _rhat(z_scale(split_chains(np.abs(x - np.median(x)))))
    return max(bulk, folded)


def _autocov(x):
    """Biased autocovariance of each row, via FFT."""
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size, axis=1)
    return np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n] / n


def ess(x) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m, n = x.shape
    if n < 4 or np.ptp(x) == 0:
        return np.nan
    acov = _autocov(x)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = np.zeros(n)
    rho[0] = 1.0
    even, odd = 1.0, 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = odd
    t = 1
    while t < n - 3 and even + odd > 0:
        even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if even + odd >= 0:
            rho[t + 1], rho[t + 2] = even, odd
        t += 2
    max_t = t - 2
    if even > 0:
        rho[max_t + 1] = even
    # enforce a monotone sequence of paired sums
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[:max_t + 1].sum() + rho[max_t + 1:max_t + 2].sum()
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def ess_bulk(x) -> float:
    return ess(z_scale(split_chains(x)))


def ess_tail(x) -> float:
    x = np.asarray(x, dtype=float)
    q05, q95 = np.quantile(x, [0.05, 0.95])
    lo = ess(split_chains((x <= q05).astype(float)))
    hi = ess(split_chains((x <= q95).astype(float)))
    return float(min(lo, hi))


@dataclass
class Diagnostics:
    rhat: dict = field(default_factory=dict)
    ess_bulk: dict = field(default_factory=dict)
    ess_tail: dict = field(default_factory=dict)
    reasons: list = field(default_factory=list)
    divergences: int = 0

    @property
    def passed(self) -> bool:
        return not self.reasons

    def to_dict(self):
        return {"passed": self.passed, "reasons": list(self.reasons),
                "divergences": self.divergences,
                "parameters": {k: {"rhat": self.rhat[k], "ess_bulk": self.ess_bulk[k],
                                   "ess_tail": self.ess_tail[k]} for k in self.rhat}}


def diagnose_arrays(arrays: dict, rhat_max=RHAT_MAX, ess_min=ESS_BULK_MIN) -> Diagnostics:
    """Diagnose a mapping name -> (chains, draws) array."""
    out = Diagnostics()
    for name, x in arrays.items():
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("diagnostics need at least 2 chains")
        r, eb, et = rhat(x), ess_bulk(x), ess_tail(x)
        out.rhat[name], out.ess_bulk[name], out.ess_tail[name] = r, eb, et
        if np.isnan(r):
            out.reasons.append(f"{name}: R-hat undefined (constant draws)")
        elif r > rhat_max:
            out.reasons.append(f"{name}: R-hat {r:.4f} > {rhat_max}")
        if not np.isnan(r) and not eb >= ess_min:
            out.reasons.append(f"{name}: bulk ESS {eb:.0f} < {ess_min}")
    return out
