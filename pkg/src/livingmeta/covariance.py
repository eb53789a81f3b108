"""Block-diagonal sampling-error covariance across effects.

Within a study the correlation between two sampling errors is

    rho ** [measures differ] * phi ** |timepoint lag|

where two effects "differ in measure" when their group or outcome labels
differ. Across studies the covariance is zero. The resulting correlation
matrix is a principal submatrix of (compound symmetry) x (AR(1)), hence
positive definite whenever 0 <= rho, phi < 1.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg


class CovarianceError(ValueError):
    pass


class NotPositiveDefiniteError(CovarianceError):
    pass


@dataclass(frozen=True)
class CovarianceSpec:
    rho: float = 0.7
    phi: float = 0.8

    def __post_init__(self):
        for name in ("rho", "phi"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise CovarianceError(f"{name} must lie in [0, 1), got {v}")


@dataclass
class SamplingCovariance:
    V: np.ndarray
    effect_ids: list
    study_ids: list
    blocks: dict = field(default_factory=dict)  # study_id -> index array

    @property
    def dimension(self) -> int:
        return self.V.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["effect_id", *self.effect_ids])
        for eid, row in zip(self.effect_ids, self.V):
            w.writerow([eid, *(repr(float(x)) for x in row)])
        return buf.getvalue()


def pair_correlation(a, b, spec: CovarianceSpec) -> float:
    """Correlation between the sampling errors of two effects of one study."""
    lag = abs(a.timepoint_index - b.timepoint_index)
    same_measure = a.group_label == b.group_label and a.outcome_label == b.outcome_label
    if same_measure and lag == 0:
        raise CovarianceError(
            f"effects {a.effect_id!r} and {b.effect_id!r} share group, outcome and timepoint")
    return (1.0 if same_measure else spec.rho) * spec.phi**lag


def build_vcov(effects, spec: CovarianceSpec | None = None) -> SamplingCovariance:
    spec = spec or CovarianceSpec()
    n = len(effects)
    V = np.zeros((n, n))
    blocks = defaultdict(list)
    for i, e in enumerate(effects):
        if not e.oriented:
            raise CovarianceError(f"effect {e.effect_id!r} is not oriented")
        blocks[e.study_id].append(i)
        V[i, i] = e.var_g
    for sid, idx in blocks.items():
        if len(idx) > 1 and any(not effects[i].group_label or not effects[i].outcome_label
                                for i in idx):
            raise CovarianceError(f"study {sid!r}: multi-effect block needs group and outcome labels")
        for p, i in enumerate(idx):
            for j in idx[p + 1:]:
                c = pair_correlation(effects[i], effects[j], spec)
                V[i, j] = V[j, i] = c * effects[i].se_g * effects[j].se_g
    blocks = {sid: np.asarray(idx) for sid, idx in blocks.items()}
    for sid, idx in blocks.items():
        try:
            cholesky(V[np.ix_(idx, idx)])
        except NotPositiveDefiniteError:
            raise NotPositiveDefiniteError(f"covariance block of study {sid!r} is not positive definite") from None
    return SamplingCovariance(V=V, effect_ids=[e.effect_id for e in effects],
                              study_ids=[e.study_id for e in effects], blocks=blocks)


def cholesky(V) -> np.ndarray:
    """Lower Cholesky factor; raises NotPositiveDefiniteError instead of regularizing."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise CovarianceError("V must be square")
    if not np.allclose(V, V.T, rtol=0, atol=1e-14 * max(1.0, np.abs(V).max(initial=0))):
        raise CovarianceError("V must be symmetric")
    try:
        L = linalg.cholesky(V, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from None
    if np.any(np.diag(L) <= 0):
        raise NotPositiveDefiniteError("zero pivot")
    return L


def effective_precision(V_block) -> float:
    """1' V^-1 1 for one study block: precision of its pooled estimate."""
    L = cholesky(V_block)
    ones = np.ones(L.shape[0])
    z = linalg.solve_triangular(L, ones, lower=True)
    return float(z @ z)


@dataclass
class GridCell:
    rho: float
    phi: float
    estimate: float | None
    failed: str | None = None


@dataclass
class RhoPhiGrid:
    cells: list

    @property
    def estimates(self) -> np.ndarray:
        return np.array([c.estimate for c in self.cells if c.failed is None])

    @property
    def spread(self) -> float:
        est = self.estimates
        return float(est.max() - est.min()) if est.size else float("nan")

    @property
    def minimum(self) -> float:
        return float(self.estimates.min())

    @property
    def maximum(self) -> float:
        return float(self.estimates.max())


def cell_seed(master_seed: int, rho: float, phi: float) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), round(rho * 1e6), round(phi * 1e6)])


def rho_phi_grid(effects, rho_values, phi_values, fit_fn, master_seed=0) -> RhoPhiGrid:
    """Pooled estimate for every (rho, phi) cell.

    ``fit_fn(effects, cov_spec, seed)`` returns the pooled posterior mean; any
    exception in one cell marks that cell failed and the grid continues.
    """
    cells = []
    for rho in rho_values:
        for phi in phi_values:
            if not (0 <= rho <= 0.9 and 0 <= phi <= 0.9):
                raise CovarianceError(f"grid values must lie in [0, 0.9]: ({rho}, {phi})")
            try:
                est = fit_fn(effects, CovarianceSpec(rho, phi), cell_seed(master_seed, rho, phi))
                cells.append(GridCell(rho, phi, float(est)))
            except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the grid
                cells.append(GridCell(rho, phi, None, failed=f"{type(exc).__name__}: {exc}"))
    return RhoPhiGrid(cells)
