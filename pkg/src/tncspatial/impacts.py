"""
Direct / indirect / total impacts of SDM covariates.

Two routes are provided. The exact route averages the effect matrix
S (beta_k I + gamma_k W), S = (I - rho W)^-1: direct is the mean diagonal
element, total the mean row sum. The closed-form route evaluates the
three-term polynomial approximations in rho that the source study prints;
its totals coincide with the exact ones for row-standardised W, its direct
and indirect splits do not in general.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .econometrics import normal_two_sided_p
from .sdm import SdmFit
from .weights import SpatialWeights

DIVERGENCE_THRESHOLD = 0.10


class ImpactError(RuntimeError):
    pass


@dataclass(frozen=True)
class ImpactInference:
    sd_direct: np.ndarray
    sd_indirect: np.ndarray
    sd_total: np.ndarray
    draws: int
    seed: int
    rejected: int
    degenerate: bool


@dataclass(frozen=True)
class ImpactTable:
    covariates: tuple
    direct: np.ndarray
    indirect: np.ndarray
    total: np.ndarray
    method: str
    inference: ImpactInference | None = None

    def get(self, covariate: str, effect: str) -> float:
        i = self.covariates.index(covariate)
        return float(getattr(self, effect)[i])

    def rows(self) -> list[dict]:
        out = []
        for i, c in enumerate(self.covariates):
            row = {"covariate": c}
            for eff in ("direct", "indirect", "total"):
                point = float(getattr(self, eff)[i])
                row[eff] = point
                if self.inference is not None:
                    sd = float(getattr(self.inference, f"sd_{eff}")[i])
                    if sd > 0:
                        z = point / sd
                        p = normal_two_sided_p(z)
                    else:
                        z = p = math.nan
                    row[f"{eff}_sd"] = sd
                    row[f"{eff}_z"] = z
                    row[f"{eff}_p"] = p
            out.append(row)
        return out


def _coefficients(fit: SdmFit):
    covs = tuple(c for c in fit.spec.covariates)
    beta = fit.beta
    gamma = fit.gamma
    b = np.array([beta[c] for c in covs])
    g = np.array([gamma.get(c, 0.0) for c in covs])
    return covs, b, g


def impacts_exact(fit: SdmFit, w: SpatialWeights) -> ImpactTable:
    """Trace-based impacts from the dense inverse of (I - rho W)."""
    covs, b, g = _coefficients(fit)
    return _exact_dense(covs, b, g, fit.rho, w)


def _exact_dense(covs, b, g, rho, w: SpatialWeights) -> ImpactTable:
    n = w.n
    W = w.dense
    try:
        S = np.linalg.inv(np.eye(n) - rho * W)
    except np.linalg.LinAlgError as exc:
        raise ImpactError("I - rho W is singular") from exc
    SW = S @ W
    tr_s, tr_sw = np.trace(S) / n, np.trace(SW) / n
    sum_s, sum_sw = S.sum() / n, SW.sum() / n
    direct = b * tr_s + g * tr_sw
    total = b * sum_s + g * sum_sw
    return ImpactTable(covs, direct, total - direct, total, "exact")


class SpectralImpacts:
    """Exact impacts evaluated from the eigen-decomposition of W.

    W = D^{-1/2} V diag(lam) V' D^{1/2}, so traces and total sums of any
    rational function of W reduce to weighted sums over eigenvalues; each
    rho costs O(n).
    """

    def __init__(self, w: SpatialWeights):
        if w.eigvecs is None:
            raise ImpactError("weights carry no eigenvectors")
        self.lam = w.spectrum.eigenvalues
        ones = np.ones(w.n)
        a = w.eigvecs.T @ (ones / w.scaling)
        c = w.eigvecs.T @ (ones * w.scaling)
        self.ab = a * c
        self.n = w.n

    def factors(self, rho: float):
        s = 1.0 / (1.0 - rho * self.lam)
        n = self.n
        return s.sum() / n, (self.lam * s).sum() / n, (self.ab * s).sum() / n, (self.ab * self.lam * s).sum() / n

    def impacts(self, b, g, rho):
        tr_s, tr_sw, sum_s, sum_sw = self.factors(rho)
        direct = b * tr_s + g * tr_sw
        total = b * sum_s + g * sum_sw
        return direct, total - direct, total


def impacts_spectral(fit: SdmFit, w: SpatialWeights) -> ImpactTable:
    covs, b, g = _coefficients(fit)
    d, i, t = SpectralImpacts(w).impacts(b, g, fit.rho)
    return ImpactTable(covs, d, i, t, "exact")


def closed_form_impacts(beta, gamma, rho):
    """The printed polynomial forms; arrays broadcast."""
    if not abs(rho) < 1:
        raise ImpactError("closed-form impacts need |rho| < 1")
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    den = 3.0 * (1.0 - rho**2)
    direct = (3.0 - rho**2) / den * beta + 2.0 * rho / den * gamma
    indirect = (3.0 * rho + rho**2) / den * beta + (3.0 + rho) / den * gamma
    total = (3.0 + 3.0 * rho) / den * (beta + gamma)
    return direct, indirect, total


def impacts_paper_closed_form(fit: SdmFit) -> ImpactTable:
    covs, b, g = _coefficients(fit)
    d, i, t = closed_form_impacts(b, g, fit.rho)
    return ImpactTable(covs, d, i, t, "paper_closed_form")


def impact_inference(fit: SdmFit, w: SpatialWeights, draws: int = 1000, seed: int = 0, max_tries: int = 1000) -> ImpactTable:
    """Monte Carlo standard errors for the exact impacts.

    (theta, rho) is drawn from N(estimate, param_cov); draw ``d`` uses the
    generator keyed by ``(seed, d)`` and redraws until rho is admissible, so
    results do not depend on evaluation order.
    """
    if draws < 200:
        raise ImpactError("use at least 200 draws")
    covs = tuple(fit.spec.covariates)
    point = impacts_exact(fit, w)
    cov = np.asarray(fit.param_cov, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if vals.min() < -1e-8 * max(1.0, abs(vals).max()):
        raise ImpactError("parameter covariance is not positive semidefinite")
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    mean = np.append(fit.theta, fit.rho)
    lo, hi = w.spectrum.rho_interval()

    names = fit.names
    b_idx = [names.index(c) for c in covs]
    g_idx = [names.index(f"W_{c}") if c in fit.spec.lagged else -1 for c in covs]

    spec = SpectralImpacts(w)
    out = np.empty((draws, 3, len(covs)))
    rejected = 0
    for d in range(draws):
        rng = np.random.default_rng([seed, d])
        for _ in range(max_tries):
            p = mean + root @ rng.standard_normal(len(mean))
            if lo < p[-1] < hi:
                break
            rejected += 1
        else:
            raise ImpactError("rho draws keep falling outside the admissible interval")
        bd = p[b_idx]
        gd = np.array([p[j] if j >= 0 else 0.0 for j in g_idx])
        out[d] = spec.impacts(bd, gd, p[-1])
    if rejected > 0.5 * (draws + rejected):
        raise ImpactError(f"{rejected} of {draws + rejected} rho draws rejected; covariance inconsistent with the rho interval")
    sd = out.std(axis=0, ddof=1)
    # identical draws leave only summation roundoff behind
    sd[sd <= 1e-12 * np.maximum(np.abs(out).max(axis=0), 1.0)] = 0.0
    inf = ImpactInference(sd[0], sd[1], sd[2], draws, seed, rejected, bool(np.all(sd == 0)))
    return ImpactTable(point.covariates, point.direct, point.indirect, point.total, "exact", inf)


def divergences(exact: ImpactTable, closed: ImpactTable, threshold: float = DIVERGENCE_THRESHOLD) -> list[dict]:
    """Covariate/effect pairs where the two routes differ by more than ``threshold`` relative."""
    flags = []
    for i, c in enumerate(exact.covariates):
        for eff in ("direct", "indirect", "total"):
            a = float(getattr(exact, eff)[i])
            b = float(getattr(closed, eff)[i])
            scale = max(abs(a), abs(b))
            if scale > 0 and abs(a - b) / scale > threshold:
                flags.append({"covariate": c, "effect": eff, "exact": a, "closed_form": b})
    return flags


# ---------------------------------------------------------------------------
# translation to rides


@dataclass(frozen=True)
class RideDelta:
    r1: float
    delta_x: float
    impact: float
    delta_r: float


def ride_delta(r1: float, impact: float, delta_x: float) -> RideDelta:
    """Change in rides when a logged outcome shifts by ``delta_x * impact``."""
    if r1 < 0:
        raise ValueError("baseline rides must be nonnegative")
    return RideDelta(r1, delta_x, impact, r1 * math.expm1(delta_x * impact))


def elasticity_at_mean(impact: float, mean_x: float) -> float:
    """Percent response of the outcome to a 1% change in x evaluated at its mean."""
    if not mean_x > 0:
        raise ValueError("mean_x must be positive")
    return 100.0 * impact * 0.01 * mean_x

