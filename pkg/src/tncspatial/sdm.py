"""
Maximum-likelihood Spatial Durbin Model

    y = rho W y + X beta + W X_l gamma + eps,    eps ~ N(0, sigma2 I)

estimated through the likelihood concentrated on rho. With e0 and eL the
residuals of y and Wy on Z = [1, X, W X_l], the profile is

    L(rho) = -n/2 (ln 2pi + 1) - n/2 ln(|e0 - rho eL|^2 / n) + ln|I - rho W|

and the log-determinant comes from the eigenvalues of W.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .econometrics import gaussian_loglik, normal_two_sided_p, ols_fit
from .ingest import AreaPanel
from .weights import SpatialWeights, WeightsError, log_det

GRID_POINTS = 256
GOLDEN_TOL = 1e-8
HESSIAN_STEP = 1e-5

INTERCEPT = "(Intercept)"


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    dependent: str
    covariates: tuple
    lagged: tuple = ("tat_minutes",)
    include_intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "lagged", tuple(self.lagged))
        extra = set(self.lagged) - set(self.covariates)
        if extra:
            raise ValueError(f"lagged columns not among covariates: {sorted(extra)}")
        if self.dependent not in ("solo", "authorized_pooled", "pooled"):
            raise ValueError(f"unknown dependent {self.dependent!r}")

    @property
    def term_names(self) -> tuple:
        head = (INTERCEPT,) if self.include_intercept else ()
        return head + self.covariates + tuple(f"W_{c}" for c in self.lagged)


def design_matrix(X: np.ndarray, w: SpatialWeights, lag_index, intercept: bool = True) -> np.ndarray:
    """Z = [1, X, W X[:, lag_index]]."""
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    parts = []
    if intercept:
        parts.append(np.ones((X.shape[0], 1)))
    parts.append(X)
    if len(lag_index):
        parts.append(np.asarray(w.matrix @ X[:, list(lag_index)]).reshape(X.shape[0], -1))
    return np.hstack(parts)


class _Profile:
    """Pre-computed pieces of the concentrated likelihood for one (y, Z, W)."""

    def __init__(self, y: np.ndarray, Z: np.ndarray, w: SpatialWeights):
        self.y = y
        self.Z = Z
        self.w = w
        self.n = len(y)
        self.wy = np.asarray(w.matrix @ y)
        q, r = np.linalg.qr(Z)
        self.q, self.r = q, r
        self.e0 = y - q @ (q.T @ y)
        self.eL = self.wy - q @ (q.T @ self.wy)
        self.a = float(self.e0 @ self.e0)
        self.b = float(self.e0 @ self.eL)
        self.c = float(self.eL @ self.eL)
        self.eig = w.spectrum.eigenvalues

    def ssr(self, rho):
        return self.a - 2.0 * rho * self.b + rho * rho * self.c

    def loglik(self, rho):
        rho = np.asarray(rho, dtype=float)
        ld = np.sum(np.log1p(-np.multiply.outer(rho, self.eig)), axis=-1)
        n = self.n
        return -0.5 * n * (math.log(2.0 * math.pi) + 1.0) - 0.5 * n * np.log(self.ssr(rho) / n) + ld

    def theta(self, rho: float) -> np.ndarray:
        return scipy.linalg.solve_triangular(self.r, self.q.T @ (self.y - rho * self.wy))


def concentrated_loglik(rho: float, y, Z, w: SpatialWeights) -> float:
    lo, hi = w.spectrum.rho_interval()
    if not lo < rho < hi:
        raise WeightsError(f"rho={rho} outside admissible interval ({lo}, {hi})")
    return float(_Profile(np.asarray(y, float), np.asarray(Z, float), w).loglik(rho))


def full_loglik(theta, rho: float, sigma2: float, y, Z, w: SpatialWeights) -> float:
    """Unconcentrated SDM log-likelihood."""
    if sigma2 <= 0:
        return -math.inf
    e = y - rho * (w.matrix @ y) - Z @ theta
    n = len(y)
    return -0.5 * n * math.log(2.0 * math.pi * sigma2) + log_det(w, rho) - float(e @ e) / (2.0 * sigma2)


def golden_section_max(f, lo: float, hi: float, tol: float = GOLDEN_TOL) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def maximize_rho(profile: _Profile, bounds: tuple[float, float], grid_points: int = GRID_POINTS) -> float:
    lo, hi = bounds
    grid = np.linspace(lo, hi, grid_points)
    vals = profile.loglik(grid)
    i = int(np.argmax(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid_points - 1)]
    rho = golden_section_max(lambda r: float(profile.loglik(r)), a, b)
    edge = 10.0 * GOLDEN_TOL
    if rho - lo < edge or hi - rho < edge:
        raise EstimationError(
            f"likelihood maximised at the edge of the admissible rho interval (rho={rho:.6f}); inspect the data and weights"
        )
    return rho


def numerical_hessian(f, x: np.ndarray, rel_step: float = HESSIAN_STEP) -> np.ndarray:
    """Central finite-difference Hessian with steps ``rel_step * max(|x_i|, 1)``."""
    x = np.asarray(x, dtype=float)
    k = len(x)
    h = rel_step * np.maximum(np.abs(x), 1.0)
    H = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return H


def nagelkerke_pseudo_r2(loglik: float, null_loglik: float, n: int) -> float:
    # Gaussian densities are unbounded, so a near-exact fit can push this past 1
    return (1.0 - math.exp((2.0 / n) * (null_loglik - loglik))) / (1.0 - math.exp((2.0 / n) * null_loglik))


def intercept_only_loglik(y) -> float:
    y = np.asarray(y, dtype=float)
    e = y - y.mean()
    return gaussian_loglik(float(e @ e), len(y))


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    if p < 0.1:
        return "^"
    return ""


@dataclass(frozen=True)
class SdmFit:
    spec: ModelSpec
    names: tuple
    theta: np.ndarray
    rho: float
    sigma2: float
    loglik: float
    aic: float
    pseudo_r2_nagelkerke: float
    param_cov: np.ndarray
    n: int
    w_fingerprint: str
    ols_loglik: float
    ols_aic: float
    null_loglik: float
    y: np.ndarray = field(repr=False)
    Z: np.ndarray = field(repr=False)

    @property
    def beta(self) -> dict:
        k = len(self.names) - len(self.spec.lagged)
        return dict(zip(self.names[:k], self.theta[:k]))

    @property
    def gamma(self) -> dict:
        m = len(self.spec.lagged)
        return dict(zip(self.spec.lagged, self.theta[len(self.theta) - m :])) if m else {}

    @property
    def std_errors(self) -> np.ndarray:
        """Standard errors of (theta..., rho)."""
        return np.sqrt(np.clip(np.diag(self.param_cov), 0.0, None))

    @property
    def n_params(self) -> int:
        return len(self.theta) + 2

    def table(self) -> list[dict]:
        se = self.std_errors
        rows = []
        for name, coef, s in zip(self.names + ("rho",), np.append(self.theta, self.rho), se):
            t = coef / s if s > 0 else math.nan
            p = normal_two_sided_p(t) if s > 0 else math.nan
            rows.append(
                {
                    "term": name,
                    "coefficient": float(coef),
                    "std_error": float(s),
                    "t_statistic": float(t),
                    "p_value": float(p),
                    "stars": significance_stars(p) if s > 0 else "",
                }
            )
        return rows

    def report(self) -> dict:
        return {
            "dependent": self.spec.dependent,
            "n": self.n,
            "coefficients": self.table(),
            "rho": float(self.rho),
            "sigma2": float(self.sigma2),
            "loglik": float(self.loglik),
            "aic": float(self.aic),
            "aic_ols": float(self.ols_aic),
            "loglik_ols": float(self.ols_loglik),
            "pseudo_r2_nagelkerke": float(self.pseudo_r2_nagelkerke),
            "weights_fingerprint": self.w_fingerprint,
        }


def fit_sdm_arrays(y, X, w: SpatialWeights, spec: ModelSpec) -> SdmFit:
    """Fit from a raw covariate matrix whose columns follow ``spec.covariates``."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    if len(y) != w.n:
        raise EstimationError(f"{len(y)} observations but W is {w.n}x{w.n}")
    lag_index = [spec.covariates.index(c) for c in spec.lagged]
    Z = design_matrix(X, w, lag_index, spec.include_intercept)
    names = spec.term_names
    ols = ols_fit(y, Z, names)  # also validates rank

    profile = _Profile(y, Z, w)
    rho = maximize_rho(profile, w.rho_bounds())
    theta = profile.theta(rho)
    n = len(y)
    sigma2 = profile.ssr(rho) / n
    ll = float(profile.loglik(rho))

    k = len(theta)

    # sigma2 enters on the log scale so the step stays relative; the
    # (theta, rho) block of the inverse is unchanged by that reparametrisation
    def ll_at(p):
        return full_loglik(p[:k], p[k], math.exp(p[k + 1]), y, Z, w)

    x0 = np.concatenate([theta, [rho, math.log(sigma2)]])
    H = numerical_hessian(ll_at, x0)
    try:
        cov_full = np.linalg.inv(-H)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("singular information matrix") from exc
    cov = cov_full[: k + 1, : k + 1]
    cov = 0.5 * (cov + cov.T)

    null_ll = intercept_only_loglik(y)
    n_params = k + 2
    return SdmFit(
        spec=spec,
        names=names,
        theta=theta,
        rho=rho,
        sigma2=sigma2,
        loglik=ll,
        aic=2.0 * n_params - 2.0 * ll,
        pseudo_r2_nagelkerke=nagelkerke_pseudo_r2(ll, null_ll, n),
        param_cov=cov,
        n=n,
        w_fingerprint=w.fingerprint(),
        ols_loglik=ols.loglik,
        ols_aic=ols.aic,
        null_loglik=null_ll,
        y=y,
        Z=Z,
    )


def fit_sdm(panel: AreaPanel, spec: ModelSpec, w: SpatialWeights) -> SdmFit:
    if panel.n != w.n:
        raise EstimationError(f"panel has {panel.n} areas but W is {w.n}x{w.n}; rebuild W on the panel's areas")
    return fit_sdm_arrays(panel.dependent(spec.dependent), panel.matrix(spec.covariates), w, spec)


def sdm_residuals(fit: SdmFit, panel: AreaPanel | None, w: SpatialWeights) -> np.ndarray:
    """e = (I - rho W) y - Z theta; ``panel=None`` reuses the data stored on the fit."""
    if panel is None:
        y, Z = fit.y, fit.Z
    else:
        spec = fit.spec
        y = panel.dependent(spec.dependent)
        lag_index = [spec.covariates.index(c) for c in spec.lagged]
        Z = design_matrix(panel.matrix(spec.covariates), w, lag_index, spec.include_intercept)
    return y - fit.rho * (w.matrix @ y) - Z @ fit.theta
