"""
OLS baseline and spatial specification diagnostics: Moran's I with
permutation inference and the (non-robust) LM lag / LM error tests.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .weights import SpatialWeights


class SpecificationError(ValueError):
    pass


def chi2_1_sf(x: float) -> float:
    """Upper tail of chi-square with one degree of freedom: erfc(sqrt(x/2))."""
    if x <= 0:
        return 1.0
    return math.erfc(math.sqrt(x / 2.0))


def normal_two_sided_p(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


def gaussian_loglik(ssr: float, n: int) -> float:
    """Profile Gaussian log-likelihood with the ML variance ssr/n."""
    return -0.5 * n * (math.log(2.0 * math.pi) + math.log(ssr / n) + 1.0)


@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    sigma2: float
    loglik: float
    aic: float
    X: np.ndarray
    y: np.ndarray
    names: tuple = ()

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def k(self) -> int:
        return len(self.coefficients)

    @property
    def fitted(self) -> np.ndarray:
        return self.X @ self.coefficients


def _check_rank(X: np.ndarray, names) -> None:
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    tol = d[0] * max(X.shape) * np.finfo(float).eps * 10 if len(d) else 0.0
    rank = int(np.sum(d > tol))
    if rank < X.shape[1]:
        bad = [names[j] if names else f"column {j}" for j in sorted(piv[rank:])]
        raise SpecificationError(f"design matrix is rank deficient; collinear column(s): {bad}")


def ols_fit(y, X, names=()) -> OlsFit:
    """Least squares by QR. ``X`` must already contain the intercept column.

    AIC counts the error variance as a parameter: 2(k + 1) - 2 loglik.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    if n <= k:
        raise SpecificationError(f"need n > k (n={n}, k={k})")
    _check_rank(X, names)
    q, r = np.linalg.qr(X)
    beta = scipy.linalg.solve_triangular(r, q.T @ y)
    e = y - X @ beta
    ssr = float(e @ e)
    ll = gaussian_loglik(ssr, n)
    return OlsFit(beta, e, ssr / n, ll, 2.0 * (k + 1) - 2.0 * ll, X, y, tuple(names))


def annihilate(X: np.ndarray, v: np.ndarray) -> np.ndarray:
    """M v = v - X (X'X)^-1 X' v."""
    q, _ = np.linalg.qr(X)
    return v - q @ (q.T @ v)


class Method(str, enum.Enum):
    MORAN = "moran_permutation"
    LM_LAG = "lm_lag"
    LM_ERROR = "lm_error"


@dataclass(frozen=True)
class DiagnosticResult:
    statistic: float
    null_expectation: float
    p_value: float
    method: Method
    permutations: int = 0
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "statistic": self.statistic,
            "null_expectation": self.null_expectation,
            "p_value": self.p_value,
            "permutations": self.permutations,
            "seed": self.seed,
        }


def _moran_stat(z: np.ndarray, w: SpatialWeights) -> np.ndarray:
    """I for one vector (1-D) or a batch of row vectors (2-D), z already centred."""
    n = w.n
    lag = (w.matrix @ z.T).T
    num = np.sum(z * lag, axis=-1)
    den = np.sum(z * z, axis=-1)
    return (n / w.s0) * num / den


def permutation_indices(seed: int, index: int, n: int) -> np.ndarray:
    """Permutation ``index`` of the stream keyed by ``seed``; independent of evaluation order."""
    return np.random.default_rng([seed, index]).permutation(n)


def morans_i(x, w: SpatialWeights, permutations: int = 999, seed: int = 0) -> DiagnosticResult:
    """Global Moran's I with a one-sided (upper) permutation p-value."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != w.n:
        raise SpecificationError("x length does not match W")
    if permutations < 99:
        raise SpecificationError("use at least 99 permutations")
    z = x - x.mean()
    if not np.any(np.abs(z) > 1e-12 * max(1.0, np.abs(x).max())):
        raise SpecificationError("Moran's I undefined for a constant vector")
    if w.s0 <= 0:
        raise SpecificationError("weights have no links")
    observed = float(_moran_stat(z, w))
    n = w.n
    perms = np.stack([permutation_indices(seed, i, n) for i in range(permutations)])
    sims = _moran_stat(z[perms], w)
    # tiny slack so exact ties (e.g. symmetric relabelings) count as >=
    exceed = int(np.sum(sims >= observed - 1e-12 * abs(observed)))
    p = (1 + exceed) / (1 + permutations)
    return DiagnosticResult(observed, -1.0 / (n - 1), p, Method.MORAN, permutations, seed)


def _trace_term(w: SpatialWeights) -> float:
    m = w.matrix
    return float((m.multiply(m)).sum() + (m @ m).diagonal().sum())


def lm_lag_test(ols: OlsFit, w: SpatialWeights, y=None, X=None) -> DiagnosticResult:
    y = ols.y if y is None else np.asarray(y, dtype=float)
    X = ols.X if X is None else np.asarray(X, dtype=float)
    e = ols.residuals
    s2 = ols.sigma2
    wy = w.matrix @ y
    wxb = w.matrix @ (X @ ols.coefficients)
    mwxb = annihilate(X, wxb)
    t = _trace_term(w)
    denom = float(wxb @ mwxb) / s2 + t
    if not denom > 0:
        raise SpecificationError("degenerate LM-lag denominator")
    stat = (float(e @ wy) / s2) ** 2 / denom
    return DiagnosticResult(stat, 1.0, chi2_1_sf(stat), Method.LM_LAG)


def lm_error_test(ols: OlsFit, w: SpatialWeights) -> DiagnosticResult:
    e = ols.residuals
    t = _trace_term(w)
    if not t > 0:
        raise SpecificationError("degenerate LM-error denominator")
    stat = (float(e @ (w.matrix @ e)) / ols.sigma2) ** 2 / t
    return DiagnosticResult(stat, 1.0, chi2_1_sf(stat), Method.LM_ERROR)


class Recommendation(str, enum.Enum):
    OLS = "OLS"
    SDM = "SDM"
    SDEM = "SDEM"


def select_model(lm_lag: DiagnosticResult, lm_error: DiagnosticResult, alpha: float = 0.05) -> Recommendation:
    """Lag significant (alone or with error) -> SDM; error only -> SDEM; neither -> OLS."""
    lag_sig = lm_lag.p_value < alpha
    err_sig = lm_error.p_value < alpha
    if lag_sig:
        return Recommendation.SDM
    if err_sig:
        warnings.warn("LM tests point to an error-family model (SDEM); this package does not estimate it", stacklevel=2)
        return Recommendation.SDEM
    return Recommendation.OLS
