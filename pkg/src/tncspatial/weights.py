"""Row-standardised contiguity weights and their spectrum."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .geo import Adjacency

# admissible-interval clipping used by the rho search
RHO_EPS = 1e-6


class WeightsError(ValueError):
    pass


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    def rho_interval(self) -> tuple[float, float]:
        """Open interval of rho for which ``I - rho W`` is nonsingular."""
        lo = 1.0 / self.lambda_min if self.lambda_min < 0 else -math.inf
        hi = 1.0 / self.lambda_max if self.lambda_max > 0 else math.inf
        return lo, hi


@dataclass(frozen=True)
class SpatialWeights:
    """Sparse n x n weight matrix W.

    ``scaling`` holds the diagonal D^{1/2} of the similarity transform that
    symmetrises W; together with ``eigvecs`` it diagonalises W exactly, which
    is what the impact code uses for fast per-draw evaluation.
    """

    matrix: sparse.csr_matrix
    row_kind: str
    spectrum: Spectrum | None
    isolated: tuple = ()
    eigvecs: np.ndarray | None = None
    scaling: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @property
    def s0(self) -> float:
        return float(self.matrix.sum())

    def fingerprint(self) -> str:
        m = self.matrix.tocoo()
        order = np.lexsort((m.col, m.row))
        h = hashlib.sha256()
        h.update(np.int64(self.n).tobytes())
        h.update(m.row[order].astype(np.int64).tobytes())
        h.update(m.col[order].astype(np.int64).tobytes())
        h.update(m.data[order].astype(np.float64).tobytes())
        return h.hexdigest()[:16]

    def rho_bounds(self, eps: float = RHO_EPS) -> tuple[float, float]:
        """Search interval for rho: the admissible interval shrunk by ``eps``."""
        lo, hi = self._spectrum().rho_interval()
        return lo + eps, hi - eps

    def _spectrum(self) -> Spectrum:
        if self.spectrum is None:
            raise WeightsError("weights carry no spectrum")
        return self.spectrum


def build_weights(adjacency, row_standardize: bool = True) -> SpatialWeights:
    """W from a symmetric irreflexive adjacency.

    Row-standardised rows are 1/deg(i) on neighbours; isolated areas keep a
    zero row (with a warning). The spectrum comes from the symmetric matrix
    D^{-1/2} A D^{-1/2}, which is similar to D^{-1} A.
    """
    if isinstance(adjacency, Adjacency):
        a = adjacency.to_dense()
    else:
        a = np.asarray(adjacency, dtype=float)
    n = a.shape[0]
    if n == 0:
        raise WeightsError("cannot build weights for zero areas")
    if a.shape != (n, n):
        raise WeightsError("adjacency must be square")
    if np.any(np.diag(a) != 0):
        raise WeightsError("adjacency must be irreflexive")
    if not np.array_equal(a, a.T):
        raise WeightsError("adjacency must be symmetric")
    a = (a != 0).astype(float)
    deg = a.sum(axis=1)
    isolated = tuple(int(i) for i in np.flatnonzero(deg == 0))
    if isolated:
        warnings.warn(f"{len(isolated)} isolated area(s) get zero weight rows: {list(isolated)}", stacklevel=2)

    if row_standardize:
        d = np.where(deg > 0, deg, 1.0)
        w = a / d[:, None]
        inv_sqrt = 1.0 / np.sqrt(d)
        sym = a * inv_sqrt[:, None] * inv_sqrt[None, :]
        scaling = np.sqrt(d)
        kind = "row-standardized"
    else:
        w = a
        sym = a
        scaling = np.ones(n)
        kind = "binary"
    vals, vecs = np.linalg.eigh(sym)
    return SpatialWeights(
        matrix=sparse.csr_matrix(w),
        row_kind=kind,
        spectrum=Spectrum(vals),
        isolated=isolated,
        eigvecs=vecs,
        scaling=scaling,
    )


def spatial_lag(w: SpatialWeights, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != w.n:
        raise WeightsError(f"dimension mismatch: W is {w.n}x{w.n}, x has {x.shape[0]} rows")
    return w.matrix @ x


def log_det(w: SpatialWeights, rho: float) -> float:
    """ln|I - rho W| from the cached spectrum."""
    spec = w._spectrum()
    lo, hi = spec.rho_interval()
    if not lo < rho < hi:
        raise WeightsError(f"rho={rho} outside admissible interval ({lo}, {hi})")
    return float(np.sum(np.log1p(-rho * spec.eigenvalues)))


def to_triplet_csv(w: SpatialWeights) -> str:
    m = w.matrix.tocoo()
    order = np.lexsort((m.col, m.row))
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["i", "j", "w"])
    for k in order:
        out.writerow([int(m.row[k]), int(m.col[k]), repr(float(m.data[k]))])
    return buf.getvalue()


def from_triplet_csv(text: str, n: int) -> SpatialWeights:
    """Read a triplet CSV back; the spectrum is rebuilt from the implied adjacency.

    Leading ``#`` comment lines are skipped.
    """
    rows = list(csv.DictReader(line for line in io.StringIO(text) if not line.startswith("#")))
    a = np.zeros((n, n))
    vals = np.zeros((n, n))
    for r in rows:
        i, j = int(r["i"]), int(r["j"])
        a[i, j] = 1.0
        vals[i, j] = float(r["w"])
    binary = bool(rows) and np.all(vals[a > 0] == 1.0)
    w = build_weights(a, row_standardize=not binary)
    if not np.allclose(w.dense, vals, atol=1e-12, rtol=0):
        raise WeightsError("triplet weights are not a row-standardised or binary contiguity matrix")
    return w
