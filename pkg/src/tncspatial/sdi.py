"""
Social disadvantage index: unrotated single-factor EFA by iterated
principal-axis factoring, regression (Thomson) scores, Cronbach's alpha.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_ITEMS = (
    "pct_poverty",
    "pct_single_parent",
    "pct_nonwhite",
    "pct_no_vehicle",
    "pct_renter",
    "pct_unemployed",
)

LOADING_THRESHOLD = 0.30


class FactorError(ValueError):
    pass


@dataclass(frozen=True)
class ItemMatrix:
    values: np.ndarray
    names: tuple
    area_ids: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != len(self.names):
            raise FactorError("item matrix shape does not match item names")
        if np.isnan(v).any():
            raise FactorError("item matrix has missing cells")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FactorModel:
    names: tuple
    loadings: np.ndarray
    uniquenesses: np.ndarray
    alpha: float
    alpha_raw: float
    iterations: int
    converged: bool
    flagged: tuple = ()
    dropped: tuple = ()
    clipped_eigenvalues: int = 0
    scores: np.ndarray | None = None
    notes: list = field(default_factory=list)

    def report(self) -> dict:
        return {
            "items": list(self.names),
            "loadings": [float(v) for v in self.loadings],
            "uniquenesses": [float(v) for v in self.uniquenesses],
            "alpha_standardized": float(self.alpha),
            "alpha_raw": float(self.alpha_raw),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "below_threshold": list(self.flagged),
            "dropped": list(self.dropped),
            "loading_threshold": LOADING_THRESHOLD,
            "clipped_eigenvalues": int(self.clipped_eigenvalues),
            "notes": list(self.notes),
        }


def standardize(items: ItemMatrix) -> ItemMatrix:
    v = items.values
    sd = v.std(axis=0, ddof=1)
    const = [items.names[j] for j in np.flatnonzero(~(sd > 0))]
    if const:
        raise FactorError(f"constant item column(s): {const}")
    return ItemMatrix((v - v.mean(axis=0)) / sd, items.names, items.area_ids)


def correlation(items: ItemMatrix) -> np.ndarray:
    z = standardize(items).values
    return (z.T @ z) / (items.n - 1)


def _smc(r: np.ndarray) -> np.ndarray:
    """Squared multiple correlations, 1 - 1/diag(R^-1); ridged when R is singular."""
    k = r.shape[0]
    try:
        if np.linalg.cond(r) > 1e12:
            raise np.linalg.LinAlgError
        inv = np.linalg.inv(r)
    except np.linalg.LinAlgError:
        inv = np.linalg.inv(r + 1e-8 * np.eye(k))
    return np.clip(1.0 - 1.0 / np.diag(inv), 0.0, 1.0)


def paf_single_factor(r: np.ndarray, tol: float = 1e-6, max_iter: int = 200):
    """Iterated principal-axis extraction of one factor from a correlation matrix.

    Returns ``(loadings, iterations, converged, clipped)`` where ``clipped``
    counts how many times the leading eigenvalue of the reduced matrix was
    negative and set to zero.
    """
    h2 = _smc(r)
    clipped = 0
    loadings = np.zeros(r.shape[0])
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        reduced = r.copy()
        np.fill_diagonal(reduced, h2)
        vals, vecs = np.linalg.eigh(reduced)
        lam = vals[-1]
        if lam < 0:
            clipped += 1
            lam = 0.0
        loadings = np.sqrt(lam) * vecs[:, -1]
        new_h2 = loadings**2
        delta = np.max(np.abs(new_h2 - h2))
        h2 = new_h2
        if delta < tol:
            converged = True
            break
    return loadings, it, converged, clipped


def cronbach_alpha_from_corr(r: np.ndarray) -> float:
    """alpha of standardized items, from their correlation (or covariance) matrix."""
    r = np.asarray(r, dtype=float)
    k = r.shape[0]
    if k < 2:
        raise FactorError("alpha needs at least two items")
    total = r.sum()
    if total <= 0:
        raise FactorError("zero total variance")
    return k / (k - 1) * (1.0 - np.trace(r) / total)


def cronbach_alpha(items: ItemMatrix, standardized: bool = True) -> float:
    v = standardize(items).values if standardized else items.values
    if items.k < 2:
        raise FactorError("alpha needs at least two items")
    item_var = v.var(axis=0, ddof=1).sum()
    total_var = v.sum(axis=1).var(ddof=1)
    if total_var <= 0:
        raise FactorError("zero total variance")
    return items.k / (items.k - 1) * (1.0 - item_var / total_var)


def fit_single_factor(
    items: ItemMatrix,
    anchor: str | int = 0,
    drop_below_threshold: bool = False,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> FactorModel:
    """Single-factor EFA without rotation.

    Items with |loading| below 0.30 are flagged. With
    ``drop_below_threshold`` they are removed and the model is refitted once.
    The factor sign is set so the ``anchor`` item (default the first, the
    poverty share) loads positively; higher scores then mean more
    disadvantage.
    """
    if items.k < 3:
        raise FactorError("need at least 3 items")
    if items.n <= items.k:
        raise FactorError("need more areas than items")
    anchor_name = items.names[anchor] if isinstance(anchor, int) else anchor
    if anchor_name not in items.names:
        raise FactorError(f"anchor item {anchor_name!r} not among items")

    r = correlation(items)
    loadings, it, converged, clipped = paf_single_factor(r, tol, max_iter)
    if loadings[items.names.index(anchor_name)] < 0:
        loadings = -loadings
    flagged = tuple(nm for nm, l in zip(items.names, loadings) if abs(l) < LOADING_THRESHOLD)
    notes = []
    if clipped:
        notes.append(f"leading reduced eigenvalue clipped at 0 on {clipped} iteration(s)")
    if not converged:
        log.warning("principal-axis factoring did not converge in %d iterations", max_iter)

    if drop_below_threshold and flagged:
        keep = [j for j, nm in enumerate(items.names) if nm not in flagged]
        if anchor_name in flagged:
            raise FactorError("anchor item falls below the loading threshold")
        sub = ItemMatrix(items.values[:, keep], tuple(items.names[j] for j in keep), items.area_ids)
        refit = fit_single_factor(sub, anchor_name, False, tol, max_iter)
        return FactorModel(
            **{**refit.__dict__, "dropped": flagged, "notes": refit.notes + [f"dropped {list(flagged)}"]}
        )

    model = FactorModel(
        names=tuple(items.names),
        loadings=loadings,
        uniquenesses=1.0 - loadings**2,
        alpha=cronbach_alpha_from_corr(r),
        alpha_raw=cronbach_alpha(items, standardized=False),
        iterations=it,
        converged=converged,
        flagged=flagged,
        clipped_eigenvalues=clipped,
        notes=notes,
    )
    scores, ridged = _thomson_scores(model.loadings, items)
    if ridged:
        model.notes.append("item correlation matrix singular; ridge 1e-8 added for scores")
    return FactorModel(**{**model.__dict__, "scores": scores})


def _thomson_scores(loadings: np.ndarray, items: ItemMatrix):
    z = standardize(items).values
    r = (z.T @ z) / (items.n - 1)
    ridged = False
    try:
        if np.linalg.cond(r) > 1e12:
            raise np.linalg.LinAlgError
        weights = np.linalg.solve(r, loadings)
    except np.linalg.LinAlgError:
        ridged = True
        weights = np.linalg.solve(r + 1e-8 * np.eye(r.shape[0]), loadings)
    s = z @ weights
    return s - s.mean(), ridged


def factor_scores(model: FactorModel, items: ItemMatrix) -> np.ndarray:
    """Regression scores s = z R^-1 loadings, centred to mean 0."""
    if tuple(items.names) != tuple(model.names):
        idx = [items.names.index(nm) for nm in model.names]
        items = ItemMatrix(items.values[:, idx], tuple(model.names), items.area_ids)
    return _thomson_scores(model.loadings, items)[0]
