"""Shared builders for synthetic graphs, regions and SDM data."""

import json
from pathlib import Path

import numpy as np
from tncspatial.geo import Adjacency, load_region

DATA = Path(__file__).parent / "data"
MINICITY = DATA / "minicity"


def lattice_adjacency(rows: int, cols: int, queen: bool = False) -> Adjacency:
    pairs = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                pairs.append((i, i + 1))
            if r + 1 < rows:
                pairs.append((i, i + cols))
            if queen and r + 1 < rows:
                if c + 1 < cols:
                    pairs.append((i, i + cols + 1))
                if c > 0:
                    pairs.append((i, i + cols - 1))
    return Adjacency.from_pairs(rows * cols, pairs)


def random_connected_adjacency(n: int, rng, extra: float = 2.0) -> Adjacency:
    """Random spanning tree plus about ``extra * n`` further edges."""
    order = rng.permutation(n)
    pairs = [(int(order[i]), int(order[rng.integers(0, i)])) for i in range(1, n)]
    for _ in range(int(extra * n)):
        i, j = rng.integers(0, n, size=2)
        if i != j:
            pairs.append((int(i), int(j)))
    return Adjacency.from_pairs(n, pairs)


def squares_geojson(cells, side_deg=0.01, lon0=-87.7, lat0=41.8, ids=None):
    """FeatureCollection of axis-aligned squares at integer (col, row) grid cells."""
    feats = []
    for k, (c, r) in enumerate(cells):
        x0, y0 = lon0 + c * side_deg, lat0 + r * side_deg
        ring = [[x0, y0], [x0 + side_deg, y0], [x0 + side_deg, y0 + side_deg], [x0, y0 + side_deg], [x0, y0]]
        feats.append(
            {
                "type": "Feature",
                "properties": {"area_numbe": str(ids[k] if ids else k + 1), "community": f"A{k + 1}"},
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            }
        )
    return json.dumps({"type": "FeatureCollection", "features": feats}).encode()


def square_region(cells, **kw):
    return load_region(squares_geojson(cells, **kw))


def simulate_sdm(w, rho, beta, gamma, sigma, rng, lag_index=(0,)):
    """y = (I - rho W)^-1 (a + X beta + W X_l gamma + e) with standard-normal X."""
    n = w.n
    k = len(beta) - 1
    X = rng.normal(size=(n, k))
    W = w.dense
    mu = beta[0] + X @ np.asarray(beta[1:]) + (W @ X[:, list(lag_index)]) @ np.asarray(gamma) + sigma * rng.normal(size=n)
    y = np.linalg.solve(np.eye(n) - rho * W, mu)
    return y, X
