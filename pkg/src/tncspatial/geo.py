"""
Polygon geometry for areal units: loading, contiguity, hex tessellation and
point location.

All planar work happens in spherical projections centred on the region's
bounding-box centre: azimuthal equidistant for distances and the hex lattice,
Lambert azimuthal equal-area for land area. Both are accurate to well under a
percent at city scale.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_FT = 20_902_231.0
FT_PER_MILE = 5280.0

# point-on-edge tolerance in degrees (~0.1 mm)
_EDGE_EPS_DEG = 1e-9


class GeometryError(ValueError):
    """Raised for malformed or degenerate geometry input."""


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self):
        if not (-180.0 <= self.lon <= 180.0) or not (-90.0 <= self.lat <= 90.0):
            raise GeometryError(f"coordinates out of range: ({self.lon}, {self.lat})")


@dataclass(frozen=True)
class AreaUnit:
    """One areal unit.

    ``polygons`` holds one entry per polygon part; each part is a list of
    closed lon/lat rings, exterior first, holes after.
    """

    id: str
    name: str
    polygons: tuple
    area_sq_mi: float

    @property
    def rings(self) -> list:
        return [ring for part in self.polygons for ring in part]

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        pts = np.vstack(self.rings)
        return (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())


@dataclass(frozen=True)
class StudyRegion:
    areas: tuple

    def __post_init__(self):
        ids = [a.id for a in self.areas]
        if len(set(ids)) != len(ids):
            raise GeometryError("duplicate area id")
        for a in self.areas:
            if not a.area_sq_mi > 0:
                raise GeometryError(f"area {a.id!r} has non-positive area")

    def __len__(self) -> int:
        return len(self.areas)

    @property
    def ids(self) -> list[str]:
        return [a.id for a in self.areas]

    def index(self, area_id: str) -> int:
        return self._index_map()[area_id]

    def _index_map(self) -> dict:
        # cached on first use; the dataclass is frozen so bypass __setattr__
        try:
            return self.__dict__["_idx"]
        except KeyError:
            idx = {a.id: i for i, a in enumerate(self.areas)}
            object.__setattr__(self, "_idx", idx)
            return idx

    @property
    def area_sq_mi(self) -> np.ndarray:
        return np.array([a.area_sq_mi for a in self.areas])

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        boxes = np.array([a.bbox for a in self.areas])
        return (boxes[:, 0].min(), boxes[:, 1].min(), boxes[:, 2].max(), boxes[:, 3].max())

    @property
    def origin(self) -> GeoPoint:
        """Projection centre: the bounding-box midpoint."""
        x0, y0, x1, y1 = self.bbox
        return GeoPoint((x0 + x1) / 2.0, (y0 + y1) / 2.0)

    def subset(self, ids) -> "StudyRegion":
        """Region restricted to ``ids``, keeping the original ordering."""
        keep = set(ids)
        missing = keep - set(self.ids)
        if missing:
            raise KeyError(f"unknown area ids: {sorted(missing)}")
        return StudyRegion(tuple(a for a in self.areas if a.id in keep))


@dataclass(frozen=True)
class Adjacency:
    """Symmetric, irreflexive neighbour lists over region indices."""

    neighbors: tuple
    criterion: str = "queen"
    isolated: tuple = field(default=())

    def __post_init__(self):
        if not self.isolated:
            iso = tuple(i for i, nb in enumerate(self.neighbors) if not nb)
            object.__setattr__(self, "isolated", iso)

    @property
    def n(self) -> int:
        return len(self.neighbors)

    @classmethod
    def from_pairs(cls, n: int, pairs, criterion: str = "custom") -> "Adjacency":
        nb = [set() for _ in range(n)]
        for i, j in pairs:
            if i == j:
                continue
            nb[i].add(j)
            nb[j].add(i)
        return cls(tuple(tuple(sorted(s)) for s in nb), criterion)

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, nb in enumerate(self.neighbors):
            a[i, list(nb)] = 1.0
        return a


@dataclass(frozen=True)
class HexGrid:
    """Flat-top hexagonal lattice.

    ``centers`` is an (m, 2) lon/lat array; ``area_index`` holds the region
    index of the containing area or -1.
    """

    edge_ft: float
    centers: np.ndarray
    area_index: np.ndarray
    area_ids: tuple

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def cells(self) -> list:
        out = []
        for (lon, lat), k in zip(self.centers, self.area_index):
            out.append((GeoPoint(float(lon), float(lat)), self.area_ids[k] if k >= 0 else None))
        return out

    @property
    def cell_area_sq_ft(self) -> float:
        return 1.5 * math.sqrt(3.0) * self.edge_ft**2


# ---------------------------------------------------------------------------
# projections (spherical)


def aeqd_forward(lon, lat, origin: GeoPoint):
    """Azimuthal equidistant projection to feet."""
    lam = np.radians(np.asarray(lon, dtype=float) - origin.lon)
    phi = np.radians(np.asarray(lat, dtype=float))
    phi0 = math.radians(origin.lat)
    cos_c = math.sin(phi0) * np.sin(phi) + math.cos(phi0) * np.cos(phi) * np.cos(lam)
    c = np.arccos(np.clip(cos_c, -1.0, 1.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(c > 1e-15, c / np.sin(c), 1.0)
    x = EARTH_RADIUS_FT * k * np.cos(phi) * np.sin(lam)
    y = EARTH_RADIUS_FT * k * (math.cos(phi0) * np.sin(phi) - math.sin(phi0) * np.cos(phi) * np.cos(lam))
    return x, y


def aeqd_inverse(x, y, origin: GeoPoint):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    phi0 = math.radians(origin.lat)
    rho = np.hypot(x, y)
    c = rho / EARTH_RADIUS_FT
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(rho > 0, y * np.sin(c) / np.where(rho > 0, rho, 1.0), 0.0)
    phi = np.arcsin(np.clip(np.cos(c) * math.sin(phi0) + ratio * math.cos(phi0), -1.0, 1.0))
    lam = np.arctan2(x * np.sin(c), rho * math.cos(phi0) * np.cos(c) - y * math.sin(phi0) * np.sin(c))
    return origin.lon + np.degrees(lam), np.degrees(phi)


def laea_forward(lon, lat, origin: GeoPoint):
    """Lambert azimuthal equal-area projection to feet."""
    lam = np.radians(np.asarray(lon, dtype=float) - origin.lon)
    phi = np.radians(np.asarray(lat, dtype=float))
    phi0 = math.radians(origin.lat)
    denom = 1.0 + math.sin(phi0) * np.sin(phi) + math.cos(phi0) * np.cos(phi) * np.cos(lam)
    k = np.sqrt(2.0 / denom)
    x = EARTH_RADIUS_FT * k * np.cos(phi) * np.sin(lam)
    y = EARTH_RADIUS_FT * k * (math.cos(phi0) * np.sin(phi) - math.sin(phi0) * np.cos(phi) * np.cos(lam))
    return x, y


def _shoelace(x: np.ndarray, y: np.ndarray) -> float:
    return 0.5 * abs(float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1])))


def polygon_area_sq_mi(polygons, origin: GeoPoint) -> float:
    total = 0.0
    for part in polygons:
        for r, ring in enumerate(part):
            x, y = laea_forward(ring[:, 0], ring[:, 1], origin)
            a = _shoelace(x, y)
            total += a if r == 0 else -a
    return total / FT_PER_MILE**2


# ---------------------------------------------------------------------------
# loading


def _natural_key(s: str):
    return [(0, int(t), "") if t.isdigit() else (1, 0, t) for t in re.split(r"(\d+)", s) if t]


def normalize_area_id(value) -> str | None:
    """Canonical string id: trims whitespace and collapses ``"8.0"`` to ``"8"``."""
    if value is None:
        return None
    s = str(value).strip()
    if not s or s.lower() in {"nan", "none", "null"}:
        return None
    try:
        f = float(s)
    except ValueError:
        return s
    if f.is_integer():
        return str(int(f))
    return s


def _as_ring(coords, feature_id) -> np.ndarray:
    ring = np.asarray(coords, dtype=float)
    if ring.ndim != 2 or ring.shape[1] < 2:
        raise GeometryError(f"feature {feature_id!r}: malformed ring")
    ring = ring[:, :2]
    if len(ring) < 4:
        raise GeometryError(f"feature {feature_id!r}: ring has fewer than 4 vertices")
    if not np.array_equal(ring[0], ring[-1]):
        raise GeometryError(f"feature {feature_id!r}: unclosed ring")
    return ring


def load_region(
    geojson_bytes,
    id_property: str = "area_numbe",
    name_property: str = "community",
    area_property: str = "area_sq_mi",
) -> StudyRegion:
    """Read a GeoJSON FeatureCollection of Polygon/MultiPolygon features.

    The id is taken from ``id_property``, falling back to ``"id"`` (property
    or feature member). Areas come out in natural id order, so ``"2"`` sorts
    before ``"10"``. If a feature carries ``area_property`` it is trusted;
    otherwise land area is measured in an equal-area projection.
    """
    try:
        doc = json.loads(geojson_bytes)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise GeometryError(f"malformed GeoJSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise GeometryError("expected a GeoJSON FeatureCollection")

    parsed = []
    for k, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        raw_id = props.get(id_property, props.get("id", feat.get("id")))
        area_id = normalize_area_id(raw_id)
        if area_id is None:
            raise GeometryError(f"feature #{k} has no id property ({id_property!r} or 'id')")
        name = props.get(name_property, props.get("name", area_id))
        geom = feat.get("geometry") or {}
        if geom.get("type") == "Polygon":
            parts = [geom["coordinates"]]
        elif geom.get("type") == "MultiPolygon":
            parts = geom["coordinates"]
        else:
            raise GeometryError(f"feature {area_id!r}: unsupported geometry {geom.get('type')!r}")
        polygons = tuple(tuple(_as_ring(r, area_id) for r in part) for part in parts)
        given_area = props.get(area_property)
        parsed.append((area_id, str(name), polygons, given_area))

    if not parsed:
        raise GeometryError("FeatureCollection has no features")
    seen = set()
    for area_id, *_ in parsed:
        if area_id in seen:
            raise GeometryError(f"duplicate area id {area_id!r}")
        seen.add(area_id)

    all_pts = np.vstack([r for _, _, polys, _ in parsed for part in polys for r in part])
    origin = GeoPoint(
        (all_pts[:, 0].min() + all_pts[:, 0].max()) / 2.0,
        (all_pts[:, 1].min() + all_pts[:, 1].max()) / 2.0,
    )
    areas = []
    for area_id, name, polygons, given_area in sorted(parsed, key=lambda t: _natural_key(t[0])):
        if given_area is not None:
            area = float(given_area)
        else:
            area = polygon_area_sq_mi(polygons, origin)
        areas.append(AreaUnit(area_id, name, polygons, area))
    return StudyRegion(tuple(areas))


def region_to_geojson(region: StudyRegion, properties: dict | None = None) -> dict:
    """FeatureCollection for ``region``; ``properties`` maps column name to a per-area sequence."""
    properties = properties or {}
    feats = []
    for i, a in enumerate(region.areas):
        props = {"id": a.id, "name": a.name, "area_sq_mi": a.area_sq_mi}
        for key, values in properties.items():
            v = values[i]
            props[key] = None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)
        coords = [[ring.tolist() for ring in part] for part in a.polygons]
        if len(coords) == 1:
            geom = {"type": "Polygon", "coordinates": coords[0]}
        else:
            geom = {"type": "MultiPolygon", "coordinates": coords}
        feats.append({"type": "Feature", "properties": props, "geometry": geom})
    return {"type": "FeatureCollection", "features": feats}


# ---------------------------------------------------------------------------
# distance


def haversine_ft(a: GeoPoint, b: GeoPoint) -> float:
    return float(haversine_ft_array(a.lon, a.lat, b.lon, b.lat))


def haversine_ft_array(lon1, lat1, lon2, lat2):
    """Vectorised great-circle distance in feet; broadcasts like numpy."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(np.asarray(lon2, dtype=float) - np.asarray(lon1, dtype=float))
    h = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_FT * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


# ---------------------------------------------------------------------------
# point location


def _ring_contains(ring: np.ndarray, px: np.ndarray, py: np.ndarray):
    """Even-odd crossing parity and on-edge mask for points against one ring."""
    ax, ay = ring[:-1, 0][None, :], ring[:-1, 1][None, :]
    bx, by = ring[1:, 0][None, :], ring[1:, 1][None, :]
    x = px[:, None]
    y = py[:, None]

    straddle = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = ax + (y - ay) * (bx - ax) / (by - ay)
    crossings = np.count_nonzero(straddle & (x < x_cross), axis=1)

    dx, dy = bx - ax, by - ay
    seg_len = np.hypot(dx, dy)
    cross = dx * (y - ay) - dy * (x - ax)
    dot = (x - ax) * dx + (y - ay) * dy
    on_edge = (np.abs(cross) <= _EDGE_EPS_DEG * np.maximum(seg_len, 1e-300)) & (
        dot >= -_EDGE_EPS_DEG * seg_len
    ) & (dot <= seg_len**2 + _EDGE_EPS_DEG * seg_len)
    return crossings % 2 == 1, on_edge.any(axis=1)


def _area_contains(area: AreaUnit, px: np.ndarray, py: np.ndarray, chunk: int = 2048) -> np.ndarray:
    x0, y0, x1, y1 = area.bbox
    result = np.zeros(len(px), dtype=bool)
    cand = np.flatnonzero(
        (px >= x0 - _EDGE_EPS_DEG) & (px <= x1 + _EDGE_EPS_DEG) & (py >= y0 - _EDGE_EPS_DEG) & (py <= y1 + _EDGE_EPS_DEG)
    )
    for start in range(0, len(cand), chunk):
        idx = cand[start : start + chunk]
        parity = np.zeros(len(idx), dtype=bool)
        edge = np.zeros(len(idx), dtype=bool)
        for ring in area.rings:
            inside, on = _ring_contains(ring, px[idx], py[idx])
            parity ^= inside
            edge |= on
        result[idx] = parity | edge
    return result


def locate_many(region: StudyRegion, lon, lat) -> np.ndarray:
    """Region index of the containing area for each point, -1 where none.

    Boundary points count as inside; the lowest-indexed containing area wins.
    """
    px = np.atleast_1d(np.asarray(lon, dtype=float))
    py = np.atleast_1d(np.asarray(lat, dtype=float))
    out = np.full(len(px), -1, dtype=int)
    for i, area in enumerate(region.areas):
        open_ = out < 0
        if not open_.any():
            break
        hit = np.zeros(len(px), dtype=bool)
        hit[open_] = _area_contains(area, px[open_], py[open_])
        out[hit] = i
    return out


def locate(region: StudyRegion, p: GeoPoint) -> str | None:
    k = int(locate_many(region, [p.lon], [p.lat])[0])
    return region.areas[k].id if k >= 0 else None


# ---------------------------------------------------------------------------
# contiguity


def _projected_shapes(region: StudyRegion):
    from shapely.geometry import MultiPolygon, Polygon

    origin = region.origin
    shapes = []
    for a in region.areas:
        parts = []
        for part in a.polygons:
            rings = []
            for ring in part:
                x, y = aeqd_forward(ring[:, 0], ring[:, 1], origin)
                rings.append(np.column_stack([x, y]))
            parts.append(Polygon(rings[0], rings[1:]))
        shapes.append(parts[0] if len(parts) == 1 else MultiPolygon(parts))
    return shapes


def queen_adjacency(region: StudyRegion, tol_ft: float = 10.0, criterion: str = "queen") -> Adjacency:
    """Contiguity neighbours.

    ``queen``: boundaries come within ``tol_ft`` of each other anywhere.
    ``rook``: additionally the near-coincident stretch of boundary must be
    longer than ``3 * tol_ft``, which excludes single-point (corner) contact.
    """
    if criterion not in ("queen", "rook"):
        raise ValueError(f"unknown contiguity criterion {criterion!r}")
    from shapely import STRtree

    shapes = _projected_shapes(region)
    tree = STRtree(shapes)
    pairs = []
    for i, geom in enumerate(shapes):
        for j in tree.query(geom, predicate="dwithin", distance=tol_ft):
            j = int(j)
            if j <= i:
                continue
            if criterion == "rook":
                shared = geom.boundary.intersection(shapes[j].boundary.buffer(tol_ft)).length
                if shared <= 3.0 * tol_ft:
                    continue
            pairs.append((i, j))
    return Adjacency.from_pairs(len(region), pairs, criterion)


# ---------------------------------------------------------------------------
# hex tessellation


def hex_tessellate(region: StudyRegion, edge_ft: float = 1750.0) -> HexGrid:
    """Cover the region's bounding box with flat-top hexagons of edge ``edge_ft``.

    The first hexagon's bounding box sits on the projected bbox min corner,
    and one extra ring of cells is added on every side so the bbox is fully
    covered. Every centre is tagged by ``locate``; cells outside all areas are
    kept with index -1.
    """
    if not edge_ft > 0:
        raise ValueError("edge_ft must be positive")
    x0, y0, x1, y1 = region.bbox
    if x1 <= x0 or y1 <= y0:
        raise GeometryError("degenerate region: zero-extent bounding box")
    origin = region.origin
    pts = np.vstack([r for a in region.areas for r in a.rings])
    px, py = aeqd_forward(pts[:, 0], pts[:, 1], origin)
    xmin, xmax, ymin, ymax = px.min(), px.max(), py.min(), py.max()

    col_step = 1.5 * edge_ft
    row_step = math.sqrt(3.0) * edge_ft
    cx0 = xmin + edge_ft
    cy0 = ymin + row_step / 2.0
    n_cols = int(math.ceil((xmax - cx0) / col_step)) + 1
    n_rows = int(math.ceil((ymax - cy0) / row_step)) + 1

    xs, ys = [], []
    for c in range(-1, n_cols + 1):
        offset = row_step / 2.0 if c % 2 else 0.0
        for r in range(-1, n_rows + 1):
            xs.append(cx0 + c * col_step)
            ys.append(cy0 + r * row_step + offset)
    lon, lat = aeqd_inverse(np.array(xs), np.array(ys), origin)
    centers = np.column_stack([lon, lat])
    tags = locate_many(region, lon, lat)
    return HexGrid(float(edge_ft), centers, tags, tuple(region.ids))
