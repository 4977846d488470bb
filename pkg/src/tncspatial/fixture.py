"""
Synthetic mini-city: a 4 x 3 grid of square community areas with rail
stations, ACS-style items, covariates and a trip file whose demand follows
a known Spatial Durbin data-generating process.

TAT and SDI are computed with the package's own pipeline from the generated
geometry and items, then fed into the DGP, so a fit on the fixture recovers
the planted parameters up to trip-count rounding.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .geo import EARTH_RADIUS_FT, FT_PER_MILE, hex_tessellate, load_region, queen_adjacency
from .ingest import MODEL_COVARIATES
from .sdi import DEFAULT_ITEMS, ItemMatrix, fit_single_factor
from .tat import StationSet, compute_tat
from .weights import build_weights

ORIGIN_LON = -87.70
ORIGIN_LAT = 41.84
WINDOW = (date(2019, 6, 3), date(2019, 6, 9))

# planted coefficients, in model units, ordered like MODEL_COVARIATES
SOLO_BETA = np.array([4.0, 3.5, -0.4, 1.9, 0.002, -0.12])
POOLED_BETA = np.array([2.7, 3.0, -0.16, 1.2, -0.009, 0.15])
SOLO_GAMMA = -0.04
POOLED_GAMMA = -0.02


@dataclass(frozen=True)
class FixtureSpec:
    rows: int = 3
    cols: int = 4
    side_mi: float = 1.25
    rho: float = 0.5
    solo_gamma: float = SOLO_GAMMA
    pooled_gamma: float = POOLED_GAMMA
    noise_sd: float = 0.001
    target_trips: int = 10_000
    pooled_share: float = 0.22
    truly_pooled_ratio: float = 0.669
    junk_rows: int = 240
    seed: int = 7


def _square(lon0, lat0, x0_ft, y0_ft, side_ft):
    def to_lonlat(x, y):
        lat = lat0 + math.degrees(y / EARTH_RADIUS_FT)
        lon = lon0 + math.degrees(x / (EARTH_RADIUS_FT * math.cos(math.radians(lat0))))
        return [round(lon, 9), round(lat, 9)]

    pts = [(x0_ft, y0_ft), (x0_ft + side_ft, y0_ft), (x0_ft + side_ft, y0_ft + side_ft), (x0_ft, y0_ft + side_ft)]
    ring = [to_lonlat(x, y) for x, y in pts]
    return ring + [ring[0]]


def region_geojson(spec: FixtureSpec) -> dict:
    side = spec.side_mi * FT_PER_MILE
    feats = []
    for r in range(spec.rows):
        for c in range(spec.cols):
            k = r * spec.cols + c + 1
            ring = _square(ORIGIN_LON, ORIGIN_LAT, c * side, r * side, side)
            feats.append(
                {
                    "type": "Feature",
                    "properties": {"area_numbe": str(k), "community": f"AREA {k}"},
                    "geometry": {"type": "Polygon", "coordinates": [ring]},
                }
            )
    return {"type": "FeatureCollection", "features": feats}


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        out.writerows(rows)


def _fmt(v: float, digits: int = 6) -> str:
    return f"{v:.{digits}f}"


def make_minicity(outdir, spec: FixtureSpec = FixtureSpec()) -> dict:
    """Write the fixture files into ``outdir`` and return the planted truth."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    gj = region_geojson(spec)
    (out / "region.geojson").write_text(json.dumps(gj, indent=1) + "\n", encoding="utf-8")
    region = load_region((out / "region.geojson").read_bytes())
    n = len(region)
    ids = region.ids

    x0, y0, x1, y1 = region.bbox
    st_lon = rng.uniform(x0, x1, size=5)
    st_lat = rng.uniform(y0, y1, size=5)
    stations = [(f"Station {i + 1}", round(float(a), 6), round(float(b), 6)) for i, (a, b) in enumerate(zip(st_lon, st_lat))]
    _write_csv(out / "stations.csv", ["name", "lon", "lat"], stations)

    # items: one latent disadvantage factor with loadings close to the published ones
    latent = rng.normal(size=n)
    load = np.array([0.95, 0.87, 0.77, 0.76, 0.74, 0.65])
    items = 0.3 + 0.1 * (latent[:, None] * load + rng.normal(size=(n, 6)) * np.sqrt(1 - load**2))
    _write_csv(
        out / "acs_items.csv",
        ["area_id", *DEFAULT_ITEMS],
        [[aid, *(_fmt(v) for v in row)] for aid, row in zip(ids, items)],
    )

    pct_18_34 = rng.uniform(0.18, 0.40, size=n)
    pop_density = rng.uniform(5_000, 25_000, size=n)
    hh_size = rng.uniform(2.0, 3.4, size=n)
    bars = rng.uniform(10, 150, size=n)
    covs = np.column_stack([pct_18_34, pop_density, hh_size, bars])
    _write_csv(
        out / "covariates.csv",
        ["area_id", "pct_18_34", "pop_density_per_sq_mi", "mean_household_size", "bar_restaurant_density_per_sq_mi"],
        [[aid, _fmt(a, 4), _fmt(b, 1), _fmt(c, 4), _fmt(d, 3)] for aid, (a, b, c, d) in zip(ids, covs)],
    )

    # covariates in model units, via the package's own TAT and SDI
    grid = hex_tessellate(region, 1750.0)
    tat = compute_tat(region, grid, StationSet.from_records(stations)).area_minutes
    items_rounded = np.array([[float(_fmt(v)) for v in row] for row in items])
    sdi = fit_single_factor(ItemMatrix(items_rounded, DEFAULT_ITEMS)).scores
    X = np.column_stack(
        [
            np.round(pct_18_34, 4),
            np.round(pop_density, 1) / 100_000.0,
            np.round(hh_size, 4),
            np.round(bars, 3) / 1_000.0,
            tat,
            sdi,
        ]
    )
    w = build_weights(queen_adjacency(region))
    W = w.dense
    days = (WINDOW[1] - WINDOW[0]).days + 1
    area = region.area_sq_mi
    A = np.eye(n) - spec.rho * W

    def simulate(beta, gamma, share):
        mu = X @ beta + gamma * (W @ X[:, 4]) + spec.noise_sd * rng.normal(size=n)
        y = np.linalg.solve(A, mu)
        target = spec.target_trips * share
        shift = math.log(target / float(np.sum(np.exp(y) * area * days)))
        y = y + shift
        counts = np.maximum(np.rint(np.exp(y) * area * days).astype(int), 1)
        return counts, shift * (1.0 - spec.rho)

    solo, solo_icpt = simulate(SOLO_BETA, spec.solo_gamma, 1.0 - spec.pooled_share)
    pooled, pooled_icpt = simulate(POOLED_BETA, spec.pooled_gamma, spec.pooled_share)

    rows = []
    start_dt = datetime.combine(WINDOW[0], datetime.min.time())

    def trip_row(pickup, shared, pooled_parties, when=None, fare=None, dropoff=None, seconds=None, miles=None):
        when = when or start_dt + timedelta(minutes=15 * int(rng.integers(0, days * 96)))
        drop = dropoff if dropoff is not None else ids[int(rng.integers(0, n))]
        return [
            when.strftime("%m/%d/%Y %I:%M:%S %p"),
            str(seconds if seconds is not None else int(rng.integers(180, 3600))),
            _fmt(miles if miles is not None else float(rng.uniform(0.5, 12.0)), 1),
            pickup,
            drop,
            _fmt(fare if fare is not None else 2.5 * round(float(rng.uniform(2, 16))), 2),
            "true" if shared else "false",
            str(pooled_parties),
        ]

    for i, aid in enumerate(ids):
        for _ in range(solo[i]):
            rows.append(trip_row(aid, False, 1))
        truly = rng.random(pooled[i]) < spec.truly_pooled_ratio
        for t in truly:
            rows.append(trip_row(aid, True, int(rng.integers(2, 4)) if t else 1))

    junk = []
    for j in range(spec.junk_rows):
        aid = ids[j % n]
        kind = j % 6
        if kind == 0:
            junk.append(trip_row(aid, False, 1, fare=0.0))
        elif kind == 1:
            junk.append(trip_row(aid, False, 1, fare=1500.0))
        elif kind == 2:
            junk.append(trip_row(aid, False, 1, dropoff=""))
        elif kind == 3:
            junk.append(trip_row(aid, False, 1, seconds=0))
        elif kind == 4:
            junk.append(trip_row(aid, False, 1, miles=0.0))
        else:
            junk.append(trip_row(aid, False, 1, when=start_dt + timedelta(days=days + 3)))
    rows.extend(junk)
    order = rng.permutation(len(rows))
    _write_csv(
        out / "trips.csv",
        [
            "Trip Start Timestamp",
            "Trip Seconds",
            "Trip Miles",
            "Pickup Community Area",
            "Dropoff Community Area",
            "Fare",
            "Shared Trip Authorized",
            "Trips Pooled",
        ],
        [rows[k] for k in order],
    )

    (out / "config.toml").write_text(
        "\n".join(
            [
                "# synthetic mini-city fixture",
                'trips = "trips.csv"',
                'region = "region.geojson"',
                'stations = "stations.csv"',
                'items = "acs_items.csv"',
                'covariates = "covariates.csv"',
                'output_dir = "out"',
                f'window_start = "{WINDOW[0].isoformat()}"',
                f'window_end = "{WINDOW[1].isoformat()}"',
                "edge_ft = 1750.0",
                "permutations = 999",
                "draws = 1000",
                f"seed = {spec.seed}",
                "",
            ]
        ),
        encoding="utf-8",
    )
    truth = {
        "rho": spec.rho,
        "covariates": list(MODEL_COVARIATES),
        "solo": {"beta": SOLO_BETA.tolist(), "gamma_tat": spec.solo_gamma, "intercept": solo_icpt},
        "pooled": {"beta": POOLED_BETA.tolist(), "gamma_tat": spec.pooled_gamma, "intercept": pooled_icpt},
        "solo_counts": solo.tolist(),
        "pooled_counts": pooled.tolist(),
        "junk_rows": spec.junk_rows,
        "window_days": days,
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=1) + "\n", encoding="utf-8")
    return truth
