"""
Batch command line: ``tncspatial {ingest,sdi,tat,fit,scenario,report,make-fixture}``.

Configuration comes from a TOML file of flat keys (see ``RunConfig``);
command-line flags override it. Relative paths resolve against the config
file's directory. Exit codes: 0 ok, 2 validation error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from . import __version__
from .econometrics import (
    SpecificationError,
    lm_error_test,
    lm_lag_test,
    morans_i,
    ols_fit,
    select_model,
)
from .geo import Adjacency, GeometryError, hex_tessellate, load_region, queen_adjacency, region_to_geojson
from .impacts import (
    ImpactError,
    divergences,
    elasticity_at_mean,
    impact_inference,
    impacts_paper_closed_form,
    ride_delta,
)
from .ingest import (
    MODEL_COVARIATES,
    ColumnMap,
    DemandSeries,
    IngestError,
    aggregate_demand,
    build_panel,
    clean_trips,
)
from .reports import Manifest, StaleOutputError, dumps_csv, dumps_json, meta, meta_comment, read_csv, sha256_file
from .sdi import DEFAULT_ITEMS, FactorError, ItemMatrix, fit_single_factor
from .sdm import EstimationError, ModelSpec, fit_sdm, sdm_residuals
from .tat import AccessError, StationSet, compute_tat
from .weights import WeightsError, build_weights, to_triplet_csv

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("tncspatial")

EXIT_OK, EXIT_VALIDATION, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

DEPENDENTS = ("solo", "pooled")


class ValidationError(ValueError):
    pass


@dataclass
class RunConfig:
    trips: str | None = None
    region: str | None = None
    stations: str | None = None
    items: str | None = None
    covariates: str | None = None
    output_dir: str = "out"
    window_start: str | None = None
    window_end: str | None = None
    edge_ft: float = 1750.0
    walking_speed_ftpm: float = 264.2
    detour: float = 1.0
    lag_columns: list = field(default_factory=lambda: ["tat_minutes"])
    model_columns: list = field(default_factory=lambda: list(MODEL_COVARIATES))
    permutations: int = 999
    draws: int = 1000
    seed: int = 0
    alpha: float = 0.05
    contiguity: str = "queen"
    tol_ft: float = 10.0
    id_property: str = "area_numbe"
    name_property: str = "community"
    sdi_anchor: str = "pct_poverty"
    drop_low_loadings: bool = False
    strict: bool = False
    base_dir: str = field(default=".", metadata={"internal": True})

    def path(self, key: str) -> Path:
        value = getattr(self, key)
        if value is None:
            raise ValidationError(f"config key {key!r} is required for this command")
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def require_file(self, key: str) -> Path:
        p = self.path(key)
        if not p.is_file():
            raise ValidationError(f"{key}: file not found: {p}")
        return p

    @property
    def out(self) -> Path:
        return self.path("output_dir")

    @property
    def window(self) -> tuple[date, date]:
        if not self.window_start or not self.window_end:
            raise ValidationError("window_start and window_end are required")
        try:
            w = (date.fromisoformat(str(self.window_start)), date.fromisoformat(str(self.window_end)))
        except ValueError as exc:
            raise ValidationError(f"bad window date: {exc}") from exc
        if w[1] < w[0]:
            raise ValidationError("window_end precedes window_start")
        return w

    def public(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if not f.metadata.get("internal")}

    def hash(self, keys=None) -> str:
        d = self.public()
        if keys is not None:
            d = {k: d[k] for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]

    def meta(self) -> dict:
        return meta(self.hash(), self.seed)


STAGE_KEYS = {
    "ingest": ("trips", "region", "window_start", "window_end", "id_property", "name_property", "strict"),
    "sdi": ("items", "region", "id_property", "sdi_anchor", "drop_low_loadings"),
    "tat": ("region", "stations", "id_property", "edge_ft", "walking_speed_ftpm", "detour"),
}


def _file_tag(p: Path) -> str:
    # region/stations/items are small: hash content; trips may be huge: size only
    return sha256_file(p) if p.stat().st_size < 64 << 20 else f"size:{p.stat().st_size}"


def stage_hash(cfg: RunConfig, stage: str) -> str:
    keys = STAGE_KEYS[stage]
    tags = {}
    for k in ("trips", "region", "stations", "items"):
        if k in keys and getattr(cfg, k):
            p = cfg.path(k)
            tags[k] = _file_tag(p) if p.exists() else "missing"
    blob = json.dumps({"cfg": {k: cfg.public()[k] for k in keys}, "files": tags}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    default = _FIELD_TYPES[name].default
    if _FIELD_TYPES[name].default_factory is not dataclasses.MISSING:
        default = _FIELD_TYPES[name].default_factory()
    if isinstance(default, list):
        if isinstance(value, str):
            return [v.strip() for v in value.split(",") if v.strip()]
        return list(value)
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return None if value is None else str(value)


def load_config(path: str | None, overrides: dict) -> RunConfig:
    values = {}
    base = Path(".")
    if path:
        p = Path(path)
        try:
            with open(p, "rb") as fh:
                values = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ValidationError(f"config file not found: {p}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"bad config file: {exc}") from exc
        base = p.parent
    unknown = set(values) - set(_FIELD_TYPES)
    if unknown:
        raise ValidationError(f"unknown config key(s): {sorted(unknown)}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        kwargs = {k: _coerce(k, v) for k, v in values.items() if k != "base_dir"}
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad config value: {exc}") from exc
    cfg = RunConfig(**kwargs, base_dir=str(base))
    if cfg.contiguity not in ("queen", "rook"):
        raise ValidationError("contiguity must be 'queen' or 'rook'")
    for c in cfg.lag_columns:
        if c not in cfg.model_columns:
            raise ValidationError(f"lag column {c!r} is not a model column")
    return cfg


# ---------------------------------------------------------------------------
# shared loaders


def _region(cfg: RunConfig):
    return load_region(cfg.require_file("region").read_bytes(), cfg.id_property, cfg.name_property)


def _keyed_table(path: Path, key: str = "area_id") -> dict:
    """CSV keyed by area id -> {column: {area_id: float}}."""
    from .geo import normalize_area_id

    rows = read_csv(path)
    if not rows:
        raise IngestError(f"{path} has no rows")
    if key not in rows[0]:
        raise IngestError(f"{path} lacks an {key!r} column")
    table: dict = {c: {} for c in rows[0] if c != key}
    for r in rows:
        aid = normalize_area_id(r[key])
        for c in table:
            v = r[c].strip() if r[c] is not None else ""
            try:
                table[c][aid] = float(v) if v else math.nan
            except ValueError as exc:
                raise IngestError(f"{path}: non-numeric {c!r} for area {aid!r}") from exc
    return table


def _write_meta_csv(man: Manifest, cfg, name, header, rows, stage, shash):
    man.write_file(name, dumps_csv(header, rows, cfg.meta()), stage, shash)


def _write_meta_json(man: Manifest, cfg, name, payload, stage, shash):
    man.write_file(name, dumps_json(payload, cfg.meta()), stage, shash)


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: RunConfig) -> int:
    trips_path = cfg.require_file("trips")
    region = _region(cfg)
    window = cfg.window
    import csv

    with open(trips_path, newline="", encoding="utf-8") as fh:
        trips, stats = clean_trips(csv.DictReader(fh), ColumnMap(), strict=cfg.strict)
        demand = aggregate_demand(trips, region, window)
    if stats.kept == 0 or demand.counted == 0:
        raise IngestError("no trip rows survived cleaning and windowing")

    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out)
    shash = stage_hash(cfg, "ingest")
    man.drop_stage("ingest")
    rows = []
    for i, a in enumerate(region.areas):
        rows.append(
            [
                a.id,
                a.name,
                float(a.area_sq_mi),
                int(demand.solo[i]),
                int(demand.authorized[i]),
                int(demand.truly_pooled[i]),
                float(demand.avg_daily_solo[i]),
                float(demand.avg_daily_authorized_pooled[i]),
                float(demand.avg_daily_truly_pooled[i]),
            ]
        )
    _write_meta_csv(
        man,
        cfg,
        "demand.csv",
        [
            "area_id",
            "name",
            "area_sq_mi",
            "solo_trips",
            "authorized_trips",
            "truly_pooled_trips",
            "avg_daily_solo",
            "avg_daily_authorized_pooled",
            "avg_daily_truly_pooled",
        ],
        rows,
        "ingest",
        shash,
    )
    report = stats.to_dict()
    auth_total = int(demand.authorized.sum())
    report.update(
        {
            "out_of_window": demand.out_of_window,
            "unknown_pickup_area": demand.unknown_area,
            "counted": demand.counted,
            "window": [window[0].isoformat(), window[1].isoformat()],
            "window_days": demand.window_days,
            "truly_over_authorized": (int(demand.truly_pooled.sum()) / auth_total) if auth_total else None,
        }
    )
    _write_meta_json(man, cfg, "rejections.json", report, "ingest", shash)
    od_keys = sorted({(p, d) for p, d, _ in demand.od}, key=lambda t: (region.index(t[0]), str(t[1])))
    od_rows = [[p, d, demand.od.get((p, d, "solo"), 0), demand.od.get((p, d, "pooled"), 0)] for p, d in od_keys]
    _write_meta_csv(man, cfg, "od_flows.csv", ["pickup_area", "dropoff_area", "solo_trips", "pooled_trips"], od_rows, "ingest", shash)
    man.save(cfg.meta())
    log.info("ingest: %d rows read, %d kept, %d counted", stats.total, stats.kept, demand.counted)
    return EXIT_OK


def _load_items(cfg: RunConfig, region) -> ItemMatrix:
    table = _keyed_table(cfg.require_file("items"))
    names = tuple(c for c in DEFAULT_ITEMS if c in table) if all(c in table for c in DEFAULT_ITEMS) else tuple(table)
    vals = []
    for aid in region.ids:
        row = []
        for c in names:
            v = table[c].get(aid, math.nan)
            if math.isnan(v):
                raise IngestError(f"item {c!r} missing for area {aid!r}")
            row.append(v)
        vals.append(row)
    return ItemMatrix(np.array(vals), names, tuple(region.ids))


def cmd_sdi(cfg: RunConfig) -> int:
    region = _region(cfg)
    items = _load_items(cfg, region)
    anchor = cfg.sdi_anchor if cfg.sdi_anchor in items.names else 0
    model = fit_single_factor(items, anchor=anchor, drop_below_threshold=cfg.drop_low_loadings)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out)
    shash = stage_hash(cfg, "sdi")
    man.drop_stage("sdi")
    _write_meta_csv(man, cfg, "sdi_scores.csv", ["area_id", "sdi_score"], list(zip(region.ids, map(float, model.scores))), "sdi", shash)
    rep = model.report()
    rep["score_mean"] = float(np.mean(model.scores))
    rep["score_sd"] = float(np.std(model.scores, ddof=1))
    _write_meta_json(man, cfg, "sdi_model.json", rep, "sdi", shash)
    man.save(cfg.meta())
    return EXIT_OK


def cmd_tat(cfg: RunConfig) -> int:
    region = _region(cfg)
    rows = read_csv(cfg.require_file("stations"))
    try:
        stations = StationSet.from_records((r["name"], r["lon"], r["lat"]) for r in rows)
    except (KeyError, ValueError, GeometryError) as exc:
        raise IngestError(f"bad stations file: {exc}") from exc
    grid = hex_tessellate(region, cfg.edge_ft)
    res = compute_tat(region, grid, stations, cfg.walking_speed_ftpm, cfg.detour)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out)
    shash = stage_hash(cfg, "tat")
    man.drop_stage("tat")
    cell_rows = []
    for c, ((lon, lat), k) in enumerate(zip(grid.centers, grid.area_index)):
        cell_rows.append(
            [c, round(float(lon), 8), round(float(lat), 8), region.ids[k] if k >= 0 else "", float(res.cell_minutes[c]), stations.names[res.nearest_station[c]]]
        )
    _write_meta_csv(man, cfg, "tat_cells.csv", ["cell", "lon", "lat", "area_id", "minutes", "nearest_station"], cell_rows, "tat", shash)
    _write_meta_csv(
        man,
        cfg,
        "tat_areas.csv",
        ["area_id", "tat_minutes", "cells"],
        [[aid, float(m), int(k)] for aid, m, k in zip(region.ids, res.area_minutes, res.cells_per_area)],
        "tat",
        shash,
    )
    man.save(cfg.meta())
    return EXIT_OK


def _read_demand(path: Path, region) -> DemandSeries:
    rows = read_csv(path)
    by_id = {r["area_id"]: r for r in rows}
    if [r["area_id"] for r in rows] != region.ids:
        raise StaleOutputError("demand.csv areas do not match the region")

    def col(name):
        if name not in rows[0]:
            return None
        return np.array([int(by_id[a][name]) for a in region.ids], dtype=np.int64)

    solo = col("solo_trips")
    auth = col("authorized_trips")
    truly = col("truly_pooled_trips")
    # window days follow from counts and averages; both were written by ingest
    days = None
    for cname, aname in (("solo_trips", "avg_daily_solo"), ("authorized_trips", "avg_daily_authorized_pooled")):
        if cname in rows[0] and aname in rows[0]:
            for r in rows:
                if float(r[aname]) > 0:
                    days = round(int(r[cname]) / float(r[aname]))
                    break
        if days:
            break
    return DemandSeries(tuple(region.ids), solo, auth, truly, int(days or 1))


def _ensure_stage(cfg, man: Manifest, stage: str, files, runner):
    shash = stage_hash(cfg, stage)
    if not all(man.has(f, shash) for f in files):
        runner(cfg)
        man.__init__(cfg.out)
    return [man.verify(f, shash) for f in files]


def _subset_weights(adj: Adjacency, region, keep_ids):
    idx = [region.index(a) for a in keep_ids]
    pos = {g: i for i, g in enumerate(idx)}
    pairs = [(pos[i], pos[j]) for i in idx for j in adj.neighbors[i] if j in pos and i < j]
    sub = Adjacency.from_pairs(len(idx), pairs, adj.criterion)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        w = build_weights(sub)
    for c in caught:
        log.warning("%s", c.message)
    return w


def _fit_one(cfg, dep, region, adj, demand, covs):
    panel = build_panel(region, demand, covs, cfg.lag_columns, include=cfg.model_columns, dependents=(dep,))
    w = _subset_weights(adj, region, panel.area_ids)
    y = panel.dependent(dep)
    X = panel.matrix(cfg.model_columns)
    names = ("(Intercept)",) + tuple(cfg.model_columns)
    ols = ols_fit(y, np.column_stack([np.ones(panel.n), X]), names)
    moran = morans_i(ols.residuals, w, cfg.permutations, cfg.seed)
    lag = lm_lag_test(ols, w)
    err = lm_error_test(ols, w)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rec = select_model(lag, err, cfg.alpha)
    diag = {
        "dependent": dep,
        "ols": {
            "coefficients": dict(zip(names, map(float, ols.coefficients))),
            "loglik": ols.loglik,
            "aic": ols.aic,
            "sigma2": ols.sigma2,
        },
        "moran_ols_residuals": moran.to_dict(),
        "lm_lag": lag.to_dict(),
        "lm_error": err.to_dict(),
        "alpha": cfg.alpha,
        "recommendation": rec.value,
        "warnings": [str(c.message) for c in caught],
    }
    spec = ModelSpec(dep, tuple(cfg.model_columns), tuple(cfg.lag_columns))
    fit = fit_sdm(panel, spec, w)
    resid = sdm_residuals(fit, None, w)
    resid_moran = morans_i(resid, w, cfg.permutations, cfg.seed + 1)
    fit_rep = fit.report()
    fit_rep["residual_autocorrelation"] = {
        "label": "Moran's I of SDM residuals (permutation test)",
        **resid_moran.to_dict(),
    }
    fit_rep["excluded_areas"] = list(panel.excluded)
    fit_rep["recommendation"] = rec.value
    fit_rep["param_cov"] = fit.param_cov.tolist()
    fit_rep["param_names"] = list(fit.names) + ["rho"]
    exact = impact_inference(fit, w, cfg.draws, cfg.seed + 2)
    try:
        closed = impacts_paper_closed_form(fit)
    except ImpactError as exc:
        # the series behind the closed form needs |rho| < 1; the exact route does not
        log.warning("%s: closed-form impacts skipped: %s", dep, exc)
        closed = None
    return panel, w, diag, fit, fit_rep, resid, exact, closed


def cmd_fit(cfg: RunConfig) -> int:
    region = _region(cfg)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out)
    demand_path = man.verify("demand.csv", stage_hash(cfg, "ingest"))
    demand = _read_demand(demand_path, region)

    raw = _keyed_table(cfg.require_file("covariates")) if cfg.covariates else {}
    (sdi_path,) = _ensure_stage(cfg, man, "sdi", ["sdi_scores.csv"], cmd_sdi)
    (tat_path,) = _ensure_stage(cfg, man, "tat", ["tat_areas.csv"], cmd_tat)
    raw["sdi_score"] = _keyed_table(sdi_path)["sdi_score"]
    raw["tat_minutes"] = _keyed_table(tat_path)["tat_minutes"]

    adj = queen_adjacency(region, cfg.tol_ft, cfg.contiguity)
    if adj.isolated:
        log.warning("isolated areas: %s", [region.ids[i] for i in adj.isolated])
    shash = cfg.hash()
    man.drop_stage("fit")
    full_w = build_weights(adj) if not adj.isolated else None
    if full_w is not None:
        man.write_file("weights.csv", meta_comment(cfg.meta()) + to_triplet_csv(full_w), "fit", shash)

    choropleth = {
        "sdi_score": [raw["sdi_score"].get(a) for a in region.ids],
        "tat_minutes": [raw["tat_minutes"].get(a) for a in region.ids],
    }
    status = EXIT_OK
    panels = {}
    for dep in DEPENDENTS:
        try:
            panel, w, diag, fit, fit_rep, resid, exact, closed = _fit_one(cfg, dep, region, adj, demand, raw)
        except (IngestError, SpecificationError, EstimationError, ImpactError, WeightsError) as exc:
            log.error("%s model failed: %s", dep, exc)
            _write_meta_json(man, cfg, f"fit_{dep}.json", {"dependent": dep, "error": str(exc)}, "fit", shash)
            status = max(status, _exit_code(exc))
            continue
        panels[dep] = panel
        _write_meta_json(man, cfg, f"diagnostics_{dep}.json", diag, "fit", shash)
        _write_meta_json(man, cfg, f"fit_{dep}.json", fit_rep, "fit", shash)
        rows = exact.rows()
        closed_rows = {r["covariate"]: r for r in closed.rows()} if closed is not None else {}
        table = []
        for r in rows:
            c = r["covariate"]
            table.append(
                [c]
                + [r[k] for k in ("direct", "indirect", "total")]
                + [r[f"{k}_{s}"] for k in ("direct", "indirect", "total") for s in ("sd", "p")]
                + [closed_rows[c][k] if c in closed_rows else "" for k in ("direct", "indirect", "total")]
            )
        header = (
            ["covariate", "direct", "indirect", "total"]
            + [f"{k}_{s}" for k in ("direct", "indirect", "total") for s in ("sd", "p")]
            + ["closed_form_direct", "closed_form_indirect", "closed_form_total"]
        )
        _write_meta_csv(man, cfg, f"impacts_{dep}.csv", header, table, "fit", shash)
        _write_meta_json(
            man,
            cfg,
            f"impacts_{dep}.json",
            {
                "dependent": dep,
                "exact": rows,
                "paper_closed_form": closed.rows() if closed is not None else None,
                "divergent": divergences(exact, closed) if closed is not None else [],
                "draws": exact.inference.draws,
                "seed": exact.inference.seed,
                "rejected_rho_draws": exact.inference.rejected,
                "degenerate": exact.inference.degenerate,
            },
            "fit",
            shash,
        )
        ymap = dict(zip(panel.area_ids, panel.dependent(dep)))
        rmap = dict(zip(panel.area_ids, resid))
        choropleth[f"y_{dep}"] = [ymap.get(a) for a in region.ids]
        choropleth[f"residual_{dep}"] = [rmap.get(a) for a in region.ids]

    # panel.csv: covariates from whichever model succeeded, both y columns
    if panels:
        any_panel = next(iter(panels.values()))
        ids = [a for a in region.ids if all(a in p.area_ids for p in panels.values())]
        header = ["area_id"] + [f"y_{d}" for d in panels] + list(any_panel.covariate_names)
        rows = []
        for a in ids:
            row = [a]
            for d, p in panels.items():
                row.append(float(p.dependent(d)[p.area_ids.index(a)]))
            i = any_panel.area_ids.index(a)
            row += [float(any_panel.covariates[c][i]) for c in any_panel.covariate_names]
            rows.append(row)
        _write_meta_csv(man, cfg, "panel.csv", header, rows, "fit", shash)
    geo = region_to_geojson(region, choropleth)
    geo["meta"] = cfg.meta()
    man.write_file("choropleth.geojson", json.dumps(geo, sort_keys=True) + "\n", "fit", shash)
    man.save(cfg.meta())
    return status


def _load_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def cmd_scenario(cfg: RunConfig, scenario_path: str) -> int:
    """Evaluate ride deltas and elasticities for each scenario entry.

    Entries: ``{covariate, delta_x, baseline_rides}`` plus optional
    ``dependent`` (solo | pooled, default both), ``effect`` (direct |
    indirect | total, default total), and explicit ``impact`` / ``mean_x``
    which bypass the fitted outputs.
    """
    try:
        doc = json.loads(Path(scenario_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read scenario file: {exc}") from exc
    entries = doc["scenarios"] if isinstance(doc, dict) else doc
    man = Manifest(cfg.out) if cfg.out.exists() else None
    shash = cfg.hash()
    impacts_cache: dict = {}
    panel_means: dict = {}

    def impacts_for(dep):
        if dep not in impacts_cache:
            if man is None:
                raise ValidationError("no fit outputs found; run `fit` or give `impact` explicitly")
            impacts_cache[dep] = _load_json(man.verify(f"impacts_{dep}.json", shash))
        return impacts_cache[dep]

    def mean_for(cov):
        if not panel_means:
            if man is None:
                raise ValidationError("no fit outputs found; give `mean_x` explicitly")
            rows = read_csv(man.verify("panel.csv", shash))
            for c in rows[0]:
                if c != "area_id":
                    panel_means[c] = float(np.mean([float(r[c]) for r in rows]))
        if cov not in panel_means:
            raise ValidationError(f"unknown covariate {cov!r}")
        return panel_means[cov]

    results = []
    for k, e in enumerate(entries):
        try:
            cov = e["covariate"]
            dx = float(e["delta_x"])
            r1 = float(e["baseline_rides"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"scenario #{k}: {exc}") from exc
        if r1 < 0:
            raise ValidationError(f"scenario #{k}: baseline_rides must be nonnegative")
        effect = e.get("effect", "total")
        if effect not in ("direct", "indirect", "total"):
            raise ValidationError(f"scenario #{k}: unknown effect {effect!r}")
        deps = [e["dependent"]] if "dependent" in e else list(DEPENDENTS)
        for dep in deps:
            if "impact" in e:
                impact = float(e["impact"])
            else:
                rows = {r["covariate"]: r for r in impacts_for(dep)["exact"]}
                if cov not in rows:
                    raise ValidationError(f"scenario #{k}: unknown covariate {cov!r}")
                impact = float(rows[cov][effect])
            if cov not in MODEL_COVARIATES and "impact" not in e and cov not in cfg.model_columns:
                raise ValidationError(f"scenario #{k}: unknown covariate {cov!r}")
            rd = ride_delta(r1, impact, dx)
            mean_x = float(e["mean_x"]) if "mean_x" in e else mean_for(cov)
            results.append(
                {
                    "name": e.get("name", f"scenario_{k}"),
                    "covariate": cov,
                    "dependent": dep,
                    "effect": effect,
                    "impact": impact,
                    "delta_x": dx,
                    "baseline_rides": r1,
                    "delta_rides": rd.delta_r,
                    "elasticity_pct_at_mean": elasticity_at_mean(impact, mean_x) if mean_x > 0 else None,
                    "mean_x": mean_x,
                }
            )
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out)
    _write_meta_json(man, cfg, "scenarios.json", {"scenarios": results}, "scenario", shash)
    header = ["name", "covariate", "dependent", "effect", "impact", "delta_x", "baseline_rides", "delta_rides", "elasticity_pct_at_mean", "mean_x"]
    _write_meta_csv(man, cfg, "scenarios.csv", header, [[r[h] for h in header] for r in results], "scenario", shash)
    man.save(cfg.meta())
    for r in results:
        print(f"{r['name']:<28} {r['dependent']:<7} {r['effect']:<8} delta_rides={r['delta_rides']:+,.0f}  elasticity={r['elasticity_pct_at_mean']:+.3f}%")
    return EXIT_OK


def _fmt_coef(v, stars=""):
    if v is None:
        return ""
    return f"{v:.4g}{stars}"


def cmd_report(cfg: RunConfig) -> int:
    """Markdown summary laid out like the estimation and impact tables."""
    man = Manifest(cfg.out)
    shash = cfg.hash()
    lines = [f"# SDM report ({cfg.meta()['tool']} {__version__}, config {shash}, seed {cfg.seed})", ""]
    fits = {}
    for dep in DEPENDENTS:
        doc = _load_json(man.verify(f"fit_{dep}.json", shash))
        fits[dep] = doc
    lines += ["## Estimation", "", "| term | " + " | ".join(f"{d} coef | {d} t" for d in DEPENDENTS) + " |", "|---" * (1 + 2 * len(DEPENDENTS)) + "|"]
    terms = []
    for doc in fits.values():
        for r in doc.get("coefficients", []):
            if r["term"] not in terms:
                terms.append(r["term"])
    for t in terms:
        cells = []
        for dep in DEPENDENTS:
            rows = {r["term"]: r for r in fits[dep].get("coefficients", [])}
            r = rows.get(t)
            cells += [_fmt_coef(r["coefficient"], r["stars"]) if r else "", f"{r['t_statistic']:.3g}" if r and r["t_statistic"] is not None else ""]
        lines.append(f"| {t} | " + " | ".join(cells) + " |")
    for label, key in (("Nagelkerke pseudo-R2", "pseudo_r2_nagelkerke"), ("AIC", "aic"), ("AIC (OLS)", "aic_ols"), ("n", "n")):
        cells = []
        for dep in DEPENDENTS:
            v = fits[dep].get(key)
            cells += [f"{v:.5g}" if isinstance(v, float) else str(v if v is not None else fits[dep].get("error", "")), ""]
        lines.append(f"| {label} | " + " | ".join(cells) + " |")
    cells = []
    for dep in DEPENDENTS:
        ra = fits[dep].get("residual_autocorrelation")
        cells += [f"I={ra['statistic']:.3g}, p={ra['p_value']:.3g}" if ra else "", ""]
    lines.append("| Residual autocorrelation (Moran's I) | " + " | ".join(cells) + " |")
    lines += ["", "## Impacts (exact, Monte Carlo p-values)", ""]
    for dep in DEPENDENTS:
        if "error" in fits[dep]:
            lines += [f"### {dep}: not estimated ({fits[dep]['error']})", ""]
            continue
        imp = _load_json(man.verify(f"impacts_{dep}.json", shash))
        lines += [f"### {dep}", "", "| covariate | direct | indirect | total |", "|---|---|---|---|"]
        for r in imp["exact"]:
            cells = []
            for eff in ("direct", "indirect", "total"):
                p = r.get(f"{eff}_p")
                cells.append(_fmt_coef(r[eff], _stars(p)))
            lines.append(f"| {r['covariate']} | " + " | ".join(cells) + " |")
        if imp["divergent"]:
            lines += ["", "Closed-form vs exact divergences above 10%:"]
            lines += [f"- {d['covariate']} {d['effect']}: exact {d['exact']:.4g}, closed form {d['closed_form']:.4g}" for d in imp["divergent"]]
        lines.append("")
    man.write_file("report.md", "\n".join(lines) + "\n", "report", shash)
    man.save(cfg.meta())
    print("\n".join(lines))
    return EXIT_OK


def _stars(p):
    from .sdm import significance_stars

    return significance_stars(p) if p is not None and not (isinstance(p, float) and math.isnan(p)) else ""


def cmd_make_fixture(outdir: str, seed: int, rho: float, solo_gamma=None, pooled_gamma=None) -> int:
    from .fixture import FixtureSpec, make_minicity

    spec = FixtureSpec(seed=seed, rho=rho)
    lag = {k: v for k, v in (("solo_gamma", solo_gamma), ("pooled_gamma", pooled_gamma)) if v is not None}
    make_minicity(outdir, dataclasses.replace(spec, **lag))
    print(f"fixture written to {outdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ValidationError, ValueError)) and not isinstance(
        exc, (IngestError, GeometryError, FactorError, AccessError, SpecificationError, WeightsError)
    ):
        return EXIT_VALIDATION
    if isinstance(exc, (EstimationError, ImpactError, np.linalg.LinAlgError)):
        return EXIT_NUMERICAL
    return EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tncspatial", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("-c", "--config", help="TOML config file")
        for f in dataclasses.fields(RunConfig):
            if f.metadata.get("internal"):
                continue
            flag = "--" + f.name.replace("_", "-")
            p.add_argument(flag, dest=f"cfg_{f.name}", default=None, help=argparse.SUPPRESS)
        p.add_argument("-v", "--verbose", action="store_true")

    for name in ("ingest", "sdi", "tat", "fit", "report"):
        add_config_flags(sub.add_parser(name))
    sc = sub.add_parser("scenario")
    add_config_flags(sc)
    sc.add_argument("scenarios", help="JSON scenario file")
    mf = sub.add_parser("make-fixture")
    mf.add_argument("outdir")
    mf.add_argument("--seed", type=int, default=7)
    mf.add_argument("--rho", type=float, default=0.5)
    mf.add_argument("--solo-gamma", type=float, default=None, help="planted W*TAT coefficient, solo model")
    mf.add_argument("--pooled-gamma", type=float, default=None, help="planted W*TAT coefficient, pooled model")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "make-fixture":
            return cmd_make_fixture(args.outdir, args.seed, args.rho, args.solo_gamma, args.pooled_gamma)
        overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
        cfg = load_config(args.config, overrides)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "sdi":
            return cmd_sdi(cfg)
        if args.command == "tat":
            return cmd_tat(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "scenario":
            return cmd_scenario(cfg, args.scenarios)
        if args.command == "report":
            return cmd_report(cfg)
    except (ValueError, RuntimeError, KeyError, OSError, np.linalg.LinAlgError) as exc:
        code = _exit_code(exc) if not isinstance(exc, (KeyError, OSError)) else EXIT_DATA
        print(f"error: {exc}", file=sys.stderr)
        return code
    return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
