import csv
import hashlib
import json
import shutil
import time

import pytest

from helpers import MINICITY
from tncspatial.cli import (
    EXIT_DATA,
    EXIT_OK,
    EXIT_VALIDATION,
    ValidationError,
    cmd_fit,
    cmd_ingest,
    cmd_report,
    load_config,
    main,
)
from tncspatial.fixture import FixtureSpec, make_minicity
from tncspatial.reports import Manifest, StaleOutputError, read_csv


def cfg_for(root, **overrides):
    return load_config(str(root / "config.toml"), overrides)


def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


@pytest.fixture(scope="module")
def fitted_city(tmp_path_factory):
    """Fixture run through ingest, fit and report once, with timing."""
    root = tmp_path_factory.mktemp("city") / "minicity"
    shutil.copytree(MINICITY, root, ignore=shutil.ignore_patterns("out"))
    cfg = cfg_for(root)
    t0 = time.perf_counter()
    codes = [cmd_ingest(cfg), cmd_fit(cfg), cmd_report(cfg)]
    return root, cfg, codes, time.perf_counter() - t0


class TestConfig:
    def test_flag_overrides_file(self, minicity):
        cfg = cfg_for(minicity, edge_ft="1500", seed=3)
        assert cfg.edge_ft == 1500.0 and cfg.seed == 3
        assert cfg.permutations == 999

    def test_paths_relative_to_config(self, minicity):
        assert cfg_for(minicity).path("trips") == minicity / "trips.csv"

    def test_unknown_key(self, minicity):
        with open(minicity / "config.toml", "a") as fh:
            fh.write("bogus = 1\n")
        with pytest.raises(ValidationError, match="bogus"):
            cfg_for(minicity)

    def test_bad_contiguity(self, minicity):
        with pytest.raises(ValidationError):
            cfg_for(minicity, contiguity="hex")

    def test_lag_column_must_be_modelled(self, minicity):
        with pytest.raises(ValidationError):
            cfg_for(minicity, lag_columns="bogus")

    def test_hash_ignores_location_only(self, minicity, tmp_path):
        other = tmp_path / "elsewhere"
        shutil.copytree(minicity, other)
        assert cfg_for(minicity).hash() == cfg_for(other).hash()
        assert cfg_for(minicity).hash() != cfg_for(minicity, seed=99).hash()


class TestExitCodes:
    def test_validation_error_is_2(self, minicity):
        assert main(["ingest", "-c", str(minicity / "config.toml"), "--contiguity", "hex"]) == EXIT_VALIDATION

    def test_missing_config_is_2(self, tmp_path):
        assert main(["ingest", "-c", str(tmp_path / "nope.toml")]) == EXIT_VALIDATION

    def test_header_only_trips_is_3(self, minicity):
        path = minicity / "trips.csv"
        header = path.read_text(encoding="utf-8").splitlines()[0]
        path.write_text(header + "\n", encoding="utf-8")
        assert main(["ingest", "-c", str(minicity / "config.toml")]) == EXIT_DATA

    def test_fit_before_ingest_is_3(self, minicity):
        assert main(["fit", "-c", str(minicity / "config.toml")]) == EXIT_DATA


class TestFixturePipeline:
    def test_runs_fast_and_clean(self, fitted_city):
        _, _, codes, seconds = fitted_city
        assert codes == [EXIT_OK] * 3
        assert seconds < 5.0

    def test_ingest_counts_match_planted(self, fitted_city):
        root, cfg, _, _ = fitted_city
        truth = read_json(root / "truth.json")
        rows = read_csv(cfg.out / "demand.csv")
        assert [int(r["solo_trips"]) for r in rows] == truth["solo_counts"]
        assert [int(r["authorized_trips"]) for r in rows] == truth["pooled_counts"]
        rej = read_json(cfg.out / "rejections.json")
        assert rej["rejected"] + rej["out_of_window"] == truth["junk_rows"]

    @pytest.mark.parametrize("dep", ["solo", "pooled"])
    def test_rho_recovered(self, fitted_city, dep):
        _, cfg, _, _ = fitted_city
        fit = read_json(cfg.out / f"fit_{dep}.json")
        assert 0.45 <= fit["rho"] <= 0.55

    def test_report_lists_rho(self, fitted_city):
        _, cfg, _, _ = fitted_city
        text = (cfg.out / "report.md").read_text(encoding="utf-8")
        rho_line = next(line for line in text.splitlines() if line.startswith("| rho |"))
        values = [float(c.strip().rstrip("*^")) for c in rho_line.split("|")[2:-1:2]]
        assert all(0.45 <= v <= 0.55 for v in values)

    def test_every_output_carries_meta(self, fitted_city):
        _, cfg, _, _ = fitted_city
        man = Manifest(cfg.out)
        assert man.files
        for name in man.files:
            man.verify(name)
            text = (cfg.out / name).read_text(encoding="utf-8")
            if name.endswith(".csv"):
                assert text.startswith("# ") and "config_hash=" in text.splitlines()[0]
            elif name.endswith((".json", ".geojson")):
                assert read_json(cfg.out / name)["meta"]["tool"] == "tncspatial"


class TestScenario:
    def run(self, root, entries):
        path = root / "scen.json"
        path.write_text(json.dumps(entries), encoding="utf-8")
        return main(["scenario", "-c", str(root / "config.toml"), str(path)])

    def test_zero_change_gives_zero(self, fitted_city):
        root, cfg, _, _ = fitted_city
        assert self.run(root, [{"covariate": "tat_minutes", "delta_x": 0.0, "baseline_rides": 5000}]) == EXIT_OK
        res = read_json(cfg.out / "scenarios.json")["scenarios"]
        assert [r["delta_rides"] for r in res] == [0.0, 0.0]

    def test_uses_fitted_total_impact(self, fitted_city):
        root, cfg, _, _ = fitted_city
        assert self.run(root, [{"covariate": "sdi_score", "delta_x": 1.0, "baseline_rides": 100.0, "dependent": "solo"}]) == EXIT_OK
        (res,) = read_json(cfg.out / "scenarios.json")["scenarios"]
        total = {r["covariate"]: r["total"] for r in read_json(cfg.out / "impacts_solo.json")["exact"]}["sdi_score"]
        assert res["impact"] == total

    def test_inline_impact_needs_no_fit(self, minicity):
        entry = {"covariate": "pop_density_per_100k_sq_mi", "delta_x": 0.01, "baseline_rides": 204186, "impact": 3.69, "mean_x": 0.13113, "dependent": "solo"}
        assert self.run(minicity, [entry]) == EXIT_OK
        (res,) = read_json(minicity / "out" / "scenarios.json")["scenarios"]
        assert res["delta_rides"] == pytest.approx(7676, abs=1)
        assert res["elasticity_pct_at_mean"] == pytest.approx(0.484, abs=1e-3)

    def test_negative_baseline_is_2(self, fitted_city):
        root = fitted_city[0]
        assert self.run(root, [{"covariate": "tat_minutes", "delta_x": 1.0, "baseline_rides": -5}]) == EXIT_VALIDATION

    def test_unknown_covariate_is_2(self, fitted_city):
        root = fitted_city[0]
        assert self.run(root, [{"covariate": "parking", "delta_x": 1.0, "baseline_rides": 5}]) == EXIT_VALIDATION


def rewrite_demand_without(out, column):
    path = out / "demand.csv"
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    rows = list(csv.reader(lines[1:]))
    k = rows[0].index(column)
    body = "".join(",".join(c for j, c in enumerate(r) if j != k) + "\n" for r in rows)
    path.write_text(lines[0] + body, encoding="utf-8")
    doc = read_json(out / "manifest.json")
    doc["files"]["demand.csv"]["sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
    (out / "manifest.json").write_text(json.dumps(doc), encoding="utf-8")


class TestStaging:
    def test_dependents_fail_independently(self, minicity):
        cfg = cfg_for(minicity)
        cmd_ingest(cfg)
        rewrite_demand_without(cfg.out, "authorized_trips")
        assert cmd_fit(cfg) == EXIT_DATA
        assert "error" in read_json(cfg.out / "fit_pooled.json")
        solo = read_json(cfg.out / "fit_solo.json")
        assert "error" not in solo and 0.45 <= solo["rho"] <= 0.55

    def test_edited_output_is_stale(self, minicity):
        cfg = cfg_for(minicity)
        cmd_ingest(cfg)
        with open(cfg.out / "demand.csv", "a") as fh:
            fh.write("\n")
        with pytest.raises(StaleOutputError, match="hash"):
            cmd_fit(cfg)

    def test_changed_ingest_config_is_stale(self, minicity):
        cmd_ingest(cfg_for(minicity))
        with pytest.raises(StaleOutputError, match="configuration"):
            cmd_fit(cfg_for(minicity, window_end="2019-06-08"))

    def test_tat_rerun_when_its_config_changes(self, minicity):
        cfg = cfg_for(minicity)
        cmd_ingest(cfg)
        cmd_fit(cfg)
        before = (cfg.out / "tat_areas.csv").read_bytes()
        cmd_fit(cfg_for(minicity, edge_ft=1200.0))
        assert (cfg.out / "tat_areas.csv").read_bytes() != before
        assert read_json(cfg.out / "manifest.json")["files"]["demand.csv"]["stage"] == "ingest"


def test_null_fixture_mostly_selects_ols(tmp_path):
    """With no spatial process planted, the LM pair should leave OLS in place in at least 90% of replications.

    The 10 x 10 layout keeps the chi-square approximation of the LM tests honest;
    on 12 areas they are oversized and the rate sits near 80% even with Gaussian data.
    """
    reps = 100
    picks = {"solo": 0, "pooled": 0}
    for seed in range(reps):
        root = tmp_path / f"null{seed}"
        spec = FixtureSpec(rows=10, cols=10, side_mi=0.6, rho=0.0, solo_gamma=0.0, pooled_gamma=0.0, noise_sd=0.3, target_trips=20_000, seed=seed)
        make_minicity(root, spec)
        cfg = cfg_for(root, permutations=199, draws=200)
        cmd_ingest(cfg)
        cmd_fit(cfg)
        for dep in picks:
            picks[dep] += read_json(cfg.out / f"diagnostics_{dep}.json")["recommendation"] == "OLS"
        shutil.rmtree(root)
    assert picks["solo"] / reps >= 0.90
    assert picks["pooled"] / reps >= 0.90
