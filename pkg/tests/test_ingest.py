import json
from collections import Counter
from datetime import date, datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import square_region, squares_geojson
from tncspatial.geo import load_region
from tncspatial.ingest import (
    REJECT_REASONS,
    DemandSeries,
    IngestError,
    TripRecord,
    aggregate_demand,
    build_panel,
    clean_trips,
    parse_row,
    parse_timestamp,
    scale_covariates,
)

WINDOW = (date(2019, 6, 3), date(2019, 6, 9))


def raw(**over):
    row = {
        "Trip Start Timestamp": "06/04/2019 08:15:00 AM",
        "Trip Seconds": "600",
        "Trip Miles": "3.1",
        "Pickup Community Area": "1",
        "Dropoff Community Area": "2",
        "Fare": "12.50",
        "Shared Trip Authorized": "false",
        "Trips Pooled": "1",
    }
    row.update(over)
    return row


def clean(rows):
    it, stats = clean_trips(rows)
    return list(it), stats


class TestCleaning:
    def test_good_row_kept(self):
        kept, stats = clean([raw()])
        assert len(kept) == 1 and stats.kept == 1 and stats.rejected == 0

    @pytest.mark.parametrize(
        "over,reason",
        [
            ({"Fare": "0.00"}, "fare_zero"),
            ({"Fare": "1500.00"}, "fare_excessive"),
            ({"Trip Seconds": "0"}, "duration_zero"),
            ({"Trip Miles": "0"}, "miles_zero"),
            ({"Pickup Community Area": ""}, "missing_pickup"),
            ({"Dropoff Community Area": ""}, "missing_dropoff"),
            ({"Trip Start Timestamp": "yesterday"}, "unparseable"),
            ({"Shared Trip Authorized": "false", "Trips Pooled": "2"}, "unparseable"),
        ],
    )
    def test_rejections(self, over, reason):
        kept, stats = clean([raw(**over)])
        assert kept == []
        assert stats.reasons == Counter({reason: 1})

    def test_fare_boundary_kept(self):
        kept, _ = clean([raw(Fare="1000.00")])
        assert len(kept) == 1

    def test_strict_raises(self):
        with pytest.raises(IngestError):
            clean_trips([raw(Fare="abc")], strict=True)[0].__next__()

    def test_idempotent(self):
        rows = [raw(), raw(Fare="0"), raw(**{"Trip Miles": "7.25"})]
        once, _ = clean(rows)
        twice, stats = clean(once)
        assert twice == once and stats.rejected == 0

    def test_report_lists_every_reason(self):
        _, stats = clean([raw()])
        assert set(stats.to_dict()["reasons"]) == set(REJECT_REASONS)

    def test_timestamp_formats(self):
        assert parse_timestamp("06/04/2019 08:15:00 PM") == datetime(2019, 6, 4, 20, 15)
        assert parse_timestamp("2019-06-04T20:15:00") == datetime(2019, 6, 4, 20, 15)

    def test_midnight_and_noon(self):
        assert parse_timestamp("06/04/2019 12:00:00 AM") == datetime(2019, 6, 4, 0, 0)
        assert parse_timestamp("06/04/2019 12:30:00 PM") == datetime(2019, 6, 4, 12, 30)

    @settings(max_examples=300)
    @given(*(st.integers(0, hi) for hi in (13, 32, 13, 61, 61)), st.sampled_from("AP"))
    def test_portal_layout_agrees_with_strptime(self, mo, d, h, mi, s, half):
        text = f"{mo:02d}/{d:02d}/2019 {h:02d}:{mi:02d}:{s:02d} {half}M"
        try:
            ref = datetime.strptime(text, "%m/%d/%Y %I:%M:%S %p")
        except ValueError:
            with pytest.raises(ValueError):
                parse_timestamp(text)
        else:
            assert parse_timestamp(text) == ref

    def test_float_area_ids(self):
        rec = parse_row(raw(**{"Pickup Community Area": "8.0"}))
        assert rec.pickup_area == "8"

    def test_record_invariants(self):
        with pytest.raises(IngestError):
            TripRecord(datetime(2019, 6, 4), 60, 1.0, "1", "1", 5.0, False, 2)


def trips(pickup, n, shared=False, pooled=1, day=4):
    return [TripRecord(datetime(2019, 6, day, 12), 600, 2.0, pickup, "1", 10.0, shared, pooled) for _ in range(n)]


class TestAggregation:
    def region(self):
        return square_region([(0, 0), (1, 0)])

    def test_average_daily(self):
        d = aggregate_demand(trips("1", 14), self.region(), WINDOW)
        assert d.avg_daily_solo[0] == 2.0

    def test_authorized_but_not_pooled(self):
        d = aggregate_demand(trips("1", 1, shared=True, pooled=1), self.region(), WINDOW)
        assert d.authorized[0] == 1 and d.truly_pooled[0] == 0 and d.solo[0] == 0

    def test_truly_pooled(self):
        d = aggregate_demand(trips("1", 3, shared=True, pooled=2), self.region(), WINDOW)
        assert d.authorized[0] == 3 and d.truly_pooled[0] == 3

    def test_window_inclusive(self):
        recs = trips("1", 1, day=3) + trips("1", 1, day=9) + trips("1", 1, day=10) + trips("1", 1, day=2)
        d = aggregate_demand(recs, self.region(), WINDOW)
        assert d.solo[0] == 2 and d.out_of_window == 2 and d.window_days == 7

    def test_unknown_area(self):
        d = aggregate_demand(trips("99", 2), self.region(), WINDOW)
        assert d.unknown_area == 2 and d.counted == 0

    def test_od(self):
        d = aggregate_demand(trips("2", 2) + trips("2", 1, shared=True), self.region(), WINDOW)
        assert d.od[("2", "1", "solo")] == 2 and d.od[("2", "1", "pooled")] == 1


area_choice = st.sampled_from(["1", "2", "3"])
trip_st = st.builds(
    lambda a, shared, parties, day: TripRecord(datetime(2019, 6, day, 9), 300, 1.5, a, "1", 8.0, shared, parties if shared else 1),
    area_choice,
    st.booleans(),
    st.integers(1, 4),
    st.integers(1, 12),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(trip_st, max_size=60), st.integers(0, 60))
def test_aggregation_is_associative(recs, cut):
    region = square_region([(0, 0), (1, 0), (2, 0)])
    whole = aggregate_demand(recs, region, WINDOW)
    merged = aggregate_demand(recs[:cut], region, WINDOW).merge(aggregate_demand(recs[cut:], region, WINDOW))
    for f in ("solo", "authorized", "truly_pooled"):
        assert np.array_equal(getattr(whole, f), getattr(merged, f))
    assert whole.od == merged.od and whole.out_of_window == merged.out_of_window
    assert whole.counted + whole.out_of_window + whole.unknown_area == len(recs)
    assert np.all(whole.truly_pooled <= whole.authorized)


class TestPanel:
    def setup_method(self):
        self.region = square_region([(0, 0), (1, 0), (2, 0)])

    def demand(self, solo, auth):
        z = np.zeros(3, dtype=int)
        return DemandSeries(tuple(self.region.ids), np.array(solo), np.array(auth), z, 7)

    def covs(self):
        ids = self.region.ids
        return {
            "tat_minutes": dict(zip(ids, [5.0, 10.0, 15.0])),
            "pop_density_per_sq_mi": dict(zip(ids, [10_000.0, 20_000.0, 30_000.0])),
        }

    def test_log_intensity(self):
        area = self.region.area_sq_mi
        solo = np.rint(2.0 * area * 7).astype(int)
        p = build_panel(self.region, self.demand(solo, [7, 7, 7]), self.covs())
        assert np.allclose(p.y_solo, np.log(solo / 7 / area))
        assert p.lag_columns == ("tat_minutes",)

    def test_unit_density_gives_zero(self):
        doc = json.loads(squares_geojson([(0, 0)]))
        doc["features"][0]["properties"]["area_sq_mi"] = 2.0
        region = load_region(json.dumps(doc).encode())
        d = DemandSeries(tuple(region.ids), np.array([14]), np.array([1]), np.array([0]), 7)
        p = build_panel(region, d, {"tat_minutes": {"1": 1.0}})
        assert p.y_solo[0] == 0.0

    def test_density_scaled(self):
        p = build_panel(self.region, self.demand([7, 7, 7], [7, 7, 7]), self.covs())
        assert p.covariates["pop_density_per_100k_sq_mi"].tolist() == [0.1, 0.2, 0.3]

    def test_counts_become_densities(self):
        area = dict(zip(self.region.ids, self.region.area_sq_mi))
        out = scale_covariates({"bars_restaurants": {k: 50.0 for k in area}}, self.region)
        for k, v in out["bar_restaurant_density_per_1k_sq_mi"].items():
            assert v == pytest.approx(50.0 / area[k] / 1000.0)

    def test_zero_area_excluded_with_warning(self, caplog):
        p = build_panel(self.region, self.demand([7, 0, 7], [7, 7, 7]), self.covs())
        assert p.area_ids == ("1", "3") and p.excluded == ("2",)
        assert "excluding" in caplog.text

    def test_exclusion_only_for_requested_series(self):
        p = build_panel(self.region, self.demand([7, 7, 7], [7, 0, 7]), self.covs(), dependents=("solo",))
        assert p.n == 3 and p.y_pooled is None
        with pytest.raises(IngestError):
            p.dependent("pooled")

    def test_missing_covariate(self):
        with pytest.raises(IngestError, match="missing covariate"):
            build_panel(self.region, self.demand([7, 7, 7], [7, 7, 7]), self.covs(), include=["sdi_score"])

    def test_lag_must_be_covariate(self):
        with pytest.raises(IngestError):
            build_panel(self.region, self.demand([7, 7, 7], [7, 7, 7]), self.covs(), lag_selection=("sdi_score",))
