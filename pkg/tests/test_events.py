import json

import pytest

from seriesrisk.events import (
    CrimeInstance,
    EventStore,
    ingest_events,
    merge,
    parse_timestamp,
    prediction_time,
    read_events_csv,
    split_train_test,
    write_events_csv,
    write_rejections,
)

from conftest import crime, small_grid, store_from_cells


def _rows(grid, specs):
    """specs: (id, series, cell, timestamp) -> csv-style dict rows."""
    rows = []
    for cid, series, cell, ts in specs:
        lat, lon = grid.cell_center(cell)
        rows.append({"id": cid, "series": str(series), "lat": str(lat),
                     "lon": str(lon), "timestamp": str(ts)})
    return rows


class TestIngest:
    def test_basic_grouping(self):
        grid = small_grid()
        result = ingest_events(_rows(grid, [("a", 0, 0, 1.0), ("b", 1, 3, 2.0), ("c", 1, 4, 3.0)]), grid)
        store = result.store
        assert not result.rejected
        assert store.n_series == 1
        assert len(store.series_events(1)) == 2
        assert len(store.singletons) == 1

    def test_equal_timestamps_ordered_by_id(self):
        grid = small_grid()
        result = ingest_events(_rows(grid, [("z9", 1, 0, 5.0), ("a1", 1, 1, 5.0)]), grid)
        events = result.store.series_events(1)
        assert [c.id for c in events] == ["a1", "z9"]

    def test_negative_series_rejected(self):
        grid = small_grid()
        result = ingest_events(_rows(grid, [("a", -1, 0, 1.0)]), grid)
        assert len(result.store) == 0
        assert result.rejected[0]["row"] == 1
        assert "series" in result.rejected[0]["reason"]

    def test_duplicate_id_rejected(self):
        grid = small_grid()
        result = ingest_events(_rows(grid, [("a", 1, 0, 1.0), ("a", 1, 1, 2.0)]), grid)
        assert len(result.store) == 1
        assert "duplicate" in result.rejected[0]["reason"]

    def test_out_of_region_rejected(self):
        grid = small_grid()
        rows = _rows(grid, [("a", 1, 0, 1.0)])
        rows.append({"id": "b", "series": "1", "lat": "60.0", "lon": "0.0", "timestamp": "2.0"})
        result = ingest_events(rows, grid)
        assert len(result.store) == 1
        assert result.rejected[0]["row"] == 2

    def test_unparseable_row_rejected(self):
        grid = small_grid()
        rows = [{"id": "a", "series": "one", "lat": "42.0", "lon": "-71.0", "timestamp": "1.0"}]
        result = ingest_events(rows, grid)
        assert result.rejected and result.rejected[0]["row"] == 1

    def test_iso_timestamps(self):
        assert parse_timestamp("1970-01-02T00:00:00Z") == pytest.approx(1.0)
        assert parse_timestamp("1970-01-02T12:00:00+00:00") == pytest.approx(1.5)
        assert parse_timestamp("1970-01-03") == pytest.approx(2.0)
        assert parse_timestamp("3.25") == 3.25
        with pytest.raises(ValueError):
            parse_timestamp("not-a-time")
        with pytest.raises(ValueError):
            parse_timestamp("inf")


class TestStore:
    def test_priors_are_strictly_earlier(self):
        grid = small_grid()
        a = crime(grid, "a", 0, 5.0, 1)
        b = crime(grid, "b", 1, 5.0, 1)
        c = crime(grid, "c", 2, 7.0, 1)
        store = EventStore([a, b, c])
        assert store.priors(1, 7.0) == (a, b)
        assert store.priors(1, 5.0) == ()

    def test_unknown_series(self):
        store = store_from_cells(small_grid(), {1: [0, 1]})
        with pytest.raises(KeyError):
            store.series_events(9)

    def test_duplicate_ids_rejected_on_construction(self):
        grid = small_grid()
        with pytest.raises(ValueError):
            EventStore([crime(grid, "x", 0, 1.0, 1), crime(grid, "x", 1, 2.0, 1)])


class TestSplit:
    def test_five_crime_series(self):
        store = store_from_cells(small_grid(), {1: [0, 1, 2, 3, 4]})
        split = split_train_test(store)
        assert len(split.train.series_events(1)) == 4
        assert len(split.test_cases) == 1
        assert split.test_cases[0].crime.id == "s1c4"

    def test_one_case_per_series(self):
        cells = {p: [0, 1, 2] for p in range(1, 56)}
        split = split_train_test(store_from_cells(small_grid(), cells))
        assert len(split.test_cases) == 55

    def test_single_crime_series_stays_in_train(self):
        store = store_from_cells(small_grid(), {1: [0], 2: [1, 2]})
        split = split_train_test(store)
        assert split.skipped_series == (1,)
        assert len(split.test_cases) == 1
        assert len(split.train.series_events(1)) == 1

    def test_merge_is_identity(self):
        store = store_from_cells(
            small_grid(), {1: [0, 1, 2], 2: [3, 4]}, singles=[(5, 0.5), (6, 9.0)]
        )
        assert merge(split_train_test(store)) == store

    def test_validation_protocol_mirrors_test(self):
        # splitting the training store again reserves the second-to-last crime
        store = store_from_cells(small_grid(), {1: [0, 1, 2, 3]})
        split = split_train_test(store)
        vsplit = split_train_test(split.train)
        assert vsplit.test_cases[0].crime.id == "s1c2"


class TestPredictionTime:
    def test_max_plus_one(self):
        grid = small_grid()
        prefix = [crime(grid, "a", 0, 10.0, 1), crime(grid, "b", 1, 12.5, 1)]
        assert prediction_time(prefix) == 13.5

    def test_single_prior(self):
        grid = small_grid()
        assert prediction_time([crime(grid, "a", 0, 0.0, 1)]) == 1.0

    def test_order_invariant(self):
        grid = small_grid()
        prefix = [crime(grid, "b", 1, 12.5, 1), crime(grid, "a", 0, 10.0, 1)]
        assert prediction_time(prefix) == 13.5

    def test_empty_prefix(self):
        with pytest.raises(ValueError):
            prediction_time([])


class TestFiles:
    def test_csv_roundtrip(self, tmp_path):
        grid = small_grid()
        store = store_from_cells(grid, {1: [0, 1, 2], 2: [3, 4]}, singles=[(5, 0.25)])
        path = tmp_path / "events.csv"
        write_events_csv(store, str(path))
        result = read_events_csv(str(path), grid)
        assert not result.rejected
        assert result.store == store

    def test_missing_column(self, tmp_path):
        path = tmp_path / "events.csv"
        path.write_text("id,series,lat,lon\n")
        with pytest.raises(ValueError):
            read_events_csv(str(path), small_grid())

    def test_rejection_report_jsonl(self, tmp_path):
        path = tmp_path / "rejections.jsonl"
        write_rejections([{"row": 3, "reason": "bad"}], str(path))
        lines = path.read_text().strip().splitlines()
        assert json.loads(lines[0]) == {"row": 3, "reason": "bad"}
