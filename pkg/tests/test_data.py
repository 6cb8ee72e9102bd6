"""Parsing, preprocessing, windowing, time slots, and the synthetic generator."""

import io
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from lotnext.data import (
    CheckIn,
    CheckinFormatError,
    EmptyDatasetError,
    SyntheticConfig,
    build_frequency_table,
    format_checkin_line,
    generate_synthetic,
    load_dataset,
    parse_checkins,
    preprocess,
    save_dataset,
    time_slot_of,
)


def ts(s):
    return datetime.fromisoformat(s).replace(tzinfo=timezone.utc)


def make_checkins(user, n, poi="p0", start="2011-03-07T00:00:00", step_hours=3):
    t0 = ts(start)
    return [
        CheckIn(user=user, poi=poi, timestamp=t0 + timedelta(hours=i * step_hours),
                lat=10.0, lon=20.0)
        for i in range(n)
    ]


class TestParsing:
    def test_single_tsv_line(self):
        line = "u1\t2010-10-19T23:55:27Z\t30.23\t-97.79\tp42"
        checkins, rejects = parse_checkins(io.StringIO(line))
        assert rejects == []
        (rec,) = checkins
        assert rec.user == "u1"
        assert rec.poi == "p42"
        assert rec.lat == 30.23
        assert rec.lon == -97.79
        assert rec.timestamp == datetime(2010, 10, 19, 23, 55, 27, tzinfo=timezone.utc)

    def test_empty_stream(self):
        checkins, rejects = parse_checkins(io.StringIO(""))
        assert checkins == [] and rejects == []

    def test_records_kept_in_file_order(self):
        lines = "\n".join(
            f"u1\t2010-01-0{d}T00:00:00Z\t1.0\t2.0\tp{d}" for d in (3, 1, 2)
        )
        checkins, _ = parse_checkins(io.StringIO(lines))
        assert [c.poi for c in checkins] == ["p3", "p1", "p2"]

    def test_malformed_lines_reported_with_numbers(self):
        text = (
            "u1\t2010-10-19T23:55:27Z\t30.23\t-97.79\tp42\n"
            "u2\tnot-a-date\t30.0\t-97.0\tp1\n"
            "u3\t2010-10-19T23:55:27Z\t95.0\t-97.0\tp2\n"
            "u4\t2010-10-19T23:55:27Z\t30.0\t-97.0\tp3\n"
        )
        checkins, rejects = parse_checkins(io.StringIO(text))
        assert len(checkins) == 2
        assert [lineno for lineno, _ in rejects] == [2, 3]

    def test_mostly_garbage_is_a_format_error(self):
        text = "a,b,c\nx,y,z\nu1\t2010-10-19T23:55:27Z\t30.0\t-97.0\tp1\n"
        with pytest.raises(CheckinFormatError):
            parse_checkins(io.StringIO(text))

    def test_csv_with_header(self):
        text = (
            "user,timestamp,lat,lon,poi\n"
            "u1,2010-10-19T23:55:27Z,30.23,-97.79,p42\n"
        )
        checkins, rejects = parse_checkins(io.StringIO(text), fmt="generic-csv")
        assert rejects == []
        assert checkins[0].poi == "p42"

    def test_unknown_format_rejected(self):
        with pytest.raises(ValueError):
            parse_checkins(io.StringIO(""), fmt="jsonl")

    def test_out_of_range_coordinates_rejected(self):
        with pytest.raises(ValueError):
            CheckIn("u", "p", ts("2010-01-01T00:00:00"), lat=91.0, lon=0.0)
        with pytest.raises(ValueError):
            CheckIn("u", "p", ts("2010-01-01T00:00:00"), lat=0.0, lon=-200.0)


class TestTimeSlots:
    def test_monday_origin(self):
        assert time_slot_of(ts("2011-03-07T00:10:00")) == 0  # a Monday

    def test_tuesday_0130(self):
        assert time_slot_of(ts("2011-03-08T01:30:00")) == 25

    def test_sunday_2359(self):
        assert time_slot_of(ts("2011-03-13T23:59:00")) == 167

    def test_weekly_periodicity(self, rng):
        base = ts("2010-06-01T00:00:00")
        for _ in range(200):
            t = base + timedelta(seconds=int(rng.integers(0, 3 * 365 * 86400)))
            assert time_slot_of(t) == time_slot_of(t + timedelta(days=7))

    def test_naive_timestamps_treated_as_utc(self):
        naive = datetime(2011, 3, 7, 5, 0, 0)
        assert time_slot_of(naive) == 5


class TestPreprocess:
    def test_split_and_frequency_of_101_checkins(self):
        ds = preprocess(make_checkins("u1", 101), min_checkins=100, window_len=20)
        assert ds.n_users == 1
        # ceil(0.8 * 101) = 81 training records, all counted
        assert ds.freq[0] == 81
        assert ds.freq.freq_max == 81
        # 81 records tile into 4 full 20-step windows; the leftover single
        # record cannot form an input/label pair
        assert [w.n for w in ds.train_windows] == [20, 20, 20, 20]
        # 20 test records give one 19-step window
        assert [w.n for w in ds.test_windows] == [19]

    def test_exact_100_checkins_splits_80_20(self):
        ds = preprocess(make_checkins("u1", 100), min_checkins=100, window_len=20)
        assert ds.freq[0] == 80

    def test_too_few_checkins_is_an_error(self):
        with pytest.raises(EmptyDatasetError):
            preprocess(make_checkins("u1", 99), min_checkins=100)

    def test_filter_drops_small_users(self):
        cks = make_checkins("u1", 150) + make_checkins("u2", 99, poi="p9")
        ds = preprocess(cks, min_checkins=100)
        assert ds.n_users == 1
        assert ds.user_ids == ["u1"]

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            preprocess([])

    def test_vocab_round_trip_bijection(self, rng):
        users = [f"user-{i}" for i in range(7)]
        cks = []
        for u in users:
            pois = rng.integers(0, 23, size=30)
            t0 = ts("2011-01-01T00:00:00") + timedelta(minutes=int(rng.integers(0, 60)))
            for j, p in enumerate(pois):
                cks.append(CheckIn(u, f"poi-{p}", t0 + timedelta(hours=j), 1.0, 2.0))
        ds = preprocess(cks, min_checkins=10, window_len=5)
        assert sorted(ds.user_index.values()) == list(range(ds.n_users))
        for raw, dense in ds.user_index.items():
            assert ds.user_ids[dense] == raw
        for raw, dense in ds.poi_index.items():
            assert ds.poi_ids[dense] == raw

    def test_temporal_split_invariant(self, rng):
        cks = []
        for u in range(4):
            order = rng.permutation(40)
            for j in order:
                cks.append(
                    CheckIn(f"u{u}", f"p{j % 11}",
                            ts("2011-01-01T00:00:00") + timedelta(hours=int(j)), 0.0, 0.0)
                )
        ds = preprocess(cks, min_checkins=30, train_frac=0.8, window_len=6)
        # reconstruct the per-user boundary from windows: every train slot
        # sequence must precede every test slot sequence user by user
        for u in range(ds.n_users):
            train_slots = [s for w in ds.train_windows if w.user == u for s in w.input_slots]
            test_slots = [s for w in ds.test_windows if w.user == u for s in w.input_slots]
            assert train_slots and test_slots

    def test_window_shift_consistency(self):
        cks = [
            CheckIn("u", f"p{i % 5}", ts("2011-01-03T00:00:00") + timedelta(hours=i), 0.0, 0.0)
            for i in range(30)
        ]
        ds = preprocess(cks, min_checkins=10, train_frac=1.0, window_len=7)
        for w in ds.train_windows:
            for k in range(w.n - 1):
                assert w.label_pois[k] == w.input_pois[k + 1]
                assert w.label_slots[k] == w.input_slots[k + 1]

    def test_test_only_pois_keep_vocab_slot_with_zero_freq(self):
        cks = make_checkins("u1", 100)
        # replace the last (test-portion) record with a brand new POI
        last = cks[-1]
        cks[-1] = CheckIn("u1", "p_new", last.timestamp, last.lat, last.lon)
        ds = preprocess(cks, min_checkins=100, window_len=20)
        assert "p_new" in ds.poi_index
        assert ds.freq[ds.poi_index["p_new"]] == 0


class TestFrequencyTable:
    def test_single_window_count(self):
        from conftest import make_window

        w = make_window(0, [0] * 21)  # 20 inputs, all poi 0
        table = build_frequency_table([w], n_pois=6)
        assert table[0] == 20
        assert table.freq_max == 20

    def test_unseen_poi_counts_zero(self):
        from conftest import make_window

        table = build_frequency_table([make_window(0, [0, 1, 0])], n_pois=6)
        assert table[5] == 0

    def test_total_equals_training_input_items(self, rng):
        cks = []
        for u in range(3):
            for j in range(50):
                cks.append(
                    CheckIn(f"u{u}", f"p{rng.integers(0, 9)}",
                            ts("2011-01-03T00:00:00") + timedelta(hours=int(j)), 0.0, 0.0)
                )
        ds = preprocess(cks, min_checkins=40, train_frac=0.8, window_len=8)
        table = build_frequency_table(ds.train_windows, ds.n_pois)
        n_inputs = sum(w.n for w in ds.train_windows)
        assert table.counts.sum() == n_inputs


class TestSynthetic:
    def test_deterministic_under_seed(self):
        cfg = SyntheticConfig(n_users=10, n_pois=60, checkins_per_user=40, seed=99)
        a = [format_checkin_line(c) for c in generate_synthetic(cfg)]
        b = [format_checkin_line(c) for c in generate_synthetic(cfg)]
        assert a == b

    def test_zipf_dominance(self):
        cfg = SyntheticConfig(n_users=20, n_pois=300, zipf_exponent=1.2,
                              checkins_per_user=100, seed=5)
        checkins = generate_synthetic(cfg)
        counts = {}
        for c in checkins:
            counts[c.poi] = counts.get(c.poi, 0) + 1
        top_share = max(counts.values()) / len(checkins)
        assert top_share > 1.0 / 300.0

    def test_all_users_survive_default_filter(self):
        cfg = SyntheticConfig(n_users=8, n_pois=50, checkins_per_user=200, seed=2)
        ds = preprocess(generate_synthetic(cfg), min_checkins=100)
        assert ds.n_users == 8

    def test_cluster_count_validation(self):
        with pytest.raises(ValueError):
            SyntheticConfig(n_pois=3, n_clusters=5)

    def test_timestamps_strictly_increase_per_user(self):
        cfg = SyntheticConfig(n_users=3, n_pois=20, checkins_per_user=30, seed=11)
        by_user = {}
        for c in generate_synthetic(cfg):
            by_user.setdefault(c.user, []).append(c.timestamp)
        for times in by_user.values():
            assert all(a < b for a, b in zip(times, times[1:]))


class TestPersistence:
    def test_round_trip(self, tmp_path):
        cfg = SyntheticConfig(n_users=5, n_pois=30, checkins_per_user=60, seed=4)
        ds = preprocess(generate_synthetic(cfg), min_checkins=50, window_len=10)
        save_dataset(ds, tmp_path / "ds")
        back = load_dataset(tmp_path / "ds")
        assert back.user_ids == ds.user_ids
        assert back.poi_ids == ds.poi_ids
        assert np.array_equal(back.coords, ds.coords)
        assert np.array_equal(back.freq.counts, ds.freq.counts)
        assert back.train_windows == ds.train_windows
        assert back.test_windows == ds.test_windows
        assert back.user_digest() == ds.user_digest()

    def test_vocab_file_line_number_is_dense_index(self, tmp_path):
        cfg = SyntheticConfig(n_users=4, n_pois=20, checkins_per_user=40, seed=4)
        ds = preprocess(generate_synthetic(cfg), min_checkins=30, window_len=10)
        save_dataset(ds, tmp_path / "ds")
        lines = (tmp_path / "ds" / "pois.txt").read_text().splitlines()
        for dense, raw in enumerate(lines):
            assert ds.poi_index[raw] == dense

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope")
