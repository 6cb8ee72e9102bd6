"""Check-in datasets: parsing, filtering, splitting, windowing, and synthesis.

Input formats
-------------
``gowalla-tsv``
    One record per line, tab-separated:
    ``user <TAB> ISO-8601 timestamp <TAB> latitude <TAB> longitude <TAB> location_id``
``generic-csv``
    Same five fields in the same order, comma-separated, with a mandatory
    header row.

Dataset directory layout (written by :func:`save_dataset`)
-----------------------------------------------------------
``users.txt`` / ``pois.txt``
    One raw id per line; the line number is the dense index.
``coords.tsv``
    ``lat <TAB> lon`` per line, aligned with ``pois.txt``.
``freq.txt``
    One training visit count per line, aligned with ``pois.txt``.
``train_windows.txt`` / ``test_windows.txt``
    One window per line as space-separated integers:
    ``user m p_1..p_m s_1..s_m lp_1..lp_m ls_1..ls_m``
    where ``m`` is the number of input steps, ``p``/``s`` the input POI and
    hour-of-week slot indices, and ``lp``/``ls`` the per-step next-POI and
    next-slot labels.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

N_TIME_SLOTS = 168  # one slot per hour of the week

_BASE_SYNTH_TIME = datetime(2012, 1, 2, 0, 0, 0, tzinfo=timezone.utc)  # a Monday


class CheckinFormatError(ValueError):
    """The input stream is mostly unparseable under the declared format."""


class EmptyDatasetError(ValueError):
    """Filtering left no usable users or records."""


@dataclass(frozen=True)
class CheckIn:
    """A single visit record: user, POI, UTC timestamp, and coordinates."""

    user: str
    poi: str
    timestamp: datetime
    lat: float
    lon: float

    def __post_init__(self):
        if not self.user or not self.poi:
            raise ValueError("user and poi ids must be non-empty")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")
        if not isinstance(self.timestamp, datetime):
            raise ValueError("timestamp must be a datetime")


@dataclass(frozen=True)
class Trajectory:
    """A user's visits in temporal order.

    ``items`` holds ``(poi_index, slot, timestamp, lat, lon)`` tuples sorted
    by timestamp.
    """

    user: int
    items: tuple

    def __post_init__(self):
        times = [it[2] for it in self.items]
        if any(a > b for a, b in zip(times, times[1:])):
            raise ValueError("trajectory items must be sorted by timestamp")


@dataclass(frozen=True)
class SequenceWindow:
    """A fixed-span slice of one user's trajectory with one-step-ahead labels.

    ``label_pois[k]`` / ``label_slots[k]`` describe the visit immediately
    following ``input_pois[k]`` in the user's timeline.
    """

    user: int
    input_pois: tuple
    input_slots: tuple
    label_pois: tuple
    label_slots: tuple

    def __post_init__(self):
        m = len(self.input_pois)
        if m < 1:
            raise ValueError("window must contain at least one input step")
        if not (len(self.input_slots) == len(self.label_pois) == len(self.label_slots) == m):
            raise ValueError("window field lengths disagree")

    @property
    def n(self) -> int:
        return len(self.input_pois)


@dataclass
class FrequencyTable:
    """Per-POI visit counts over the training portion."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1:
            raise ValueError("counts must be one-dimensional")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @property
    def freq_max(self) -> int:
        return int(self.counts.max()) if self.counts.size else 0

    def __getitem__(self, poi: int) -> int:
        return int(self.counts[poi])


@dataclass
class Dataset:
    """Vocabularies, coordinates, training frequencies, and windows."""

    user_ids: list
    poi_ids: list
    coords: np.ndarray  # (n_pois, 2) latitude/longitude
    freq: FrequencyTable
    train_windows: list
    test_windows: list
    user_index: dict = field(init=False, repr=False)
    poi_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.poi_index = {p: i for i, p in enumerate(self.poi_ids)}
        if len(self.user_index) != len(self.user_ids):
            raise ValueError("duplicate user ids")
        if len(self.poi_index) != len(self.poi_ids):
            raise ValueError("duplicate poi ids")
        if self.coords.shape != (len(self.poi_ids), 2):
            raise ValueError("coords must be (n_pois, 2)")
        if len(self.freq.counts) != len(self.poi_ids):
            raise ValueError("frequency table size must match poi vocabulary")

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_pois(self) -> int:
        return len(self.poi_ids)

    def user_digest(self) -> str:
        return _digest_lines(self.user_ids)

    def poi_digest(self) -> str:
        return _digest_lines(self.poi_ids)


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the seeded synthetic check-in generator."""

    n_users: int = 50
    n_pois: int = 300
    zipf_exponent: float = 1.2
    checkins_per_user: int = 200
    n_clusters: int = 5
    cluster_spread_km: float = 2.0
    seed: int = 7

    def __post_init__(self):
        for name in ("n_users", "n_pois", "checkins_per_user", "n_clusters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.zipf_exponent <= 0:
            raise ValueError("zipf_exponent must be > 0")
        if self.cluster_spread_km <= 0:
            raise ValueError("cluster_spread_km must be > 0")
        if self.n_pois < self.n_clusters:
            raise ValueError("n_pois must be >= n_clusters")


def _digest_lines(ids) -> str:
    h = hashlib.sha256()
    for s in ids:
        h.update(str(s).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def time_slot_of(timestamp: datetime) -> int:
    """Hour-of-week slot in [0, 167], Monday 00:xx UTC being slot 0."""
    if timestamp.tzinfo is None:
        timestamp = timestamp.replace(tzinfo=timezone.utc)
    ts = timestamp.astimezone(timezone.utc)
    return ts.weekday() * 24 + ts.hour


def _parse_timestamp(raw: str) -> datetime:
    s = raw.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _record_from_fields(fields) -> CheckIn:
    if len(fields) != 5:
        raise ValueError(f"expected 5 fields, got {len(fields)}")
    user, ts_raw, lat_raw, lon_raw, poi = (f.strip() for f in fields)
    ts = _parse_timestamp(ts_raw)
    return CheckIn(user=user, poi=poi, timestamp=ts, lat=float(lat_raw), lon=float(lon_raw))


def parse_checkins(source, fmt: str = "gowalla-tsv"):
    """Parse a check-in stream into records.

    ``source`` may be a path, an open text file, or any iterable of lines.
    Returns ``(checkins, rejects)`` where ``rejects`` is a list of
    ``(line_number, reason)`` tuples for malformed lines. Raises
    :class:`CheckinFormatError` when more than half of the non-empty lines
    are rejected, which almost always means the declared format is wrong.
    """
    if fmt not in ("gowalla-tsv", "generic-csv"):
        raise ValueError(f"unknown format {fmt!r}")
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return parse_checkins(fh, fmt)

    checkins, rejects = [], []
    if fmt == "generic-csv":
        reader = csv.reader(source)
        header_seen = False
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if not header_seen:
                header_seen = True  # header row is mandatory and never parsed
                continue
            try:
                checkins.append(_record_from_fields(row))
            except (ValueError, OverflowError) as exc:
                rejects.append((lineno, str(exc)))
    else:
        for lineno, line in enumerate(source, start=1):
            if not line.strip():
                continue
            try:
                checkins.append(_record_from_fields(line.rstrip("\n").split("\t")))
            except (ValueError, OverflowError) as exc:
                rejects.append((lineno, str(exc)))

    total = len(checkins) + len(rejects)
    if total and len(rejects) / total > 0.5:
        raise CheckinFormatError(
            f"{len(rejects)} of {total} lines rejected; input does not look like {fmt}"
        )
    return checkins, rejects


def _train_count(n: int, train_frac: float) -> int:
    # ceil(train_frac * n) with float noise at exact products rounded away
    return min(n, math.ceil(round(train_frac * n, 9)))


def _segment_windows(user: int, items, window_len: int):
    """Chop one trajectory into non-overlapping input spans with shifted labels.

    Each span of ``window_len`` records becomes one window whose label at
    step k is the record following input k. The final span is shorter when
    the trajectory does not divide evenly; spans with fewer than 2 records
    cannot form an input/label pair and are dropped.
    """
    windows = []
    m = len(items)
    s = 0
    while s < m:
        e = min(s + window_len, m)
        if e < m:
            inputs, labels = items[s:e], items[s + 1 : e + 1]
        else:
            if m - s < 2:
                break
            inputs, labels = items[s : m - 1], items[s + 1 : m]
        windows.append(
            SequenceWindow(
                user=user,
                input_pois=tuple(it[0] for it in inputs),
                input_slots=tuple(it[1] for it in inputs),
                label_pois=tuple(it[0] for it in labels),
                label_slots=tuple(it[1] for it in labels),
            )
        )
        s += window_len
    return windows


def preprocess(
    checkins,
    min_checkins: int = 100,
    train_frac: float = 0.8,
    window_len: int = 20,
) -> Dataset:
    """Filter, split, and window raw check-ins into a :class:`Dataset`.

    Users with fewer than ``min_checkins`` records are removed. Each
    surviving user's records are sorted by time; the first
    ``ceil(train_frac * len)`` go to training and the rest to test. The
    frequency table counts every training-portion record. Vocabularies are
    built over all surviving records so POIs seen only at test time keep a
    dense index (with frequency 0).
    """
    if not checkins:
        raise ValueError("no check-ins to preprocess")
    if min_checkins < 1:
        raise ValueError("min_checkins must be >= 1")
    if not 0.0 < train_frac <= 1.0:
        raise ValueError("train_frac must be in (0, 1]")
    if window_len < 1:
        raise ValueError("window_len must be >= 1")

    by_user: dict = {}
    for rec in checkins:
        by_user.setdefault(rec.user, []).append(rec)
    kept = {u: recs for u, recs in by_user.items() if len(recs) >= min_checkins}
    if not kept:
        raise EmptyDatasetError(
            f"no user has >= {min_checkins} check-ins ({len(by_user)} users seen)"
        )

    user_ids = list(kept.keys())
    poi_ids, poi_index, coord_rows = [], {}, []
    for recs in kept.values():
        for rec in recs:
            if rec.poi not in poi_index:
                poi_index[rec.poi] = len(poi_ids)
                poi_ids.append(rec.poi)
                coord_rows.append((rec.lat, rec.lon))
    coords = np.array(coord_rows, dtype=np.float64)

    freq_counts = np.zeros(len(poi_ids), dtype=np.int64)
    train_windows, test_windows = [], []
    for uidx, (user, recs) in enumerate(kept.items()):
        recs = sorted(recs, key=lambda r: r.timestamp)
        items = [
            (poi_index[r.poi], time_slot_of(r.timestamp), r.timestamp, r.lat, r.lon)
            for r in recs
        ]
        traj = Trajectory(user=uidx, items=tuple(items))
        n_train = _train_count(len(items), train_frac)
        for it in traj.items[:n_train]:
            freq_counts[it[0]] += 1
        train_windows.extend(_segment_windows(uidx, traj.items[:n_train], window_len))
        test_windows.extend(_segment_windows(uidx, traj.items[n_train:], window_len))

    return Dataset(
        user_ids=user_ids,
        poi_ids=poi_ids,
        coords=coords,
        freq=FrequencyTable(freq_counts),
        train_windows=train_windows,
        test_windows=test_windows,
    )


def build_frequency_table(windows, n_pois: int) -> FrequencyTable:
    """Count each POI's appearances as an input item across windows."""
    if not windows:
        raise ValueError("no windows given")
    counts = np.zeros(n_pois, dtype=np.int64)
    for w in windows:
        for p in w.input_pois:
            counts[p] += 1
    return FrequencyTable(counts)


def generate_synthetic(cfg: SyntheticConfig):
    """Produce a seeded synthetic check-in log with a long-tailed POI mix.

    POI popularity follows a Zipf law over shuffled ranks; POIs sit in
    Gaussian spatial clusters. Each user mixes draws from the global
    popularity distribution with a small personal pool of tail POIs, and
    timestamps advance by 1 to 6 hours per visit. Output is fully
    determined by ``cfg.seed``.
    """
    rng = np.random.default_rng(cfg.seed)

    center_lat = rng.uniform(33.0, 47.0, cfg.n_clusters)
    center_lon = rng.uniform(-115.0, -85.0, cfg.n_clusters)
    cluster_of = rng.integers(0, cfg.n_clusters, cfg.n_pois)
    lat_std = cfg.cluster_spread_km / 111.195
    lon_std = cfg.cluster_spread_km / (
        111.195 * np.cos(np.radians(center_lat[cluster_of]))
    )
    poi_lat = np.clip(center_lat[cluster_of] + rng.normal(0.0, lat_std, cfg.n_pois), -89.9, 89.9)
    poi_lon = np.clip(center_lon[cluster_of] + rng.normal(0.0, lon_std, cfg.n_pois), -179.9, 179.9)

    ranks = rng.permutation(cfg.n_pois)
    weights = (ranks + 1.0) ** (-cfg.zipf_exponent)
    probs = weights / weights.sum()
    tail_candidates = np.nonzero(ranks >= cfg.n_pois // 2)[0]
    if tail_candidates.size == 0:
        tail_candidates = np.arange(cfg.n_pois)
    pool_size = min(5, tail_candidates.size)

    checkins = []
    for u in range(cfg.n_users):
        pool = rng.choice(tail_candidates, size=pool_size, replace=False)
        t = _BASE_SYNTH_TIME + timedelta(hours=int(rng.integers(0, N_TIME_SLOTS)))
        for _ in range(cfg.checkins_per_user):
            if rng.random() < 0.3:
                p = int(pool[rng.integers(0, pool_size)])
            else:
                p = int(rng.choice(cfg.n_pois, p=probs))
            checkins.append(
                CheckIn(
                    user=f"u{u:04d}",
                    poi=f"p{p:05d}",
                    timestamp=t,
                    lat=float(poi_lat[p]),
                    lon=float(poi_lon[p]),
                )
            )
            t = t + timedelta(seconds=int(rng.integers(3600, 21601)))
    return checkins


def format_checkin_line(rec: CheckIn) -> str:
    """Render one record as a gowalla-tsv line."""
    ts = rec.timestamp.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return f"{rec.user}\t{ts}\t{rec.lat:.6f}\t{rec.lon:.6f}\t{rec.poi}"


def write_checkins(checkins, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in checkins:
            fh.write(format_checkin_line(rec) + "\n")


def _window_to_ints(w: SequenceWindow):
    return [w.user, w.n, *w.input_pois, *w.input_slots, *w.label_pois, *w.label_slots]


def _window_from_ints(vals) -> SequenceWindow:
    user, m = vals[0], vals[1]
    body = vals[2:]
    if len(body) != 4 * m:
        raise ValueError("malformed window line")
    return SequenceWindow(
        user=user,
        input_pois=tuple(body[0:m]),
        input_slots=tuple(body[m : 2 * m]),
        label_pois=tuple(body[2 * m : 3 * m]),
        label_slots=tuple(body[3 * m : 4 * m]),
    )


def save_dataset(dataset: Dataset, out_dir) -> None:
    """Persist a dataset to the documented directory layout."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "users.txt").write_text("\n".join(dataset.user_ids) + "\n", encoding="utf-8")
    (out / "pois.txt").write_text("\n".join(dataset.poi_ids) + "\n", encoding="utf-8")
    with open(out / "coords.tsv", "w", encoding="utf-8") as fh:
        for lat, lon in dataset.coords:
            fh.write(f"{float(lat)!r}\t{float(lon)!r}\n")
    (out / "freq.txt").write_text(
        "\n".join(str(int(c)) for c in dataset.freq.counts) + "\n", encoding="utf-8"
    )
    for name, windows in (("train_windows.txt", dataset.train_windows),
                          ("test_windows.txt", dataset.test_windows)):
        with open(out / name, "w", encoding="utf-8") as fh:
            for w in windows:
                fh.write(" ".join(str(v) for v in _window_to_ints(w)) + "\n")


def load_dataset(in_dir) -> Dataset:
    """Load a dataset previously written by :func:`save_dataset`."""
    src = Path(in_dir)
    if not src.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {src}")
    user_ids = (src / "users.txt").read_text(encoding="utf-8").splitlines()
    poi_ids = (src / "pois.txt").read_text(encoding="utf-8").splitlines()
    coords = np.array(
        [
            [float(x) for x in line.split("\t")]
            for line in (src / "coords.tsv").read_text(encoding="utf-8").splitlines()
        ],
        dtype=np.float64,
    )
    counts = np.array(
        [int(x) for x in (src / "freq.txt").read_text(encoding="utf-8").splitlines()],
        dtype=np.int64,
    )

    def read_windows(name):
        out = []
        for line in (src / name).read_text(encoding="utf-8").splitlines():
            if line.strip():
                out.append(_window_from_ints([int(v) for v in line.split()]))
        return out

    return Dataset(
        user_ids=user_ids,
        poi_ids=poi_ids,
        coords=coords,
        freq=FrequencyTable(counts),
        train_windows=read_windows("train_windows.txt"),
        test_windows=read_windows("test_windows.txt"),
    )
