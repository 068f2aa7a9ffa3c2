"""Trip-record ingestion and demand tensors.

Raw trip files are delimited text with a header row naming at least:
Trip ID, Start Time, End Time, Trip Distance, Trip Duration, Start Region,
End Region, Vehicle Operator. Region fields may be an external region code,
a bare dense index, or a `lon, lat` coordinate pair that gets snapped to the
nearest centroid. Timestamps accept `M/D/YYYY H:MM[:SS]` and ISO-8601.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import date, datetime

import numpy as np

from .util import as_rng, read_tijc, write_tijc
from .world import RegionMap

REQUIRED_COLUMNS = (
    "trip id", "start time", "end time", "trip distance",
    "trip duration", "start region", "end region", "vehicle operator",
)

_TIME_FORMATS = ("%m/%d/%Y %H:%M:%S", "%m/%d/%Y %H:%M")


@dataclass
class TripRecord:
    trip_id: str
    start_time: datetime
    end_time: datetime
    distance_m: float
    duration_s: float
    start_region: int
    end_region: int
    operator: str


@dataclass
class ParseResult:
    records: list[TripRecord]
    skipped: int


@dataclass
class IntervalDemand:
    """One interval's slice of a demand tensor."""

    counts: np.ndarray                                   # (N, N)
    trips: list                                          # [(i, j, meters, seconds)]


@dataclass
class DemandTensor:
    """Requested trips per (interval, origin, destination) plus their attributes.

    `counts[t, i, j]` always equals `len(pool[(t, i, j)])`; pool entries are
    (distance meters, duration seconds) pairs in arrival order.
    """

    counts: np.ndarray                                   # (T, N, N) int64
    pool: dict = field(default_factory=dict)             # (t,i,j) -> [(m, s), ...]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 3 or self.counts.shape[1] != self.counts.shape[2]:
            raise ValueError("counts must have shape (T, N, N)")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def intervals(self) -> int:
        return self.counts.shape[0]

    @property
    def regions(self) -> int:
        return self.counts.shape[1]

    def total(self) -> int:
        return int(self.counts.sum())

    def interval_total(self, t: int) -> int:
        return int(self.counts[t].sum())

    def origin_totals(self) -> np.ndarray:
        """(T, N) requested trips by interval and origin region."""
        return self.counts.sum(axis=2)

    def trips_at(self, t: int) -> list[tuple[int, int, float, float]]:
        """All trips of interval t as (origin, dest, meters, seconds), in
        deterministic (origin, dest, pool) order."""
        out = []
        n = self.regions
        for i in range(n):
            for j in range(n):
                c = int(self.counts[t, i, j])
                if c == 0:
                    continue
                attrs = self.pool.get((t, i, j), [])
                if len(attrs) != c:
                    raise ValueError(f"pool inconsistent with counts at ({t},{i},{j})")
                for dist_m, dur_s in attrs:
                    out.append((i, j, float(dist_m), float(dur_s)))
        return out

    def interval(self, t: int) -> IntervalDemand:
        return IntervalDemand(counts=self.counts[t], trips=self.trips_at(t))

    def check_consistent(self) -> None:
        for (t, i, j), attrs in self.pool.items():
            if int(self.counts[t, i, j]) != len(attrs):
                raise ValueError(f"pool inconsistent with counts at ({t},{i},{j})")
        if int(self.counts.sum()) != sum(len(v) for v in self.pool.values()):
            raise ValueError("pool holds cells absent from counts")

    def copy(self) -> "DemandTensor":
        return DemandTensor(self.counts.copy(),
                            {k: list(v) for k, v in self.pool.items()})

    def save_counts(self, path) -> None:
        write_tijc(path, self.counts)

    @classmethod
    def load_counts(cls, path, intervals=None, regions=None) -> "DemandTensor":
        """Load a counts-only fixture; trips get zero distance/duration."""
        counts = read_tijc(path, intervals=intervals, regions=regions)
        pool = {}
        for t, i, j in zip(*np.nonzero(counts)):
            pool[(int(t), int(i), int(j))] = [(0.0, 0.0)] * int(counts[t, i, j])
        return cls(counts, pool)

    @classmethod
    def zeros(cls, intervals: int, regions: int) -> "DemandTensor":
        return cls(np.zeros((intervals, regions, regions), dtype=np.int64), {})


def _normalize_header(name: str) -> str:
    # drop unit suffixes like "(m)" / "(s)" and squeeze whitespace
    base = name.split("(")[0]
    return " ".join(base.lower().split())


def _parse_timestamp(text: str) -> datetime:
    text = text.strip()
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        pass
    for fmt in _TIME_FORMATS:
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise ValueError(f"unparseable timestamp {text!r}")


def _parse_number(text: str) -> float:
    v = float(text.strip().replace(",", ""))
    if not np.isfinite(v):
        raise ValueError("non-finite number")
    return v


def _parse_region(text: str, region_map: RegionMap) -> int:
    """Map a raw region field to a dense index.

    Tries the external id table first, then a bare dense index, then a
    coordinate pair written `lon, lat` (the order used in the trip data).
    """
    raw = text.strip()
    by_id = region_map.index_for_id(raw)
    if by_id is not None:
        return by_id
    parts = [p for p in raw.replace(",", " ").split() if p]
    if len(parts) == 1:
        idx = int(parts[0])
        if not 0 <= idx < region_map.region_count:
            raise ValueError(f"region index {idx} out of range")
        return idx
    if len(parts) == 2:
        lon, lat = float(parts[0]), float(parts[1])
        return region_map.nearest_region(lat, lon)
    raise ValueError(f"unparseable region field {text!r}")


def parse_trips(source, region_map: RegionMap) -> ParseResult:
    """Parse a delimited trip file (path, text, or binary stream).

    Rows that fail to parse or violate basic sanity (end before start,
    negative distance or duration) are skipped and counted. A header row
    missing any required column is a hard error.
    """
    if isinstance(source, (str, bytes)) and not isinstance(source, bytes):
        fh = open(source, "r", newline="")
        close = True
    elif isinstance(source, bytes):
        fh = io.StringIO(source.decode("utf-8"))
        close = False
    elif hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        fh = io.StringIO(data)
        close = False
    else:
        raise TypeError("source must be a path, bytes, or a readable stream")
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty trip file: missing header row")
        cols = {_normalize_header(h): k for k, h in enumerate(header)}
        missing = [c for c in REQUIRED_COLUMNS if c not in cols]
        if missing:
            raise ValueError(f"missing required columns: {', '.join(missing)}")

        records: list[TripRecord] = []
        skipped = 0
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            try:
                start = _parse_timestamp(row[cols["start time"]])
                end = _parse_timestamp(row[cols["end time"]])
                dist = _parse_number(row[cols["trip distance"]])
                dur = _parse_number(row[cols["trip duration"]])
                origin = _parse_region(row[cols["start region"]], region_map)
                dest = _parse_region(row[cols["end region"]], region_map)
                if end < start or dist < 0 or dur < 0:
                    raise ValueError("inconsistent trip row")
                records.append(TripRecord(
                    trip_id=row[cols["trip id"]].strip(),
                    start_time=start, end_time=end,
                    distance_m=dist, duration_s=dur,
                    start_region=origin, end_region=dest,
                    operator=row[cols["vehicle operator"]].strip(),
                ))
            except (ValueError, IndexError):
                skipped += 1
        return ParseResult(records=records, skipped=skipped)
    finally:
        if close:
            fh.close()


def aggregate_demand(trips, region_map: RegionMap, intervals: int,
                     day: date) -> DemandTensor:
    """Bucket one day of trips into a (T, N, N) demand tensor.

    A trip starting at hour-of-day h (fractional) lands in interval
    floor(h * T / 24). Trips outside `day` violate the precondition and
    raise.
    """
    n = region_map.region_count
    tensor = DemandTensor.zeros(intervals, n)
    for trip in trips:
        if trip.start_time.date() != day:
            raise ValueError(f"trip {trip.trip_id} is not within {day}")
        h = (trip.start_time.hour + trip.start_time.minute / 60.0
             + trip.start_time.second / 3600.0)
        t = min(int(h * intervals / 24.0), intervals - 1)
        i, j = trip.start_region, trip.end_region
        tensor.counts[t, i, j] += 1
        tensor.pool.setdefault((t, i, j), []).append(
            (float(trip.distance_m), float(trip.duration_s)))
    return tensor


def cumulative_net_inflow(tensor: DemandTensor) -> np.ndarray:
    """(T, N) running sum through interval t of trip inflow minus outflow."""
    inflow = tensor.counts.sum(axis=1)    # (T, N): arrivals into each region
    outflow = tensor.counts.sum(axis=2)   # (T, N): departures from each region
    return np.cumsum(inflow - outflow, axis=0)


@dataclass
class BackgroundResult:
    tensor: DemandTensor
    added_trips: int
    filled_cells: list[tuple[int, int]]
    unmatched_cells: list[tuple[int, int]]


def _region_deciles(history) -> np.ndarray:
    """Decile rank (0..9) of each region by total origin demand over history."""
    totals = np.zeros(history[0].regions, dtype=float)
    for tensor in history:
        totals += tensor.origin_totals().sum(axis=0)
    n = totals.size
    rank = np.empty(n, dtype=np.int64)
    order = np.lexsort((np.arange(n), totals))   # ascending demand, index ties
    rank[order] = np.arange(n)
    return np.minimum((rank * 10) // max(n, 1), 9)


def estimate_background_demand(tensor: DemandTensor, flows: np.ndarray,
                               history, seed) -> BackgroundResult:
    """Add latent demand to cells that look supply-starved.

    A region-hour qualifies when its cumulative net inflow is negative AND
    it has zero recorded origin demand. For each such cell a synthetic trip
    count is drawn from the empirical counts of history cells with the same
    hour-of-day and the same region-demand decile; trip attributes and
    destinations are resampled from those cells' recorded trips. Cells whose
    matched class is empty are left unchanged and reported.
    """
    flows = np.asarray(flows)
    if flows.shape != (tensor.intervals, tensor.regions):
        raise ValueError("flows must have shape (T, N)")
    if not history:
        raise ValueError("history must hold at least one tensor")
    for past in history:
        if past.regions != tensor.regions or past.intervals != tensor.intervals:
            raise ValueError("history tensors must match the target shape")

    rng = as_rng(seed)
    deciles = _region_deciles(history)
    t_count, n = tensor.intervals, tensor.regions
    origin = tensor.origin_totals()

    # class key (hour, decile) -> list of cell counts, and pooled trips
    class_counts: dict[tuple[int, int], list[int]] = {}
    class_trips: dict[tuple[int, int], list[tuple[int, float, float]]] = {}
    for past in history:
        past_origin = past.origin_totals()
        for t in range(t_count):
            for i in range(n):
                key = (t, int(deciles[i]))
                class_counts.setdefault(key, []).append(int(past_origin[t, i]))
                for j in range(n):
                    c = int(past.counts[t, i, j])
                    if c:
                        for dist_m, dur_s in past.pool.get((t, i, j), [(0.0, 0.0)] * c):
                            class_trips.setdefault(key, []).append((j, dist_m, dur_s))

    out = tensor.copy()
    added = 0
    filled: list[tuple[int, int]] = []
    unmatched: list[tuple[int, int]] = []
    for t in range(t_count):
        for i in range(n):
            if flows[t, i] >= 0 or origin[t, i] != 0:
                continue
            key = (t, int(deciles[i]))
            counts_pool = class_counts.get(key, [])
            trips_pool = class_trips.get(key, [])
            if not counts_pool or not trips_pool:
                unmatched.append((t, i))
                continue
            m = int(counts_pool[rng.integers(len(counts_pool))])
            if m <= 0:
                continue
            for _ in range(m):
                j, dist_m, dur_s = trips_pool[rng.integers(len(trips_pool))]
                out.counts[t, i, j] += 1
                out.pool.setdefault((t, i, j), []).append((dist_m, dur_s))
            added += m
            filled.append((t, i))
    return BackgroundResult(tensor=out, added_trips=added,
                            filled_cells=filled, unmatched_cells=unmatched)


def generate_synthetic_demand(region_map: RegionMap, intervals: int, base_rates,
                              surge_spec=(), seed=None) -> DemandTensor:
    """Draw a day of demand from independent Poisson origin-destination cells.

    `base_rates[i][j]` is the hourly request rate; each surge entry
    `((t_start, t_stop), regions, multiplier)` scales the rates of origins in
    `regions` over intervals [t_start, t_stop). Overlapping surges multiply.
    Trip distance is uniform on [200, 8000] meters and duration follows from
    a uniform speed in [2, 5] m/s.
    """
    rates = np.asarray(base_rates, dtype=float)
    n = region_map.region_count
    if rates.shape != (n, n):
        raise ValueError(f"base_rates must be ({n}, {n})")
    if np.any(rates < 0):
        raise ValueError("base_rates must be nonnegative")
    for (t0, t1), regions, mult in surge_spec:
        if mult < 0:
            raise ValueError("surge multipliers must be nonnegative")
        if not 0 <= t0 <= t1 <= intervals:
            raise ValueError("surge interval range out of bounds")

    rng = as_rng(seed)
    tensor = DemandTensor.zeros(intervals, n)
    for t in range(intervals):
        mult = np.ones(n)
        for (t0, t1), regions, m in surge_spec:
            if t0 <= t < t1:
                for r in regions:
                    mult[r] *= m
        lam = rates * mult[:, None]
        draws = rng.poisson(lam)
        for i in range(n):
            for j in range(n):
                c = int(draws[i, j])
                if c == 0:
                    continue
                dist = rng.uniform(200.0, 8000.0, size=c)
                speed = rng.uniform(2.0, 5.0, size=c)
                tensor.counts[t, i, j] = c
                tensor.pool[(t, i, j)] = [
                    (float(d), float(d / s)) for d, s in zip(dist, speed)]
    return tensor
