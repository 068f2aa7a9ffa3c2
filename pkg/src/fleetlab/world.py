"""Region geometry and static world configuration.

A city is a set of regions identified by dense 0-based indices. Geometry is
reduced to centroid coordinates: distances are great-circle miles between
centroids, and "nearby" is realized as k-nearest-by-centroid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_MILES = 3958.7613
METERS_PER_MILE = 1609.344


def haversine_miles(lat1, lon1, lat2, lon2):
    """Great-circle distance in miles between (lat, lon) points in degrees."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=float))
                              for x in (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return EARTH_RADIUS_MILES * 2.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass(frozen=True)
class RegionMap:
    """Immutable region geometry: centroids, pairwise miles, neighbor order.

    `neighbor_order[i]` lists every other region sorted by ascending distance
    from i, ties broken by the lower region index. `neighbor_k` is the
    configured default neighbor count; any k up to N-1 can be queried.
    """

    centroids: np.ndarray                 # (N, 2) latitude, longitude degrees
    distance: np.ndarray                  # (N, N) miles
    neighbor_order: np.ndarray            # (N, N-1) region indices
    neighbor_k: int = 8
    region_ids: tuple[str, ...] | None = None
    duplicate_pairs: int = 0              # coincident-centroid pairs found at build

    @property
    def region_count(self) -> int:
        return self.centroids.shape[0]

    def neighbors(self, region: int, k: int | None = None) -> np.ndarray:
        """First min(k, N-1) nearest regions to `region` (never includes it)."""
        n = self.region_count
        if not 0 <= region < n:
            raise IndexError(f"region {region} out of range [0, {n})")
        if k is None:
            k = self.neighbor_k
        if k < 0:
            raise ValueError("k must be nonnegative")
        return self.neighbor_order[region, : min(k, n - 1)].copy()

    def nearest_region(self, lat: float, lon: float) -> int:
        """Index of the centroid closest to (lat, lon); ties to the lower index."""
        d = haversine_miles(lat, lon, self.centroids[:, 0], self.centroids[:, 1])
        return int(np.argmin(d))

    def index_for_id(self, external_id: str) -> int | None:
        """Dense index for an external region code, when ids were provided."""
        if self.region_ids is None:
            return None
        try:
            return self.region_ids.index(str(external_id).strip())
        except ValueError:
            return None


def build_region_map(centroids, neighbor_k: int = 8, region_ids=None) -> RegionMap:
    """Build a RegionMap from (lat, lon) centroids.

    Coincident centroids are allowed (distance 0) and counted in
    `duplicate_pairs`; out-of-range coordinates are rejected.
    """
    pts = np.asarray(centroids, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
        raise ValueError("centroids must be a nonempty list of (lat, lon) pairs")
    if not np.all(np.isfinite(pts)):
        raise ValueError("centroid coordinates must be finite")
    if np.any(np.abs(pts[:, 0]) > 90.0) or np.any(np.abs(pts[:, 1]) > 180.0):
        raise ValueError("latitude must be in [-90, 90], longitude in [-180, 180]")
    if neighbor_k < 0:
        raise ValueError("neighbor_k must be nonnegative")
    n = pts.shape[0]
    dist = haversine_miles(pts[:, 0][:, None], pts[:, 1][:, None],
                           pts[:, 0][None, :], pts[:, 1][None, :])
    # enforce exact symmetry and a zero diagonal against rounding noise
    dist = (dist + dist.T) / 2.0
    np.fill_diagonal(dist, 0.0)

    order = np.empty((n, max(n - 1, 0)), dtype=np.int64)
    idx = np.arange(n)
    for i in range(n):
        others = idx[idx != i]
        rank = np.lexsort((others, dist[i, others]))
        order[i] = others[rank]

    dup = 0
    for i in range(n):
        for j in range(i + 1, n):
            if pts[i, 0] == pts[j, 0] and pts[i, 1] == pts[j, 1]:
                dup += 1

    ids = tuple(str(r) for r in region_ids) if region_ids is not None else None
    if ids is not None and len(ids) != n:
        raise ValueError("region_ids length must match centroid count")
    return RegionMap(centroids=pts, distance=dist, neighbor_order=order,
                     neighbor_k=neighbor_k, region_ids=ids, duplicate_pairs=dup)


def neighbors(region_map: RegionMap, region: int, k: int) -> np.ndarray:
    return region_map.neighbors(region, k)


def load_region_map(path, neighbor_k: int = 8) -> RegionMap:
    """Load regions from delimited text: one `id,lat,lon` line per region.

    A header line is permitted and skipped when its second field is not
    numeric. Region order in the file defines the dense index order.
    """
    ids, pts = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected `id,lat,lon`")
            try:
                lat, lon = float(parts[1]), float(parts[2])
            except ValueError:
                if lineno == 1:
                    continue  # header row
                raise ValueError(f"{path}:{lineno}: non-numeric coordinates")
            ids.append(parts[0])
            pts.append((lat, lon))
    if not pts:
        raise ValueError(f"{path}: no region rows found")
    return build_region_map(pts, neighbor_k=neighbor_k, region_ids=ids)


def feasible_targets(region_map: RegionMap, location: int, battery_miles: float,
                     move_range_miles: float) -> np.ndarray:
    """Regions a vehicle at `location` can move to this interval.

    Staying is always feasible; any other region must lie within the
    per-interval movement range and within the remaining battery.
    """
    d = region_map.distance[location]
    ok = (d <= move_range_miles) & (d <= battery_miles)
    ok[location] = True
    return np.flatnonzero(ok)


@dataclass(frozen=True)
class WorldConfig:
    """Static simulation constants for one world."""

    intervals_per_day: int = 24
    battery_capacity_miles: float = 15.0
    battery_threshold_miles: float = 1.0
    move_range_miles: float = 5.0
    service_neighbor_k: int = 0           # 0 = strict same-region fulfillment
    meters_per_mile: float = METERS_PER_MILE
    seed: int = 0

    def __post_init__(self):
        if self.intervals_per_day < 1:
            raise ValueError("intervals_per_day must be >= 1")
        if not 0.0 <= self.battery_threshold_miles < self.battery_capacity_miles:
            raise ValueError("battery_threshold must be in [0, battery_capacity)")
        if self.move_range_miles < 0:
            raise ValueError("move_range_miles must be nonnegative")
        if self.service_neighbor_k < 0:
            raise ValueError("service_neighbor_k must be nonnegative")
