"""Transit access time: straight-line walk from hex centres to the nearest rail station."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geo import GeoPoint, HexGrid, StudyRegion, haversine_ft_array

# 3.0 mph
DEFAULT_WALK_FT_PER_MIN = 264.2


class AccessError(ValueError):
    pass


@dataclass(frozen=True)
class StationSet:
    names: tuple
    points: tuple

    def __post_init__(self):
        if len(self.names) != len(self.points):
            raise AccessError("station names and points differ in length")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def from_records(cls, records) -> "StationSet":
        names, pts = [], []
        for name, lon, lat in records:
            names.append(str(name))
            pts.append(GeoPoint(float(lon), float(lat)))
        return cls(tuple(names), tuple(pts))

    def lonlat(self) -> np.ndarray:
        return np.array([[p.lon, p.lat] for p in self.points], dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class TatResult:
    cell_minutes: np.ndarray
    nearest_station: np.ndarray
    area_ids: tuple
    area_minutes: np.ndarray
    cells_per_area: np.ndarray
    walking_speed_ftpm: float
    detour: float


def hex_access_time(
    grid: HexGrid,
    stations: StationSet,
    walking_speed_ftpm: float = DEFAULT_WALK_FT_PER_MIN,
    detour: float = 1.0,
    chunk: int = 4096,
):
    """Minutes from each cell centre to the nearest station.

    ``detour`` inflates straight-line distance to approximate the street
    network. Returns ``(minutes, nearest_station_index)``.
    """
    if len(stations) == 0:
        raise AccessError("empty station set")
    if not walking_speed_ftpm > 0:
        raise AccessError("walking speed must be positive")
    if not detour > 0:
        raise AccessError("detour multiplier must be positive")
    st = stations.lonlat()
    minutes = np.empty(len(grid))
    nearest = np.empty(len(grid), dtype=int)
    for s in range(0, len(grid), chunk):
        c = grid.centers[s : s + chunk]
        d = haversine_ft_array(c[:, 0:1], c[:, 1:2], st[None, :, 0], st[None, :, 1])
        k = d.argmin(axis=1)
        nearest[s : s + chunk] = k
        minutes[s : s + chunk] = d[np.arange(len(c)), k] * detour / walking_speed_ftpm
    return minutes, nearest


def area_average_tat(region: StudyRegion, grid: HexGrid, cell_minutes) -> np.ndarray:
    """Unweighted mean of cell times over each area's tagged cells."""
    cell_minutes = np.asarray(cell_minutes, dtype=float)
    n = len(region)
    counts = np.bincount(grid.area_index[grid.area_index >= 0], minlength=n)
    empty = [region.ids[i] for i in np.flatnonzero(counts == 0)]
    if empty:
        raise AccessError(f"area(s) with no hex cell centre inside: {empty}; reduce the hex edge length")
    tagged = grid.area_index >= 0
    sums = np.bincount(grid.area_index[tagged], weights=cell_minutes[tagged], minlength=n)
    return sums / counts


def compute_tat(
    region: StudyRegion,
    grid: HexGrid,
    stations: StationSet,
    walking_speed_ftpm: float = DEFAULT_WALK_FT_PER_MIN,
    detour: float = 1.0,
) -> TatResult:
    minutes, nearest = hex_access_time(grid, stations, walking_speed_ftpm, detour)
    means = area_average_tat(region, grid, minutes)
    counts = np.bincount(grid.area_index[grid.area_index >= 0], minlength=len(region))
    return TatResult(minutes, nearest, tuple(region.ids), means, counts, walking_speed_ftpm, detour)
