"""Resource pool geometry, canonical TB indexing and the simulation clock.

The V2V resource pool is a grid of K subchannels x M subframes that repeats
every `period_ms`. The M pool subframes occupy offsets 0..M-1 of each period.
Raster indexing is subchannel-major: r = k * M + m, so two raster-adjacent
indices within one subchannel share that subchannel, and indices r, r + M
share a subframe.
"""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class ResourcePoolConfig:
    """K x M time-frequency grid repeating with a fixed period."""

    subchannels: int
    subframes: int
    period_ms: int = 100

    def __post_init__(self):
        if self.subchannels < 1:
            raise ValueError("subchannels must be >= 1")
        if self.subframes < 1:
            raise ValueError("subframes must be >= 1")
        if self.subframes > self.period_ms:
            raise ValueError("subframes must fit inside one period")

    @property
    def size(self) -> int:
        return self.subchannels * self.subframes

    def label(self) -> str:
        return f"C{self.subchannels}x{self.subframes}"


@dataclass(frozen=True)
class TbIndex:
    """One transmission block: subchannel k, subframe m, raster index r."""

    k: int
    m: int
    r: int


def tb_from_raster(r: int, pool: ResourcePoolConfig) -> TbIndex:
    """Map a raster index to (k, m); subchannel-major ordering."""
    if not 0 <= r < pool.size:
        raise ValueError(f"raster index {r} out of range for {pool.label()}")
    return TbIndex(k=r // pool.subframes, m=r % pool.subframes, r=r)


def tb_from_coords(k: int, m: int, pool: ResourcePoolConfig) -> TbIndex:
    if not (0 <= k < pool.subchannels and 0 <= m < pool.subframes):
        raise ValueError(f"({k},{m}) out of range for {pool.label()}")
    return TbIndex(k=k, m=m, r=k * pool.subframes + m)


def hd_conflict(a: TbIndex, b: TbIndex) -> bool:
    """Half-duplex relation: TBs in the same subframe conflict.

    Holds for a == b as well: two users on the same TB can never hear
    each other.
    """
    return a.m == b.m


def subframe_schedule(tb: TbIndex, now_ms: int, period_ms: int) -> int:
    """Next absolute time t >= now with t mod period == tb.m."""
    return now_ms + (tb.m - now_ms) % period_ms


@dataclass
class SimClock:
    """Millisecond wall clock of one simulation instance."""

    period_ms: int = 100
    now_ms: int = 0

    def advance_to(self, t_ms: int) -> None:
        if t_ms < self.now_ms:
            raise ValueError("clock may not move backwards")
        self.now_ms = t_ms

    @property
    def phase(self) -> int:
        return self.now_ms % self.period_ms


EAST = 0
WEST = 1
DIRECTIONS = (EAST, WEST)


@dataclass(frozen=True)
class DocaConfig:
    """Geometry of the out-of-coverage road segment."""

    length_m: float = 500.0
    lanes_per_direction: int = 1
    lane_width_m: float = 4.0
    vehicle_length_m: float = 5.0

    def __post_init__(self):
        if self.length_m <= 0:
            raise ValueError("length_m must be > 0")
        if self.lanes_per_direction < 1:
            raise ValueError("lanes_per_direction must be >= 1")
        if self.max_vehicles_per_direction < 1:
            raise ValueError("DOCA too short to hold a single vehicle")

    @property
    def max_vehicles_per_direction(self) -> int:
        return int(self.lanes_per_direction * self.length_m // self.vehicle_length_m)

    def lane_offset_m(self, direction: int, lane: int) -> float:
        """Signed lateral offset of a lane; east lanes positive, west negative."""
        off = (lane + 0.5) * self.lane_width_m
        return off if direction == EAST else -off

    def abs_x(self, direction: int, pos_m: float) -> float:
        """Absolute road coordinate from a per-direction travel position."""
        return pos_m if direction == EAST else self.length_m - pos_m
