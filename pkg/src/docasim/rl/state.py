"""Observation matrix for the learning scheduler.

One row per TB, four columns: [C_same, dx_same, C_opp, dx_opp]. C is the
number of vehicles holding the resource in that direction over the segment's
per-direction capacity; dx is the entrance distance of the *latest* such
vehicle (minimum estimated travel) over the segment length. The "same"
column pair always refers to the direction of the vehicle being scheduled.

The scheduler does not see true positions: a vehicle's distance from its
entrance is estimated as v_avg * (now - entry time), and entries whose
estimate exceeds the segment length are considered gone. Rows of a master
pool that the active pool does not cover are masked to [1, 1, 1, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..pool import DocaConfig, ResourcePoolConfig

MASK_ROW = (1.0, 1.0, 1.0, 1.0)
FREE_ROW = (0.0, 1.0)        # no holder: unloaded, maximally distant


@dataclass
class LedgerEntry:
    vid: int
    entry_time_ms: int
    tb: int                  # raster index in the *active* pool
    direction: int


class EntryLedger:
    """What the infrastructure knows: entry time, TB and direction per vehicle.

    Pruning is estimate-based, mirroring that exits are not observed.
    """

    def __init__(self, length_m: float, v_avg_ms: float):
        self.length_m = length_m
        self.v_avg = v_avg_ms
        self.entries: list[LedgerEntry] = []

    def add(self, vid, entry_time_ms, tb, direction):
        self.entries.append(LedgerEntry(vid, entry_time_ms, tb, direction))

    def prune(self, now_ms):
        lim = self.length_m
        keep = []
        for e in self.entries:
            if self.v_avg * (now_ms - e.entry_time_ms) / 1000.0 <= lim:
                keep.append(e)
        self.entries = keep

    def estimates(self, now_ms):
        """(tb, direction, dx_m) arrays for entries still estimated inside."""
        self.prune(now_ms)
        n = len(self.entries)
        tb = np.empty(n, dtype=np.int64)
        dirs = np.empty(n, dtype=np.int64)
        dx = np.empty(n)
        for i, e in enumerate(self.entries):
            tb[i] = e.tb
            dirs[i] = e.direction
            dx[i] = self.v_avg * (now_ms - e.entry_time_ms) / 1000.0
        return tb, dirs, dx


def active_to_master(active: ResourcePoolConfig, master_k: int, master_m: int):
    """Raster map from active-pool indices to master-pool rows."""
    if active.subchannels > master_k or active.subframes > master_m:
        raise ValueError("active pool does not embed in the master pool")
    out = np.empty(active.size, dtype=np.int64)
    for k in range(active.subchannels):
        for m in range(active.subframes):
            out[k * active.subframes + m] = k * master_m + m
    return out


def build_state(tbs, dirs, dx_m, pool_rows: int, doca: DocaConfig,
                entering_direction: int, row_map=None, mask_rows=None,
                length_m=None, dtype=np.float64):
    """Assemble the (rows, 4) observation.

    tbs/dirs/dx_m describe vehicles believed inside; row_map translates
    active-pool TBs to master rows; mask_rows marks rows outside the active
    pool.
    """
    length = doca.length_m if length_m is None else length_m
    cap = doca.max_vehicles_per_direction
    counts = np.zeros((pool_rows, 2))
    min_dx = np.full((pool_rows, 2), np.inf)
    if len(tbs):
        rows = row_map[tbs] if row_map is not None else tbs
        np.add.at(counts, (rows, dirs), 1.0)
        np.minimum.at(min_dx, (rows, dirs), dx_m)
    state = np.empty((pool_rows, 4), dtype=dtype)
    same = entering_direction
    opp = 1 - same
    for col, d in ((0, same), (2, opp)):
        c = np.minimum(counts[:, d] / cap, 1.0)
        dx = np.where(counts[:, d] > 0,
                      np.minimum(min_dx[:, d] / length, 1.0), FREE_ROW[1])
        state[:, col] = c
        state[:, col + 1] = dx
    if mask_rows is not None:
        state[mask_rows] = MASK_ROW[0]
    return state


@dataclass
class StateBuilder:
    """Bound state constructor for one active pool (optionally masked)."""

    active: ResourcePoolConfig
    doca: DocaConfig
    v_avg_ms: float
    master_k: int = None
    master_m: int = None

    def __post_init__(self):
        if self.master_k is None:
            self.master_k = self.active.subchannels
        if self.master_m is None:
            self.master_m = self.active.subframes
        self.rows = self.master_k * self.master_m
        self.row_map = active_to_master(self.active, self.master_k, self.master_m)
        mask = np.ones(self.rows, dtype=bool)
        mask[self.row_map] = False
        self.mask_rows = mask if mask.any() else None
        self.ledger = EntryLedger(self.doca.length_m, self.v_avg_ms)

    @property
    def masked_count(self) -> int:
        return 0 if self.mask_rows is None else int(self.mask_rows.sum())

    def master_to_active(self, master_row: int):
        """Active raster index for a master row, or None if masked."""
        k, m = divmod(master_row, self.master_m)
        if k < self.active.subchannels and m < self.active.subframes:
            return k * self.active.subframes + m
        return None

    def observe(self, now_ms: int, entering_direction: int, dtype=np.float64):
        tbs, dirs, dx = self.ledger.estimates(now_ms)
        return build_state(tbs, dirs, dx, self.rows, self.doca,
                           entering_direction, row_map=self.row_map,
                           mask_rows=self.mask_rows, dtype=dtype)

    def record(self, vid, entry_time_ms, tb_active, direction):
        self.ledger.add(vid, entry_time_ms, tb_active, direction)
