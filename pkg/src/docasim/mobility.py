"""Vehicle arrival, motion and departure.

Two modes:
  * "e0": fixed population with wrap-around. A vehicle leaving the segment
    re-enters from the opposite direction after a delay ~ Exp(rate); speeds
    are constant and equal.
  * "poisson": open system. Arrivals per direction follow a Poisson process,
    each vehicle draws its speed from a truncated normal. With one lane per
    direction a follower is clamped to its leader's speed so vehicles never
    overlap; with two lanes vehicles pass freely.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import MobilityConfig
from .pool import DocaConfig, EAST, WEST


@dataclass
class VehicleState:
    vid: int
    direction: int
    lane: int
    pos_m: float                 # travelled distance from own entry point
    speed_ms: float              # current (possibly clamped) speed
    base_speed_ms: float         # drawn speed the vehicle returns to
    entry_time_ms: int
    assigned_tb: Optional[int] = None   # raster index, None until scheduled
    scheduler: Optional[str] = None     # set in mixed-scheduler runs
    slot: int = -1               # dense index for channel state


class MobilityWorld:
    """Owns the vehicle population of one simulation instance."""

    def __init__(self, doca: DocaConfig, cfg: MobilityConfig, rng_arrivals, rng_speeds):
        self.doca = doca
        self.cfg = cfg
        self.rng_arrivals = rng_arrivals
        self.rng_speeds = rng_speeds
        self.vehicles: dict[int, VehicleState] = {}
        self._next_vid = 0
        self._free_slots: list[int] = []
        self._n_slots = 0
        self._reentry: list[tuple[int, int]] = []   # (t_ms, direction) heap, e0
        self._pending: dict[int, list[float]] = {EAST: [], WEST: []}  # queued speeds
        self._next_arrival = {EAST: None, WEST: None}
        self._arrays_dirty = True
        self._ids = np.empty(0, dtype=np.int64)
        self._x = np.empty(0)
        self._y = np.empty(0)
        self.min_gap_m = doca.vehicle_length_m + 2.0
        if cfg.mode == "e0":
            self._init_e0()
        else:
            for d in (EAST, WEST):
                self._next_arrival[d] = self._draw_arrival_gap_ms()

    # -- construction -------------------------------------------------------

    def _init_e0(self):
        n = self.cfg.n_vehicles
        v = self.cfg.speed_mean_ms
        length = self.doca.length_m
        if self.cfg.initial_placement == "even":
            xs = (np.arange(n) + 0.5) * length / n
            dirs = [EAST if i % 2 == 0 else WEST for i in range(n)]
        else:
            xs = self.rng_arrivals.uniform(0.0, length, size=n)
            dirs = self.rng_arrivals.integers(0, 2, size=n).tolist()
        for x_abs, d in zip(xs, dirs):
            pos = x_abs if d == EAST else length - x_abs
            # Entry time back-dated so that entry_time + pos / v == now.
            t_entry = -int(round(pos / v * 1000.0))
            self._spawn(d, lane=0, speed=v, t_ms=0, pos=pos, entry_time_ms=t_entry)

    def _spawn(self, direction, lane, speed, t_ms, pos=0.0, entry_time_ms=None) -> VehicleState:
        vid = self._next_vid
        self._next_vid += 1
        slot = self._free_slots.pop() if self._free_slots else self._n_slots
        if slot == self._n_slots:
            self._n_slots += 1
        veh = VehicleState(
            vid=vid, direction=direction, lane=lane, pos_m=pos,
            speed_ms=speed, base_speed_ms=speed,
            entry_time_ms=t_ms if entry_time_ms is None else entry_time_ms,
            slot=slot,
        )
        self.vehicles[vid] = veh
        self._arrays_dirty = True
        return veh

    def _remove(self, veh: VehicleState):
        del self.vehicles[veh.vid]
        self._free_slots.append(veh.slot)
        self._arrays_dirty = True

    # -- random draws -------------------------------------------------------

    def _draw_arrival_gap_ms(self) -> int:
        gap_s = self.rng_arrivals.exponential(1.0 / self.cfg.arrival_rate_per_s)
        return max(1, int(round(gap_s * 1000.0)))

    def _draw_speed(self) -> float:
        v = self.rng_speeds.normal(self.cfg.speed_mean_ms, self.cfg.speed_std_ms)
        return max(self.cfg.min_speed_ms, v)

    # -- stepping -----------------------------------------------------------

    def step(self, now_ms: int, dt_ms: int):
        """Advance positions by dt and process departures/arrivals at now+dt.

        Returns (entries, exits) as lists of VehicleState.
        """
        t = now_ms + dt_ms
        dt_s = dt_ms / 1000.0
        exits = []
        if self.cfg.mode == "poisson" and self.doca.lanes_per_direction == 1:
            self._apply_gap_clamp(dt_s)
        for veh in self.vehicles.values():
            veh.pos_m += veh.speed_ms * dt_s
        for veh in list(self.vehicles.values()):
            if veh.pos_m > self.doca.length_m:
                exits.append(veh)
                self._remove(veh)
                if self.cfg.mode == "e0":
                    delay = max(1, int(round(
                        self.rng_arrivals.exponential(1.0 / self.cfg.wrap_delay_rate_per_s) * 1000.0)))
                    heapq.heappush(self._reentry, (t + delay, 1 - veh.direction))
        entries = self._process_arrivals(t, dt_ms)
        self._arrays_dirty = True
        return entries, exits

    def _apply_gap_clamp(self, dt_s: float):
        # Front-to-back pass per direction; leaders settle before followers.
        for d in (EAST, WEST):
            col = sorted((v for v in self.vehicles.values() if v.direction == d),
                         key=lambda v: -v.pos_m)
            leader = None
            for veh in col:
                veh.speed_ms = veh.base_speed_ms
                if leader is not None:
                    gap_next = (leader.pos_m + leader.speed_ms * dt_s) - \
                               (veh.pos_m + veh.speed_ms * dt_s)
                    if gap_next < self.min_gap_m:
                        veh.speed_ms = min(veh.speed_ms, leader.speed_ms)
                leader = veh

    def _entry_clear(self, direction: int) -> bool:
        if self.doca.lanes_per_direction > 1:
            return True
        for v in self.vehicles.values():
            if v.direction == direction and v.pos_m < self.min_gap_m:
                return False
        return True

    def _process_arrivals(self, t: int, dt_ms: int):
        entries = []
        if self.cfg.mode == "e0":
            while self._reentry and self._reentry[0][0] <= t:
                _, direction = heapq.heappop(self._reentry)
                entries.append(self._spawn(direction, lane=0,
                                           speed=self.cfg.speed_mean_ms, t_ms=t))
            return entries
        for d in (EAST, WEST):
            self._next_arrival[d] -= dt_ms
            while self._next_arrival[d] <= 0:
                self._pending[d].append(self._draw_speed())
                self._next_arrival[d] += self._draw_arrival_gap_ms()
            while self._pending[d] and self._entry_clear(d):
                speed = self._pending[d].pop(0)
                lane = int(self.rng_speeds.integers(0, self.doca.lanes_per_direction))
                entries.append(self._spawn(d, lane=lane, speed=speed, t_ms=t))
        return entries

    # -- geometry snapshots --------------------------------------------------

    def _refresh_arrays(self):
        n = len(self.vehicles)
        self._ids = np.empty(n, dtype=np.int64)
        self._x = np.empty(n)
        self._y = np.empty(n)
        self._slots = np.empty(n, dtype=np.int64)
        for i, veh in enumerate(self.vehicles.values()):
            self._ids[i] = veh.vid
            self._x[i] = self.doca.abs_x(veh.direction, veh.pos_m)
            self._y[i] = self.doca.lane_offset_m(veh.direction, veh.lane)
            self._slots[i] = veh.slot
        self._index_of = {int(v): i for i, v in enumerate(self._ids)}
        self._arrays_dirty = False

    def snapshot(self):
        """(ids, x, y, slots, index_of) arrays for the current population."""
        if self._arrays_dirty:
            self._refresh_arrays()
        return self._ids, self._x, self._y, self._slots, self._index_of

    @property
    def population(self) -> int:
        """Active plus pending vehicles (constant in e0 mode)."""
        return len(self.vehicles) + len(self._reentry)
