"""V2V message generation: periodic broadcast or Poisson event traffic.

Each message occupies exactly one TB and is transmitted at the first
occurrence of its TB's subframe at least one processing delay after
generation. A vehicle's messages never share a subframe occurrence: a second
message due in the same period shifts to the next one (FIFO).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .config import TrafficConfig
from .pool import ResourcePoolConfig


@dataclass
class Message:
    msg_id: int
    sender: int
    gen_time_ms: int
    tb: int                      # raster index
    tx_time_ms: int


class TrafficModel:
    """Generation instants for the active vehicle population."""

    def __init__(self, cfg: TrafficConfig, pool: ResourcePoolConfig, rng):
        self.cfg = cfg
        self.pool = pool
        self.rng = rng
        self.phase = cfg.phase_ms(pool.period_ms)
        self._next_event: dict[int, int] = {}     # aperiodic, per vehicle
        self._veh_phase: dict[int, int] = {}      # randomized periodic phase
        self._last_tx: dict[int, int] = {}        # FIFO guard per vehicle

    # -- population tracking --------------------------------------------------

    def on_enter(self, vid: int, now_ms: int):
        if self.cfg.kind == "aperiodic":
            self._next_event[vid] = now_ms + self._draw_gap_ms()
        elif self.cfg.randomize_phase:
            self._veh_phase[vid] = int(self.rng.integers(0, self.pool.period_ms))

    def on_exit(self, vid: int):
        self._next_event.pop(vid, None)
        self._veh_phase.pop(vid, None)
        self._last_tx.pop(vid, None)

    def _draw_gap_ms(self) -> int:
        return max(1, int(round(self.rng.exponential(1.0 / self.cfg.event_rate_per_s) * 1000.0)))

    # -- event times -----------------------------------------------------------

    def next_generation_time(self, now_ms: int) -> Optional[int]:
        """Earliest generation instant at or after now, or None."""
        if self.cfg.kind == "periodic":
            period = self.pool.period_ms
            if not self.cfg.randomize_phase:
                return now_ms + (self.phase - now_ms) % period
            if not self._veh_phase:
                return None
            return min(now_ms + (ph - now_ms) % period for ph in self._veh_phase.values())
        if not self._next_event:
            return None
        return max(now_ms, min(self._next_event.values()))

    def generators_at(self, t_ms: int, active_vids) -> list:
        """Vehicles generating a message exactly at t."""
        if self.cfg.kind == "periodic":
            period = self.pool.period_ms
            if not self.cfg.randomize_phase:
                if t_ms % period == self.phase:
                    return list(active_vids)
                return []
            return [v for v in active_vids
                    if t_ms % period == self._veh_phase.get(v, -1)]
        due = [v for v in active_vids if self._next_event.get(v, -1) <= t_ms]
        for v in due:
            self._next_event[v] = t_ms + self._draw_gap_ms()
        return due

    # -- transmission scheduling ------------------------------------------------

    def schedule_tx(self, vid: int, tb_raster: int, gen_time_ms: int) -> int:
        """Transmission time on the vehicle's TB, honouring the FIFO rule."""
        period = self.pool.period_ms
        m = tb_raster % self.pool.subframes
        earliest = gen_time_ms + self.cfg.processing_delay_ms
        t = earliest + (m - earliest) % period
        last = self._last_tx.get(vid)
        if last is not None:
            while t <= last:            # keep the subframe, shift whole periods
                t += period
        self._last_tx[vid] = t
        return t
