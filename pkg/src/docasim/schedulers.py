"""Baseline schedulers: random pick, sensing-based semi-persistent selection
(LTE mode 4 style), and an orthogonal-assignment oracle with its closed-form
reception bound for single-collision-domain scenarios.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import Mode4Config
from .pool import ResourcePoolConfig


def random_assign(pool: ResourcePoolConfig, rng) -> int:
    """Uniform raster index over the whole pool."""
    return int(rng.integers(0, pool.size))


class RandomScheduler:
    """Assigns a uniform TB at entry; kept for the whole traversal."""

    name = "random"
    needs_sensing = False

    def __init__(self, pool, rng):
        self.pool = pool
        self.rng = rng

    def on_entry(self, sim, veh) -> int:
        return random_assign(self.pool, self.rng)

    def on_message(self, sim, veh, t_gen):
        return veh.assigned_tb


# ---------------------------------------------------------------------------
# Orthogonal-assignment oracle.

def oracle_orthogonal_assign(n_vehicles: int, pool: ResourcePoolConfig):
    """Round-robin over subframes first, then subchannels; n <= K*M only."""
    if n_vehicles > pool.size:
        raise ValueError("oracle assignment requires n_vehicles <= K*M")
    out = []
    for i in range(n_vehicles):
        k, m = divmod(i, pool.subframes)
        out.append(k * pool.subframes + m)
    return out


def oracle_prr_bound(n_vehicles: int, pool: ResourcePoolConfig) -> float:
    """Mean PRR of the orthogonal assignment in a single collision domain.

    With o_v vehicles sharing vehicle v's subframe, each of v's messages
    fails exactly at the o_v - 1 half-duplex peers, so the pair-success
    fraction is sum_v (n - o_v) / (n (n - 1)).
    """
    if n_vehicles < 2:
        raise ValueError("bound needs at least two vehicles")
    assignment = oracle_orthogonal_assign(n_vehicles, pool)
    occupancy = {}
    for r in assignment:
        m = r % pool.subframes
        occupancy[m] = occupancy.get(m, 0) + 1
    good = sum(n_vehicles - occupancy[r % pool.subframes] for r in assignment)
    return good / (n_vehicles * (n_vehicles - 1))


class OracleScheduler:
    """Keeps the live population orthogonal: least-occupied subframe first."""

    name = "oracle"
    needs_sensing = False

    def __init__(self, pool, rng):
        self.pool = pool
        self.rng = rng

    def on_entry(self, sim, veh) -> int:
        m_count = [0] * self.pool.subframes
        used = set()
        for other in sim.world.vehicles.values():
            if other.assigned_tb is not None:
                m_count[other.assigned_tb % self.pool.subframes] += 1
                used.add(other.assigned_tb)
        if len(used) >= self.pool.size:
            raise ValueError("oracle mode rejects more vehicles than TBs")
        best_m = min(range(self.pool.subframes), key=lambda m: m_count[m])
        for k in range(self.pool.subchannels):
            r = k * self.pool.subframes + best_m
            if r not in used:
                return r
        raise RuntimeError("least-occupied subframe exhausted with free TBs left")

    def on_message(self, sim, veh, t_gen):
        return veh.assigned_tb


# ---------------------------------------------------------------------------
# Sensing-based semi-persistent scheduler.

@dataclass
class DecisionRecord:
    """One reselection, with everything needed to replay the rule."""

    vid: int
    t_gen: int
    window_tbs: list
    blanked_subframes: list
    avg_power_db: np.ndarray
    avg_rssi_db: np.ndarray
    threshold_db: float
    surviving: list
    lowest_set: list
    pick: int
    fallback: bool = False


@dataclass
class SensingState:
    """Trailing-window power measurements of one vehicle.

    power[w, r] is the linear received power summed over transmitters on TB r
    in window row w; NaN marks occurrences blanked by own transmissions.
    """

    n_periods: int
    pool_size: int
    subframes: int
    power: np.ndarray = field(init=False)
    own_tx: np.ndarray = field(init=False)
    counter: int = 0
    tb: Optional[int] = None
    last_period: int = -1

    def __post_init__(self):
        self.power = np.full((self.n_periods, self.pool_size), np.nan)
        self.own_tx = np.zeros((self.n_periods, self.subframes), dtype=bool)

    def roll_to(self, period_idx: int):
        """Clear rows for periods between the last seen one and period_idx."""
        if period_idx == self.last_period:
            return
        gap = period_idx - self.last_period
        for p in range(max(period_idx - self.n_periods + 1, self.last_period + 1),
                       period_idx + 1):
            w = p % self.n_periods
            self.power[w] = 0.0
            self.own_tx[w] = False
        if gap >= self.n_periods:
            pass  # whole window rewritten above
        self.last_period = period_idx

    def averages_db(self):
        """(avg sensed power, avg RSSI) in dB per TB; -inf where unmeasured."""
        with np.errstate(invalid="ignore", divide="ignore"):
            mean_lin = np.nanmean(self.power, axis=0)
            avg = 10.0 * np.log10(mean_lin)
        avg[~np.isfinite(avg)] = -np.inf
        return avg, avg.copy()

    def blanked_subframes(self):
        return np.nonzero(self.own_tx.any(axis=0))[0]


class Mode4Scheduler:
    """Semi-persistent selection from the lowest-RSSI fifth of the window."""

    name = "mode4"
    needs_sensing = True

    def __init__(self, pool, cfg: Mode4Config, rng, record_decisions=False):
        self.pool = pool
        self.cfg = cfg
        self.rng = rng
        self.states: dict[int, SensingState] = {}
        self.record_decisions = record_decisions
        self.decisions: list[DecisionRecord] = []
        self.c_resel_draws: list[int] = []
        self.fallback_count = 0
        self.n_window = cfg.sensing_window_ms // pool.period_ms

    def on_entry(self, sim, veh) -> None:
        self.states[veh.vid] = SensingState(
            n_periods=self.n_window, pool_size=self.pool.size,
            subframes=self.pool.subframes)
        return None  # no assignment until the first message

    def on_exit(self, vid):
        self.states.pop(vid, None)

    def _draw_counter(self) -> int:
        c = int(self.rng.integers(self.cfg.c_resel_min, self.cfg.c_resel_max + 1))
        self.c_resel_draws.append(c)
        return c

    def on_message(self, sim, veh, t_gen) -> int:
        st = self.states[veh.vid]
        if st.counter == 0:
            if st.tb is None or self.rng.random() >= self.cfg.p_keep:
                st.tb = self.select(veh.vid, t_gen)
            st.counter = self._draw_counter()
        st.counter -= 1
        return st.tb

    # -- sensing ---------------------------------------------------------------

    def observe_subframe(self, t_ms, m, tx_vids, tx_ks, powers_dbm, all_vids, index_of):
        """Record one pool subframe at every tracked vehicle."""
        period_idx = t_ms // self.pool.period_ms
        subframes = self.pool.subframes
        n_tx = len(tx_vids)
        by_k = None
        if powers_dbm is not None and n_tx:
            lin = 10.0 ** (powers_dbm / 10.0)
            by_k = np.zeros((self.pool.subchannels, lin.shape[1]))
            for i in range(n_tx):
                by_k[int(tx_ks[i])] += lin[i]
            r_idx = np.arange(self.pool.subchannels) * subframes + m
        txset = set(int(v) for v in tx_vids)
        for vid, st in self.states.items():
            st.roll_to(period_idx)
            w = period_idx % st.n_periods
            if vid in txset:
                st.own_tx[w, m] = True
                st.power[w, m::subframes] = np.nan
            elif by_k is not None:
                j = index_of.get(vid)
                if j is not None:
                    st.power[w, r_idx] += by_k[:, j]

    def observe_protocol(self, t_ms, m, tx_vids, tx_ks, tx_xy, all_vids, all_xy,
                         index_of, p_tx_dbm, r_tx_m):
        """Protocol-model sensing: P_tx within range, nothing outside."""
        if not self.states:
            return
        tx_x, tx_y = tx_xy
        all_x, all_y = all_xy
        if len(tx_vids):
            dist = np.hypot(tx_x[:, None] - all_x[None, :],
                            tx_y[:, None] - all_y[None, :])
            powers = np.where(dist <= r_tx_m, p_tx_dbm, -np.inf)
        else:
            powers = None
        self.observe_subframe(t_ms, m, tx_vids, tx_ks, powers, all_vids, index_of)

    # -- selection ---------------------------------------------------------------

    def window_tbs(self, t_gen: int):
        """TBs whose next occurrence lies in [t_gen + T1, t_gen + T2]."""
        period = self.pool.period_ms
        lo, hi = t_gen + self.cfg.t1_ms, t_gen + self.cfg.t2_ms
        out = []
        for m in range(self.pool.subframes):
            t_next = lo + (m - lo) % period
            if t_next <= hi:
                out.extend(k * self.pool.subframes + m
                           for k in range(self.pool.subchannels))
        return out

    def select(self, vid: int, t_gen: int) -> int:
        st = self.states[vid]
        st.roll_to(t_gen // self.pool.period_ms)
        avg_power, avg_rssi = st.averages_db()
        blanked = st.blanked_subframes()
        window = self.window_tbs(t_gen)
        base_n = len(window)
        not_blanked = [r for r in window
                       if (r % self.pool.subframes) not in blanked]
        thr = self.cfg.thr_sense_dbm
        target = self.cfg.rssi_fraction * base_n
        finite = avg_power[np.isfinite(avg_power)]
        thr_cap = (finite.max() if len(finite) else thr) + 3.0
        surviving = [r for r in not_blanked if avg_power[r] <= thr]
        while len(surviving) < target and thr <= thr_cap:
            thr += 3.0
            surviving = [r for r in not_blanked if avg_power[r] <= thr]
        if not surviving:
            self.fallback_count += 1
            pick = random_assign(self.pool, self.rng)
            if self.record_decisions:
                self.decisions.append(DecisionRecord(
                    vid=vid, t_gen=t_gen, window_tbs=window,
                    blanked_subframes=blanked.tolist(),
                    avg_power_db=avg_power, avg_rssi_db=avg_rssi,
                    threshold_db=thr, surviving=[], lowest_set=[], pick=pick,
                    fallback=True))
            return pick
        order = sorted(surviving, key=lambda r: (avg_rssi[r], self.rng.random()))
        n_low = max(1, math.ceil(self.cfg.rssi_fraction * len(order)))
        lowest = order[:n_low]
        pick = int(lowest[int(self.rng.integers(0, len(lowest)))])
        if self.record_decisions:
            self.decisions.append(DecisionRecord(
                vid=vid, t_gen=t_gen, window_tbs=window,
                blanked_subframes=blanked.tolist(),
                avg_power_db=avg_power.copy(), avg_rssi_db=avg_rssi.copy(),
                threshold_db=thr, surviving=list(surviving),
                lowest_set=list(lowest), pick=pick))
        return pick


class MixedScheduler:
    """Per-vehicle scheduler choice, drawn uniformly at entry."""

    name = "mixed"

    def __init__(self, pool, mode4_cfg, rng, extra=None):
        self.rng = rng
        self.children = {
            "random": RandomScheduler(pool, rng),
            "mode4": Mode4Scheduler(pool, mode4_cfg, rng),
        }
        if extra:
            self.children.update(extra)
        self.names = sorted(self.children)
        self.choice: dict[int, str] = {}

    @property
    def needs_sensing(self):
        return True

    @property
    def mode4(self) -> Mode4Scheduler:
        return self.children["mode4"]

    def on_entry(self, sim, veh):
        name = self.names[int(self.rng.integers(0, len(self.names)))]
        self.choice[veh.vid] = name
        veh.scheduler = name
        # All children observe the channel; only the owner assigns.
        self.mode4.on_entry(sim, veh)
        if name == "mode4":
            return None
        return self.children[name].on_entry(sim, veh)

    def on_exit(self, vid):
        self.mode4.on_exit(vid)
        self.choice.pop(vid, None)

    def on_message(self, sim, veh, t_gen):
        if self.choice.get(veh.vid) == "mode4":
            return self.mode4.on_message(sim, veh, t_gen)
        return veh.assigned_tb
