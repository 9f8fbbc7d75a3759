"""Discrete-time simulation engine.

Advances a millisecond clock through the events that matter: mobility
substeps (arrivals, exits, car-following), message generation instants, and
pool subframes with pending transmissions. Entry events invoke the scheduler;
subframe events adjudicate receptions, feed sensing, metrics, traces and the
reward window.

For the protocol channel without sensing, whole pool periods are adjudicated
in one vectorized pass whenever no other event falls inside the pool span;
the outcome is identical to per-subframe processing because positions are
frozen between mobility substeps and the protocol model draws no randomness.
"""
from __future__ import annotations

import heapq

import numpy as np

from . import channel as ch
from .config import ScenarioConfig
from .metrics import MetricsAggregator
from .mobility import MobilityWorld
from .schedulers import (Mode4Scheduler, MixedScheduler, OracleScheduler,
                         RandomScheduler, random_assign)
from .traffic import TrafficModel

_INF = float("inf")


def build_scheduler(scenario: ScenarioConfig, rng, policy=None, record_decisions=False):
    name = scenario.scheduler
    if name == "random":
        return RandomScheduler(scenario.pool, rng)
    if name == "oracle":
        return OracleScheduler(scenario.pool, rng)
    if name == "mode4":
        return Mode4Scheduler(scenario.pool, scenario.mode4, rng,
                              record_decisions=record_decisions)
    if name == "rl":
        if policy is None:
            raise ValueError("scheduler 'rl' needs a policy")
        return policy
    if name == "mixed":
        extra = {"rl": policy} if policy is not None else None
        return MixedScheduler(scenario.pool, scenario.mode4, rng, extra=extra)
    raise ValueError(f"unknown scheduler {name!r}")


class Simulation:
    """One seeded run of a scenario with a chosen scheduler."""

    def __init__(self, scenario: ScenarioConfig, scheduler=None, seed=None,
                 collect=True, trace=None, reward_range=None):
        self.scenario = scenario
        self.pool = scenario.pool
        self.doca = scenario.doca
        seed = scenario.seed if seed is None else seed
        self.seed = seed
        kids = np.random.SeedSequence(seed).spawn(6)
        self.rng_order = np.random.default_rng(kids[0])
        self.rng_sched = np.random.default_rng(kids[1])
        self.rng_channel = np.random.default_rng(kids[2])
        rng_traffic = np.random.default_rng(kids[3])
        rng_arrivals = np.random.default_rng(kids[4])
        rng_speeds = np.random.default_rng(kids[5])

        self.world = MobilityWorld(scenario.doca, scenario.mobility,
                                   rng_arrivals, rng_speeds)
        self.traffic = TrafficModel(scenario.traffic, scenario.pool, rng_traffic)
        self.chan = scenario.channel
        self.shadowing = (ch.ShadowingField(self.chan, self.rng_channel)
                          if self.chan.model == "sinr" else None)
        self.scheduler = scheduler if scheduler is not None else \
            build_scheduler(scenario, self.rng_sched)

        self.collect = collect
        self.metrics = MetricsAggregator(scenario.metrics) if collect else None
        self.trace = trace
        self.max_record_m = scenario.record_distance_m
        self.reward_range = reward_range
        if reward_range is not None and not collect:
            lo, hi = reward_range
            if lo != 0 or hi != self.max_record_m:
                raise ValueError("fast reward counting needs record distance == "
                                 "reward range starting at 0")
        self.reward_ok = 0
        self.reward_total = 0

        self.now = 0
        self.entry_count = 0
        self._msg_counter = 0
        self._pending: dict[int, list] = {}        # t -> [(vid, msg_id, r), ...]
        self._pending_heap: list[int] = []
        self._msg_latency: dict[int, int] = {}
        self._next_substep = scenario.mobility.substep_ms
        self._next_gen = None
        self._started = False
        self._needs_sensing = getattr(self.scheduler, "needs_sensing", False)
        self._next_sense = 0 if self._needs_sensing else None
        self._fast_protocol = (self.chan.model == "protocol"
                               and not self._needs_sensing)

    # -- lifecycle -------------------------------------------------------------

    def _start(self):
        self._started = True
        self._process_entries(list(self.world.vehicles.values()), initial=True)
        self._next_gen = self.traffic.next_generation_time(self.now)

    def _process_entries(self, entries, initial=False):
        if not entries:
            return
        if len(entries) > 1:
            entries = list(entries)
            self.rng_order.shuffle(entries)
        for veh in entries:
            self.traffic.on_enter(veh.vid, self.now)
            if initial and self.scenario.random_initial_assignment:
                r = random_assign(self.pool, self.rng_sched)
                note = getattr(self.scheduler, "note_external_assignment", None)
                if note is not None:
                    note(self, veh, r)
            else:
                r = self.scheduler.on_entry(self, veh)
            veh.assigned_tb = r
            self.entry_count += 1

    def _process_exits(self, exits):
        for veh in exits:
            self.traffic.on_exit(veh.vid)
            on_exit = getattr(self.scheduler, "on_exit", None)
            if on_exit is not None:
                on_exit(veh.vid)
            if self.shadowing is not None:
                self.shadowing.clear_slot(veh.slot)

    # -- event scheduling --------------------------------------------------------

    def _schedule_message(self, veh, t_gen):
        r = self.scheduler.on_message(self, veh, t_gen)
        if r is None:
            return  # unassigned vehicles stay silent (starvation)
        veh.assigned_tb = r
        t_tx = self.traffic.schedule_tx(veh.vid, r, t_gen)
        msg = self._msg_counter
        self._msg_counter += 1
        slot = self._pending.get(t_tx)
        if slot is None:
            self._pending[t_tx] = [(veh.vid, msg, r)]
            heapq.heappush(self._pending_heap, t_tx)
        else:
            slot.append((veh.vid, msg, r))
        if self.collect:
            self._msg_latency[msg] = t_tx + 1 - t_gen

    def _generate(self):
        for vid in self.traffic.generators_at(self.now, list(self.world.vehicles)):
            veh = self.world.vehicles.get(vid)
            if veh is not None:
                self._schedule_message(veh, self.now)

    def _next_sense_tick(self, after):
        period = self.pool.period_ms
        m = after % period
        if m < self.pool.subframes:
            return after
        return after + (period - m)

    # -- adjudication ---------------------------------------------------------------

    def _consume_batch(self, batch, ok_pairs, n_pairs):
        if self.reward_range is not None:
            if batch is not None:
                lo, hi = self.reward_range
                sel = (batch.dist >= lo) & (batch.dist <= hi)
                self.reward_ok += int(np.count_nonzero(sel & (batch.cls == ch.OK)))
                self.reward_total += int(np.count_nonzero(sel))
            else:
                self.reward_ok += ok_pairs
                self.reward_total += n_pairs
        if batch is None:
            return
        if self.metrics is not None:
            self.metrics.consume(batch, self._msg_latency)
        if self.trace is not None:
            self.trace.write_batch(batch)

    def _adjudicate_tick(self, t):
        items = self._pending.pop(t, None)
        if self._pending_heap and self._pending_heap[0] == t:
            heapq.heappop(self._pending_heap)
        ids, x, y, slots, index_of = self.world.snapshot()
        live = [(vid, msg, r) for vid, msg, r in items or []
                if vid in self.world.vehicles]
        vids = np.array([it[0] for it in live], dtype=np.int64)
        msgs = np.array([it[1] for it in live], dtype=np.int64)
        ks = np.array([it[2] // self.pool.subframes for it in live], dtype=np.int64)
        m_now = t % self.pool.period_ms
        powers = None
        if len(vids):
            idx = np.array([index_of[int(v)] for v in vids])
            tx_xy = (x[idx], y[idx])
            batch, ok_pairs, n_pairs, powers = ch.adjudicate_subframe(
                t, vids, ks, msgs, tx_xy, ids, (x, y), self.chan,
                shadowing=self.shadowing, tx_slots=slots[idx], all_slots=slots,
                max_record_m=self.max_record_m, collect=self.collect)
            self._consume_batch(batch, ok_pairs, n_pairs)
            if self.collect:
                for _, msg, _r in live:
                    self._msg_latency.pop(msg, None)
        else:
            tx_xy = (np.empty(0), np.empty(0))
        if self._needs_sensing:
            m4 = self.scheduler if isinstance(self.scheduler, Mode4Scheduler) \
                else self.scheduler.mode4
            if self.chan.model == "protocol":
                m4.observe_protocol(t, m_now, vids, ks, tx_xy, ids, (x, y),
                                    index_of, self.chan.p_tx_dbm, self.chan.r_tx_m)
            else:
                m4.observe_subframe(t, m_now, vids, ks, powers, ids, index_of)

    def _adjudicate_period_fast(self, t0):
        """Vectorized protocol-model adjudication of one whole pool period."""
        t_end = t0 + self.pool.subframes
        all_items = []
        for t in range(t0, t_end):
            items = self._pending.pop(t, None)
            if items:
                all_items.extend((t, it) for it in items
                                 if it[0] in self.world.vehicles)
        while self._pending_heap and self._pending_heap[0] < t_end:
            heapq.heappop(self._pending_heap)
        if not all_items:
            return
        ids, x, y, slots, index_of = self.world.snapshot()
        n_all = len(ids)
        tx_vids = np.array([it[0] for _, it in all_items], dtype=np.int64)
        tx_msgs = np.array([it[1] for _, it in all_items], dtype=np.int64)
        tx_r = np.array([it[2] for _, it in all_items], dtype=np.int64)
        tx_ms = tx_r % self.pool.subframes
        idx = np.array([index_of[int(v)] for v in tx_vids])
        dist = np.hypot(x[idx][:, None] - x[None, :], y[idx][:, None] - y[None, :])
        in_range = dist <= self.chan.r_tx_m

        # Subframe each active vehicle transmits in within this period, or -1.
        rx_m = np.full(n_all, -1, dtype=np.int64)
        rx_m[idx] = tx_ms
        hd = tx_ms[:, None] == rx_m[None, :]

        same_tb = np.zeros_like(in_range)
        for tb in np.unique(tx_r):
            group = tx_r == tb
            if np.count_nonzero(group) < 2:
                continue
            cover = in_range[group]
            others = cover.sum(axis=0)[None, :] - cover
            same_tb[group] = others > 0
        if self.chan.reference_mode:
            cls = np.where(in_range, ch.OK, ch.PROPAGATION).astype(np.int8)
        else:
            cls = np.full(dist.shape, ch.PROPAGATION, dtype=np.int8)
            cls[in_range & same_tb] = ch.COLLISION
            cls[in_range & ~same_tb] = ch.OK
            cls[hd] = ch.HD
        record = dist <= self.max_record_m
        record &= tx_vids[:, None] != ids[None, :]

        if self.reward_range is not None and not self.collect:
            self.reward_ok += int(np.count_nonzero(record & (cls == ch.OK)))
            self.reward_total += int(np.count_nonzero(record))
        if not self.collect and self.trace is None:
            return
        for m in range(self.pool.subframes):
            rows = np.nonzero(tx_ms == m)[0]
            if not len(rows):
                continue
            sub = record[rows]
            ti, ri = np.nonzero(sub)
            batch = ch.OutcomeBatch(
                t_ms=t0 + m, tx=tx_vids[rows][ti], rx=ids[ri],
                msg=tx_msgs[rows][ti], cls=cls[rows][ti, ri], sinr_db=None,
                dist=dist[rows][ti, ri])
            self._consume_batch(batch, 0, 0)
        if self.collect:
            for msg in tx_msgs:
                self._msg_latency.pop(int(msg), None)

    # -- main loop -----------------------------------------------------------------

    def run(self, until_ms, stop_on_entry=None):
        """Advance through all events at t < until_ms.

        `stop_on_entry`, when given, is called after each processed entry
        batch; a truthy return pauses the run (resume by calling run again).
        """
        if not self._started:
            self._start()
            if stop_on_entry is not None and self.entry_count and stop_on_entry():
                return
        period = self.pool.period_ms
        substep = self.scenario.mobility.substep_ms
        while self.now < until_ms:
            t_tx = self._pending_heap[0] if self._pending_heap else _INF
            t_gen = self._next_gen if self._next_gen is not None else _INF
            t_sense = self._next_sense if self._needs_sensing else _INF
            t = min(self._next_substep, t_gen, t_tx, t_sense)
            if t >= until_ms:
                self.now = until_ms
                return
            self.now = t
            entered = False
            if t == self._next_substep:
                entries, exits = self.world.step(t - substep, substep)
                self._process_exits(exits)
                self._process_entries(entries)
                entered = bool(entries)
                self._next_substep += substep
                self._next_gen = self.traffic.next_generation_time(t)
            if t == self._next_gen:
                self._generate()
                self._next_gen = self.traffic.next_generation_time(t + 1)
            if self._needs_sensing and t == self._next_sense:
                self._adjudicate_tick(t)
                self._next_sense = self._next_sense_tick(t + 1)
            elif self._pending_heap and self._pending_heap[0] == t:
                t0 = t - t % period
                t_end = t0 + self.pool.subframes
                gen_after = self._next_gen if self._next_gen is not None else _INF
                if (self._fast_protocol and self._next_substep >= t_end
                        and gen_after >= t_end and until_ms >= t_end):
                    self._adjudicate_period_fast(t0)
                    self.now = t_end - 1
                else:
                    self._adjudicate_tick(t)
            if entered and stop_on_entry is not None and stop_on_entry():
                return

    # -- training hooks ---------------------------------------------------------------

    def take_reward_window(self):
        out = (self.reward_ok, self.reward_total)
        self.reward_ok = 0
        self.reward_total = 0
        return out
