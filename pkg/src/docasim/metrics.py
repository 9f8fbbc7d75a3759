"""Evaluation metrics: distance-binned PRR, awareness probability, per-user
fairness, packet inter-reception time, latency, and scheduling-loss
decomposition against a propagation-only reference.

All aggregation is streaming: the aggregator consumes per-subframe outcome
batches and never retains raw pair records.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import OK
from .config import MetricsConfig


def awareness_probability(p: float, k: int, n: int) -> float:
    """Probability of at least n successes out of k at per-packet rate p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    if not 0 <= n <= k:
        raise ValueError("need 0 <= n <= k")
    return sum(math.comb(k, j) * p ** j * (1.0 - p) ** (k - j) for j in range(n, k + 1))


@dataclass
class DistStats:
    mean: float
    median: float
    q25: float
    q75: float
    p001: float
    p999: float
    count: int


def _dist_stats(samples) -> DistStats:
    a = np.asarray(samples, dtype=float)
    if len(a) == 0:
        return DistStats(*([float("nan")] * 6), count=0)
    q = np.percentile(a, [50, 25, 75, 0.1, 99.9])
    return DistStats(mean=float(a.mean()), median=float(q[0]), q25=float(q[1]),
                     q75=float(q[2]), p001=float(q[3]), p999=float(q[4]),
                     count=len(a))


class MetricsAggregator:
    """Single-writer, associatively mergeable metric accumulator."""

    def __init__(self, cfg: MetricsConfig):
        self.cfg = cfg
        self.lows = np.array([b[0] for b in cfg.prr_bins], dtype=float)
        self.highs = np.array([b[1] for b in cfg.prr_bins], dtype=float)
        self.n_bins = len(cfg.prr_bins)
        self.warmup_ms = int(cfg.warmup_s * 1000)
        self.interval_ms = int(cfg.prr_interval_s * 1000)
        self.user_range_m = cfg.max_bin_edge
        # interval -> (n_bins, 2) [ok, total], grown on demand
        self._intervals: dict[int, np.ndarray] = {}
        self._user: dict[int, list] = {}            # vid -> [ok, total]
        self._pir_last: dict[tuple, int] = {}       # (tx, rx) -> last success t
        self._pir_samples: list[int] = []
        self._latency: dict[int, int] = {}          # latency ms -> count

    # -- ingestion ------------------------------------------------------------

    def consume(self, batch, latencies_by_msg=None):
        """Add one subframe's outcome batch; latencies keyed by msg id."""
        t = batch.t_ms
        if t < self.warmup_ms or len(batch) == 0:
            return
        ok = batch.cls == OK
        dist = batch.dist
        idx = np.searchsorted(self.lows, dist, side="right") - 1
        valid = idx >= 0
        idx = np.where(valid, idx, 0)
        valid &= dist < self.highs[idx]
        interval = (t - self.warmup_ms) // self.interval_ms
        row = self._intervals.get(interval)
        if row is None:
            row = self._intervals[interval] = np.zeros((self.n_bins, 2), dtype=np.int64)
        np.add.at(row[:, 1], idx[valid], 1)
        np.add.at(row[:, 0], idx[valid], ok[valid])

        in_user = dist <= self.user_range_m
        for tx in np.unique(batch.tx[in_user]):
            sel = in_user & (batch.tx == tx)
            cell = self._user.setdefault(int(tx), [0, 0])
            cell[0] += int(np.count_nonzero(ok & sel))
            cell[1] += int(np.count_nonzero(sel))

        pir_sel = ok & (dist <= self.cfg.pir_range_m)
        if np.any(pir_sel):
            t_rx = t + 1  # one subframe of airtime
            for tx, rx in zip(batch.tx[pir_sel], batch.rx[pir_sel]):
                key = (int(tx), int(rx))
                last = self._pir_last.get(key)
                if last is not None:
                    self._pir_samples.append(t_rx - last)
                self._pir_last[key] = t_rx

        if latencies_by_msg is not None:
            for msg in batch.msg[ok]:
                lat = latencies_by_msg[int(msg)]
                self._latency[lat] = self._latency.get(lat, 0) + 1

    def merge(self, other: "MetricsAggregator") -> "MetricsAggregator":
        """Combine aggregates from an independent instance (multi-seed runs)."""
        for iv, row in other._intervals.items():
            mine = self._intervals.get(iv)
            if mine is None:
                self._intervals[iv] = row.copy()
            else:
                mine += row
        for vid, cell in other._user.items():
            mine = self._user.setdefault(vid, [0, 0])
            mine[0] += cell[0]
            mine[1] += cell[1]
        self._pir_samples.extend(other._pir_samples)
        for lat, cnt in other._latency.items():
            self._latency[lat] = self._latency.get(lat, 0) + cnt
        return self

    # -- results ---------------------------------------------------------------

    def prr_by_bin(self):
        """Per bin: (mean over intervals, std over intervals, pooled ratio)."""
        out = []
        rows = list(self._intervals.values())
        for b in range(self.n_bins):
            ratios = [r[b, 0] / r[b, 1] for r in rows if r[b, 1] > 0]
            ok = sum(int(r[b, 0]) for r in rows)
            tot = sum(int(r[b, 1]) for r in rows)
            pooled = ok / tot if tot else float("nan")
            if ratios:
                out.append((float(np.mean(ratios)), float(np.std(ratios)), pooled))
            else:
                out.append((float("nan"), float("nan"), pooled))
        return out

    def pooled_prr(self, max_distance_m=None):
        """Single OK/total ratio over all bins up to max_distance_m."""
        ok = tot = 0
        for b, (lo, hi) in enumerate(self.cfg.prr_bins):
            if max_distance_m is not None and hi > max_distance_m:
                continue
            for r in self._intervals.values():
                ok += int(r[b, 0])
                tot += int(r[b, 1])
        return ok / tot if tot else float("nan")

    def per_user_prr(self):
        return {vid: cell[0] / cell[1]
                for vid, cell in sorted(self._user.items()) if cell[1] > 0}

    def fairness(self) -> float:
        """Population std of per-user mean PRRs."""
        vals = list(self.per_user_prr().values())
        return float(np.std(vals)) if vals else float("nan")

    def pir_stats(self) -> DistStats:
        return _dist_stats(self._pir_samples)

    def pir_samples(self):
        return list(self._pir_samples)

    def latency_stats(self) -> DistStats:
        samples = np.repeat(np.fromiter(self._latency.keys(), dtype=int),
                            np.fromiter(self._latency.values(), dtype=int))
        return _dist_stats(samples)

    def latency_values(self):
        return dict(sorted(self._latency.items()))


def loss_decomposition(achieved: MetricsAggregator, reference: MetricsAggregator):
    """Per bin: reference PRR minus achieved PRR, in percent."""
    if achieved.cfg.prr_bins != reference.cfg.prr_bins:
        raise ValueError("loss decomposition needs identical bin layouts")
    ach = achieved.prr_by_bin()
    ref = reference.prr_by_bin()
    out = []
    for (am, _, ap), (rm, _, rp) in zip(ach, ref):
        if math.isnan(ap) or math.isnan(rp):
            out.append(float("nan"))
        else:
            out.append((rp - ap) * 100.0)
    return out


def empirical_awareness(success_times_ms, window_ms, n_required, horizon_ms,
                        step_ms=100):
    """Fraction of sliding windows holding at least n successful receptions."""
    times = np.asarray(sorted(success_times_ms))
    hits = total = 0
    for start in range(0, max(horizon_ms - window_ms, 0) + 1, step_ms):
        cnt = np.searchsorted(times, start + window_ms, side="right") - \
            np.searchsorted(times, start, side="left")
        hits += int(cnt >= n_required)
        total += 1
    return hits / total if total else float("nan")
