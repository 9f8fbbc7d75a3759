"""Reception adjudication under the protocol and SINR channel models.

Protocol model: a message is decoded iff the receiver is silent in the
subframe, within range of the transmitter, and no other transmitter uses the
same TB within range of the receiver.

SINR model: received power follows a log-distance path loss plus per-link
log-normal shadowing with a distance-based decorrelation; decoding requires
SINR above a threshold, with interference summed over all co-TB transmitters.

Every failed reception is classified: HD (receiver transmitting in the same
subframe), COLLISION (would decode with interferers removed) or PROPAGATION
(fails even without interference).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import ChannelConfig

OK, HD, COLLISION, PROPAGATION = 0, 1, 2, 3
CLASS_NAMES = ("OK", "HD", "COLLISION", "PROPAGATION")


@dataclass
class ReceptionOutcome:
    tx: int
    rx: int
    msg_id: int
    outcome: str                  # one of CLASS_NAMES
    sinr_db: Optional[float]
    distance_m: float


class OutcomeBatch:
    """All adjudicated (tx, rx) pairs of one subframe, as flat arrays."""

    __slots__ = ("t_ms", "tx", "rx", "msg", "cls", "sinr_db", "dist")

    def __init__(self, t_ms, tx, rx, msg, cls, sinr_db, dist):
        self.t_ms = t_ms
        self.tx = tx
        self.rx = rx
        self.msg = msg
        self.cls = cls
        self.sinr_db = sinr_db
        self.dist = dist

    def __len__(self):
        return len(self.tx)

    def records(self):
        sinr = self.sinr_db
        return [
            ReceptionOutcome(
                tx=int(self.tx[i]), rx=int(self.rx[i]), msg_id=int(self.msg[i]),
                outcome=CLASS_NAMES[self.cls[i]],
                sinr_db=None if sinr is None else float(sinr[i]),
                distance_m=float(self.dist[i]))
            for i in range(len(self.tx))
        ]


def pathloss_db(distance_m, cfg: ChannelConfig):
    """Log-distance path loss; distances below the floor use the floor."""
    d = np.maximum(distance_m, cfg.min_pathloss_distance_m)
    return (cfg.pathloss_a * np.log10(d) + cfg.pathloss_b
            + cfg.pathloss_c * np.log10(cfg.carrier_ghz / 5.0))


def noise_power_dbm(cfg: ChannelConfig) -> float:
    return (cfg.noise_psd_dbm_hz
            + 10.0 * np.log10(cfg.subchannel_bandwidth_hz)
            + cfg.rx_noise_figure_db)


def sinr_db(signal_dbm: float, interferer_dbm, cfg: ChannelConfig) -> float:
    """SINR from received powers; interference summed in the linear domain."""
    noise = 10.0 ** (noise_power_dbm(cfg) / 10.0)
    interf = sum(10.0 ** (p / 10.0) for p in interferer_dbm)
    return signal_dbm - 10.0 * np.log10(noise + interf)


class ShadowingField:
    """Per-directed-link shadowing, AR(1) over the distance moved.

    Link state is stored per (tx slot, rx slot). Each endpoint's displacement
    since the link was last sampled decorrelates the process with
    exp(-moved / decorr); the marginal stays Normal(0, std).
    """

    def __init__(self, cfg: ChannelConfig, rng, capacity=64):
        self.std = cfg.shadowing_std_db
        self.decorr = cfg.shadowing_decorr_m
        self.rng = rng
        self._alloc(capacity)

    def _alloc(self, n):
        self.cap = n
        self.val = np.full((n, n), np.nan)
        self.lx_t = np.zeros((n, n))
        self.ly_t = np.zeros((n, n))
        self.lx_r = np.zeros((n, n))
        self.ly_r = np.zeros((n, n))

    def _grow(self, needed):
        old_val, on = self.val, self.cap
        olds = (self.lx_t, self.ly_t, self.lx_r, self.ly_r)
        n = max(needed, 2 * self.cap)
        self._alloc(n)
        self.val[:on, :on] = old_val
        for new, old in zip((self.lx_t, self.ly_t, self.lx_r, self.ly_r), olds):
            new[:on, :on] = old

    def clear_slot(self, slot: int):
        if slot < self.cap:
            self.val[slot, :] = np.nan
            self.val[:, slot] = np.nan

    def sample(self, tx_slot, tx_x, tx_y, rx_slots, rx_x, rx_y):
        """Current shadowing (dB) for links tx -> each rx, advancing the AR state."""
        hi = max(int(tx_slot), int(rx_slots.max()) if len(rx_slots) else 0) + 1
        if hi > self.cap:
            self._grow(hi)
        row_val = self.val[tx_slot]
        v = row_val[rx_slots]
        fresh = np.isnan(v)
        moved = np.hypot(tx_x - self.lx_t[tx_slot, rx_slots],
                         tx_y - self.ly_t[tx_slot, rx_slots])
        moved += np.hypot(rx_x - self.lx_r[tx_slot, rx_slots],
                          rx_y - self.ly_r[tx_slot, rx_slots])
        rho = np.exp(-moved / self.decorr)
        noise = self.rng.standard_normal(len(rx_slots)) * self.std
        v = rho * v + np.sqrt(1.0 - rho * rho) * noise
        v[fresh] = noise[fresh]
        self.val[tx_slot, rx_slots] = v
        self.lx_t[tx_slot, rx_slots] = tx_x
        self.ly_t[tx_slot, rx_slots] = tx_y
        self.lx_r[tx_slot, rx_slots] = rx_x
        self.ly_r[tx_slot, rx_slots] = rx_y
        return v


def received_power_dbm(cfg, dist, shadow_db):
    return cfg.p_tx_dbm - pathloss_db(dist, cfg) + cfg.link_budget_offset_db - shadow_db


def adjudicate_subframe(t_ms, tx_vids, tx_ks, tx_msgs, tx_xy, all_vids, all_xy,
                        cfg: ChannelConfig, shadowing=None, tx_slots=None,
                        all_slots=None, max_record_m=np.inf, collect=True):
    """Adjudicate all transmissions sharing one subframe.

    Returns (batch_or_None, ok_pairs, in_range_pairs, rx_power_dbm) where the
    pair counters cover recorded pairs and rx_power_dbm is the (n_tx, n_all)
    matrix of received powers (None for the protocol model).
    """
    n_tx = len(tx_vids)
    n_all = len(all_vids)
    tx_x, tx_y = tx_xy
    all_x, all_y = all_xy
    dist = np.hypot(tx_x[:, None] - all_x[None, :], tx_y[:, None] - all_y[None, :])
    is_tx = np.isin(all_vids, tx_vids)
    self_pair = tx_vids[:, None] == all_vids[None, :]

    powers = None
    if cfg.model == "protocol":
        in_range = dist <= cfg.r_tx_m
        same_tb_in_range = np.zeros((n_tx, n_all), dtype=bool)
        for k in np.unique(tx_ks):
            group = tx_ks == k
            cover = in_range[group]
            others = cover.sum(axis=0)[None, :] - cover
            same_tb_in_range[group] = others > 0
        decodable = in_range & ~same_tb_in_range
        if cfg.reference_mode:
            cls = np.where(in_range, OK, PROPAGATION)
        else:
            cls = np.full((n_tx, n_all), PROPAGATION, dtype=np.int8)
            cls[in_range & same_tb_in_range] = COLLISION
            cls[decodable] = OK
            cls[:, is_tx] = HD
        sinr = None
    else:
        shadow = np.empty((n_tx, n_all))
        for i in range(n_tx):
            shadow[i] = shadowing.sample(int(tx_slots[i]), tx_x[i], tx_y[i],
                                         all_slots, all_x, all_y)
        powers = received_power_dbm(cfg, dist, shadow)
        lin = 10.0 ** (powers / 10.0)
        noise = 10.0 ** (noise_power_dbm(cfg) / 10.0)
        interf = np.zeros((n_tx, n_all))
        for k in np.unique(tx_ks):
            group = tx_ks == k
            interf[group] = lin[group].sum(axis=0)[None, :] - lin[group]
        gamma = cfg.sinr_threshold_db
        with np.errstate(divide="ignore"):
            sinr = 10.0 * np.log10(lin / (noise + interf))
            snr = 10.0 * np.log10(lin / noise)
        if cfg.reference_mode:
            cls = np.where(snr >= gamma, OK, PROPAGATION).astype(np.int8)
            sinr = snr
        else:
            cls = np.full((n_tx, n_all), PROPAGATION, dtype=np.int8)
            cls[(sinr < gamma) & (snr >= gamma)] = COLLISION
            cls[sinr >= gamma] = OK
            cls[:, is_tx] = HD

    record = (dist <= max_record_m) & ~self_pair
    ok_pairs = int(np.count_nonzero(record & (cls == OK)))
    n_pairs = int(np.count_nonzero(record))
    if not collect:
        return None, ok_pairs, n_pairs, powers

    ti, ri = np.nonzero(record)
    batch = OutcomeBatch(
        t_ms=t_ms,
        tx=tx_vids[ti],
        rx=all_vids[ri],
        msg=tx_msgs[ti],
        cls=cls[ti, ri],
        sinr_db=None if sinr is None else sinr[ti, ri],
        dist=dist[ti, ri],
    )
    return batch, ok_pairs, n_pairs, powers
