"""Parallel actor-critic training.

Workers run independent environment instances and gather epochs of
(state, action, reward) experience with a locally snapshotted policy. At
epoch end a worker computes summed gradients and applies them atomically to
the shared parameter store; the store's epoch counter drives the step-size
schedule alpha = lr0 / (1 + lr_decay * ep^lr_pow).

Per step the return is the undiscounted reward sum to the epoch end, the
advantage is that return minus the critic's value, the actor ascends
advantage-weighted log-probability gradients and the critic ascends
advantage-weighted value gradients.
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from ..config import ScenarioConfig, TrainerConfig
from ..engine import Simulation
from .augment import identity_permutation, sample_permutation
from .network import ConvNet, softmax
from .state import StateBuilder


def compute_reward(ok, total, prev_reward):
    """-10 * (1 - PRR) over the window; empty windows repeat the last reward."""
    if total > 0:
        return -10.0 * (1.0 - ok / total)
    if prev_reward is not None:
        return prev_reward
    return 0.0


def fixed_horizon_returns(rewards, start, count, horizon):
    """G_i = sum of the `horizon` rewards from step i on, for i in [start, start+count).

    Requires rewards through index start + count - 1 + horizon - 1.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if len(r) < start + count + horizon - 1:
        raise ValueError("not enough rewards for the requested returns")
    c = np.concatenate(([0.0], np.cumsum(r)))
    idx = np.arange(start, start + count)
    return c[idx + horizon] - c[idx]


@dataclass
class TrainedPolicy:
    actor_params: list
    critic_params: list
    master_k: int
    master_m: int
    epochs: int
    trainer: TrainerConfig

    @property
    def rows(self):
        return self.master_k * self.master_m

    def make_actor(self, dtype=np.float64) -> ConvNet:
        net = ConvNet(self.rows, self.rows, dtype=dtype)
        net.set_params(self.actor_params)
        return net

    def save(self, path):
        meta = dict(master_k=self.master_k, master_m=self.master_m,
                    epochs=self.epochs, format=1,
                    trainer=self.trainer.__dict__)
        arrays = {f"actor_{i}": p for i, p in enumerate(self.actor_params)}
        arrays.update({f"critic_{i}": p for i, p in enumerate(self.critic_params)})
        np.savez(path, meta=json.dumps(meta), **arrays)

    @classmethod
    def load(cls, path) -> "TrainedPolicy":
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != 1:
            raise ValueError(f"unsupported checkpoint format in {path}")
        actor = [data[f"actor_{i}"] for i in range(3)]
        critic = [data[f"critic_{i}"] for i in range(3)]
        tc = TrainerConfig(**meta["trainer"])
        return cls(actor_params=actor, critic_params=critic,
                   master_k=meta["master_k"], master_m=meta["master_m"],
                   epochs=meta["epochs"], trainer=tc)


class ParameterStore:
    """Shared weights with atomic snapshot and apply-delta operations."""

    def __init__(self, actor: ConvNet, critic: ConvNet, cfg: TrainerConfig):
        self._actor = actor.copy_params()
        self._critic = critic.copy_params()
        self.cfg = cfg
        self.lock = threading.Lock()
        self.epoch = 0
        self.skipped_nonfinite = 0

    def snapshot(self):
        with self.lock:
            return ([p.copy() for p in self._actor],
                    [p.copy() for p in self._critic], self.epoch)

    def apply(self, alpha, g_actor, g_critic):
        """Gradient-ascent step; returns the epoch index it produced."""
        for g in (*g_actor, *g_critic):
            if not np.all(np.isfinite(g)):
                with self.lock:
                    self.skipped_nonfinite += 1
                return None
        with self.lock:
            for p, g in zip(self._actor, g_actor):
                p += alpha * g
            for p, g in zip(self._critic, g_critic):
                p += alpha * g
            self.epoch += 1
            return self.epoch


class ExperienceCollector:
    """Entry-time hook gathering (state, action, reward) tuples in one env."""

    name = "rl-train"
    needs_sensing = False

    def __init__(self, actor: ConvNet, builder: StateBuilder, cfg: TrainerConfig,
                 rng):
        self.actor = actor
        self.builder = builder
        self.cfg = cfg
        self.rng = rng
        self.steps: list = []        # (state, action) per decision
        self.rewards: list = []      # rewards[i] = immediate reward of steps[i]
        self.pending = None
        self.prev_reward = None
        self.first_action_done = False
        self.empty_first_windows = 0
        self.forced_valid = 0

    def completed_steps(self):
        return len(self.rewards)

    def _finalize_pending(self, sim):
        ok, total = sim.take_reward_window()
        if self.pending is None:
            return
        r = compute_reward(ok, total, self.prev_reward)
        if total == 0 and self.prev_reward is None:
            self.empty_first_windows += 1
        self.prev_reward = r
        self.steps.append(self.pending)
        self.rewards.append(r)
        self.pending = None

    def _random_valid_action(self):
        return int(self.rng.integers(0, self.builder.active.size))

    def on_entry(self, sim, veh) -> int:
        self._finalize_pending(sim)
        if not self.first_action_done and self.cfg.randomize_first_action:
            self.first_action_done = True
            active_r = self._random_valid_action()
            self.builder.record(veh.vid, veh.entry_time_ms, active_r, veh.direction)
            return active_r
        self.first_action_done = True
        state = self.builder.observe(sim.now, veh.direction, dtype=self.actor.dtype)
        for attempt in range(1000):
            perm = (sample_permutation(self.builder.master_k, self.builder.master_m,
                                       self.rng) if self.cfg.augment
                    else identity_permutation(self.builder.master_k,
                                              self.builder.master_m))
            s_p = perm.permute_state(state)
            logits, _ = self.actor.forward(s_p)
            p = softmax(np.asarray(logits, dtype=np.float64))
            a_p = int(self.rng.choice(len(p), p=p / p.sum()))
            active_r = self.builder.master_to_active(perm.true_action(a_p))
            if active_r is not None:
                break
            # Masked pick: penalize and ask again; no time passes.
            self.steps.append((s_p, a_p))
            self.rewards.append(self.cfg.invalid_action_penalty)
        else:
            self.forced_valid += 1
            active_r = self._random_valid_action()
            s_p = state
            a_p = int(self.builder.row_map[active_r])
        self.pending = (s_p, a_p)
        self.builder.record(veh.vid, veh.entry_time_ms, active_r, veh.direction)
        return active_r

    def note_external_assignment(self, sim, veh, r):
        self.builder.record(veh.vid, veh.entry_time_ms, r, veh.direction)

    def on_message(self, sim, veh, t_gen):
        return veh.assigned_tb

    def take_epoch(self, n, horizon):
        """First n steps with their fixed-horizon returns; consumes them."""
        G = fixed_horizon_returns(self.rewards, 0, n, horizon)
        batch = self.steps[:n]
        rewards = self.rewards[:n]
        del self.steps[:n]
        del self.rewards[:n]
        return batch, rewards, G


@dataclass
class CurvePoint:
    epoch: int
    worker: int
    mean_reward: float
    alpha: float


def clip_global_norm(grads, max_norm):
    if max_norm is None or max_norm <= 0:
        return grads
    norm = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if norm > max_norm and np.isfinite(norm):
        scale = max_norm / norm
        return [g * scale for g in grads]
    return grads


def epoch_gradients(actor: ConvNet, critic: ConvNet, states, actions, G,
                    actor_norm=None, critic_norm=None):
    """Summed actor/critic ascent gradients for one epoch of experience.

    The critic's gradients are preconditioned by each layer's fan-in: its
    regression loss has curvature proportional to the squared feature norms
    (the dense head sees tens of thousands of inputs), and the published step
    sizes diverge without this units correction. The actor's softmax
    gradients are self-limiting and stay unscaled.
    """
    G = np.asarray(G, dtype=np.float64)
    values, c_cache = critic.forward_batch(states, need_cache=True)
    delta = G - values[:, 0].astype(np.float64)
    logits, a_cache = actor.forward_batch(states, need_cache=True)
    p = softmax(logits.astype(np.float64))
    dlogits = -p
    dlogits[np.arange(len(actions)), actions] += 1.0
    dlogits *= delta[:, None]
    g_actor = actor.backward_batch(a_cache, dlogits.astype(actor.dtype))
    g_critic = critic.backward_batch(c_cache, delta[:, None].astype(critic.dtype))
    g_critic = [g / f for g, f in zip(g_critic, critic.fan_in())]
    g_actor = clip_global_norm(g_actor, actor_norm)
    g_critic = clip_global_norm(g_critic, critic_norm)
    return g_actor, g_critic, delta


class Worker(threading.Thread):
    def __init__(self, wid, scenario: ScenarioConfig, store: ParameterStore,
                 cfg: TrainerConfig, master, seed, curve, curve_lock, stop_event,
                 max_epochs, gate):
        super().__init__(daemon=True, name=f"trainer-w{wid}")
        self.wid = wid
        self.scenario = scenario
        self.store = store
        self.cfg = cfg
        self.master = master
        self.seed = seed
        self.curve = curve
        self.curve_lock = curve_lock
        self.stop_event = stop_event
        self.max_epochs = max_epochs
        self.gate = gate
        self.local_epochs = 0
        self.error = None

    def run(self):
        try:
            self._run()
        except Exception as exc:   # crash isolation: store stays consistent
            self.error = exc

    def _run(self):
        cfg = self.cfg
        seeds = self.seed.spawn(2)
        rng = np.random.default_rng(seeds[0])
        mk, mm = self.master
        rows = mk * mm
        dtype = np.dtype(cfg.dtype)
        actor = ConvNet(rows, rows, dtype=dtype)
        critic = ConvNet(rows, 1, dtype=dtype)
        a_params, c_params, _ = self.store.snapshot()
        actor.set_params(a_params)
        critic.set_params(c_params)
        builder = StateBuilder(self.scenario.pool, self.scenario.doca,
                               self.scenario.mobility.avg_speed_ms,
                               master_k=mk, master_m=mm)
        collector = ExperienceCollector(actor, builder, cfg, rng)
        sim = Simulation(self.scenario, scheduler=collector,
                         seed=int(seeds[1].generate_state(1)[0]),
                         collect=False, reward_range=tuple(cfg.reward_range_m))
        horizon = int(self.scenario.horizon_s * 1000)
        while not self.stop_event.is_set() and self.store.epoch < self.max_epochs:
            with self.gate:
                if not self._one_epoch(sim, collector, actor, critic, horizon):
                    break  # scenario horizon exhausted

    def _one_epoch(self, sim, collector, actor, critic, horizon):
        cfg = self.cfg
        L = cfg.epoch_len
        need = 2 * L - 1  # returns of the first L steps look L rewards ahead
        sim.run(horizon, stop_on_entry=lambda: collector.completed_steps() >= need)
        if collector.completed_steps() < need:
            return False
        batch, rewards, G = collector.take_epoch(L, L)
        states = np.stack([b[0] for b in batch]).astype(actor.dtype)
        actions = np.array([b[1] for b in batch])
        g_actor, g_critic, _ = epoch_gradients(
            actor, critic, states, actions, G,
            actor_norm=cfg.actor_grad_norm, critic_norm=cfg.critic_grad_norm)
        # The schedule counts this worker's own epochs: each parallel agent
        # anneals its step like a lone agent would.
        alpha = cfg.alpha(self.local_epochs)
        self.local_epochs += 1
        epoch = self.store.apply(alpha, g_actor, g_critic)
        a_params, c_params, _ = self.store.snapshot()
        actor.set_params(a_params)
        critic.set_params(c_params)
        if epoch is not None:
            point = CurvePoint(epoch=epoch, worker=self.wid,
                               mean_reward=float(np.mean(rewards)),
                               alpha=alpha)
            with self.curve_lock:
                self.curve.append(point)
        return True


def train(groups, cfg: TrainerConfig, seed=0, max_epochs=None,
          monitor=None, monitor_interval_s=5.0):
    """Run parallel training.

    groups: list of (scenario, n_workers); the master pool is the maximum of
    the group pools in each dimension. `monitor(store, curve)` runs
    periodically in the calling thread; a truthy return stops training early.
    Returns (TrainedPolicy, curve).
    """
    cfg.validate()
    max_epochs = cfg.max_epochs if max_epochs is None else max_epochs
    mk = max(sc.pool.subchannels for sc, _ in groups)
    mm = max(sc.pool.subframes for sc, _ in groups)
    rows = mk * mm
    init_rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    actor = ConvNet(rows, rows, rng=init_rng, dtype=dtype, zero_head=True)
    critic = ConvNet(rows, 1, rng=init_rng, dtype=dtype, zero_head=True)
    store = ParameterStore(actor, critic, cfg)
    curve: list[CurvePoint] = []
    curve_lock = threading.Lock()
    stop_event = threading.Event()
    n_conc = cfg.concurrent_workers
    if n_conc <= 0:
        n_conc = max(2, min(4, os.cpu_count() or 2))
    gate = threading.Semaphore(n_conc)
    workers = []
    wid = 0
    seeds = np.random.SeedSequence(seed).spawn(sum(n for _, n in groups))
    for scenario, n in groups:
        for _ in range(n):
            workers.append(Worker(wid, scenario, store, cfg, (mk, mm),
                                  seeds[wid], curve, curve_lock, stop_event,
                                  max_epochs, gate))
            wid += 1
    for w in workers:
        w.start()
    try:
        while any(w.is_alive() for w in workers):
            for w in workers:
                w.join(timeout=monitor_interval_s / max(len(workers), 1))
            if monitor is not None and monitor(store, curve):
                stop_event.set()
    finally:
        stop_event.set()
        for w in workers:
            w.join()
    errors = [w.error for w in workers if w.error is not None]
    if errors and store.epoch == 0:
        raise errors[0]
    a_params, c_params, epoch = store.snapshot()
    policy = TrainedPolicy(
        actor_params=[np.asarray(p, dtype=np.float64) for p in a_params],
        critic_params=[np.asarray(p, dtype=np.float64) for p in c_params],
        master_k=mk, master_m=mm, epochs=epoch, trainer=cfg)
    return policy, sorted(curve, key=lambda c: c.epoch)


def smoothed_reward(curve, window):
    """Mean reward over the trailing `window` epochs of the curve."""
    if not curve:
        return float("nan")
    tail = curve[-window:]
    return float(np.mean([c.mean_reward for c in tail]))


def write_learning_curve(path, curve, window=100, manifest_id=""):
    with open(path, "w") as fh:
        fh.write(f"# docasim learning_curve v1 manifest={manifest_id}\n")
        fh.write("epoch,worker,mean_reward,alpha,smoothed\n")
        vals = []
        for c in curve:
            vals.append(c.mean_reward)
            smooth = float(np.mean(vals[-window:]))
            fh.write(f"{c.epoch},{c.worker},{c.mean_reward:.6f},"
                     f"{c.alpha:.8f},{smooth:.6f}\n")
