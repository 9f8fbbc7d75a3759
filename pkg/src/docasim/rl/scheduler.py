"""Entry-time scheduling with a trained (or fresh) policy network."""
from __future__ import annotations

import numpy as np

from .augment import identity_permutation
from .network import ConvNet, softmax
from .state import StateBuilder


class PolicyScheduler:
    """Assigns one TB per entering vehicle by querying the actor network.

    Rows of a master pool outside the active pool get zero probability and
    the remainder is renormalized; in "argmax" mode the modal TB is taken,
    in "sample" mode the TB is drawn from the distribution.
    """

    name = "rl"
    needs_sensing = False

    def __init__(self, actor: ConvNet, builder: StateBuilder, rng, mode="argmax"):
        if actor.km != builder.rows or actor.head != builder.rows:
            raise ValueError("actor action space does not match the master pool")
        self.actor = actor
        self.builder = builder
        self.rng = rng
        if mode not in ("argmax", "sample"):
            raise ValueError("mode must be 'argmax' or 'sample'")
        self.mode = mode
        self.assignments: list[tuple[int, int]] = []   # (vid, active raster)

    def distribution(self, state):
        logits, _ = self.actor.forward(state.astype(self.actor.dtype))
        p = softmax(np.asarray(logits, dtype=np.float64))
        mask = self.builder.mask_rows
        if mask is not None:
            p[mask] = 0.0
            p /= p.sum()
        return p

    def on_entry(self, sim, veh) -> int:
        state = self.builder.observe(sim.now, veh.direction)
        p = self.distribution(state)
        if self.mode == "argmax":
            a = int(np.argmax(p))
        else:
            a = int(self.rng.choice(len(p), p=p))
        active_r = self.builder.master_to_active(a)
        assert active_r is not None, "masked action escaped renormalization"
        self.builder.record(veh.vid, veh.entry_time_ms, active_r, veh.direction)
        self.assignments.append((veh.vid, active_r))
        return active_r

    def note_external_assignment(self, sim, veh, r):
        self.builder.record(veh.vid, veh.entry_time_ms, r, veh.direction)
        self.assignments.append((veh.vid, r))

    def on_message(self, sim, veh, t_gen):
        return veh.assigned_tb


def fresh_policy_scheduler(scenario, rng, master=(None, None), mode="sample",
                           seed=0):
    """Untrained policy scheduler for a scenario (random weights)."""
    mk, mm = master
    builder = StateBuilder(scenario.pool, scenario.doca,
                           scenario.mobility.avg_speed_ms,
                           master_k=mk, master_m=mm)
    actor = ConvNet(builder.rows, builder.rows,
                    rng=np.random.default_rng(seed))
    return PolicyScheduler(actor, builder, rng, mode=mode)
