"""Convolutional policy and value networks with hand-rolled backprop.

Architecture, for a pool of R = K*M resources and observation (R, 4):

  input layer   4 filter sets (one per observation column), 16 1D filters of
                length 10 each, valid convolution, tanh
  hidden layer  the 64 feature maps are concatenated into one flat sequence
                of length 64*(R-9); 32 single-channel 1D filters of length
                10, valid convolution, tanh
  output layer  dense, no bias: R logits (actor) or one scalar (critic)

Weight counts are exactly 4*16*10, 32*10 and 32*(64*(R-9)-9)*head. All
convolutions run through sliding-window views plus matmul, so forward and
backward stay a handful of BLAS calls.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

FILTER_LEN = 10
N_IN_FILTERS = 16
N_HIDDEN_FILTERS = 32
N_COLUMNS = 4


class ConvNet:
    """Shared trunk + linear head; head_units = R for the actor, 1 for the critic."""

    def __init__(self, km: int, head_units: int, rng=None, dtype=np.float64,
                 zero_head=False):
        if km < FILTER_LEN:
            raise ValueError(f"pool size {km} smaller than the filter length "
                             f"{FILTER_LEN}")
        self.km = km
        self.head = head_units
        self.dtype = np.dtype(dtype)
        self.l1 = km - FILTER_LEN + 1
        self.hidden_in = N_COLUMNS * N_IN_FILTERS * self.l1
        self.l2 = self.hidden_in - FILTER_LEN + 1
        self.flat = N_HIDDEN_FILTERS * self.l2
        if rng is None:
            rng = np.random.default_rng(0)
        scale = 1.0 / np.sqrt(FILTER_LEN)
        self.w_in = (rng.standard_normal((N_COLUMNS, N_IN_FILTERS, FILTER_LEN))
                     * scale).astype(self.dtype)
        self.w_h = (rng.standard_normal((N_HIDDEN_FILTERS, FILTER_LEN))
                    * scale).astype(self.dtype)
        if zero_head:
            # Uniform initial policy / zero initial value; the trunk starts
            # learning as soon as the head moves off zero.
            self.w_out = np.zeros((head_units, self.flat), dtype=self.dtype)
        else:
            self.w_out = (rng.standard_normal((head_units, self.flat))
                          / np.sqrt(self.flat)).astype(self.dtype)

    # -- parameter plumbing ---------------------------------------------------

    def params(self):
        return [self.w_in, self.w_h, self.w_out]

    def set_params(self, params):
        self.w_in, self.w_h, self.w_out = [p.astype(self.dtype) for p in params]

    def copy_params(self):
        return [p.copy() for p in self.params()]

    def param_counts(self):
        return {
            "input": N_COLUMNS * N_IN_FILTERS * FILTER_LEN,
            "hidden": N_HIDDEN_FILTERS * FILTER_LEN,
            "output": self.head * self.flat,
        }

    def fan_in(self):
        """Per-layer input widths; the update rule scales gradients by 1/fan_in
        so one step size works across layers of very different dimension."""
        return [FILTER_LEN, FILTER_LEN, self.flat]

    # -- forward ----------------------------------------------------------------

    def forward(self, state, need_cache=False):
        """state (R, 4) -> head outputs; cache holds activations for backward."""
        out, cache = self.forward_batch(state[None, :, :], need_cache=need_cache)
        return out[0], cache

    def forward_batch(self, states, need_cache=False):
        """states (B, R, 4) -> (B, head)."""
        B = states.shape[0]
        cols = np.ascontiguousarray(np.swapaxes(states, 1, 2), dtype=self.dtype)
        win1 = sliding_window_view(cols, FILTER_LEN, axis=2)   # (B, 4, L1, 10)
        a1 = np.empty((B, N_COLUMNS, N_IN_FILTERS, self.l1), dtype=self.dtype)
        for c in range(N_COLUMNS):
            z = win1[:, c] @ self.w_in[c].T                    # (B, L1, 16)
            a1[:, c] = np.tanh(np.swapaxes(z, 1, 2))
        h = a1.reshape(B, self.hidden_in)
        win2 = sliding_window_view(h, FILTER_LEN, axis=1)      # (B, L2, 10)
        a2 = np.tanh(win2 @ self.w_h.T)                        # (B, L2, 32)
        flat = a2.reshape(B, self.flat)
        out = flat @ self.w_out.T                              # (B, head)
        cache = (win1, a1, h, a2, flat) if need_cache else None
        return out, cache

    # -- backward ----------------------------------------------------------------

    def backward_batch(self, cache, dout):
        """Gradients of sum_b dout[b] . out[b] w.r.t. all weights."""
        win1, a1, h, a2, flat = cache
        B = flat.shape[0]
        dout = dout.astype(self.dtype, copy=False)
        g_out = dout.T @ flat                                   # (head, flat)
        dflat = dout @ self.w_out                               # (B, flat)
        dz2 = (1.0 - a2 * a2) * dflat.reshape(B, self.l2, N_HIDDEN_FILTERS)
        win2 = sliding_window_view(h, FILTER_LEN, axis=1)
        g_h = np.einsum("blf,blw->fw", dz2, win2, optimize=True)
        dh = np.zeros_like(h)
        for j in range(FILTER_LEN):
            dh[:, j:j + self.l2] += dz2 @ self.w_h[:, j]
        da1 = dh.reshape(B, N_COLUMNS, N_IN_FILTERS, self.l1)
        dz1 = (1.0 - a1 * a1) * da1
        g_in = np.empty_like(self.w_in)
        for c in range(N_COLUMNS):
            g_in[c] = np.einsum("bfl,blw->fw", dz1[:, c], win1[:, c],
                                optimize=True)
        return [g_in, g_h, g_out]


def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def actor_probabilities(net: ConvNet, state):
    logits, _ = net.forward(state)
    return softmax(logits)


def grad_log_prob(net: ConvNet, state, action):
    """Gradients of log pi(action | state) w.r.t. actor weights."""
    logits, cache = net.forward(state, need_cache=True)
    p = softmax(logits)
    dlogits = -p
    dlogits[action] += 1.0
    return net.backward_batch(cache, dlogits[None, :]), p


def critic_gradients(net: ConvNet, state):
    """(value, gradients of v(state) w.r.t. critic weights)."""
    out, cache = net.forward(state, need_cache=True)
    dout = np.ones((1, 1), dtype=net.dtype)
    return float(out[0]), net.backward_batch(cache, dout)
