"""Order randomization of the resource grid.

The convolutional policy must not key on where a TB sits in the raster, only
on subframe co-membership. Training therefore shuffles subframe groups first
and subchannels second; both the state rows and the action distribution
follow the shuffled raster, and a sampled action maps back through the
inverse permutation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AugmentationPermutation:
    """Raster permutation induced by (subframe shuffle, subchannel shuffle).

    forward[old] = new position; backward[new] = old position. Rows sharing a
    subframe keep sharing one after application.
    """

    subchannels: int
    subframes: int
    forward: np.ndarray
    backward: np.ndarray

    def permute_state(self, state):
        return state[self.backward]

    def permute_distribution(self, probs):
        return probs[self.backward]

    def true_action(self, permuted_action: int) -> int:
        return int(self.backward[permuted_action])

    def permuted_action(self, true_action: int) -> int:
        return int(self.forward[true_action])


def make_permutation(subchannels, subframes, sigma_t, sigma_f):
    sigma_t = np.asarray(sigma_t)
    sigma_f = np.asarray(sigma_f)
    old_k, old_m = np.divmod(np.arange(subchannels * subframes), subframes)
    forward = sigma_f[old_k] * subframes + sigma_t[old_m]
    backward = np.argsort(forward)
    return AugmentationPermutation(subchannels, subframes, forward, backward)


def sample_permutation(subchannels, subframes, rng) -> AugmentationPermutation:
    return make_permutation(subchannels, subframes,
                            rng.permutation(subframes),
                            rng.permutation(subchannels))


def identity_permutation(subchannels, subframes) -> AugmentationPermutation:
    idx = np.arange(subchannels * subframes)
    return AugmentationPermutation(subchannels, subframes, idx, idx.copy())
