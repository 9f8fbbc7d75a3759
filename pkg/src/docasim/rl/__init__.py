"""Centralized learning scheduler: state encoding, convolutional policy and
value networks with hand-rolled backprop, augmentation, and the parallel
actor-critic trainer."""
