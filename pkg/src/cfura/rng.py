"""Seeded random-stream management.

One master seed spawns independent named sub-streams so that each random
ingredient of an experiment (codebooks, activities, channels, noise, SE
sampling, conditional-moment sampling) is reproducible on its own, and
Monte Carlo trials can run concurrently without sharing generator state.
"""

from __future__ import annotations

import numpy as np

# Fixed spawn order; extending this list is backwards compatible, reordering
# is not (it changes every derived stream).
STREAM_NAMES = ("codebook", "activity", "channel", "noise", "se", "cond", "trials")


class StreamFactory:
    """Derives named, mutually independent generators from one master seed."""

    def __init__(self, seed):
        self.seed = int(seed)
        root = np.random.SeedSequence(self.seed)
        children = root.spawn(len(STREAM_NAMES))
        self._seq = dict(zip(STREAM_NAMES, children))

    def generator(self, name):
        """Fresh Generator for a named stream (same name -> same stream)."""
        return np.random.default_rng(self._seq[name])

    def trial_generators(self, n_trials, names=("activity", "channel", "noise")):
        """Per-trial scene streams: list of dicts name -> Generator.

        Trial t always receives the same streams regardless of how many
        trials run or in which order they are scheduled.
        """
        per_name = {name: self._seq[name].spawn(n_trials) for name in names}
        return [
            {name: np.random.default_rng(per_name[name][t]) for name in names}
            for t in range(n_trials)
        ]

    def spawn_seed(self, name):
        """Entropy fingerprint of a named stream, for the run manifest."""
        seq = self._seq[name]
        return int(seq.generate_state(1, np.uint64)[0])


def complex_normal(rng, shape, var=1.0):
    """Circularly-symmetric complex Gaussian: real/imag parts N(0, var/2)."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
