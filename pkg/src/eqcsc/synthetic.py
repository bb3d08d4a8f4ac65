"""Smooth random clean cubes for desk-scale experiments.

Each cube is a superposition of a few random low-frequency plane waves, each
modulated by a smooth spectral envelope, min-max normalized into
[0.05, 0.95]. The margin keeps clean cubes strictly inside [0, 1] so the
noise generators' clip is exact identity on them.
"""

import numpy as np

from .errors import ShapeError

VALUE_LO = 0.05
VALUE_SPAN = 0.9
MAX_CYCLES = 2.5


def make_cube(bands, height, width, seed, patterns=6):
    """One clean cube of shape (bands, height, width) in [0.05, 0.95]."""
    if bands < 1 or height < 1 or width < 1:
        raise ShapeError(
            f"cube dims must be positive, got ({bands}, {height}, {width})"
        )
    if patterns < 1:
        raise ValueError(f"patterns must be >= 1, got {patterns}")
    rng = np.random.default_rng(seed)
    rows = np.arange(height, dtype=np.float64)[:, None] / height
    cols = np.arange(width, dtype=np.float64)[None, :] / width
    spec = np.arange(bands, dtype=np.float64) / bands
    acc = np.zeros((bands, height, width))
    for _ in range(patterns):
        fr, fc = rng.uniform(0.3, MAX_CYCLES, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        plane = np.cos(2.0 * np.pi * (fr * rows + fc * cols) + phase)
        fb = rng.uniform(0.25, 1.5)
        pb = rng.uniform(0.0, 2.0 * np.pi)
        envelope = 0.6 + 0.4 * np.cos(2.0 * np.pi * fb * spec + pb)
        weight = rng.uniform(0.3, 1.0)
        acc += weight * envelope[:, None, None] * plane[None, :, :]
    lo, hi = acc.min(), acc.max()
    return VALUE_LO + VALUE_SPAN * (acc - lo) / max(hi - lo, 1e-12)


def make_dataset(count, bands, height, width, seed, patterns=6):
    """A list of `count` independent cubes from per-cube child streams."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    children = np.random.SeedSequence(seed).spawn(count)
    return [make_cube(bands, height, width, c, patterns) for c in children]
