"""Shared helpers for the test suite (not collected by pytest)."""

import hashlib

import numpy as np

from maskveil import PixelImage


def rand_image(rng, width, height, channels):
    return PixelImage(rng.integers(0, 256, size=(height, width, channels)).astype(np.uint8))


def sha256_file(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def tree_digest(root):
    """Stable digest over every file under root (rel path + bytes)."""
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(b"\0")
            h.update(p.read_bytes())
    return h.hexdigest()


class ReferenceSplitMix64:
    """Independent transcription of the published splitmix64 update, kept
    separate from the library so the two can disagree."""

    MASK = (1 << 64) - 1

    def __init__(self, seed):
        self.state = seed & self.MASK

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)


def region_grid(rng, count, width=256, height=256, size=4):
    """count pairwise-disjoint regions: sampled from a size-aligned grid with
    a random global offset, so any count up to (w//s)*(h//s) fits."""
    ox = int(rng.integers(0, size))
    oy = int(rng.integers(0, size))
    nx = (width - ox) // size
    ny = (height - oy) // size
    if count > nx * ny:
        raise ValueError("too many regions for the canvas")
    slots = rng.choice(nx * ny, size=count, replace=False)
    return [(ox + int(s % nx) * size, oy + int(s // nx) * size) for s in slots]
