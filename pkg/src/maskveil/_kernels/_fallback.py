"""NumPy implementations of the hot kernels.

These are the reference semantics for the compiled core in ``_core.pyx``.
All window statistics are integer sums (exact in float64), so per-window SSIM
values are bit-identical between the two implementations.
"""

from __future__ import annotations

import numpy as np

IMPL = "numpy"

SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2

_INV255 = 1.0 / 255.0


def ssim_windows(a: np.ndarray, b: np.ndarray, coords: np.ndarray, window: int = 8) -> np.ndarray:
    """Per-window, per-channel SSIM over non-overlapping windows.

    a, b: uint8 arrays of shape (h, w, c); coords: int64 (n, 2) rows of
    (window_row, window_col) indices. Returns float64 (n, c).
    """
    n = coords.shape[0]
    c = a.shape[2]
    if n == 0:
        return np.zeros((0, c), dtype=np.float64)
    rows = coords[:, 0:1] * window + np.arange(window)[None, :]
    cols = coords[:, 1:2] * window + np.arange(window)[None, :]
    wa = a[rows[:, :, None], cols[:, None, :], :].astype(np.int64)
    wb = b[rows[:, :, None], cols[:, None, :], :].astype(np.int64)

    sa = wa.sum(axis=(1, 2))
    sb = wb.sum(axis=(1, 2))
    saa = (wa * wa).sum(axis=(1, 2))
    sbb = (wb * wb).sum(axis=(1, 2))
    sab = (wa * wb).sum(axis=(1, 2))

    inv_n = 1.0 / (window * window)
    mu_a = sa * inv_n
    mu_b = sb * inv_n
    var_a = saa * inv_n - mu_a * mu_a
    var_b = sbb * inv_n - mu_b * mu_b
    cov = sab * inv_n - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def xor_regions(img: np.ndarray, origins: np.ndarray, size: int, payloads: np.ndarray) -> np.ndarray:
    """XOR fixed-size square regions of a (h, w, c) uint8 image with payload bytes.

    origins: int64 (n, 2) rows of (origin_x, origin_y); payloads: uint8
    (n, size*size*c), row-major channel-interleaved. Regions are applied in
    list order. Returns a new array; the input is not modified.
    """
    out = img.copy()
    c = img.shape[2]
    pads = payloads.reshape(origins.shape[0], size, size, c)
    for i in range(origins.shape[0]):
        ox = int(origins[i, 0])
        oy = int(origins[i, 1])
        out[oy:oy + size, ox:ox + size, :] ^= pads[i]
    return out


def xor_regions_inplace(img: np.ndarray, origins: np.ndarray, size: int, payloads: np.ndarray) -> None:
    """In-place variant of :func:`xor_regions` for the optimizer's hot loop."""
    c = img.shape[2]
    pads = payloads.reshape(origins.shape[0], size, size, c)
    for i in range(origins.shape[0]):
        ox = int(origins[i, 0])
        oy = int(origins[i, 1])
        img[oy:oy + size, ox:ox + size, :] ^= pads[i]


def gather_patches(img: np.ndarray, top_lefts: np.ndarray, size: int) -> np.ndarray:
    """Concatenate square patches of a (h, w, c) uint8 image, scaled to [0, 1].

    top_lefts: int64 (n, 2) rows of (x, y). Returns float64 of length
    n*size*size*c in patch order, each patch row-major channel-interleaved.
    """
    n = top_lefts.shape[0]
    c = img.shape[2]
    out = np.empty((n, size, size, c), dtype=np.float64)
    for i in range(n):
        tx = int(top_lefts[i, 0])
        ty = int(top_lefts[i, 1])
        out[i] = img[ty:ty + size, tx:tx + size, :]
    return out.reshape(-1) * _INV255
