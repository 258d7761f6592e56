"""Compare the compiled kernel core against the NumPy fallback.

Runs each hot kernel at desk-experiment scale (a 256x256x3 canvas, 17 cloak
regions) and at the 500-region stress scale, printing per-call times and the
speedup. The two implementations are asserted bit-identical on every shape
they are timed on, so the numbers compare equal work.

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from maskveil._kernels import _fallback
from maskveil.imaging import Region, window_coords_for_regions

try:
    from maskveil._kernels import _core
except ImportError:
    _core = None


def timed(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def scenario(rng, n_regions, width=256, height=256, channels=3, size=4):
    img = rng.integers(0, 256, size=(height, width, channels)).astype(np.uint8)
    slots_x = width // size
    slots = rng.choice(slots_x * (height // size), size=n_regions, replace=False)
    origins = np.stack([(slots % slots_x) * size, (slots // slots_x) * size], axis=1).astype(np.int64)
    payloads = rng.integers(0, 256, size=(n_regions, size * size * channels)).astype(np.uint8)
    shadow = _fallback.xor_regions(img, origins, size, payloads)
    coords = window_coords_for_regions([Region(int(x), int(y)) for x, y in origins], height, width)
    return img, shadow, origins, payloads, coords


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200, help="timing repeats per cell (default 200)")
    args = parser.parse_args()

    if _core is None:
        print("compiled core is not available; build it first (pip install -e .)")
        return 1

    rng = np.random.default_rng(77)
    print(f"{'kernel':<34} {'numpy':>12} {'cython':>12} {'speedup':>9}")
    for n_regions in (17, 500):
        img, shadow, origins, payloads, coords = scenario(rng, n_regions)
        size = 4
        cells = [
            (f"gather_patches ({n_regions} regions)", "gather_patches", (img, origins, size)),
            (f"ssim_windows ({len(coords)} windows)", "ssim_windows", (img, shadow, coords)),
            (f"xor_regions ({n_regions} regions)", "xor_regions", (img, origins, size, payloads)),
        ]
        for label, name, call_args in cells:
            t_np, out_np = timed(getattr(_fallback, name), call_args, args.repeats)
            t_cy, out_cy = timed(getattr(_core, name), call_args, args.repeats)
            if not np.array_equal(out_np, out_cy) or out_np.tobytes() != out_cy.tobytes():
                print(f"{label}: implementations disagree, timings are meaningless")
                return 1
            print(f"{label:<34} {t_np * 1e6:>10.1f}us {t_cy * 1e6:>10.1f}us {t_np / t_cy:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
