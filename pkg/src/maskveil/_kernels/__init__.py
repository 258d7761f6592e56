"""Hot-kernel dispatch.

The compiled Cython core is used when it imported cleanly; otherwise the
NumPy fallback takes over with identical semantics. Set ``MASKVEIL_PURE=1``
to force the fallback (used by the kernel benchmark and equivalence tests).
"""

import os

from . import _fallback

if os.environ.get("MASKVEIL_PURE") == "1":
    _impl = _fallback
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _fallback

IMPL = _impl.IMPL
ssim_windows = _impl.ssim_windows
xor_regions = _impl.xor_regions
xor_regions_inplace = _impl.xor_regions_inplace
gather_patches = _impl.gather_patches

SSIM_C1 = _fallback.SSIM_C1
SSIM_C2 = _fallback.SSIM_C2
