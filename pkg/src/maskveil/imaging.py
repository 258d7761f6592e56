"""Lossless raster I/O, canvas normalization, XOR pad application, and DSSIM.

Only lossless formats are supported (PNG and binary PPM): the restore
guarantee is bit-exact, and any lossy recompression of a protected image
destroys it. JPEG input is rejected with an explicit message.
"""

from __future__ import annotations

import functools
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import _kernels
from .errors import DomainError, TruncatedFileError, UnsupportedImageError

CANVAS_WIDTH = 256
CANVAS_HEIGHT = 256
CANVAS_CHANNELS = 3
REGION_SIZE = 4
SSIM_WINDOW = 8


@dataclass(frozen=True, eq=False)
class PixelImage:
    """Fixed-canvas 8-bit raster; the unit of protection and restoration.

    pixels: (height, width, channels) uint8, channels 1 (grayscale) or
    3 (RGB). The array is made read-only on construction.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3:
            raise DomainError(f"pixel array must be 2- or 3-dimensional, got shape {px.shape}")
        if px.dtype != np.uint8:
            raise DomainError(f"pixel array must be uint8, got {px.dtype}")
        if px.shape[2] not in (1, 3):
            raise DomainError(f"channel count must be 1 or 3, got {px.shape[2]}")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def is_canonical(self) -> bool:
        return self.pixels.shape == (CANVAS_HEIGHT, CANVAS_WIDTH, CANVAS_CHANNELS)

    def digest(self) -> str:
        """SHA-256 of the raw row-major sample bytes."""
        return hashlib.sha256(self.pixels.tobytes()).hexdigest()

    def same_pixels(self, other: "PixelImage") -> bool:
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class Region:
    """Square pixel region; size is 4 throughout this toolkit."""

    origin_x: int
    origin_y: int
    size: int = REGION_SIZE
    priority: int = 0

    def overlaps(self, other: "Region") -> bool:
        return (abs(self.origin_x - other.origin_x) < max(self.size, other.size)
                and abs(self.origin_y - other.origin_y) < max(self.size, other.size))

    def in_bounds(self, width: int, height: int) -> bool:
        return (0 <= self.origin_x and self.origin_x + self.size <= width
                and 0 <= self.origin_y and self.origin_y + self.size <= height)


def _decode_png(raw: bytes, path) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(raw)) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGB")
            elif mode == "1":
                im = im.convert("L")
            if im.mode not in ("L", "RGB"):
                raise UnsupportedImageError(
                    f"{path}: unsupported PNG mode {mode!r}; only 8-bit grayscale and RGB are handled")
            return np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError:
        raise UnsupportedImageError(f"{path}: not a decodable PNG")
    except (OSError, SyntaxError, ValueError) as exc:
        raise TruncatedFileError(f"{path}: truncated or corrupt PNG ({exc})")


def _decode_ppm(raw: bytes, path) -> np.ndarray:
    pos = 2  # past the P6 magic
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFileError(f"{path}: PPM header ends early")
        token = raw[start:pos]
        if not token.isdigit():
            raise UnsupportedImageError(f"{path}: malformed PPM header token {token!r}")
        fields.append(int(token))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedImageError(f"{path}: PPM maxval must be 255, got {maxval}")
    if width <= 0 or height <= 0:
        raise UnsupportedImageError(f"{path}: PPM dimensions {width}x{height} invalid")
    need = width * height * 3
    data = raw[pos:pos + need]
    if len(data) < need:
        raise TruncatedFileError(f"{path}: PPM pixel data truncated ({len(data)} of {need} bytes)")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)


def load_image(path) -> PixelImage:
    """Decode a PNG or binary PPM (P6, maxval 255) file, bit-faithfully.

    Lossy or unrecognized formats raise UnsupportedImageError naming the
    format; truncated files raise TruncatedFileError.
    """
    raw = Path(path).read_bytes()
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        arr = _decode_png(raw, path)
    elif raw[:2] == b"P6":
        arr = _decode_ppm(raw, path)
    elif raw[:2] == b"\xff\xd8":
        raise UnsupportedImageError(
            f"{path}: JPEG is lossy and would destroy XOR restorability; use PNG or binary PPM")
    elif raw[:2] in (b"P1", b"P2", b"P3", b"P4", b"P5"):
        raise UnsupportedImageError(f"{path}: only the binary P6 PPM variant is supported")
    else:
        raise UnsupportedImageError(f"{path}: unrecognized image format (magic {raw[:4]!r})")
    return PixelImage(arr)


def save_image(img: PixelImage, path) -> None:
    """Write a lossless raster; the format is chosen by extension (.png/.ppm)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        arr = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
        Image.fromarray(arr).save(path, format="PNG")
    elif suffix == ".ppm":
        if img.channels != 3:
            raise DomainError("binary PPM output requires a 3-channel image")
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
            fh.write(img.pixels.tobytes())
    else:
        raise DomainError(f"unsupported output extension {suffix!r}; use .png or .ppm")


def _resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resample with round-half-up quantization."""
    h, w, _ = arr.shape
    sy = (h - 1) / (out_h - 1) if out_h > 1 else 0.0
    sx = (w - 1) / (out_w - 1) if out_w > 1 else 0.0
    ys = np.arange(out_h, dtype=np.float64) * sy
    xs = np.arange(out_w, dtype=np.float64) * sx
    y0 = np.minimum(ys.astype(np.int64), h - 1)
    x0 = np.minimum(xs.astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    v00 = arr[np.ix_(y0, x0)].astype(np.float64)
    v01 = arr[np.ix_(y0, x1)].astype(np.float64)
    v10 = arr[np.ix_(y1, x0)].astype(np.float64)
    v11 = arr[np.ix_(y1, x1)].astype(np.float64)
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    val = top * (1.0 - fy) + bot * fy
    return np.clip(np.floor(val + 0.5), 0, 255).astype(np.uint8)


def normalize_canvas(img: PixelImage) -> PixelImage:
    """Bring an image onto the canonical 256x256 RGB canvas.

    Grayscale inputs are channel-replicated; resampling is corner-aligned
    bilinear. A canonical input is returned unchanged, byte for byte.
    """
    if img.width == 0 or img.height == 0:
        raise DomainError("cannot normalize a zero-dimension image")
    if img.is_canonical():
        return img
    arr = img.pixels
    if arr.shape[2] == 1:
        arr = np.repeat(arr, CANVAS_CHANNELS, axis=2)
    if arr.shape[0] != CANVAS_HEIGHT or arr.shape[1] != CANVAS_WIDTH:
        arr = _resize_bilinear(arr, CANVAS_HEIGHT, CANVAS_WIDTH)
    return PixelImage(arr)


def _as_origin_array(regions) -> np.ndarray:
    out = np.empty((len(regions), 2), dtype=np.int64)
    for i, r in enumerate(regions):
        out[i, 0] = r.origin_x
        out[i, 1] = r.origin_y
    return out


def _as_payload_matrix(payloads, n_regions: int, patch_bytes: int) -> np.ndarray:
    if isinstance(payloads, np.ndarray) and payloads.ndim == 2:
        mat = np.ascontiguousarray(payloads, dtype=np.uint8)
        if mat.shape != (n_regions, patch_bytes):
            raise DomainError(
                f"payload matrix shape {mat.shape} does not match {n_regions} regions of {patch_bytes} bytes")
        return mat
    if len(payloads) != n_regions:
        raise DomainError(f"{len(payloads)} payloads supplied for {n_regions} regions")
    mat = np.empty((n_regions, patch_bytes), dtype=np.uint8)
    for i, p in enumerate(payloads):
        buf = np.frombuffer(bytes(p), dtype=np.uint8) if not isinstance(p, np.ndarray) else p.astype(np.uint8)
        if buf.size != patch_bytes:
            raise DomainError(f"payload {i} holds {buf.size} bytes, expected {patch_bytes}")
        mat[i] = buf.reshape(-1)
    return mat


def xor_apply(img: PixelImage, regions, payloads) -> PixelImage:
    """XOR payload bytes into the given regions, in list order.

    Each payload must hold size*size*channels bytes for its region. Applying
    the same arguments twice returns the original image exactly; samples
    outside all regions are untouched.
    """
    regions = list(regions)
    if not regions:
        return img
    size = regions[0].size
    for r in regions:
        if r.size != size:
            raise DomainError("all regions must share one size")
        if not r.in_bounds(img.width, img.height):
            raise DomainError(
                f"region at ({r.origin_x}, {r.origin_y}) size {r.size} exceeds the {img.width}x{img.height} canvas")
    patch_bytes = size * size * img.channels
    mat = _as_payload_matrix(payloads, len(regions), patch_bytes)
    out = _kernels.xor_regions(img.pixels, _as_origin_array(regions), size, mat)
    return PixelImage(out)


@functools.lru_cache(maxsize=16)
def _all_window_coords(h: int, w: int, window: int) -> np.ndarray:
    ny, nx = h // window, w // window
    wy, wx = np.meshgrid(np.arange(ny, dtype=np.int64), np.arange(nx, dtype=np.int64), indexing="ij")
    coords = np.stack([wy.reshape(-1), wx.reshape(-1)], axis=1)
    coords.setflags(write=False)
    return coords


def window_coords_for_regions(regions, height: int, width: int, window: int = SSIM_WINDOW) -> np.ndarray:
    """Sorted unique (row, col) indices of SSIM windows any region overlaps."""
    ny, nx = height // window, width // window
    seen = set()
    for r in regions:
        wy0 = r.origin_y // window
        wy1 = min((r.origin_y + r.size - 1) // window, ny - 1)
        wx0 = r.origin_x // window
        wx1 = min((r.origin_x + r.size - 1) // window, nx - 1)
        for wy in range(wy0, wy1 + 1):
            for wx in range(wx0, wx1 + 1):
                seen.add((wy, wx))
    if not seen:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(sorted(seen), dtype=np.int64)


def ssim_window_values(a: PixelImage, b: PixelImage, coords: np.ndarray) -> np.ndarray:
    """Per-window, per-channel SSIM values at the given window coordinates."""
    return _kernels.ssim_windows(a.pixels, b.pixels, coords, SSIM_WINDOW)


def dssim_arrays(a: np.ndarray, b: np.ndarray) -> float:
    """dssim on raw uint8 (h, w, c) arrays; the hot path skips PixelImage."""
    if a.shape != b.shape:
        raise DomainError(f"dimension mismatch: {a.shape} vs {b.shape}")
    h, w = a.shape[0], a.shape[1]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise DomainError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for DSSIM")
    coords = _all_window_coords(h, w, SSIM_WINDOW)
    vals = _kernels.ssim_windows(a, b, coords, SSIM_WINDOW)
    return (1.0 - float(np.mean(vals))) / 2.0


def dssim(a: PixelImage, b: PixelImage) -> float:
    """Structural dissimilarity (1 - SSIM) / 2 over 8x8 non-overlapping windows.

    SSIM uses C1 = (0.01*255)^2, C2 = (0.03*255)^2 and population window
    statistics, computed per channel and averaged. Symmetric; 0 for identical
    images; always in [0, 1].
    """
    return dssim_arrays(a.pixels, b.pixels)
