"""Protection metrics, the experiment runner, reference attacks, and exports.

The success rate r_s relates how well originals are recognized (T_o) to how
often protected images are misidentified (F_c). Two simpler attacks, regional
pixel confusion and a radial feature twist, serve as comparison baselines;
both are destructive (no restoration path), which is the point of comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, SingularityError
from .imaging import PixelImage, dssim
from .recognizer import recognize
from .rng import generator

TWIST_RADIUS = 48.0


def protection_rate(t_o: float, f_c: float) -> float:
    """r_s = F_c / (1 + T_o - F_c)."""
    if not 0.0 <= t_o <= 1.0:
        raise DomainError(f"T_o must be in [0, 1], got {t_o}")
    if not 0.0 <= f_c <= 1.0:
        raise DomainError(f"F_c must be in [0, 1], got {f_c}")
    denom = 1.0 + t_o - f_c
    if denom <= 0.0:
        raise SingularityError(f"protection rate undefined at T_o = {t_o}, F_c = {f_c} (zero denominator)")
    return f_c / denom


@dataclass(frozen=True)
class ImageRecord:
    """Recognition outcomes for one image under one target recognizer."""

    index: int
    identity: str
    target_version: int
    original_pred: str
    original_conf: float
    protected_pred: str
    protected_conf: float
    restored_pred: str
    restored_conf: float
    dssim: float


@dataclass(frozen=True)
class TargetMetrics:
    target_version: int
    t_o: float
    f_c: float
    t_r: float                # mean confidence on restored images
    restored_accuracy: float  # correct-rate on restored images
    r_s: float


@dataclass(frozen=True)
class MetricsReport:
    """Worst-case aggregate (the hardest-to-fool target) plus per-target rows.

    t_r follows the confidence reading: mean recognizer confidence on
    restored images; restored_accuracy carries the companion correct-rate.
    """

    t_o: float
    f_c: float
    t_r: float
    restored_accuracy: float
    r_s: float
    mean_dssim: float
    per_target: tuple
    records: tuple

    def manifest_pairs(self):
        pairs = [
            ("t_o", self.t_o),
            ("f_c", self.f_c),
            ("t_r", self.t_r),
            ("restored_accuracy", self.restored_accuracy),
            ("r_s", self.r_s),
            ("mean_dssim", self.mean_dssim),
        ]
        for tm in self.per_target:
            prefix = f"target.{tm.target_version}"
            pairs += [
                (f"{prefix}.t_o", tm.t_o),
                (f"{prefix}.f_c", tm.f_c),
                (f"{prefix}.t_r", tm.t_r),
                (f"{prefix}.restored_accuracy", tm.restored_accuracy),
                (f"{prefix}.r_s", tm.r_s),
            ]
        return pairs


def evaluate_run(targets, samples, protected, restored) -> MetricsReport:
    """Score aligned original/protected/restored image lists per target.

    samples: (identity, original image, landmarks) rows; protected and
    restored: image lists aligned by index. The top-level aggregate is the
    per-target row with the lowest F_c (worst case for the defender).
    """
    targets = list(targets)
    samples = list(samples)
    protected = list(protected)
    restored = list(restored)
    if not targets:
        raise DomainError("evaluation needs at least one target recognizer")
    if not samples:
        raise DomainError("evaluation needs at least one image")
    if len(samples) != len(protected) or len(samples) != len(restored):
        raise DomainError(
            f"misaligned lists: {len(samples)} originals, {len(protected)} protected, {len(restored)} restored")

    dssims = [dssim(img, prot) for (_id, img, _lm), prot in zip(samples, protected)]
    mean_dssim = float(np.mean(dssims))

    per_target = []
    records = []
    for t in targets:
        n = len(samples)
        orig_hits = prot_misses = rest_hits = 0
        conf_sum = 0.0
        for i, ((identity, img, lm), prot, rest) in enumerate(zip(samples, protected, restored)):
            sub = lm.subset(t.layout.point_labels)
            o_pred, o_conf = recognize(t, img, sub)
            p_pred, p_conf = recognize(t, prot, sub)
            r_pred, r_conf = recognize(t, rest, sub)
            orig_hits += o_pred == identity
            prot_misses += p_pred != identity
            rest_hits += r_pred == identity
            conf_sum += r_conf
            records.append(ImageRecord(i, identity, t.layout.version_id,
                                       o_pred, o_conf, p_pred, p_conf, r_pred, r_conf, dssims[i]))
        t_o = orig_hits / n
        f_c = prot_misses / n
        per_target.append(TargetMetrics(t.layout.version_id, t_o, f_c,
                                        conf_sum / n, rest_hits / n, protection_rate(t_o, f_c)))

    worst = min(per_target, key=lambda tm: tm.f_c)
    return MetricsReport(worst.t_o, worst.f_c, worst.t_r, worst.restored_accuracy, worst.r_s,
                         mean_dssim, tuple(per_target), tuple(records))


def baseline_pixel_confuse(img: PixelImage, regions, p: float, seed: int) -> PixelImage:
    """Replace region samples with uniform noise, each with probability p/255.

    p above 255 saturates to certain replacement. Pixels outside the regions
    are untouched. Destructive: there is no key and no way back.
    """
    if p < 0:
        raise DomainError(f"confusion threshold must be nonnegative, got {p}")
    prob = min(p / 255.0, 1.0)
    rng = generator(seed, "pixel-confuse")
    out = img.pixels.copy()
    for r in regions:
        if not r.in_bounds(img.width, img.height):
            raise DomainError(f"region at ({r.origin_x}, {r.origin_y}) leaves the canvas")
        block = out[r.origin_y:r.origin_y + r.size, r.origin_x:r.origin_x + r.size, :]
        hit = rng.random(block.shape) < prob
        noise = rng.integers(0, 256, size=block.shape, dtype=np.int64).astype(np.uint8)
        block[hit] = noise[hit]
    return PixelImage(out)


def baseline_twist(img: PixelImage, center, pressure: float, radius: float = TWIST_RADIUS) -> PixelImage:
    """Pinch-warp pixels toward a center point; strength decays to the rim.

    Each pixel within `radius` of the center is resampled from a source
    point displaced toward the center by pressure * (1 - dist/radius),
    bilinearly interpolated. Destructive, like pixel confusion.
    """
    cx, cy = float(center[0]), float(center[1])
    if not (0 <= cx <= img.width - 1 and 0 <= cy <= img.height - 1):
        raise DomainError(f"twist center ({cx}, {cy}) lies outside the canvas")
    if pressure < 0:
        raise DomainError(f"pressure must be nonnegative, got {pressure}")
    if radius <= 0:
        raise DomainError(f"radius must be positive, got {radius}")
    if pressure == 0.0:
        return img

    h, w = img.height, img.width
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dx = xs - cx
    dy = ys - cy
    dist = np.sqrt(dx * dx + dy * dy)
    inside = (dist < radius) & (dist > 0.0)
    shrink = np.zeros_like(dist)
    shrink[inside] = pressure * (1.0 - dist[inside] / radius) / dist[inside]
    src_x = np.clip(xs - dx * shrink, 0.0, w - 1.0)
    src_y = np.clip(ys - dy * shrink, 0.0, h - 1.0)

    x0 = src_x.astype(np.int64)
    y0 = src_y.astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (src_x - x0)[:, :, None]
    fy = (src_y - y0)[:, :, None]
    px = img.pixels.astype(np.float64)
    top = px[y0, x0] * (1.0 - fx) + px[y0, x1] * fx
    bot = px[y1, x0] * (1.0 - fx) + px[y1, x1] * fx
    val = top * (1.0 - fy) + bot * fy
    return PixelImage(np.clip(np.floor(val + 0.5), 0, 255).astype(np.uint8))


def export_scatter(points, path) -> None:
    """Write (x, y, tag) rows as CSV with 9 significant digits, input order."""
    points = list(points)
    if not points:
        raise DomainError("scatter export needs at least one point")
    lines = ["x,y,tag"]
    for x, y, tag in points:
        lines.append(f"{float(x):.9g},{float(y):.9g},{tag}")
    Path(path).write_text("\n".join(lines) + "\n")


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def write_manifest(pairs, path) -> None:
    """Plain-text `key = value` records, one per line, in given order."""
    if hasattr(pairs, "items"):
        pairs = pairs.items()
    lines = [f"{k} = {format_value(v)}" for k, v in pairs]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_manifest(path) -> dict:
    """Read `key = value` lines; blank lines and # comments are skipped."""
    out: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DomainError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip()
    return out


def write_records_csv(report: MetricsReport, path) -> None:
    lines = ["index,identity,target_version,original_pred,original_conf,"
             "protected_pred,protected_conf,restored_pred,restored_conf,dssim"]
    for r in report.records:
        lines.append(f"{r.index},{r.identity},{r.target_version},"
                     f"{r.original_pred},{r.original_conf:.9g},"
                     f"{r.protected_pred},{r.protected_conf:.9g},"
                     f"{r.restored_pred},{r.restored_conf:.9g},{r.dssim:.9g}")
    Path(path).write_text("\n".join(lines) + "\n")
