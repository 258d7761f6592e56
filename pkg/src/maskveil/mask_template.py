"""Mask templates: where on the canvas the cloak is allowed to write.

A template is derived per recognizer version by regressing attended feature
positions from the aggregated landmark distribution, centering a 4x4 region
on each prediction, and jittering region origins with a seeded 64-bit
split-mix stream so per-user templates differ reproducibly. Templates from
several recognizers superpose by priority. CloakKey pairs a template with the
XOR payload bytes and round-trips through the binary key-file format.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import binio
from .errors import BadMagicError, DomainError, FormatError, SingularityError
from .imaging import CANVAS_CHANNELS, CANVAS_HEIGHT, CANVAS_WIDTH, REGION_SIZE, Region
from .recognizer import FeatureLayout, LandmarkSet
from .rng import SplitMix64

TEMPLATE_MAGIC = b"MVK1"
KEY_MAGIC = b"MVK2"
KEY_VERSION = 1
MAX_REGIONS_PER_SOURCE = 500
SPREAD_TOLERANCE = 0.02


@dataclass(frozen=True)
class AggregatedDistribution:
    """Per-label mean position and cross-scale spread of landmark sets."""

    labels: tuple
    mean_points: np.ndarray   # (L, 2) float64 in [0, 1]
    spreads: np.ndarray       # (L,) mean distance of each label to its mean
    scale_warnings: tuple = ()

    def __post_init__(self):
        mp = np.ascontiguousarray(self.mean_points, dtype=np.float64)
        sp = np.ascontiguousarray(self.spreads, dtype=np.float64)
        if mp.shape != (len(self.labels), 2) or sp.shape != (len(self.labels),):
            raise DomainError("aggregated distribution arrays do not match the label count")
        mp.setflags(write=False)
        sp.setflags(write=False)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "mean_points", mp)
        object.__setattr__(self, "spreads", sp)
        object.__setattr__(self, "scale_warnings", tuple(self.scale_warnings))

    @property
    def mean_vector(self) -> np.ndarray:
        """Flattened (x0, y0, x1, y1, ...) means, the regression input."""
        return self.mean_points.reshape(-1)


def aggregate_scales(landmark_sets, scales=None, tolerance: float = SPREAD_TOLERANCE) -> AggregatedDistribution:
    """Normalize landmark sets captured at different scales and average them.

    Each set's coordinates are divided by its scale (default 1.0) and must
    land in [0, 1]. Labels whose positional spread (mean distance to the
    per-label mean) exceeds `tolerance` are listed in scale_warnings.
    """
    sets = list(landmark_sets)
    if not sets:
        raise DomainError("cannot aggregate an empty list of landmark sets")
    if scales is None:
        scales = [1.0] * len(sets)
    scales = [float(s) for s in scales]
    if len(scales) != len(sets):
        raise DomainError(f"{len(scales)} scales for {len(sets)} landmark sets")
    if any(s <= 0 for s in scales):
        raise DomainError("scales must be positive")

    labels = sets[0].labels
    stack = np.empty((len(sets), len(labels), 2), dtype=np.float64)
    for i, (lm, s) in enumerate(zip(sets, scales)):
        if lm.labels != labels:
            raise DomainError(f"landmark set {i} labels differ from set 0")
        pts = lm.points / s
        if pts.min() < 0.0 or pts.max() > 1.0:
            raise DomainError(f"landmark set {i} leaves [0, 1] after dividing by scale {s}")
        stack[i] = pts

    means = stack.mean(axis=0)
    spreads = np.sqrt(((stack - means) ** 2).sum(axis=2)).mean(axis=0)
    flagged = tuple(lab for lab, sp in zip(labels, spreads) if sp > tolerance)
    if flagged:
        warnings.warn(f"landmark positions inconsistent across scales for: {', '.join(flagged)}",
                      stacklevel=2)
    return AggregatedDistribution(labels, means, spreads, flagged)


@dataclass(frozen=True)
class RegressionModel:
    """Closed-form ridge map from a feature vector to point coordinates.

    weights is (input_dim, output_dim); column j is the weight vector for
    output coordinate j. No intercept: the fit is through the origin.
    """

    weights: np.ndarray
    lam: float
    training_count: int

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise DomainError(f"weights must be a 2-D matrix, got shape {w.shape}")
        if self.lam < 0:
            raise DomainError("ridge penalty must be nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def input_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights.shape[1]

    def predict(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.input_dim,):
            raise DomainError(f"input shape {vec.shape} does not match regression input dim {self.input_dim}")
        return vec @ self.weights


def fit_feature_regression(samples, lam: float) -> RegressionModel:
    """Solve (A'A + lam*I) W = A'T per output coordinate, in closed form.

    samples: (input vector, target coordinates) pairs. lam = 0 requires a
    full-column-rank design matrix; otherwise SingularityError suggests a
    positive penalty.
    """
    samples = list(samples)
    if not samples:
        raise DomainError("regression needs at least one sample")
    if lam < 0:
        raise DomainError(f"ridge penalty must be nonnegative, got {lam}")
    ins = [np.asarray(i, dtype=np.float64).reshape(-1) for i, _t in samples]
    outs = [np.atleast_1d(np.asarray(tv, dtype=np.float64)).reshape(-1) for _i, tv in samples]
    if len({v.shape for v in ins}) > 1 or len({v.shape for v in outs}) > 1:
        raise DomainError("regression samples have inconsistent vector widths")
    a = np.stack(ins)
    t = np.stack(outs)
    d = a.shape[1]
    gram = a.T @ a + lam * np.eye(d)
    if lam == 0.0 and np.linalg.matrix_rank(a) < d:
        raise SingularityError(
            f"design matrix is rank-deficient ({np.linalg.matrix_rank(a)} < {d}) with zero penalty; "
            "pass lam > 0 to regularize")
    try:
        weights = np.linalg.solve(gram, a.T @ t)
    except np.linalg.LinAlgError:
        raise SingularityError("normal equations are singular; pass lam > 0 to regularize")
    return RegressionModel(weights, lam, len(samples))


@dataclass(frozen=True)
class MaskTemplate:
    """Disjoint 4x4 cloak regions on a fixed canvas, tagged by source recognizers.

    offset_seed and offset_radius are provenance only: they are not part of
    the serialized format and are excluded from equality.
    """

    source_versions: tuple
    regions: tuple
    width: int = CANVAS_WIDTH
    height: int = CANVAS_HEIGHT
    channels: int = CANVAS_CHANNELS
    offset_seed: int = field(default=0, compare=False)
    offset_radius: int = field(default=2, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "source_versions", tuple(int(v) for v in self.source_versions))
        object.__setattr__(self, "regions", tuple(self.regions))
        if not self.source_versions:
            raise DomainError("a template needs at least one source version")
        cap = MAX_REGIONS_PER_SOURCE * len(self.source_versions)
        if len(self.regions) > cap:
            raise DomainError(f"{len(self.regions)} regions exceed the {MAX_REGIONS_PER_SOURCE}-per-source cap")
        for i, r in enumerate(self.regions):
            if r.size != REGION_SIZE:
                raise DomainError(f"region {i} has size {r.size}, templates use {REGION_SIZE}")
            if not r.in_bounds(self.width, self.height):
                raise DomainError(f"region {i} at ({r.origin_x}, {r.origin_y}) leaves the canvas")
        for i in range(len(self.regions)):
            for j in range(i + 1, len(self.regions)):
                if self.regions[i].overlaps(self.regions[j]):
                    raise DomainError(f"regions {i} and {j} overlap; template regions must be disjoint")

    @property
    def patch_bytes(self) -> int:
        return REGION_SIZE * REGION_SIZE * self.channels


@dataclass(frozen=True, eq=False)
class CloakKey:
    """A template plus the XOR pad bytes: everything restore needs.

    sigma_used, no_gain, and objective_trace describe how the pad was found;
    they are not serialized and do not participate in equality.
    """

    template: MaskTemplate
    payloads: np.ndarray  # (region count, patch bytes) uint8
    sigma_used: float | None = field(default=None)
    no_gain: bool = field(default=False)
    objective_trace: tuple = field(default=())
    target_versions: tuple = field(default=())

    def __post_init__(self):
        mat = np.ascontiguousarray(self.payloads, dtype=np.uint8)
        want = (len(self.template.regions), self.template.patch_bytes)
        if mat.shape != want:
            raise DomainError(f"payload matrix shape {mat.shape} does not match template {want}")
        mat.setflags(write=False)
        object.__setattr__(self, "payloads", mat)
        object.__setattr__(self, "objective_trace", tuple(self.objective_trace))
        versions = tuple(self.target_versions) or self.template.source_versions
        object.__setattr__(self, "target_versions", versions)

    def __eq__(self, other):
        if not isinstance(other, CloakKey):
            return NotImplemented
        return self.template == other.template and np.array_equal(self.payloads, other.payloads)

    def __hash__(self):
        return hash((self.template, self.payloads.tobytes()))


def derive_template(reg: RegressionModel, layout: FeatureLayout, phi: AggregatedDistribution,
                    offset_seed: int, offset_radius: int = 2) -> MaskTemplate:
    """Predict each attended point's canvas position and cut a jittered region.

    Region origins get independent uniform integer offsets in
    [-offset_radius, +offset_radius]^2 from a split-mix stream seeded with
    offset_seed (dx then dy per point, in layout order), then clamp to the
    canvas. Predictions far off the canvas warn and clamp. Overlapping
    regions are trimmed keeping the lower-index point, so the result's
    regions are disjoint.
    """
    n_points = len(layout.point_labels)
    if reg.output_dim != 2 * n_points:
        raise DomainError(
            f"regression emits {reg.output_dim} coordinates but layout v{layout.version_id} "
            f"has {n_points} points (needs {2 * n_points})")
    if offset_radius < 0:
        raise DomainError("offset radius must be nonnegative")
    preds = reg.predict(phi.mean_vector).reshape(n_points, 2)

    w, h = CANVAS_WIDTH, CANVAS_HEIGHT
    gen = SplitMix64(offset_seed)
    half = REGION_SIZE // 2
    regions = []
    for i in range(n_points):
        px = int(np.floor(preds[i, 0] * (w - 1) + 0.5))
        py = int(np.floor(preds[i, 1] * (h - 1) + 0.5))
        if px < -offset_radius or px > w - 1 + offset_radius or py < -offset_radius or py > h - 1 + offset_radius:
            warnings.warn(
                f"predicted position for point {layout.point_labels[i]!r} lies off the canvas "
                f"({preds[i, 0]:.4f}, {preds[i, 1]:.4f}); clamping", stacklevel=2)
        px = min(max(px, 0), w - 1)
        py = min(max(py, 0), h - 1)
        dx = gen.next_int(-offset_radius, offset_radius)
        dy = gen.next_int(-offset_radius, offset_radius)
        ox = min(max(px - half + dx, 0), w - REGION_SIZE)
        oy = min(max(py - half + dy, 0), h - REGION_SIZE)
        regions.append(Region(ox, oy, REGION_SIZE, 0))

    kept = []
    for r in regions:  # keep the lower-index point on any overlap
        if not any(r.overlaps(k) for k in kept):
            kept.append(r)
    return MaskTemplate((layout.version_id,), tuple(kept), w, h, layout.patch_channels,
                        offset_seed=offset_seed, offset_radius=offset_radius)


def superpose(templates, priorities=None) -> MaskTemplate:
    """Merge templates from several recognizers, resolving overlaps by priority.

    priorities ranks templates (lower rank wins, default is list order). For
    every overlapping pair of regions from different templates, the region
    belonging to the lower-priority template is deleted; rank ties keep the
    earlier-listed template's region. Region priorities in the result are the
    owning template's rank. Merging more than 3 sources warns.
    """
    templates = list(templates)
    if not templates:
        raise DomainError("cannot superpose an empty template list")
    if len(templates) == 1:
        return templates[0]
    if priorities is None:
        priorities = list(range(len(templates)))
    priorities = [int(p) for p in priorities]
    if len(priorities) != len(templates):
        raise DomainError(f"{len(priorities)} priorities for {len(templates)} templates")
    base = templates[0]
    for t in templates[1:]:
        if (t.width, t.height, t.channels) != (base.width, base.height, base.channels):
            raise DomainError("superposed templates must share one canvas geometry")

    tagged = []  # (template index, rank, region)
    for ti, (t, rank) in enumerate(zip(templates, priorities)):
        for r in t.regions:
            tagged.append((ti, rank, r))
    dead = [False] * len(tagged)
    for i in range(len(tagged)):
        for j in range(i + 1, len(tagged)):
            ti, ri, a = tagged[i]
            tj, rj, b = tagged[j]
            if ti == tj or not a.overlaps(b):
                continue
            if ri == rj:
                dead[j] = True  # tie: the later-listed template loses
            elif ri < rj:
                dead[j] = True
            else:
                dead[i] = True

    merged = tuple(Region(r.origin_x, r.origin_y, r.size, rank)
                   for alive, (_ti, rank, r) in zip((not d for d in dead), tagged) if alive)
    sources = []
    for t in templates:
        sources.extend(t.source_versions)
    if len(sources) > 3:
        warnings.warn(f"superposing {len(sources)} recognizer versions; fewer than 3 is recommended "
                      "to keep enough writable area per recognizer", stacklevel=2)
    return MaskTemplate(tuple(sources), merged, base.width, base.height, base.channels,
                        offset_seed=templates[0].offset_seed, offset_radius=templates[0].offset_radius)


def _encode_body(t: MaskTemplate, payloads: np.ndarray | None) -> bytes:
    w = binio.ByteWriter()
    w.u16(KEY_VERSION)
    w.u8(len(t.source_versions))
    for v in t.source_versions:
        w.u16(v)
    w.u16(t.width)
    w.u16(t.height)
    w.u8(t.channels)
    w.u8(REGION_SIZE)
    w.u32(len(t.regions))
    for i, r in enumerate(t.regions):
        w.u16(r.origin_x)
        w.u16(r.origin_y)
        w.u8(r.priority)
        if payloads is not None:
            w.raw(payloads[i].tobytes())
    return w.getvalue()


def serialize_template(obj, path) -> None:
    """Write a MaskTemplate (MVK1) or CloakKey (MVK2) container."""
    if isinstance(obj, CloakKey):
        data = binio.seal(KEY_MAGIC, _encode_body(obj.template, obj.payloads))
    elif isinstance(obj, MaskTemplate):
        data = binio.seal(TEMPLATE_MAGIC, _encode_body(obj, None))
    else:
        raise DomainError(f"cannot serialize a {type(obj).__name__}")
    Path(path).write_bytes(data)


def deserialize_template(path):
    """Read back a MaskTemplate or CloakKey, validating structure and checksum."""
    raw = Path(path).read_bytes()
    label = f"key file {path}"
    if len(raw) >= 4 and raw[:4] not in (TEMPLATE_MAGIC, KEY_MAGIC):
        raise BadMagicError(f"{label}: bad signature {raw[:4]!r}, expected {TEMPLATE_MAGIC!r} or {KEY_MAGIC!r}")
    magic = raw[:4] if len(raw) >= 4 else TEMPLATE_MAGIC
    r = binio.open_sealed(raw, magic, label)
    binio.check_version(r.u16(), KEY_VERSION, label)
    sources = tuple(r.u16() for _ in range(r.u8()))
    width = r.u16()
    height = r.u16()
    channels = r.u8()
    size = r.u8()
    if size != REGION_SIZE:
        raise FormatError(f"{label}: region size {size} is not supported (expected {REGION_SIZE})")
    if channels not in (1, 3):
        raise FormatError(f"{label}: channel count {channels} is not supported")
    count = r.u32()
    patch_bytes = size * size * channels
    regions, payloads = [], []
    for _ in range(count):
        ox = r.u16()
        oy = r.u16()
        prio = r.u8()
        regions.append(Region(ox, oy, size, prio))
        if magic == KEY_MAGIC:
            payloads.append(np.frombuffer(r.take(patch_bytes), dtype=np.uint8))
    binio.finish_reader(r, label)
    try:
        template = MaskTemplate(sources, tuple(regions), width, height, channels)
    except DomainError as exc:
        raise FormatError(f"{label}: {exc}")
    if magic == TEMPLATE_MAGIC:
        return template
    mat = np.stack(payloads) if payloads else np.zeros((0, patch_bytes), dtype=np.uint8)
    return CloakKey(template, mat)
