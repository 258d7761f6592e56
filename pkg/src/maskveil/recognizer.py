"""Stand-in recognition algorithms: landmark-patch features, eigen-projection
embedding, nearest-centroid identification, and a 2-D PCA export.

Distinct recognizer versions come from varying the feature layout (which
landmarks, patch geometry) and the embedding dimension k. Training, embedding,
and identification are fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import binio
from ._kernels import gather_patches
from .errors import DomainError, FormatError
from .imaging import PixelImage

MODEL_MAGIC = b"MVR1"
MODEL_VERSION = 1
MAX_LAYOUT_POINTS = 500


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered labeled feature points in normalized [0, 1] coordinates."""

    labels: tuple
    points: np.ndarray  # (n, 2) float64 rows of (x, y)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DomainError(f"landmark points must be (n, 2), got shape {pts.shape}")
        if pts.shape[0] != len(self.labels):
            raise DomainError(f"{len(self.labels)} labels for {pts.shape[0]} points")
        if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
            raise DomainError("landmark coordinates must lie in [0, 1]")
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, labels) -> "LandmarkSet":
        """Reorder/select points by label, e.g. to feed a sparser layout."""
        index = {lab: i for i, lab in enumerate(self.labels)}
        rows = []
        for lab in labels:
            if lab not in index:
                raise DomainError(f"landmark set has no point labeled {lab!r}")
            rows.append(index[lab])
        return LandmarkSet(tuple(labels), self.points[rows])


@dataclass(frozen=True)
class FeatureLayout:
    """Which landmarks a recognizer version attends to, and patch geometry."""

    version_id: int
    point_labels: tuple
    patch_size: int = 4
    patch_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "point_labels", tuple(self.point_labels))
        if not self.point_labels:
            raise DomainError("a feature layout needs at least one point")
        if len(self.point_labels) > MAX_LAYOUT_POINTS:
            raise DomainError(f"layout exceeds {MAX_LAYOUT_POINTS} points: {len(self.point_labels)}")
        if len(set(self.point_labels)) != len(self.point_labels):
            raise DomainError("layout point labels must be unique")
        if self.patch_size < 1:
            raise DomainError("patch size must be positive")
        if self.patch_channels not in (1, 3):
            raise DomainError("patch channels must be 1 or 3")

    @property
    def feature_dim(self) -> int:
        return len(self.point_labels) * self.patch_size * self.patch_size * self.patch_channels


@dataclass(frozen=True)
class RecognizerModel:
    layout: FeatureLayout
    mean_vector: np.ndarray     # (d,)
    eigenbasis: np.ndarray      # (d, k), orthonormal columns
    tau: np.ndarray             # (k,) strictly positive diagonal
    identities: tuple           # identity names, index order is the tie-break order
    centroids: np.ndarray       # (len(identities), k)
    holdout_accuracy: float | None = field(default=None, compare=False)

    def __post_init__(self):
        mean = np.ascontiguousarray(self.mean_vector, dtype=np.float64)
        basis = np.ascontiguousarray(self.eigenbasis, dtype=np.float64)
        tau = np.ascontiguousarray(self.tau, dtype=np.float64)
        cents = np.ascontiguousarray(self.centroids, dtype=np.float64)
        d = self.layout.feature_dim
        if mean.shape != (d,):
            raise DomainError(f"mean vector length {mean.shape} does not match feature dim {d}")
        if basis.ndim != 2 or basis.shape[0] != d:
            raise DomainError(f"eigenbasis shape {basis.shape} does not match feature dim {d}")
        k = basis.shape[1]
        if k > d:
            raise DomainError(f"embedding dim {k} exceeds feature dim {d}")
        if tau.shape != (k,):
            raise DomainError(f"tau must hold one coefficient per embedding dim, got {tau.shape}")
        if np.any(tau <= 0.0):
            raise DomainError("tau entries must be strictly positive")
        if len(self.identities) < 2:
            raise DomainError("a recognizer needs at least 2 identities")
        if cents.shape != (len(self.identities), k):
            raise DomainError(f"centroid matrix shape {cents.shape} does not match")
        gram_err = np.max(np.abs(basis.T @ basis - np.eye(k)))
        if gram_err > 1e-8:
            raise DomainError(f"eigenbasis is not orthonormal (max |B'B - I| = {gram_err:.3e})")
        for arr in (mean, basis, tau, cents):
            arr.setflags(write=False)
        object.__setattr__(self, "mean_vector", mean)
        object.__setattr__(self, "eigenbasis", basis)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "identities", tuple(self.identities))
        object.__setattr__(self, "centroids", cents)

    @property
    def k(self) -> int:
        return self.eigenbasis.shape[1]


def patch_top_lefts(landmarks: LandmarkSet, layout: FeatureLayout, width: int, height: int) -> np.ndarray:
    """Denormalize landmark centers and clamp patch top-lefts into bounds.

    Center pixel is floor(coord * (extent - 1) + 0.5); the patch is centered
    on it (top-left shifted by size//2) and clamped so it never leaves the
    canvas. Returns (n, 2) int64 rows of (x, y).
    """
    size = layout.patch_size
    if width < size or height < size:
        raise DomainError(f"canvas {width}x{height} cannot hold a {size}x{size} patch")
    cx = np.floor(landmarks.points[:, 0] * (width - 1) + 0.5).astype(np.int64)
    cy = np.floor(landmarks.points[:, 1] * (height - 1) + 0.5).astype(np.int64)
    tx = np.clip(cx - size // 2, 0, width - size)
    ty = np.clip(cy - size // 2, 0, height - size)
    return np.stack([tx, ty], axis=1)


def _check_pair(img: PixelImage, landmarks: LandmarkSet, layout: FeatureLayout) -> None:
    if landmarks.labels != layout.point_labels:
        raise DomainError(
            f"landmark labels do not match layout v{layout.version_id}: "
            f"{landmarks.labels[:3]}... vs {layout.point_labels[:3]}...")
    if img.channels != layout.patch_channels:
        raise DomainError(f"image has {img.channels} channels, layout expects {layout.patch_channels}")


def extract_feature_vector(img: PixelImage, landmarks: LandmarkSet, layout: FeatureLayout) -> np.ndarray:
    """Concatenated [0, 1]-scaled patch samples at each layout landmark."""
    _check_pair(img, landmarks, layout)
    tls = patch_top_lefts(landmarks, layout, img.width, img.height)
    return gather_patches(img.pixels, tls, layout.patch_size).reshape(-1)


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    """Flip each column so its first nonzero component is positive."""
    out = basis.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        if nz.size and col[nz[0]] < 0.0:
            out[:, j] = -col
    return out


def _pca_fit(matrix: np.ndarray, k: int):
    """Mean and top-k principal directions (deterministic sign convention)."""
    mean = matrix.mean(axis=0)
    centered = matrix - mean
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return mean, _fix_signs(vt[:k].T)


def partition_samples(samples, split_fraction: float = 0.75):
    """Deterministic per-identity train/holdout split.

    Each identity keeps max(1, floor(split_fraction * n)) samples, in given
    order, for training; the rest are held out. Returns (train, holdout)
    index lists into `samples`.
    """
    if not 0.0 < split_fraction <= 1.0:
        raise DomainError(f"split fraction must be in (0, 1], got {split_fraction}")
    by_identity: dict = {}
    for i, (identity, _img, _lm) in enumerate(samples):
        by_identity.setdefault(identity, []).append(i)
    train, holdout = [], []
    for identity in by_identity:
        idxs = by_identity[identity]
        n_train = max(1, int(split_fraction * len(idxs)))
        train.extend(idxs[:n_train])
        holdout.extend(idxs[n_train:])
    return sorted(train), sorted(holdout)


def train_recognizer(samples, layout: FeatureLayout, k: int,
                     split_fraction: float = 0.75) -> RecognizerModel:
    """Fit the eigen-projection recognizer on (identity, image, landmarks) rows.

    Uses a per-identity split (default 75% train); the held-out remainder
    measures original-image accuracy, stored as model.holdout_accuracy
    (None when the split leaves nothing out). tau is the identity scaling.
    """
    samples = list(samples)
    identities = sorted({identity for identity, _i, _l in samples})
    if len(identities) < 2:
        raise DomainError(f"training needs at least 2 identities, got {len(identities)}")
    counts = {ident: 0 for ident in identities}
    for identity, _i, _l in samples:
        counts[identity] += 1
    thin = [ident for ident, n in counts.items() if n < 2]
    if thin:
        raise DomainError(f"every identity needs at least 2 images; too few for: {', '.join(thin)}")

    train_idx, holdout_idx = partition_samples(samples, split_fraction)
    d = layout.feature_dim
    if k < 1 or k > min(d, len(train_idx)):
        raise DomainError(f"embedding dim {k} must be in [1, min(d={d}, n_train={len(train_idx)})]")

    feats = np.empty((len(train_idx), d), dtype=np.float64)
    for row, i in enumerate(train_idx):
        _ident, img, lm = samples[i]
        feats[row] = extract_feature_vector(img, lm, layout)
    mean, basis = _pca_fit(feats, k)
    tau = np.ones(k, dtype=np.float64)

    proj = (feats - mean) @ basis * tau
    ident_order = {ident: j for j, ident in enumerate(identities)}
    centroids = np.zeros((len(identities), k), dtype=np.float64)
    tallies = np.zeros(len(identities), dtype=np.int64)
    for row, i in enumerate(train_idx):
        j = ident_order[samples[i][0]]
        centroids[j] += proj[row]
        tallies[j] += 1
    centroids /= tallies[:, None]

    model = RecognizerModel(layout, mean, basis, tau, tuple(identities), centroids)
    if holdout_idx:
        hits = 0
        for i in holdout_idx:
            identity, img, lm = samples[i]
            found, _conf = recognize(model, img, lm)
            hits += found == identity
        model = RecognizerModel(layout, mean, basis, tau, tuple(identities), centroids,
                                holdout_accuracy=hits / len(holdout_idx))
    return model


def embed(model: RecognizerModel, img: PixelImage, landmarks: LandmarkSet) -> np.ndarray:
    """tau-scaled projection of the centered feature vector onto the eigenbasis."""
    feat = extract_feature_vector(img, landmarks, model.layout)
    return model.tau * (model.eigenbasis.T @ (feat - model.mean_vector))


def recognize(model: RecognizerModel, img: PixelImage, landmarks: LandmarkSet):
    """Nearest-centroid identity plus a softmax confidence.

    Confidence is exp(-dist) normalized over all identities; exact distance
    ties resolve to the lowest identity index.
    """
    z = embed(model, img, landmarks)
    dists = np.sqrt(np.sum((model.centroids - z) ** 2, axis=1))
    idx = int(np.argmin(dists))  # first minimum, i.e. lowest index on ties
    shifted = np.exp(-(dists - dists.min()))
    return model.identities[idx], float(shifted[idx] / shifted.sum())


def pca_project_2d(model: RecognizerModel, items) -> np.ndarray:
    """Project embeddings of (image, landmarks) pairs onto their top-2 PCs."""
    items = list(items)
    if len(items) < 3:
        raise DomainError(f"2-D projection needs at least 3 images, got {len(items)}")
    zs = np.stack([embed(model, img, lm) for img, lm in items])
    mean, basis = _pca_fit(zs, min(2, zs.shape[1]))
    flat = (zs - mean) @ basis
    if flat.shape[1] < 2:  # k == 1 degenerates to a line
        flat = np.concatenate([flat, np.zeros((flat.shape[0], 1))], axis=1)
    return flat


def _write_f64_array(w: binio.ByteWriter, arr: np.ndarray) -> None:
    w.raw(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_f64_array(r: binio.ByteReader, count: int) -> np.ndarray:
    return np.frombuffer(r.take(8 * count), dtype="<f8").copy()


def save_model(model: RecognizerModel, path) -> None:
    w = binio.ByteWriter()
    w.u16(MODEL_VERSION)
    w.u16(model.layout.version_id)
    w.u16(len(model.layout.point_labels))
    for lab in model.layout.point_labels:
        w.text(lab)
    w.u8(model.layout.patch_size)
    w.u8(model.layout.patch_channels)
    d, k = model.eigenbasis.shape
    w.u32(d)
    w.u32(k)
    _write_f64_array(w, model.mean_vector)
    _write_f64_array(w, model.eigenbasis.reshape(-1))
    _write_f64_array(w, model.tau)
    w.u16(len(model.identities))
    for name, centroid in zip(model.identities, model.centroids):
        w.text(name)
        _write_f64_array(w, centroid)
    if model.holdout_accuracy is None:
        w.u8(0)
    else:
        w.u8(1)
        w.f64(model.holdout_accuracy)
    Path(path).write_bytes(binio.seal(MODEL_MAGIC, w.getvalue()))


def load_model(path) -> RecognizerModel:
    label = f"model file {path}"
    r = binio.open_sealed(Path(path).read_bytes(), MODEL_MAGIC, label)
    binio.check_version(r.u16(), MODEL_VERSION, label)
    version_id = r.u16()
    labels = tuple(r.text() for _ in range(r.u16()))
    layout = FeatureLayout(version_id, labels, r.u8(), r.u8())
    d = r.u32()
    k = r.u32()
    if d != layout.feature_dim:
        raise FormatError(f"{label}: stored feature dim {d} contradicts the layout ({layout.feature_dim})")
    mean = _read_f64_array(r, d)
    basis = _read_f64_array(r, d * k).reshape(d, k)
    tau = _read_f64_array(r, k)
    n_ident = r.u16()
    idents, cents = [], []
    for _ in range(n_ident):
        idents.append(r.text())
        cents.append(_read_f64_array(r, k))
    holdout = r.f64() if r.u8() else None
    binio.finish_reader(r, label)
    return RecognizerModel(layout, mean, basis, tau, tuple(idents),
                           np.stack(cents), holdout_accuracy=holdout)


def parse_landmarks_file(path) -> dict:
    """Read the annotation file: per line an image filename then label:x:y
    triples, whitespace-separated, normalized coordinates. Returns
    {filename: LandmarkSet}.
    """
    table: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) < 2:
            raise FormatError(f"{path}:{lineno}: record has no landmark triples")
        fname = tokens[0]
        labels, pts = [], []
        for tok in tokens[1:]:
            parts = tok.split(":")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: malformed triple {tok!r} (want label:x:y)")
            try:
                x, y = float(parts[1]), float(parts[2])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric coordinate in {tok!r}")
            labels.append(parts[0])
            pts.append((x, y))
        if fname in table:
            raise FormatError(f"{path}:{lineno}: duplicate record for {fname}")
        try:
            table[fname] = LandmarkSet(tuple(labels), np.array(pts, dtype=np.float64))
        except DomainError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}")
    return table
