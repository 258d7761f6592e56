"""Synthetic desk corpus: labeled face-like images with landmark annotations.

Each identity gets a fixed random 12x12 signature patch per landmark;
per-image variation comes from sub-pixel landmark jitter, a background ramp,
pixel noise, and a brightness shift. Identity information therefore lives
exactly where the recognizers read, which is what a protection toolkit needs
to exercise end to end. Corpus layout on disk:

    <dir>/<identity>/<image>.png     one subdirectory per identity
    <dir>/landmarks.txt              one record per image, label:x:y triples
    <dir>/manifest.txt               generation parameters + pixel digests
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError
from .imaging import CANVAS_HEIGHT, CANVAS_WIDTH, PixelImage, load_image, save_image
from .recognizer import FeatureLayout, LandmarkSet, parse_landmarks_file
from .rng import generator

SIGNATURE_SIZE = 12
LANDMARKS_FILENAME = "landmarks.txt"
MANIFEST_FILENAME = "manifest.txt"

# Full 17-point annotation schema with face-like base positions.
SCHEMA = (
    ("brow_l_outer", 0.26, 0.30),
    ("brow_l_inner", 0.40, 0.28),
    ("brow_r_inner", 0.60, 0.28),
    ("brow_r_outer", 0.74, 0.30),
    ("eye_l_outer", 0.28, 0.40),
    ("eye_l_center", 0.35, 0.41),
    ("eye_l_inner", 0.42, 0.40),
    ("eye_r_inner", 0.58, 0.40),
    ("eye_r_center", 0.65, 0.41),
    ("eye_r_outer", 0.72, 0.40),
    ("nose_bridge", 0.50, 0.46),
    ("nose_tip", 0.50, 0.58),
    ("nose_l", 0.43, 0.60),
    ("nose_r", 0.57, 0.60),
    ("mouth_l", 0.38, 0.72),
    ("mouth_center", 0.50, 0.74),
    ("mouth_r", 0.62, 0.72),
)
SCHEMA_LABELS = tuple(label for label, _x, _y in SCHEMA)

BUILTIN_LAYOUTS = {
    "17pt": FeatureLayout(17, SCHEMA_LABELS),
    "5pt": FeatureLayout(5, ("eye_l_center", "eye_r_center", "nose_tip", "mouth_l", "mouth_r")),
}


@dataclass(frozen=True)
class CorpusItem:
    identity: str
    rel_path: str          # e.g. "id03/id03_2.png", the key in landmarks.txt
    image: PixelImage
    landmarks: LandmarkSet  # full schema


def _signature_patches(seed: int, identity_index: int) -> np.ndarray:
    # A narrow byte range keeps identities close enough in feature space
    # that heavy-handed attacks (blanket noise, warps) measurably raise
    # misclassification instead of leaving a flat zero.
    rng = generator(seed, "identity", identity_index)
    return rng.integers(104, 168, size=(len(SCHEMA), SIGNATURE_SIZE, SIGNATURE_SIZE, 3)).astype(np.uint8)


def _render_image(seed: int, identity_index: int, image_index: int, signatures: np.ndarray):
    rng = generator(seed, "image", identity_index, image_index)
    w, h = CANVAS_WIDTH, CANVAS_HEIGHT

    coords = np.array([(x, y) for _lab, x, y in SCHEMA], dtype=np.float64)
    jitter = rng.uniform(-0.002, 0.002, size=coords.shape)
    coords = np.round(np.clip(coords + jitter, 0.02, 0.98), 6)

    color = rng.integers(90, 166, size=3).astype(np.float64)
    gx, gy = rng.uniform(-20.0, 20.0, size=2)
    xs = (np.arange(w, dtype=np.float64) / (w - 1)) - 0.5
    ys = (np.arange(h, dtype=np.float64) / (h - 1)) - 0.5
    canvas = color[None, None, :] + (gx * xs)[None, :, None] + (gy * ys)[:, None, None]

    half = SIGNATURE_SIZE // 2
    for i in range(len(SCHEMA)):
        px = int(np.floor(coords[i, 0] * (w - 1) + 0.5))
        py = int(np.floor(coords[i, 1] * (h - 1) + 0.5))
        ox = min(max(px - half, 0), w - SIGNATURE_SIZE)
        oy = min(max(py - half, 0), h - SIGNATURE_SIZE)
        canvas[oy:oy + SIGNATURE_SIZE, ox:ox + SIGNATURE_SIZE, :] = signatures[i]

    canvas += rng.normal(0.0, 2.5, size=canvas.shape)
    canvas += rng.uniform(-8.0, 8.0)
    img = PixelImage(np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8))
    return img, coords


def make_corpus(out_dir, n_identities: int = 20, images_per_identity: int = 5, seed: int = 0) -> dict:
    """Generate the corpus under out_dir; returns {rel_path: pixel digest}.

    Deterministic per seed, byte for byte, including the annotation file and
    the manifest (which records parameters and the per-image digests of the
    raw pixel arrays, independent of PNG encoding).
    """
    if n_identities < 2:
        raise DomainError("a corpus needs at least 2 identities")
    if images_per_identity < 2:
        raise DomainError("each identity needs at least 2 images")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    digests = {}
    ann_lines = []
    for ident_idx in range(n_identities):
        identity = f"id{ident_idx:02d}"
        (out / identity).mkdir(exist_ok=True)
        signatures = _signature_patches(seed, ident_idx)
        for img_idx in range(images_per_identity):
            img, coords = _render_image(seed, ident_idx, img_idx, signatures)
            rel = f"{identity}/{identity}_{img_idx}.png"
            save_image(img, out / rel)
            digests[rel] = img.digest()
            triples = " ".join(f"{lab}:{coords[i, 0]:.6f}:{coords[i, 1]:.6f}"
                               for i, lab in enumerate(SCHEMA_LABELS))
            ann_lines.append(f"{rel} {triples}")
    (out / LANDMARKS_FILENAME).write_text("\n".join(ann_lines) + "\n")

    manifest = [("seed", seed), ("identities", n_identities), ("images_per_identity", images_per_identity)]
    manifest += [(f"digest.{rel}", dig) for rel, dig in sorted(digests.items())]
    from .evaluation import write_manifest
    write_manifest(manifest, out / MANIFEST_FILENAME)
    return digests


def load_corpus(corpus_dir) -> list:
    """Read every annotated image under corpus_dir as CorpusItem rows.

    Rows come back sorted by (identity, filename) so downstream splits and
    seeds are stable. Unannotated images are an error; the reverse (annotated
    but missing) is too.
    """
    root = Path(corpus_dir)
    if not root.is_dir():
        raise DomainError(f"corpus directory {corpus_dir} does not exist")
    ann_path = root / LANDMARKS_FILENAME
    if not ann_path.is_file():
        raise FormatError(f"{corpus_dir} has no {LANDMARKS_FILENAME}")
    table = parse_landmarks_file(ann_path)

    items = []
    seen = set()
    for ident_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for f in sorted(ident_dir.iterdir()):
            if f.suffix.lower() not in (".png", ".ppm"):
                continue
            rel = f"{ident_dir.name}/{f.name}"
            if rel not in table:
                raise FormatError(f"{rel} has no record in {LANDMARKS_FILENAME}")
            seen.add(rel)
            items.append(CorpusItem(ident_dir.name, rel, load_image(f), table[rel]))
    missing = set(table) - seen
    if missing:
        raise FormatError(f"{LANDMARKS_FILENAME} names absent images: {', '.join(sorted(missing)[:5])}")
    if not items:
        raise DomainError(f"corpus directory {corpus_dir} holds no images")
    return items


def layout_by_name(name: str) -> FeatureLayout:
    if name not in BUILTIN_LAYOUTS:
        raise DomainError(f"unknown layout {name!r}; available: {', '.join(sorted(BUILTIN_LAYOUTS))}")
    return BUILTIN_LAYOUTS[name]
