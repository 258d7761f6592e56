"""Seeded black-box search for the XOR pad, plus protect/restore entry points.

The target recognizers are opaque: no gradients, only embedding queries. The
search hill-climbs over pad bytes confined to the template regions, accepting
a proposal only when the worst-case embedding displacement strictly grows and
the protected image stays within the DSSIM budget sigma. Phase 1 mutates all
regions jointly; phase 2 splits regions into groups that hunt independently
from the phase-1 state, recombines the group winners, and fine-tunes with the
remaining evaluation budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._kernels import gather_patches, ssim_windows, xor_regions_inplace
from .errors import DomainError, UnreachableTargetError
from .imaging import PixelImage, SSIM_WINDOW, dssim_arrays, window_coords_for_regions, xor_apply
from .mask_template import CloakKey, MaskTemplate
from .recognizer import FeatureLayout, LandmarkSet, RecognizerModel, patch_top_lefts
from .rng import derive_seed, generator

GAUSSIAN = "gaussian"
CORPUS = "corpus"
SIGMA_TOLERANCE = 0.005
MAX_BISECTIONS = 12


@dataclass(frozen=True)
class NoiseSource:
    """Where pad proposals come from: Gaussian deviates or harvested patches.

    gaussian_sigma is in normalized sample space (std of 25/255 means byte
    deviates with std 25). bank holds raw patch bytes, one row per patch;
    the optimizer XORs bank patches against the local image content so the
    protected region becomes the patch.
    """

    kind: str
    gaussian_sigma: float = 25.0 / 255.0
    bank: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, CORPUS):
            raise DomainError(f"noise kind must be {GAUSSIAN!r} or {CORPUS!r}, got {self.kind!r}")
        if self.gaussian_sigma < 0:
            raise DomainError("gaussian sigma must be nonnegative")
        if self.kind == CORPUS:
            if self.bank is None or len(self.bank) == 0:
                raise DomainError("corpus noise needs a non-empty patch bank")
            bank = np.ascontiguousarray(self.bank, dtype=np.uint8)
            if bank.ndim != 2:
                raise DomainError(f"patch bank must be 2-D (patches x bytes), got shape {bank.shape}")
            bank.setflags(write=False)
            object.__setattr__(self, "bank", bank)


@dataclass(frozen=True)
class PerturbationConfig:
    """Search knobs. Round counts are desk-scale defaults; raise them for
    higher-effort runs. total_budget caps objective evaluations across all
    phases."""

    sigma: float
    phase1_rounds: int = 750
    group_size: int = 5
    group_rounds: int = 50
    total_budget: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.sigma <= 1.0:
            raise DomainError(f"sigma must be in (0, 1], got {self.sigma}")
        if self.phase1_rounds < 0 or self.group_rounds < 0 or self.total_budget < 0:
            raise DomainError("round counts and budget must be nonnegative")
        if self.group_size < 1:
            raise DomainError("group size must be at least 1")


def build_patch_bank(images, patches_per_image: int, seed: int, patch_size: int = 4) -> np.ndarray:
    """Harvest random patch_size square patches from reference images."""
    images = list(images)
    if not images:
        raise DomainError("patch bank needs at least one reference image")
    if patches_per_image < 1:
        raise DomainError("patches_per_image must be positive")
    rng = generator(seed, "patch-bank")
    rows = []
    for img in images:
        if img.width < patch_size or img.height < patch_size:
            raise DomainError(f"image {img.width}x{img.height} is smaller than the patch size")
        xs = rng.integers(0, img.width - patch_size + 1, size=patches_per_image)
        ys = rng.integers(0, img.height - patch_size + 1, size=patches_per_image)
        for x, y in zip(xs, ys):
            rows.append(img.pixels[y:y + patch_size, x:x + patch_size, :].reshape(-1))
    return np.stack(rows)


def build_focus_bank(pairs, seed: int, patch_size: int = 4, extreme_rows: int = 256) -> np.ndarray:
    """Patch bank tuned for attacking: landmark-read content plus extremes.

    Harvests the patch each image presents at its own landmarks (so proposals
    carry other identities' feature content, which projects strongly onto a
    recognizer's discriminative directions) and appends per-byte saturated
    rows (so the search can overshoot where blending is not enough).
    pairs: (image, landmarks) tuples.
    """
    rows = []
    channels = None
    for img, lm in pairs:
        channels = img.channels
        layout = FeatureLayout(0, lm.labels, patch_size, img.channels)
        for x, y in patch_top_lefts(lm, layout, img.width, img.height):
            rows.append(img.pixels[y:y + patch_size, x:x + patch_size, :].reshape(-1))
    if not rows:
        raise DomainError("focus bank needs at least one (image, landmarks) pair")
    if extreme_rows:
        rng = generator(seed, "focus-bank")
        nbytes = patch_size * patch_size * channels
        rows.append((rng.integers(0, 2, size=(extreme_rows, nbytes)) * 255).astype(np.uint8))
        return np.concatenate([np.stack(rows[:-1]), rows[-1]])
    return np.stack(rows)


def sample_noise(source: NoiseSource, region_count: int, patch_bytes: int = 48,
                 rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Draw one payload proposal per region, deterministically per seed.

    Gaussian: rounded, clamped byte deviates. Corpus: raw rows from the
    patch bank (the caller turns them into pads). An explicit rng overrides
    the source seed, letting a search advance one stream across rounds.
    """
    if region_count < 0:
        raise DomainError("region count must be nonnegative")
    if rng is None:
        rng = generator(source.seed, "noise")
    if source.kind == GAUSSIAN:
        dev = rng.normal(0.0, source.gaussian_sigma * 255.0, size=(region_count, patch_bytes))
        return np.clip(np.rint(dev), 0, 255).astype(np.uint8)
    if source.bank.shape[1] != patch_bytes:
        raise DomainError(f"bank patches hold {source.bank.shape[1]} bytes, regions need {patch_bytes}")
    idx = rng.integers(0, len(source.bank), size=region_count)
    return source.bank[idx].copy()


def optimize_perturbation(img: PixelImage, landmarks: LandmarkSet, template: MaskTemplate,
                          targets, config: PerturbationConfig, source: NoiseSource) -> CloakKey:
    """Find the pad that pushes every target's embedding as far as possible.

    Objective: the minimum over targets of the Euclidean distance between the
    tau-scaled embeddings of the original and the padded image. A proposal is
    kept only if the objective strictly increases and DSSIM stays within
    config.sigma (sigma = 1 disables the perceptual check: DSSIM never
    exceeds 1). If nothing feasible beats the zero pad, the zero pad comes
    back flagged no_gain. The full objective trace is recorded on the key.
    """
    targets = list(targets)
    if not targets:
        raise DomainError("optimization needs at least one target recognizer")
    if (img.width, img.height, img.channels) != (template.width, template.height, template.channels):
        raise DomainError(
            f"image {img.width}x{img.height}x{img.channels} does not match template canvas "
            f"{template.width}x{template.height}x{template.channels}")
    check_dssim = config.sigma < 1.0
    if check_dssim and (img.height < SSIM_WINDOW or img.width < SSIM_WINDOW):
        raise DomainError(f"sigma < 1 needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels for DSSIM")

    regions = template.regions
    n = len(regions)
    pb = template.patch_bytes
    size = regions[0].size if n else 4
    target_versions = tuple(t.layout.version_id for t in targets)
    if n == 0 or config.total_budget == 0:
        return CloakKey(template, np.zeros((n, pb), dtype=np.uint8), sigma_used=config.sigma,
                        no_gain=True, objective_trace=(0.0,), target_versions=target_versions)

    # Per-target constants: landmark patch top-lefts and original embeddings.
    probes = []
    for t in targets:
        lm = landmarks.subset(t.layout.point_labels)
        tls = patch_top_lefts(lm, t.layout, img.width, img.height)
        feat0 = gather_patches(img.pixels, tls, t.layout.patch_size).reshape(-1)
        z0 = t.tau * (t.eigenbasis.T @ (feat0 - t.mean_vector))
        probes.append((t, tls, z0))

    def objective(pixels: np.ndarray) -> float:
        worst = np.inf
        for t, tls, z0 in probes:
            feat = gather_patches(pixels, tls, t.layout.patch_size).reshape(-1)
            z = t.tau * (t.eigenbasis.T @ (feat - t.mean_vector))
            d = float(np.sqrt(np.sum((z - z0) ** 2)))
            if d < worst:
                worst = d
        return worst

    origins = np.empty((n, 2), dtype=np.int64)
    orig_mat = np.empty((n, pb), dtype=np.uint8)
    for i, r in enumerate(regions):
        origins[i, 0] = r.origin_x
        origins[i, 1] = r.origin_y
        orig_mat[i] = img.pixels[r.origin_y:r.origin_y + size, r.origin_x:r.origin_x + size, :].reshape(-1)

    # Pads only touch template regions, so every other SSIM window scores an
    # exact 1.0 against the original; only overlapped windows need computing.
    touched = window_coords_for_regions(regions, img.height, img.width)
    n_total = (img.height // SSIM_WINDOW) * (img.width // SSIM_WINDOW)
    chans = img.channels
    fill = float((n_total - touched.shape[0]) * chans)
    denom = float(n_total * chans)

    def within_budget(pixels: np.ndarray) -> bool:
        if not check_dssim:
            return True
        s = float(ssim_windows(img.pixels, pixels, touched, SSIM_WINDOW).sum())
        est = (1.0 - (s + fill) / denom) / 2.0
        if est > config.sigma:
            return False
        return dssim_arrays(img.pixels, pixels) <= config.sigma

    rng = generator(config.seed, "optimize")
    evals = 0
    trace = [0.0]
    global_best = 0.0

    class _Hunt:
        __slots__ = ("pixels", "pad", "obj")

        def __init__(self, pixels, pad, obj):
            self.pixels = pixels
            self.pad = pad
            self.obj = obj

        def clone(self):
            return _Hunt(self.pixels.copy(), self.pad.copy(), self.obj)

    def attempt(hunt: _Hunt, idx: np.ndarray) -> bool:
        """Blend drawn content into the pads of the regions in idx at a random
        byte subset; keep on strict improvement. Blending lets improvements
        accumulate byte by byte instead of betting whole regions at once."""
        nonlocal evals, global_best
        draw = sample_noise(source, len(idx), pb, rng)
        cand = draw if source.kind == GAUSSIAN else draw ^ orig_mat[idx]
        keep = rng.random(cand.shape) >= rng.uniform(0.0, 1.0)
        cand = np.where(keep, hunt.pad[idx], cand)
        delta = hunt.pad[idx] ^ cand
        if not delta.any():
            return False
        xor_regions_inplace(hunt.pixels, origins[idx], size, delta)
        evals += 1
        obj = objective(hunt.pixels)
        if obj > hunt.obj and within_budget(hunt.pixels):
            hunt.pad[idx] = cand
            hunt.obj = obj
            if obj > global_best:
                global_best = obj
                trace.append(obj)
            return True
        xor_regions_inplace(hunt.pixels, origins[idx], size, delta)
        return False

    def random_subset(pool: np.ndarray) -> np.ndarray:
        k = int(rng.integers(1, len(pool) + 1))
        return rng.choice(pool, size=k, replace=False)

    main = _Hunt(img.pixels.copy(), np.zeros((n, pb), dtype=np.uint8), 0.0)
    all_idx = np.arange(n)

    for _ in range(config.phase1_rounds):
        if evals >= config.total_budget:
            break
        attempt(main, random_subset(all_idx))

    # Phase 2: groups hunt independently from the phase-1 state.
    groups = [all_idx[i:i + config.group_size] for i in range(0, n, config.group_size)]
    hunters = []
    if len(groups) > 1 and config.group_rounds > 0:
        for g in groups:
            h = main.clone()
            for _ in range(config.group_rounds):
                if evals >= config.total_budget:
                    break
                attempt(h, random_subset(g))
            hunters.append((g, h))

        best = max((h for _g, h in hunters), key=lambda h: h.obj)
        if best.obj > main.obj:
            main = best
        recombined = main.pad.copy()
        changed = False
        for g, h in hunters:
            if not np.array_equal(recombined[g], h.pad[g]):
                recombined[g] = h.pad[g]
                changed = True
        if changed and evals < config.total_budget:
            pixels = img.pixels.copy()
            live = np.nonzero(recombined.any(axis=1))[0]
            if live.size:
                xor_regions_inplace(pixels, origins[live], size, recombined[live])
            evals += 1
            obj = objective(pixels)
            if obj > main.obj and within_budget(pixels):
                main = _Hunt(pixels, recombined, obj)
                if obj > global_best:
                    global_best = obj
                    trace.append(obj)

    # Zero-delta proposals are free, so cap raw attempts to avoid spinning
    # forever on degenerate noise sources (e.g. a bank equal to the image).
    stall = 0
    while evals < config.total_budget and stall < 4 * config.total_budget + 64:
        before = evals
        attempt(main, random_subset(all_idx))
        stall = stall + 1 if evals == before else 0

    return CloakKey(template, main.pad, sigma_used=config.sigma,
                    no_gain=not main.pad.any(), objective_trace=tuple(trace),
                    target_versions=target_versions)


def protect(img: PixelImage, key: CloakKey) -> PixelImage:
    """XOR the key payloads into the template regions."""
    t = key.template
    if (img.width, img.height, img.channels) != (t.width, t.height, t.channels):
        raise DomainError(
            f"image {img.width}x{img.height}x{img.channels} does not match key canvas "
            f"{t.width}x{t.height}x{t.channels}")
    return xor_apply(img, t.regions, key.payloads)


def restore(protected: PixelImage, key: CloakKey) -> PixelImage:
    """Exact inverse of protect: one more XOR with the same pads."""
    return protect(protected, key)


def misclassified(sample, key: CloakKey, targets) -> bool:
    """True when every target misidentifies the protected image."""
    from .recognizer import recognize
    identity, img, lm = sample
    shadow = protect(img, key)
    for t in targets:
        found, _conf = recognize(t, shadow, lm.subset(t.layout.point_labels))
        if found == identity:
            return False
    return True


def tune_sigma(samples, template: MaskTemplate, targets, fc_target: float,
               config: PerturbationConfig, source: NoiseSource):
    """Smallest sigma whose optimized pads still fool the targets often enough.

    samples are (identity, image, landmarks) rows; F_c at a given sigma is
    the fraction where all targets misidentify the protected image. Starts at
    sigma = 1, then bisects downward (at most 12 steps, stopping once the
    bracket is within 0.005). Returns (sigma, trace) where trace lists the
    probed (sigma, F_c) pairs. Raises UnreachableTargetError, carrying the
    best achieved F_c, when even sigma = 1 cannot reach fc_target.
    """
    samples = list(samples)
    if not samples:
        raise DomainError("sigma tuning needs at least one sample image")
    if not 0.0 <= fc_target <= 1.0:
        raise DomainError(f"fc_target must be in [0, 1], got {fc_target}")

    def fc_at(sigma: float) -> float:
        hits = 0
        for i, sample in enumerate(samples):
            cfg = replace(config, sigma=sigma, seed=derive_seed(config.seed, "tune", i))
            key = optimize_perturbation(sample[1], sample[2], template, targets, cfg, source)
            hits += misclassified(sample, key, targets)
        return hits / len(samples)

    trace = []
    fc_full = fc_at(1.0)
    trace.append((1.0, fc_full))
    if fc_full < fc_target:
        raise UnreachableTargetError(
            f"fc_target {fc_target} is unreachable: even sigma = 1 achieves only F_c = {fc_full:.4f}",
            best_fc=fc_full)

    lo, hi = 0.0, 1.0
    for _ in range(MAX_BISECTIONS):
        if hi - lo <= SIGMA_TOLERANCE:
            break
        mid = (lo + hi) / 2.0
        fc = fc_at(mid)
        trace.append((mid, fc))
        if fc >= fc_target:
            hi = mid
        else:
            lo = mid
    return hi, trace
