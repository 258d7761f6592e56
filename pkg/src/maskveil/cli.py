"""maskveil command line: reproducible runs over an annotated image corpus.

Subcommands: make-corpus, train-recognizer, fit-template, protect, restore,
evaluate, superpose, baseline, export-pca. Every run is deterministic given
its seed; all derived randomness flows through named sub-seeds (per-image
seeds hash the master seed with the image's corpus-relative path, so batch
order and worker count never change any output byte).

Exit codes: 0 success, 1 domain or format error, 2 I/O error, 3 unreachable
protection target.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .corpus import BUILTIN_LAYOUTS, layout_by_name, load_corpus, make_corpus
from .errors import DomainError, MaskVeilError, UnreachableTargetError
from .evaluation import (baseline_pixel_confuse, baseline_twist, evaluate_run, export_scatter,
                         parse_manifest, protection_rate, write_manifest, write_records_csv)
from .imaging import PixelImage, load_image, normalize_canvas, save_image
from .mask_template import (aggregate_scales, derive_template, deserialize_template,
                            fit_feature_regression, serialize_template, superpose, CloakKey,
                            MaskTemplate)
from .perturbation import (CORPUS, GAUSSIAN, NoiseSource, PerturbationConfig, build_focus_bank,
                           optimize_perturbation, protect, restore, tune_sigma)
from .recognizer import load_model, pca_project_2d, save_model, train_recognizer
from .rng import derive_seed


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are domain errors, not exit 2
        raise DomainError(f"{self.prog}: {message}")


def _thread_count() -> int:
    raw = os.environ.get("MASKVEIL_THREADS", "")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise DomainError(f"MASKVEIL_THREADS must be an integer, got {raw!r}")
        if n < 1:
            raise DomainError(f"MASKVEIL_THREADS must be at least 1, got {n}")
        return n
    return min(4, os.cpu_count() or 1)


def _map_ordered(fn, items):
    """Run fn over items on the worker pool, results in input order."""
    threads = _thread_count()
    if threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


class _Settings:
    """Flag values backed by the optional flat key = value config file."""

    def __init__(self, args):
        self.args = args
        self.table = parse_manifest(args.config) if getattr(args, "config", None) else {}

    def get(self, name, cast, default):
        flag = getattr(self.args, name.replace("-", "_"), None)
        if flag is not None:
            return flag
        if name in self.table:
            raw = self.table[name]
            try:
                if cast is bool:
                    return raw.lower() in ("1", "true", "yes")
                return cast(raw)
            except ValueError:
                raise DomainError(f"config key {name}: cannot read {raw!r} as {cast.__name__}")
        return default


def _corpus_items(settings, args):
    items = load_corpus(args.corpus)
    identity = settings.get("identity", str, None)
    if identity is not None:
        items = [it for it in items if it.identity == identity]
        if not items:
            raise DomainError(f"corpus has no identity {identity!r}")
    return items


def _noise_source(settings, items, seed):
    kind = settings.get("noise", str, GAUSSIAN)
    if kind == GAUSSIAN:
        return NoiseSource(GAUSSIAN, gaussian_sigma=settings.get("gaussian-sigma", float, 25.0 / 255.0),
                           seed=derive_seed(seed, "noise"))
    if kind == CORPUS:
        bank = build_focus_bank([(it.image, it.landmarks) for it in items], derive_seed(seed, "bank"))
        return NoiseSource(CORPUS, bank=bank, seed=derive_seed(seed, "noise"))
    raise DomainError(f"unknown noise kind {kind!r} (use {GAUSSIAN!r} or {CORPUS!r})")


def _perturbation_config(settings, sigma, seed) -> PerturbationConfig:
    return PerturbationConfig(
        sigma=sigma,
        phase1_rounds=settings.get("phase1-rounds", int, 750),
        group_size=settings.get("group-size", int, 5),
        group_rounds=settings.get("group-rounds", int, 50),
        total_budget=settings.get("budget", int, 2000),
        seed=seed)


def _load_templates(paths):
    out = []
    for p in paths:
        t = deserialize_template(p)
        if isinstance(t, CloakKey):
            t = t.template
        out.append(t)
    return out


def cmd_make_corpus(args) -> int:
    settings = _Settings(args)
    seed = settings.get("seed", int, 0)
    make_corpus(args.out,
                n_identities=settings.get("identities", int, 20),
                images_per_identity=settings.get("images-per-identity", int, 5),
                seed=seed)
    print(f"corpus written to {args.out}")
    return 0


def cmd_train_recognizer(args) -> int:
    settings = _Settings(args)
    seed = settings.get("seed", int, 0)
    layout = layout_by_name(settings.get("layout", str, "17pt"))
    k = settings.get("k", int, 32)
    split = settings.get("split", float, 0.75)
    items = _corpus_items(settings, args)
    samples = [(it.identity, it.image, it.landmarks.subset(layout.point_labels)) for it in items]
    model = train_recognizer(samples, layout, k, split)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    write_manifest([
        ("seed", seed),
        ("layout", layout.version_id),
        ("k", k),
        ("split", split),
        ("images", len(samples)),
        ("identities", len(model.identities)),
        ("holdout_t_o", model.holdout_accuracy if model.holdout_accuracy is not None else "none"),
    ], str(out) + ".manifest")
    acc = "n/a" if model.holdout_accuracy is None else f"{model.holdout_accuracy:.4f}"
    print(f"model written to {out} (held-out T_o = {acc})")
    return 0


def cmd_fit_template(args) -> int:
    settings = _Settings(args)
    seed = settings.get("seed", int, 0)
    lam = settings.get("lam", float, 0.1)
    radius = settings.get("offset-radius", int, 2)
    model = load_model(args.model)
    items = _corpus_items(settings, args)

    phi = aggregate_scales([it.landmarks for it in items])
    reg_samples = [(it.landmarks.points.reshape(-1),
                    it.landmarks.subset(model.layout.point_labels).points.reshape(-1))
                   for it in items]
    reg = fit_feature_regression(reg_samples, lam)
    template = derive_template(reg, model.layout, phi, derive_seed(seed, "template"), radius)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    serialize_template(template, out)
    write_manifest([
        ("seed", seed),
        ("lam", lam),
        ("offset_radius", radius),
        ("source_version", model.layout.version_id),
        ("regions", len(template.regions)),
        ("scale_warnings", len(phi.scale_warnings)),
    ], str(out) + ".manifest")
    print(f"template with {len(template.regions)} regions written to {out}")
    return 0


def cmd_protect(args) -> int:
    settings = _Settings(args)
    seed = settings.get("seed", int, 0)
    sigma = settings.get("sigma", float, 0.05)
    fc_target = settings.get("fc-target", float, None)
    items = _corpus_items(settings, args)
    template = _load_templates([args.template])[0]
    models = [load_model(p) for p in args.models]
    if len(models) > 3:
        warnings.warn(f"protecting against {len(models)} recognizers; less than 3 are recommended",
                      stacklevel=1)
    source = _noise_source(settings, items, seed)

    manifest = [("seed", seed), ("template", str(args.template)),
                ("models", ",".join(str(m) for m in args.models)), ("noise", source.kind)]
    if fc_target is not None:
        base_cfg = _perturbation_config(settings, 1.0, derive_seed(seed, "sigma-tune"))
        tune_samples = [(it.identity, it.image, it.landmarks) for it in items]
        sigma, trace = tune_sigma(tune_samples, template, models, fc_target, base_cfg, source)
        manifest.append(("fc_target", fc_target))
        for s, fc in trace:
            manifest.append((f"tuning.sigma_{s:.6f}", fc))
    manifest.append(("sigma", sigma))

    out = Path(args.out)
    (out / "protected").mkdir(parents=True, exist_ok=True)
    (out / "keys").mkdir(parents=True, exist_ok=True)

    def work(item):
        cfg = _perturbation_config(settings, sigma, derive_seed(seed, "protect", item.rel_path))
        key = optimize_perturbation(item.image, item.landmarks, template, models, cfg, source)
        return key, protect(item.image, key)

    results = _map_ordered(work, items)
    for item, (key, shadow) in zip(items, results):
        img_path = out / "protected" / item.rel_path
        key_path = (out / "keys" / item.rel_path).with_suffix(".mvk")
        img_path.parent.mkdir(parents=True, exist_ok=True)
        key_path.parent.mkdir(parents=True, exist_ok=True)
        save_image(shadow, img_path)
        serialize_template(key, key_path)
        manifest += [
            (f"{item.rel_path}.sigma", key.sigma_used),
            (f"{item.rel_path}.objective", key.objective_trace[-1]),
            (f"{item.rel_path}.no_gain", key.no_gain),
            (f"{item.rel_path}.digest", shadow.digest()),
        ]
    write_manifest(manifest, out / "protect_manifest.txt")
    print(f"protected {len(items)} images under {out}")
    return 0


def cmd_restore(args) -> int:
    settings = _Settings(args)
    images_dir = Path(args.images)
    keys_dir = Path(args.keys)
    out = Path(args.out)
    originals_dir = settings.get("originals", str, None)

    rels = sorted(p.relative_to(images_dir).as_posix() for p in images_dir.rglob("*.png"))
    if not rels:
        raise DomainError(f"no protected images under {images_dir}")
    # Load and validate every key before writing anything.
    loaded = []
    for rel in rels:
        key_path = (keys_dir / rel).with_suffix(".mvk")
        key = deserialize_template(key_path)
        if not isinstance(key, CloakKey):
            raise DomainError(f"{key_path} holds a bare template, not a cloak key")
        loaded.append((rel, load_image(images_dir / rel), key))

    manifest = []
    worst = 0
    for rel, shadow, key in loaded:
        plain = restore(shadow, key)
        dest = out / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        save_image(plain, dest)
        if originals_dir is not None:
            ref = load_image(Path(originals_dir) / rel)
            if ref.pixels.shape != plain.pixels.shape:
                raise DomainError(f"{rel}: original and restored dimensions differ")
            diff = int(np.count_nonzero(ref.pixels != plain.pixels))
            worst = max(worst, diff)
            manifest.append((f"{rel}.diff_samples", diff))
    if manifest:
        write_manifest(manifest, out / "restore_manifest.txt")
    print(f"restored {len(loaded)} images to {out}")
    if originals_dir is not None:
        print(f"largest per-image differing-sample count: {worst}")
        if worst > 0:
            print("restoration mismatch: some restored images differ from the originals",
                  file=sys.stderr)
            return 1
    return 0


def _denormalized(lm, label, width, height):
    idx = {lab: i for i, lab in enumerate(lm.labels)}
    if label not in idx:
        raise DomainError(f"landmark set has no point labeled {label!r}")
    x, y = lm.points[idx[label]]
    return float(x) * (width - 1), float(y) * (height - 1)


def _baseline_images(settings, items, kind, seed, template):
    if kind == "confuse":
        p = settings.get("p", float, 167.0)
        if template is None:
            raise DomainError("pixel confusion needs --template for its regions")
        return [baseline_pixel_confuse(it.image, template.regions, p,
                                       derive_seed(seed, "confuse", it.rel_path))
                for it in items]
    if kind == "twist":
        pressure = settings.get("pressure", float, 63.0)
        label = settings.get("center-label", str, "nose_tip")
        out = []
        for it in items:
            center = _denormalized(it.landmarks, label, it.image.width, it.image.height)
            out.append(baseline_twist(it.image, center, pressure))
        return out
    raise DomainError(f"unknown baseline kind {kind!r} (use confuse or twist)")


def cmd_evaluate(args) -> int:
    settings = _Settings(args)
    seed = settings.get("seed", int, 0)
    items = _corpus_items(settings, args)
    models = [load_model(p) for p in args.models]
    samples = [(it.identity, it.image, it.landmarks) for it in items]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    baseline_kind = settings.get("baseline", str, None)
    if baseline_kind is not None:
        template = _load_templates([args.template])[0] if args.template else None
        protected = _baseline_images(settings, items, baseline_kind, seed, template)
        restored = [it.image for it in items]  # baselines are destructive
    else:
        if not args.protected or not args.restored:
            raise DomainError("evaluate needs --protected and --restored directories (or --baseline)")
        missing = [f"{d}/{it.rel_path}"
                   for d in (args.protected, args.restored)
                   for it in items if not (Path(d) / it.rel_path).is_file()]
        if missing:
            raise FileNotFoundError(f"missing artifacts: {', '.join(missing[:8])}"
                                    + (" ..." if len(missing) > 8 else ""))
        protected = [load_image(Path(args.protected) / it.rel_path) for it in items]
        restored = [load_image(Path(args.restored) / it.rel_path) for it in items]

    report = evaluate_run(models, samples, protected, restored)
    pairs = [("seed", seed), ("images", len(items))]
    if baseline_kind is not None:
        pairs.append(("baseline", baseline_kind))
    write_manifest(pairs + report.manifest_pairs(), out / "metrics.txt")
    write_records_csv(report, out / "records.csv")

    if settings.get("scatter", bool, False):
        model = models[0]
        combined = ([(it.image, it.landmarks.subset(model.layout.point_labels)) for it in items]
                    + [(img, it.landmarks.subset(model.layout.point_labels))
                       for it, img in zip(items, protected)])
        pts = pca_project_2d(model, combined)
        tags = ["orig"] * len(items) + ["prot"] * len(items)
        export_scatter([(x, y, tag) for (x, y), tag in zip(pts, tags)], out / "scatter.csv")

    print(f"T_o = {report.t_o:.4f}  F_c = {report.f_c:.4f}  T_r = {report.t_r:.4f}  "
          f"r_s = {report.r_s:.4f}  mean DSSIM = {report.mean_dssim:.6f}")
    return 0


def cmd_superpose(args) -> int:
    settings = _Settings(args)
    templates = _load_templates(args.templates)
    raw = settings.get("priorities", str, None)
    priorities = [int(tok) for tok in raw.split(",")] if raw else None
    merged = superpose(templates, priorities)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    serialize_template(merged, out)
    print(f"superposed {len(templates)} templates -> {len(merged.regions)} regions at {out}")
    return 0


def cmd_baseline(args) -> int:
    settings = _Settings(args)
    seed = settings.get("seed", int, 0)
    items = _corpus_items(settings, args)
    template = _load_templates([args.template])[0] if args.template else None
    attacked = _baseline_images(settings, items, args.kind, seed, template)
    out = Path(args.out)
    manifest = [("seed", seed), ("kind", args.kind)]
    for it, img in zip(items, attacked):
        dest = out / it.rel_path
        dest.parent.mkdir(parents=True, exist_ok=True)
        save_image(img, dest)
        manifest.append((f"{it.rel_path}.digest", img.digest()))
    write_manifest(manifest, out / "baseline_manifest.txt")
    print(f"wrote {len(attacked)} {args.kind} images under {out}")
    return 0


def cmd_export_pca(args) -> int:
    settings = _Settings(args)
    items = _corpus_items(settings, args)
    model = load_model(args.model)
    combined = [(it.image, it.landmarks.subset(model.layout.point_labels)) for it in items]
    tags = ["orig"] * len(items)
    if args.protected:
        for it in items:
            img = load_image(Path(args.protected) / it.rel_path)
            combined.append((img, it.landmarks.subset(model.layout.point_labels)))
            tags.append("prot")
    pts = pca_project_2d(model, combined)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_scatter([(x, y, tag) for (x, y), tag in zip(pts, tags)], out)
    print(f"{len(tags)} points written to {out}")
    return 0


def _add_common(sp, *names):
    sp.add_argument("--config", help="flat key = value settings file; flags win")
    for name in names:
        if name == "corpus":
            sp.add_argument("--corpus", required=True, help="corpus directory")
        elif name == "out":
            sp.add_argument("--out", required=True, help="output path")
        elif name == "seed":
            sp.add_argument("--seed", type=int, help="master seed (default 0)")
        elif name == "identity":
            sp.add_argument("--identity", help="restrict to one identity")


def build_parser() -> _Parser:
    parser = _Parser(prog="maskveil", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("make-corpus", help="generate the synthetic annotated corpus")
    _add_common(sp, "out", "seed")
    sp.add_argument("--identities", type=int)
    sp.add_argument("--images-per-identity", type=int)
    sp.set_defaults(func=cmd_make_corpus)

    sp = sub.add_parser("train-recognizer", help="fit an eigen-projection recognizer")
    _add_common(sp, "corpus", "out", "seed", "identity")
    sp.add_argument("--layout", choices=sorted(BUILTIN_LAYOUTS), help="feature layout (default 17pt)")
    sp.add_argument("--k", type=int, help="embedding dimension (default 32)")
    sp.add_argument("--split", type=float, help="training fraction (default 0.75)")
    sp.set_defaults(func=cmd_train_recognizer)

    sp = sub.add_parser("fit-template", help="derive a mask template for a recognizer")
    _add_common(sp, "corpus", "out", "seed", "identity")
    sp.add_argument("--model", required=True, help="recognizer model file")
    sp.add_argument("--lam", type=float, help="ridge penalty (default 0.1)")
    sp.add_argument("--offset-radius", type=int, help="region jitter radius in pixels (default 2)")
    sp.set_defaults(func=cmd_fit_template)

    sp = sub.add_parser("protect", help="optimize pads and write protected images + keys")
    _add_common(sp, "corpus", "out", "seed", "identity")
    sp.add_argument("--template", required=True, help="mask template file")
    sp.add_argument("--models", required=True, nargs="+", help="target recognizer model files")
    sp.add_argument("--sigma", type=float, help="perceptual budget (default 0.05)")
    sp.add_argument("--fc-target", type=float, help="tune sigma for this misclassification rate")
    sp.add_argument("--noise", choices=(GAUSSIAN, CORPUS), help="proposal source (default gaussian)")
    sp.add_argument("--gaussian-sigma", type=float)
    sp.add_argument("--budget", type=int, help="objective evaluation cap (default 2000)")
    sp.add_argument("--phase1-rounds", type=int)
    sp.add_argument("--group-size", type=int)
    sp.add_argument("--group-rounds", type=int)
    sp.set_defaults(func=cmd_protect)

    sp = sub.add_parser("restore", help="undo protection using the key files")
    _add_common(sp, "out")
    sp.add_argument("--images", required=True, help="directory of protected images")
    sp.add_argument("--keys", required=True, help="directory of .mvk key files")
    sp.add_argument("--originals", help="verify against these originals (reports differing samples)")
    sp.set_defaults(func=cmd_restore)

    sp = sub.add_parser("evaluate", help="score originals / protected / restored")
    _add_common(sp, "corpus", "out", "seed", "identity")
    sp.add_argument("--models", required=True, nargs="+")
    sp.add_argument("--protected", help="directory of protected images")
    sp.add_argument("--restored", help="directory of restored images")
    sp.add_argument("--baseline", choices=("confuse", "twist"), help="score a baseline attack instead")
    sp.add_argument("--template", help="template file (confuse baseline regions)")
    sp.add_argument("--p", type=float, help="confusion threshold")
    sp.add_argument("--pressure", type=float, help="twist pressure")
    sp.add_argument("--center-label", help="twist center landmark (default nose_tip)")
    sp.add_argument("--scatter", action="store_const", const=True, help="also write scatter.csv")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("superpose", help="merge templates from several recognizers")
    _add_common(sp, "out")
    sp.add_argument("--templates", required=True, nargs="+")
    sp.add_argument("--priorities", help="comma-separated ranks, lower wins (default list order)")
    sp.set_defaults(func=cmd_superpose)

    sp = sub.add_parser("baseline", help="write baseline-attacked images")
    _add_common(sp, "corpus", "out", "seed", "identity")
    sp.add_argument("--kind", required=True, choices=("confuse", "twist"))
    sp.add_argument("--template", help="template file (confuse regions)")
    sp.add_argument("--p", type=float)
    sp.add_argument("--pressure", type=float)
    sp.add_argument("--center-label")
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("export-pca", help="2-D PCA scatter of embeddings")
    _add_common(sp, "corpus", "out", "identity")
    sp.add_argument("--model", required=True)
    sp.add_argument("--protected", help="also project these protected images")
    sp.set_defaults(func=cmd_export_pca)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UnreachableTargetError as exc:
        print(f"maskveil: {exc} (best F_c {exc.best_fc:.4f})", file=sys.stderr)
        return 3
    except MaskVeilError as exc:
        print(f"maskveil: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"maskveil: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
