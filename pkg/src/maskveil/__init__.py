"""maskveil: reversible image cloaking against recognition algorithms.

Pads of XOR noise, confined to small regions around a recognizer's attended
feature points, push the image's embedding away from its identity while
staying under a perceptual budget; the pad doubles as the key that restores
the original bit for bit.
"""

from ._kernels import IMPL as kernel_impl
from .errors import (BadMagicError, BadVersionError, ChecksumError, DomainError, FormatError,
                     MaskVeilError, SingularityError, TruncatedFileError, UnreachableTargetError,
                     UnsupportedImageError)
from .rng import SplitMix64, derive_seed, generator
from .imaging import (CANVAS_CHANNELS, CANVAS_HEIGHT, CANVAS_WIDTH, REGION_SIZE, SSIM_WINDOW,
                      PixelImage, Region, dssim, load_image, normalize_canvas, save_image,
                      xor_apply)
from .recognizer import (FeatureLayout, LandmarkSet, RecognizerModel, embed,
                         extract_feature_vector, load_model, parse_landmarks_file,
                         pca_project_2d, recognize, save_model, train_recognizer)
from .mask_template import (AggregatedDistribution, CloakKey, MaskTemplate, RegressionModel,
                            aggregate_scales, derive_template, deserialize_template,
                            fit_feature_regression, serialize_template, superpose)
from .perturbation import (CORPUS, GAUSSIAN, NoiseSource, PerturbationConfig, build_focus_bank,
                           build_patch_bank,
                           optimize_perturbation, protect, restore, sample_noise, tune_sigma)
from .evaluation import (ImageRecord, MetricsReport, TargetMetrics, baseline_pixel_confuse,
                         baseline_twist, evaluate_run, export_scatter, parse_manifest,
                         protection_rate, write_manifest, write_records_csv)
from .corpus import BUILTIN_LAYOUTS, CorpusItem, layout_by_name, load_corpus, make_corpus

__version__ = "0.1.0"

__all__ = [
    "AggregatedDistribution", "BUILTIN_LAYOUTS", "BadMagicError", "BadVersionError",
    "CANVAS_CHANNELS", "CANVAS_HEIGHT", "CANVAS_WIDTH", "CORPUS", "ChecksumError", "CloakKey",
    "CorpusItem", "DomainError", "FeatureLayout", "FormatError", "GAUSSIAN", "ImageRecord",
    "LandmarkSet",
    "MaskTemplate", "MaskVeilError", "MetricsReport", "NoiseSource", "PerturbationConfig",
    "PixelImage", "REGION_SIZE", "RecognizerModel", "Region", "RegressionModel",
    "SSIM_WINDOW", "SingularityError", "SplitMix64", "TargetMetrics", "TruncatedFileError",
    "UnreachableTargetError",
    "UnsupportedImageError", "aggregate_scales", "baseline_pixel_confuse", "baseline_twist",
    "build_focus_bank", "build_patch_bank", "derive_seed", "derive_template",
    "deserialize_template", "dssim", "embed",
    "evaluate_run", "export_scatter", "extract_feature_vector", "fit_feature_regression",
    "generator", "kernel_impl", "layout_by_name", "load_corpus", "load_image", "load_model",
    "make_corpus",
    "normalize_canvas", "optimize_perturbation", "parse_landmarks_file", "parse_manifest",
    "pca_project_2d",
    "protect", "protection_rate", "recognize", "restore", "sample_noise", "save_image",
    "save_model", "serialize_template", "superpose", "train_recognizer", "tune_sigma",
    "write_manifest", "write_records_csv", "xor_apply",
]
