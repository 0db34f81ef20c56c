"""Kinship verification from face image pairs.

The pipeline: Retinex + elliptical-mask preprocessing, Gabor block-histogram
tensor features, tensor cross-view discriminant projection (TXQDA), and
cosine matching under family-disjoint k-fold cross-validation.  A synthetic
family generator makes the whole chain testable without any real dataset.
"""

__version__ = "0.1.0"

from .dataset import (
    FoldAssignment,
    LabeledPairSet,
    PairManifest,
    generate_synthetic_dataset,
    load_manifest,
    make_folds,
    sample_negative_pairs,
)
from .errors import ConfigError, DataError, KinverifyError, NumericError
from .evaluate import (
    EvalReport,
    FeatureSet,
    FoldResult,
    cosine_similarity,
    cross_validate,
    evaluate_fold,
    select_threshold,
)
from .gabor import (
    BlockGrid,
    FeatureTensor,
    GaborBank,
    GaborParams,
    block_histograms,
    build_bank,
    convolve,
    default_bank,
    extract_feature_tensor,
    flatten_features,
    gabor_kernel,
    quantize_response,
)
from .preprocess import (
    Ellipse,
    PreprocConfig,
    elliptical_mask,
    load_grayscale,
    preprocess_image,
    preprocess_pipeline,
    resize_and_crop,
    retinex_ssr,
)
from .txqda import (
    ProjectionBasis,
    TxqdaConfig,
    mode_product,
    mode_scatter,
    project,
    project_batch,
    refold,
    solve_gen_eigen,
    train_txqda,
    unfold,
)

__all__ = [
    "__version__",
    "BlockGrid",
    "ConfigError",
    "DataError",
    "Ellipse",
    "EvalReport",
    "FeatureSet",
    "FeatureTensor",
    "FoldAssignment",
    "FoldResult",
    "GaborBank",
    "GaborParams",
    "KinverifyError",
    "LabeledPairSet",
    "NumericError",
    "PairManifest",
    "PreprocConfig",
    "ProjectionBasis",
    "TxqdaConfig",
    "block_histograms",
    "build_bank",
    "convolve",
    "cosine_similarity",
    "cross_validate",
    "default_bank",
    "elliptical_mask",
    "evaluate_fold",
    "extract_feature_tensor",
    "flatten_features",
    "gabor_kernel",
    "generate_synthetic_dataset",
    "load_grayscale",
    "load_manifest",
    "make_folds",
    "mode_product",
    "mode_scatter",
    "preprocess_image",
    "preprocess_pipeline",
    "project",
    "project_batch",
    "quantize_response",
    "refold",
    "resize_and_crop",
    "retinex_ssr",
    "sample_negative_pairs",
    "select_threshold",
    "solve_gen_eigen",
    "train_txqda",
    "unfold",
]
