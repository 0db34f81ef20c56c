"""Cosine matching, threshold learning, and family-disjoint k-fold scoring.

A fold evaluation trains the tensor projection on the training folds only,
learns an accuracy-maximizing threshold on the training pair scores, and
reports accuracy on the held-out fold's pairs.  Pairs never straddle the
train/test family split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import FoldAssignment, LabeledPairSet, sample_cross_family_pairs
from .errors import DataError, NumericError
from .txqda import ProjectionBasis, TxqdaConfig, project_batch, train_txqda


def cosine_similarity(u, v) -> float:
    """Plain cosine of two equal-length vectors; zero norms are an error."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError("vectors must have the same length")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise NumericError("cosine similarity is undefined for a zero-norm vector")
    return float(u @ v / (nu * nv))


def _cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise NumericError("cosine similarity is undefined for a zero-norm vector")
    return np.einsum("ij,ij->i", a, b) / (na * nb)


def pair_scores(proj_parents: np.ndarray, proj_children: np.ndarray, pairs) -> np.ndarray:
    """Cosine score for each (parent_index, child_index) pair."""
    idx = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
    if idx.shape[0] == 0:
        return np.zeros(0)
    return _cosine_rows(proj_parents[idx[:, 0]], proj_children[idx[:, 1]])


def select_threshold(scores, labels) -> float:
    """Accuracy-maximizing decision threshold (predict kin iff score >= t).

    Candidates are the midpoints of adjacent sorted scores plus one
    candidate below and one above every score, so the all-kin and
    all-non-kin decisions are reachable.  Ties break toward the larger
    threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if labels.all() or not labels.any():
        raise DataError("threshold selection needs both kin and non-kin scores")
    s = np.sort(scores)
    candidates = np.concatenate(([s[0] - 1.0], (s[:-1] + s[1:]) * 0.5, [s[-1] + 1.0]))
    best_correct = -1
    best_t = candidates[0]
    for t in candidates:  # ascending, so >= keeps the largest tied threshold
        correct = int(np.count_nonzero((scores >= t) == labels))
        if correct >= best_correct:
            best_correct = correct
            best_t = t
    return float(best_t)


def accuracy_at(scores, labels, threshold: float) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    return float(np.mean((scores >= threshold) == labels))


def roc_points(scores, labels, n_points: int = 11):
    """(threshold, tpr, fpr) rows at score quantiles, for diagnostics."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    thresholds = np.quantile(scores, np.linspace(0.0, 1.0, n_points))
    rows = []
    pos = max(int(labels.sum()), 1)
    neg = max(int((~labels).sum()), 1)
    for t in thresholds:
        pred = scores >= t
        tpr = float(np.count_nonzero(pred & labels)) / pos
        fpr = float(np.count_nonzero(pred & ~labels)) / neg
        rows.append((float(t), tpr, fpr))
    return rows


@dataclass
class FeatureSet:
    """Per-sample feature tensors for both views plus the family labels.

    ``parents`` and ``children`` are (n, bins, blocks, scales) arrays of
    raw histogram counts; ``block_pixels`` is the per-block mass used to
    rescale features to O(1) before training.
    """

    parents: np.ndarray
    children: np.ndarray
    families: np.ndarray
    block_pixels: int

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.float64)
        self.children = np.asarray(self.children, dtype=np.float64)
        self.families = np.asarray(self.families, dtype=np.int64)
        if self.parents.shape != self.children.shape:
            raise DataError("parent and child feature arrays must have the same shape")
        if self.parents.ndim != 4 or len(self.families) != self.parents.shape[0]:
            raise DataError("expected (n, bins, blocks, scales) features with n labels")

    @property
    def n_samples(self) -> int:
        return self.parents.shape[0]

    @property
    def mode_dims(self) -> tuple[int, ...]:
        return self.parents.shape[1:]


@dataclass
class FoldModel:
    """Trained state of one fold: basis plus cached pair projections."""

    fold: int
    basis: ProjectionBasis
    train_pairs: LabeledPairSet
    test_pairs: LabeledPairSet
    proj_train_parents: np.ndarray = field(repr=False, default=None)
    proj_train_children: np.ndarray = field(repr=False, default=None)
    proj_test_parents: np.ndarray = field(repr=False, default=None)
    proj_test_children: np.ndarray = field(repr=False, default=None)


@dataclass
class FoldResult:
    fold: int
    d: int
    accuracy: float
    threshold: float
    test_scores: np.ndarray = field(repr=False, default=None)
    test_labels: np.ndarray = field(repr=False, default=None)


@dataclass
class EvalReport:
    """Cross-validation outcome in table-ready form."""

    per_fold_accuracy: list[float]
    mean_accuracy: float
    threshold_per_fold: list[float]
    config_echo: dict
    fold_results: list[FoldResult] = field(repr=False, default_factory=list)


def _local_pairset(families: np.ndarray, idx: np.ndarray, per_positive: int, seed_seq) -> LabeledPairSet:
    """Pairs over the subset ``idx``, indexed locally into that subset."""
    positives = [(i, i) for i in range(len(idx))]
    rng = np.random.default_rng(seed_seq)
    global_pairs = sample_cross_family_pairs(
        families, per_positive * len(positives), rng, indices=idx
    )
    pos_of_global = {int(g): i for i, g in enumerate(idx)}
    negatives = [(pos_of_global[a], pos_of_global[b]) for a, b in global_pairs]
    return LabeledPairSet(positives=positives, negatives=negatives)


def _sample_last(batch: np.ndarray) -> np.ndarray:
    return np.moveaxis(batch, 0, -1)


def fit_split(
    features: FeatureSet,
    train_idx,
    test_idx,
    txqda_cfg: TxqdaConfig,
    seed_seqs,
    negatives_per_positive: int = 1,
    fold: int = 0,
) -> FoldModel:
    """Train on an explicit train/test index split.

    Raises when a family appears on both sides (identity leakage) or when
    either side cannot form pairs.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    test_idx = np.asarray(test_idx, dtype=np.int64)
    if train_idx.size == 0 or test_idx.size == 0:
        raise DataError("train and test splits must both be non-empty")
    fams = features.families
    overlap = set(fams[train_idx].tolist()) & set(fams[test_idx].tolist())
    if overlap:
        raise DataError(f"families {sorted(overlap)} appear in both train and test")
    train_pairs = _local_pairset(fams, train_idx, negatives_per_positive, seed_seqs[0])
    test_pairs = _local_pairset(fams, test_idx, negatives_per_positive, seed_seqs[1])

    scale = 1.0 / float(features.block_pixels)
    x = _sample_last(features.parents[train_idx] * scale)
    z = _sample_last(features.children[train_idx] * scale)
    basis = train_txqda(x, z, train_pairs, txqda_cfg)
    model = FoldModel(fold=fold, basis=basis, train_pairs=train_pairs, test_pairs=test_pairs)
    model.proj_train_parents = project_batch(x, basis, basis.d)
    model.proj_train_children = project_batch(z, basis, basis.d)
    model.proj_test_parents = project_batch(
        _sample_last(features.parents[test_idx] * scale), basis, basis.d
    )
    model.proj_test_children = project_batch(
        _sample_last(features.children[test_idx] * scale), basis, basis.d
    )
    return model


def _split_for_fold(features: FeatureSet, folds: FoldAssignment, fold: int):
    assignments = np.array([folds.fold_of[int(f)] for f in features.families])
    test_idx = np.flatnonzero(assignments == fold)
    train_idx = np.flatnonzero(assignments != fold)
    return train_idx, test_idx


def fit_fold(
    features: FeatureSet,
    folds: FoldAssignment,
    fold: int,
    txqda_cfg: TxqdaConfig,
    seed: int,
    negatives_per_positive: int = 1,
) -> FoldModel:
    """Train with fold ``fold`` held out; pair sampling derives from ``seed``."""
    if not 0 <= fold < folds.k:
        raise DataError(f"fold {fold} out of range for k={folds.k}")
    train_idx, test_idx = _split_for_fold(features, folds, fold)
    seqs = (
        np.random.SeedSequence([int(seed), fold, 0]),
        np.random.SeedSequence([int(seed), fold, 1]),
    )
    return fit_split(
        features, train_idx, test_idx, txqda_cfg, seqs, negatives_per_positive, fold=fold
    )


def model_from_basis(
    features: FeatureSet,
    folds: FoldAssignment,
    fold: int,
    basis: ProjectionBasis,
    seed: int,
    negatives_per_positive: int = 1,
) -> FoldModel:
    """Rebuild a fold's scoring state from an already trained basis.

    Pair sampling and projections are recomputed exactly as during
    training, so scoring a reloaded basis matches the in-memory run.
    """
    if not 0 <= fold < folds.k:
        raise DataError(f"fold {fold} out of range for k={folds.k}")
    if basis.input_dims != features.mode_dims:
        raise DataError(
            f"basis expects mode dimensions {basis.input_dims}, "
            f"features have {features.mode_dims}"
        )
    train_idx, test_idx = _split_for_fold(features, folds, fold)
    fams = features.families
    train_pairs = _local_pairset(
        fams, train_idx, negatives_per_positive, np.random.SeedSequence([int(seed), fold, 0])
    )
    test_pairs = _local_pairset(
        fams, test_idx, negatives_per_positive, np.random.SeedSequence([int(seed), fold, 1])
    )
    scale = 1.0 / float(features.block_pixels)
    model = FoldModel(fold=fold, basis=basis, train_pairs=train_pairs, test_pairs=test_pairs)
    model.proj_train_parents = project_batch(
        _sample_last(features.parents[train_idx] * scale), basis, basis.d
    )
    model.proj_train_children = project_batch(
        _sample_last(features.children[train_idx] * scale), basis, basis.d
    )
    model.proj_test_parents = project_batch(
        _sample_last(features.parents[test_idx] * scale), basis, basis.d
    )
    model.proj_test_children = project_batch(
        _sample_last(features.children[test_idx] * scale), basis, basis.d
    )
    return model


def _pair_arrays(pairs: LabeledPairSet):
    all_pairs = list(pairs.positives) + list(pairs.negatives)
    labels = np.array([True] * len(pairs.positives) + [False] * len(pairs.negatives))
    return all_pairs, labels


def score_fold(model: FoldModel, d: int | None = None) -> FoldResult:
    """Score one trained fold at feature count ``d`` (defaults to the basis d).

    The ranked-coordinate prefix property makes truncating the cached
    projections identical to projecting at the smaller d directly.
    """
    d = model.basis.d if d is None else int(d)
    if not 1 <= d <= model.basis.d:
        raise ValueError(f"d must lie in [1, {model.basis.d}] for this trained fold")
    train_p, train_labels = _pair_arrays(model.train_pairs)
    test_p, test_labels = _pair_arrays(model.test_pairs)
    idx_tr = np.asarray(train_p, dtype=np.int64)
    idx_te = np.asarray(test_p, dtype=np.int64)
    train_scores = _cosine_rows(
        model.proj_train_parents[idx_tr[:, 0], :d],
        model.proj_train_children[idx_tr[:, 1], :d],
    )
    test_scores = _cosine_rows(
        model.proj_test_parents[idx_te[:, 0], :d],
        model.proj_test_children[idx_te[:, 1], :d],
    )
    threshold = select_threshold(train_scores, train_labels)
    return FoldResult(
        fold=model.fold,
        d=d,
        accuracy=accuracy_at(test_scores, test_labels, threshold),
        threshold=threshold,
        test_scores=test_scores,
        test_labels=test_labels,
    )


def evaluate_fold(
    features: FeatureSet,
    folds: FoldAssignment,
    fold: int,
    txqda_cfg: TxqdaConfig,
    seed: int,
    negatives_per_positive: int = 1,
    d: int | None = None,
) -> FoldResult:
    """Train and score a single held-out fold."""
    model = fit_fold(features, folds, fold, txqda_cfg, seed, negatives_per_positive)
    return score_fold(model, d)


def cross_validate(
    features: FeatureSet,
    folds: FoldAssignment,
    txqda_cfg: TxqdaConfig,
    seed: int,
    negatives_per_positive: int = 1,
    d: int | None = None,
    config_echo: dict | None = None,
) -> EvalReport:
    """One evaluation per held-out fold, aggregated into a report."""
    results = [
        evaluate_fold(features, folds, fold, txqda_cfg, seed, negatives_per_positive, d)
        for fold in range(folds.k)
    ]
    accs = [r.accuracy for r in results]
    return EvalReport(
        per_fold_accuracy=accs,
        mean_accuracy=float(np.mean(accs)),
        threshold_per_fold=[r.threshold for r in results],
        config_echo=dict(config_echo or {}),
        fold_results=results,
    )
