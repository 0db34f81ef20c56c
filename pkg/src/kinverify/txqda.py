"""Tensor cross-view discriminant projection (TXQDA).

Two sample populations (parents and children) share a class structure.
Training alternates over tensor modes: samples are projected on every mode
but one, intrapersonal (same-family pair) and extrapersonal (cross-family
pair) difference scatters are accumulated for the free mode, and a
generalized eigenproblem between the two scatters refreshes that mode's
projection matrix.  After the sweeps, flattened output coordinates are
ranked by the product of their per-mode eigenvalues and the top ``d`` are
kept as the final feature vector.

Sample tensors are stored with the sample index on the LAST axis, so an
order-N feature tensor batch has shape (I_1, ..., I_N, n).
"""

from __future__ import annotations

import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import DataError, NumericError

_BASIS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TxqdaConfig:
    """Training knobs.

    ``target_dims=None`` keeps every mode at full dimension.  ``reg`` is a
    ridge scale: the solve adds reg * trace(S_I)/I_k to the intrapersonal
    scatter diagonal.  The sweep loop stops early when every mode's
    projection moves less than eps_stop * I_k * I'_k in Frobenius norm
    between consecutive sweeps.
    """

    target_dims: tuple[int, ...] | None = None
    iteration_max: int = 2
    eps_stop: float = 1e-3
    reg: float = 1e-3
    d: int = 190
    residual_tol: float = 1e-8

    def __post_init__(self):
        if self.iteration_max < 1:
            raise ValueError("iteration_max must be at least 1")
        if self.eps_stop <= 0:
            raise ValueError("eps_stop must be positive")
        if self.reg < 0:
            raise ValueError("reg must be non-negative")
        if self.d < 1:
            raise ValueError("d must be at least 1")


@dataclass
class ProjectionBasis:
    """Trained per-mode projections and the flattened coordinate ranking.

    ``factors[k]`` is the I_k x I'_k projection matrix of mode k with unit
    columns, ``eigenvalues[k]`` its generalized eigenvalues in descending
    order.  ``feature_rank`` permutes the flattened projected coordinates
    (first mode fastest) so that the eigenvalue product is descending;
    projection keeps its first ``d`` entries.
    """

    factors: list[np.ndarray]
    eigenvalues: list[np.ndarray]
    feature_rank: np.ndarray
    d: int
    n_sweeps: int = 0

    @property
    def input_dims(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.factors)

    @property
    def output_dims(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.factors)


def unfold(tensor: np.ndarray, mode: int) -> np.ndarray:
    """Mode-k matricization: rows are mode-k fibers.

    Columns run over the remaining modes in their original order with the
    last mode varying fastest, so the unfolding is the reshape of the
    tensor with mode k moved to the front.
    """
    t = np.asarray(tensor)
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for an order-{t.ndim} tensor")
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)


def refold(mat: np.ndarray, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold` for a tensor of the given shape."""
    shape = tuple(shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for shape {shape}")
    mat = np.asarray(mat)
    rest = shape[:mode] + shape[mode + 1 :]
    if mat.shape != (shape[mode], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(f"matrix shape {mat.shape} does not match {shape} at mode {mode}")
    return np.moveaxis(mat.reshape((shape[mode],) + rest), 0, mode)


def mode_product(tensor: np.ndarray, matrix: np.ndarray, mode: int) -> np.ndarray:
    """Multiply ``matrix`` (J x I_mode) into ``tensor`` along ``mode``."""
    t = np.asarray(tensor)
    a = np.asarray(matrix)
    if a.ndim != 2:
        raise ValueError("matrix must be 2-D")
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for an order-{t.ndim} tensor")
    if a.shape[1] != t.shape[mode]:
        raise ValueError(
            f"matrix columns ({a.shape[1]}) must match mode-{mode} dimension ({t.shape[mode]})"
        )
    out_shape = t.shape[:mode] + (a.shape[0],) + t.shape[mode + 1 :]
    return refold(a @ unfold(t, mode), mode, out_shape)


def _pair_scatter(xp: np.ndarray, zp: np.ndarray, idx: np.ndarray, mode: int) -> np.ndarray:
    diff = xp[..., idx[:, 0]] - zp[..., idx[:, 1]]
    u = unfold(diff, mode)
    s = (u @ u.T) / idx.shape[0]
    return (s + s.T) * 0.5


def _pair_index_array(pairs, name: str, n_x: int, n_z: int) -> np.ndarray:
    idx = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
    if idx.shape[0] == 0:
        raise DataError(f"{name} pair set is empty")
    if idx[:, 0].min() < 0 or idx[:, 0].max() >= n_x:
        raise DataError(f"{name} pair parent index out of range")
    if idx[:, 1].min() < 0 or idx[:, 1].max() >= n_z:
        raise DataError(f"{name} pair child index out of range")
    return idx


def mode_scatter(xp: np.ndarray, zp: np.ndarray, pairs, mode: int):
    """Intrapersonal and extrapersonal mode-k scatters from pair differences.

    ``xp`` and ``zp`` hold samples along the last axis, already projected
    on every mode except ``mode``.  For each pair (i, j) the difference
    tensor x_i - z_j is unfolded at ``mode`` and its outer product is
    averaged: positives feed S_I, negatives feed S_E.  Both results are
    symmetric positive semidefinite.
    """
    xp = np.asarray(xp, dtype=np.float64)
    zp = np.asarray(zp, dtype=np.float64)
    if xp.shape[:-1] != zp.shape[:-1]:
        raise ValueError("parent and child views disagree on mode dimensions")
    if not 0 <= mode < xp.ndim - 1:
        raise ValueError(f"mode {mode} out of range")
    pos = _pair_index_array(pairs.positives, "positive", xp.shape[-1], zp.shape[-1])
    neg = _pair_index_array(pairs.negatives, "negative", xp.shape[-1], zp.shape[-1])
    return _pair_scatter(xp, zp, pos, mode), _pair_scatter(xp, zp, neg, mode)


def solve_gen_eigen(
    s_e: np.ndarray,
    s_i: np.ndarray,
    dim: int,
    reg: float = 0.0,
    residual_tol: float | None = None,
):
    """Top ``dim`` solutions of S_E w = lambda (S_I + reg I) w.

    Returns (W, lam) with eigenvalues descending and eigenvector columns
    normalized to unit Euclidean length, sign fixed so each column's
    largest-magnitude entry is positive.  When ``residual_tol`` is given,
    every returned column's residual norm is checked against it.
    """
    a = np.asarray(s_e, dtype=np.float64)
    b = np.asarray(s_i, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("scatter matrices must be square and equally sized")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericError("scatter matrices contain non-finite values")
    n = a.shape[0]
    if not 1 <= dim <= n:
        raise ValueError(f"dim must lie in [1, {n}]")
    if reg < 0:
        raise ValueError("reg must be non-negative")
    b = b + reg * np.eye(n)
    try:
        vals, vecs = scipy.linalg.eigh(a, b)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericError(f"generalized eigensolve failed: {exc}") from exc
    vals = vals[::-1][:dim].copy()
    vecs = vecs[:, ::-1][:, :dim].copy()
    for j in range(dim):
        col = vecs[:, j]
        col /= np.linalg.norm(col)
        if col[np.argmax(np.abs(col))] < 0:
            col *= -1.0
    if residual_tol is not None:
        resid = a @ vecs - (b @ vecs) * vals[None, :]
        worst = float(np.linalg.norm(resid, axis=0).max())
        if not worst <= residual_tol:
            raise NumericError(
                f"generalized eigen residual {worst:.3e} exceeds {residual_tol:.1e}"
            )
    return vecs, vals


def _project_except(t: np.ndarray, factors: list[np.ndarray], skip: int) -> np.ndarray:
    out = t
    for j, w in enumerate(factors):
        if j != skip:
            out = mode_product(out, w.T, j)
    return out


def _resolve_target_dims(target_dims, dims: tuple[int, ...]) -> tuple[int, ...]:
    if target_dims is None:
        return dims
    target = tuple(int(v) for v in target_dims)
    if len(target) != len(dims):
        raise ValueError(f"target_dims must have {len(dims)} entries")
    for td, d in zip(target, dims):
        if not 1 <= td <= d:
            raise ValueError(f"target dimension {td} out of range for mode size {d}")
    return target


def train_txqda(x: np.ndarray, z: np.ndarray, pairs, cfg: TxqdaConfig | None = None) -> ProjectionBasis:
    """Fit the per-mode projections on two sample-last tensor batches.

    ``x`` holds the parent view (I_1, ..., I_N, n), ``z`` the child view
    with the same mode dimensions.  ``pairs`` supplies positive
    (same-family) and negative (cross-family) index pairs into the two
    sample axes.  Mode projections start as truncated identities and are
    refreshed in ``iteration_max`` alternating sweeps at most.
    """
    cfg = cfg if cfg is not None else TxqdaConfig()
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.ndim < 2:
        raise ValueError("expected at least one feature mode plus the sample axis")
    dims = x.shape[:-1]
    if z.shape[:-1] != dims:
        raise ValueError(f"views disagree on mode dimensions: {dims} vs {z.shape[:-1]}")
    n_modes = len(dims)
    tdims = _resolve_target_dims(cfg.target_dims, dims)
    if cfg.d > int(np.prod(tdims, dtype=np.int64)):
        raise ValueError(f"d={cfg.d} exceeds the projected size {np.prod(tdims)}")

    factors = [np.eye(d, td) for d, td in zip(dims, tdims)]
    eigenvalues = [np.ones(td) for td in tdims]
    n_sweeps = 0
    for iteration in range(cfg.iteration_max):
        previous = [w.copy() for w in factors]
        for k in range(n_modes):
            xp = _project_except(x, factors, k)
            zp = _project_except(z, factors, k)
            s_i, s_e = mode_scatter(xp, zp, pairs, k)
            if not s_e.any():
                raise NumericError(
                    f"extrapersonal scatter is identically zero in mode {k}"
                )
            # Solve on a trace-normalized pair: same eigenpairs, but the
            # residual check stays meaningful regardless of feature scale.
            scale = (np.trace(s_i) + np.trace(s_e)) / (2.0 * dims[k])
            if not np.isfinite(scale) or scale <= 0:
                scale = 1.0
            s_i = s_i / scale
            s_e = s_e / scale
            ridge = cfg.reg * np.trace(s_i) / dims[k]
            if ridge <= 0:
                ridge = cfg.reg
            factors[k], eigenvalues[k] = solve_gen_eigen(
                s_e, s_i, tdims[k], ridge, cfg.residual_tol
            )
        n_sweeps += 1
        if iteration >= 1 and all(
            np.linalg.norm(factors[k] - previous[k]) < cfg.eps_stop * dims[k] * tdims[k]
            for k in range(n_modes)
        ):
            break

    rank_values = eigenvalues[0]
    for lam in eigenvalues[1:]:
        rank_values = np.multiply.outer(rank_values, lam)
    feature_rank = np.argsort(-rank_values.ravel(order="F"), kind="stable")
    return ProjectionBasis(
        factors=factors,
        eigenvalues=eigenvalues,
        feature_rank=feature_rank,
        d=cfg.d,
        n_sweeps=n_sweeps,
    )


def project(tensor: np.ndarray, basis: ProjectionBasis, d: int | None = None) -> np.ndarray:
    """Project one order-N tensor and keep the top ``d`` ranked coordinates."""
    t = np.asarray(tensor, dtype=np.float64)
    if t.shape != basis.input_dims:
        raise DataError(
            f"basis expects mode dimensions {basis.input_dims}, tensor has {t.shape}"
        )
    d = basis.d if d is None else int(d)
    if not 1 <= d <= basis.feature_rank.size:
        raise ValueError(f"d must lie in [1, {basis.feature_rank.size}]")
    out = t
    for k, w in enumerate(basis.factors):
        out = mode_product(out, w.T, k)
    return out.ravel(order="F")[basis.feature_rank[:d]]


def project_batch(tensors: np.ndarray, basis: ProjectionBasis, d: int | None = None) -> np.ndarray:
    """Project a sample-last batch (I_1, ..., I_N, n) to an (n, d) matrix."""
    t = np.asarray(tensors, dtype=np.float64)
    if t.shape[:-1] != basis.input_dims:
        raise DataError(
            f"basis expects mode dimensions {basis.input_dims}, batch has {t.shape[:-1]}"
        )
    d = basis.d if d is None else int(d)
    if not 1 <= d <= basis.feature_rank.size:
        raise ValueError(f"d must lie in [1, {basis.feature_rank.size}]")
    out = t
    for k, w in enumerate(basis.factors):
        out = mode_product(out, w.T, k)
    n = out.shape[-1]
    flat = out.reshape((-1, n), order="F")
    return np.ascontiguousarray(flat[basis.feature_rank[:d]].T)


def save_basis(path, basis: ProjectionBasis) -> None:
    """Serialize a basis to a versioned .npz file."""
    arrays = {}
    for k, (w, lam) in enumerate(zip(basis.factors, basis.eigenvalues)):
        arrays[f"factor_{k}"] = w
        arrays[f"eigenvalues_{k}"] = lam
    np.savez(
        Path(path),
        format_version=np.int64(_BASIS_FORMAT_VERSION),
        n_modes=np.int64(len(basis.factors)),
        d=np.int64(basis.d),
        n_sweeps=np.int64(basis.n_sweeps),
        feature_rank=basis.feature_rank.astype(np.int64),
        **arrays,
    )


def load_basis(path) -> ProjectionBasis:
    """Load and validate a basis written by :func:`save_basis`."""
    path = Path(path)
    try:
        with np.load(path) as archive:
            data = {key: archive[key] for key in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise DataError(f"cannot read basis file {path}: {exc}") from exc
    version = int(data.get("format_version", -1))
    if version != _BASIS_FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported basis format version {version}, "
            f"expected {_BASIS_FORMAT_VERSION}"
        )
    n_modes = int(data["n_modes"])
    factors = []
    eigenvalues = []
    for k in range(n_modes):
        try:
            w = np.asarray(data[f"factor_{k}"], dtype=np.float64)
            lam = np.asarray(data[f"eigenvalues_{k}"], dtype=np.float64)
        except KeyError as exc:
            raise DataError(f"{path}: missing mode {k} arrays") from exc
        if w.ndim != 2 or lam.shape != (w.shape[1],):
            raise DataError(f"{path}: inconsistent mode {k} shapes")
        factors.append(w)
        eigenvalues.append(lam)
    feature_rank = np.asarray(data["feature_rank"], dtype=np.int64)
    total = int(np.prod([w.shape[1] for w in factors], dtype=np.int64))
    if not np.array_equal(np.sort(feature_rank), np.arange(total)):
        raise DataError(f"{path}: feature_rank is not a permutation of {total} coordinates")
    d = int(data["d"])
    if not 1 <= d <= total:
        raise DataError(f"{path}: stored d={d} out of range")
    return ProjectionBasis(
        factors=factors,
        eigenvalues=eigenvalues,
        feature_rank=feature_rank,
        d=d,
        n_sweeps=int(data.get("n_sweeps", 0)),
    )
