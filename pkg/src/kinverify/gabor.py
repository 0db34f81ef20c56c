"""Gabor filter bank and block-histogram tensor features.

A bank holds the real (cosine carrier) and imaginary (sine carrier) parts
of Gabor kernels over a grid of wavelengths, orientations and phase
offsets.  Filters sharing a (wavelength, phase) combination form one
"scale group": their responses are collapsed into a single magnitude map,
quantized to 256 levels, and histogrammed per block.  Stacking the block
histograms of every scale group gives the per-image feature tensor of
shape (256, blocks, scales).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

from .errors import DataError

BINS = 256

_DEFAULT_ORIENTATIONS_DEG = (45.0, 67.5, 90.0, 112.5)
_DEFAULT_PSIS_DEG = (0.0, 90.0)
_DEFAULT_BASE_WAVELENGTH = 16.0
_DEFAULT_WAVELENGTH_RATIO = math.sqrt(2.0)

# Direct correlation beats FFT below roughly this kernel size.
_FFT_KERNEL_CUTOFF = 225

# Responses whose spread is below this relative tolerance quantize to zero.
_FLAT_REL_TOL = 1e-12


@dataclass(frozen=True)
class GaborParams:
    """Parameters of one Gabor kernel.

    ``theta`` is normalized into [0, pi).  ``sigma`` is the Gaussian
    envelope standard deviation and ``gamma`` the aspect ratio of the
    envelope (1 = circular).
    """

    wavelength: float
    theta: float
    psi: float
    sigma: float
    gamma: float = 1.0

    def __post_init__(self):
        if self.wavelength <= 0 or self.sigma <= 0 or self.gamma <= 0:
            raise ValueError("wavelength, sigma and gamma must be positive")
        object.__setattr__(self, "theta", float(self.theta) % math.pi)
        object.__setattr__(self, "wavelength", float(self.wavelength))
        object.__setattr__(self, "psi", float(self.psi))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "gamma", float(self.gamma))


@dataclass(frozen=True)
class GaborBank:
    """Ordered filter list plus its partition into scale groups.

    ``filters`` holds (params, part) tuples with part in {"real", "imag"},
    ordered wavelength-major, then orientation, then phase, then part.
    ``scale_groups`` are index tuples partitioning ``filters``; each group
    collects every orientation and both parts of one (wavelength, phase)
    combination.  Kernel half-size is ceil(kernel_radius_factor * sigma).
    """

    filters: tuple[tuple[GaborParams, str], ...]
    scale_groups: tuple[tuple[int, ...], ...]
    kernel_radius_factor: float = 2.5

    def __post_init__(self):
        seen = sorted(i for group in self.scale_groups for i in group)
        if seen != list(range(len(self.filters))) or not all(self.scale_groups):
            raise ValueError("scale groups must be non-empty and partition the filters")

    @property
    def n_filters(self) -> int:
        return len(self.filters)

    @property
    def n_scales(self) -> int:
        return len(self.scale_groups)

    def kernel_radius(self, sigma: float, cap: int | None = None) -> int:
        r = math.ceil(self.kernel_radius_factor * sigma)
        if cap is not None:
            r = min(r, cap)
        return max(r, 1)


def gabor_kernel(params: GaborParams, part: str = "real", radius: int | None = None) -> np.ndarray:
    """Sample a Gabor kernel on a (2*radius+1)^2 grid centred on the origin.

    With rotated coordinates x' = x cos(theta) + y sin(theta) and
    y' = -x sin(theta) + y cos(theta) (y grows downward, matching image
    rows), the entry at offset (x, y) is

        exp(-(x'^2 + gamma^2 y'^2) / (2 sigma^2)) * cos(2 pi x'/lambda + psi)

    for the real part, with sine replacing cosine for the imaginary part.
    """
    if part not in ("real", "imag"):
        raise ValueError(f"part must be 'real' or 'imag', got {part!r}")
    if radius is None:
        radius = max(math.ceil(2.5 * params.sigma), 1)
    if radius < 1:
        raise ValueError("radius must be at least 1")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    x = offsets[None, :]
    y = offsets[:, None]
    ct = math.cos(params.theta)
    st = math.sin(params.theta)
    xr = x * ct + y * st
    yr = -x * st + y * ct
    envelope = np.exp(-(xr**2 + (params.gamma**2) * yr**2) / (2.0 * params.sigma**2))
    phase = (2.0 * math.pi / params.wavelength) * xr + params.psi
    carrier = np.cos(phase) if part == "real" else np.sin(phase)
    return envelope * carrier


def _assemble_bank(wavelengths, orientations, psis, kept_pairs, gamma, sigma_scale, radius_factor):
    filters: list[tuple[GaborParams, str]] = []
    groups: dict[tuple[float, float], list[int]] = {pair: [] for pair in kept_pairs}
    kept = set(kept_pairs)
    for wl in wavelengths:
        for theta in orientations:
            for psi in psis:
                if (wl, psi) not in kept:
                    continue
                for part in ("real", "imag"):
                    params = GaborParams(
                        wavelength=wl,
                        theta=theta,
                        psi=psi,
                        sigma=sigma_scale * wl,
                        gamma=gamma,
                    )
                    groups[(wl, psi)].append(len(filters))
                    filters.append((params, part))
    return GaborBank(
        filters=tuple(filters),
        scale_groups=tuple(tuple(g) for g in groups.values()),
        kernel_radius_factor=radius_factor,
    )


def build_bank(
    orientations,
    wavelengths,
    psis,
    gamma: float = 1.0,
    sigma_scale: float = 1.0,
    kernel_radius_factor: float = 2.5,
) -> GaborBank:
    """Full cross-product bank: one filter per (wavelength, orientation,
    phase, part), with sigma = sigma_scale * wavelength.

    Angles are in radians.  Scale groups are (wavelength, phase) pairs in
    wavelength-major order.
    """
    orientations = tuple(float(t) for t in orientations)
    wavelengths = tuple(float(w) for w in wavelengths)
    psis = tuple(float(p) for p in psis)
    if not orientations or not wavelengths or not psis:
        raise ValueError("orientations, wavelengths and psis must be non-empty")
    pairs = [(wl, psi) for wl in wavelengths for psi in psis]
    return _assemble_bank(
        wavelengths, orientations, psis, pairs, gamma, sigma_scale, kernel_radius_factor
    )


def default_bank(
    n_scales: int = 6,
    orientations_deg=_DEFAULT_ORIENTATIONS_DEG,
    psis_deg=_DEFAULT_PSIS_DEG,
    gamma: float = 1.0,
    base_wavelength: float = _DEFAULT_BASE_WAVELENGTH,
    wavelength_ratio: float = _DEFAULT_WAVELENGTH_RATIO,
    kernel_radius_factor: float = 2.5,
) -> GaborBank:
    """Bank with exactly ``n_scales`` scale groups.

    The wavelength list starts at ``base_wavelength`` and grows
    geometrically by ``wavelength_ratio`` until the (wavelength, phase)
    grid covers the requested number of groups; the grid is then truncated
    to the first ``n_scales`` pairs in wavelength-major order.  With the
    default two phases, n_scales=4 gives the classic 32-filter bank over
    two wavelengths, n_scales=6 adds a third wavelength, and so on.
    """
    if n_scales < 1:
        raise ValueError("n_scales must be at least 1")
    orientations = tuple(math.radians(t) for t in orientations_deg)
    psis = tuple(math.radians(p) for p in psis_deg)
    if not orientations or not psis:
        raise ValueError("orientations and psis must be non-empty")
    n_wl = -(-n_scales // len(psis))  # ceil division
    wavelengths = tuple(base_wavelength * wavelength_ratio**i for i in range(n_wl))
    pairs = [(wl, psi) for wl in wavelengths for psi in psis][:n_scales]
    return _assemble_bank(
        wavelengths, orientations, psis, pairs, gamma, 1.0, kernel_radius_factor
    )


def convolve(img: np.ndarray, kernel: np.ndarray, method: str = "auto") -> np.ndarray:
    """2-D cross-correlation with symmetric-reflection boundary handling.

    Output has the same shape as the input.  ``method`` picks the direct
    spatial implementation or an FFT path over a reflect-padded copy; both
    produce the same values up to float64 round-off.  The kernel must have
    odd dimensions and must not be larger than the image.
    """
    img = np.asarray(img, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if img.ndim != 2 or kernel.ndim != 2:
        raise ValueError("image and kernel must be 2-D")
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel dimensions must be odd")
    h, w = img.shape
    if kh > h or kw > w:
        raise ValueError(
            f"kernel {kh}x{kw} is larger than the image {h}x{w}"
        )
    if method == "auto":
        method = "fft" if kh * kw > _FFT_KERNEL_CUTOFF else "direct"
    if method == "direct":
        return ndimage.correlate(img, kernel, mode="reflect")
    if method == "fft":
        rh, rw = kh // 2, kw // 2
        padded = np.pad(img, ((rh, rh), (rw, rw)), mode="symmetric")
        full = signal.fftconvolve(padded, kernel[::-1, ::-1], mode="same")
        return np.ascontiguousarray(full[rh : rh + h, rw : rw + w])
    raise ValueError(f"unknown convolution method {method!r}")


def quantize_response(resp: np.ndarray) -> np.ndarray:
    """Min-max scale a response map to integers in [0, 255].

    The map's own range is stretched to [0, 255] and floored, so the
    result is contrast invariant and monotone in the input.  Maps with a
    (numerically) flat range quantize to all zeros.
    """
    resp = np.asarray(resp, dtype=np.float64)
    if not np.all(np.isfinite(resp)):
        raise ValueError("response map contains non-finite values")
    lo = float(resp.min())
    hi = float(resp.max())
    if hi - lo <= _FLAT_REL_TOL * max(1.0, abs(hi), abs(lo)):
        return np.zeros(resp.shape, dtype=np.int64)
    q = np.floor((resp - lo) * (255.0 / (hi - lo))).astype(np.int64)
    return np.clip(q, 0, BINS - 1)


@dataclass(frozen=True)
class BlockGrid:
    """Block layout: m x n blocks of p2 x p1 pixels (rows x columns)."""

    p1: int  # pixels per block along x (columns)
    p2: int  # pixels per block along y (rows)
    m: int  # number of block rows
    n: int  # number of block columns

    def __post_init__(self):
        if min(self.p1, self.p2, self.m, self.n) < 1:
            raise ValueError("all block grid fields must be positive")

    @property
    def n_blocks(self) -> int:
        return self.m * self.n

    @property
    def block_pixels(self) -> int:
        return self.p1 * self.p2

    @classmethod
    def for_shape(cls, shape: tuple[int, int], rows: int, cols: int) -> "BlockGrid":
        """Grid with the given block counts covering an image shape.

        Block sizes are rounded up, so the padded image is the smallest
        multiple of the block size covering the input.
        """
        h, w = shape
        if rows > h or cols > w:
            raise ValueError("more blocks than pixels")
        return cls(p1=-(-w // cols), p2=-(-h // rows), m=rows, n=cols)


def block_histograms(qmap: np.ndarray, grid: BlockGrid) -> np.ndarray:
    """Per-block 256-bin count histograms, one column per block.

    Blocks are ordered row-major.  Images smaller than the grid are padded
    on the bottom/right by edge replication so that every block holds
    exactly p1*p2 pixels.
    """
    qmap = np.asarray(qmap)
    if qmap.ndim != 2:
        raise ValueError("expected a 2-D quantized map")
    if not np.issubdtype(qmap.dtype, np.integer):
        raise ValueError("quantized map must be integer valued")
    if qmap.size and (qmap.min() < 0 or qmap.max() >= BINS):
        raise ValueError(f"quantized values must lie in [0, {BINS - 1}]")
    h, w = qmap.shape
    full_h = grid.m * grid.p2
    full_w = grid.n * grid.p1
    if h > full_h or w > full_w:
        raise ValueError(f"grid {full_h}x{full_w} smaller than the image {h}x{w}")
    padded = np.pad(qmap, ((0, full_h - h), (0, full_w - w)), mode="edge")
    blocks = (
        padded.reshape(grid.m, grid.p2, grid.n, grid.p1)
        .transpose(0, 2, 1, 3)
        .reshape(grid.n_blocks, grid.block_pixels)
    )
    shifted = blocks.astype(np.int64) + np.arange(grid.n_blocks)[:, None] * BINS
    counts = np.bincount(shifted.ravel(), minlength=BINS * grid.n_blocks)
    return counts.reshape(grid.n_blocks, BINS).T.astype(np.float64)


@dataclass
class FeatureTensor:
    """Per-image feature tensor of shape (256, n_blocks, n_scales).

    Every fiber over the bin axis sums to ``block_pixels`` (the histogram
    mass of one block).
    """

    data: np.ndarray
    block_pixels: int | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] != BINS:
            raise ValueError(f"expected shape ({BINS}, blocks, scales)")

    @property
    def bins(self) -> int:
        return self.data.shape[0]

    @property
    def n_blocks(self) -> int:
        return self.data.shape[1]

    @property
    def n_scales(self) -> int:
        return self.data.shape[2]


def extract_feature_tensor(
    img: np.ndarray,
    bank: GaborBank,
    grid: BlockGrid,
    conv_method: str = "auto",
) -> FeatureTensor:
    """Gabor block-histogram tensor of one (preprocessed) image.

    Per scale group, the complex magnitude sqrt(real^2 + imag^2) of each
    (wavelength, orientation, phase) filter pair is summed over
    orientations into one map, quantized, and histogrammed per block.
    Kernel radii are capped so kernels never exceed the image.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a non-empty 2-D image")
    radius_cap = (min(img.shape) - 1) // 2
    data = np.zeros((BINS, grid.n_blocks, bank.n_scales))
    for s, group in enumerate(bank.scale_groups):
        by_params: dict[GaborParams, list[str]] = {}
        for i in group:
            params, part = bank.filters[i]
            by_params.setdefault(params, []).append(part)
        magnitude = np.zeros(img.shape)
        for params, parts in by_params.items():
            radius = bank.kernel_radius(params.sigma, cap=radius_cap)
            squares = np.zeros(img.shape)
            for part in parts:
                resp = convolve(img, gabor_kernel(params, part, radius), conv_method)
                squares += resp**2
            magnitude += np.sqrt(squares)
        data[:, :, s] = block_histograms(quantize_response(magnitude), grid)
    return FeatureTensor(data=data, block_pixels=grid.block_pixels)


def flatten_features(t: FeatureTensor) -> np.ndarray:
    """Flatten with bins varying fastest, then blocks, then scales."""
    return t.data.ravel(order="F")


def tensor_from_flat(
    vec: np.ndarray, n_blocks: int, n_scales: int, block_pixels: int | None = None
) -> FeatureTensor:
    """Inverse of :func:`flatten_features`."""
    vec = np.asarray(vec, dtype=np.float64)
    expected = BINS * n_blocks * n_scales
    if vec.shape != (expected,):
        raise ValueError(f"expected a flat vector of length {expected}")
    data = vec.reshape((BINS, n_blocks, n_scales), order="F")
    return FeatureTensor(data=data.copy(), block_pixels=block_pixels)


# Serialized feature batch: little-endian header then raw float64 payload.
#   magic     4 bytes  b"KVFT"
#   version   uint8    currently 1
#   endian    uint8    0x3C, the ASCII "<" little-endian tag
#   reserved  uint16   0
#   bins      uint32
#   n_blocks  uint32
#   n_scales  uint32
#   n_samples uint32
# The payload is the (bins, blocks, scales, samples) array raveled with the
# first axis fastest, i.e. each sample is one contiguous flattened tensor.
_FEAT_MAGIC = b"KVFT"
_FEAT_VERSION = 1
_FEAT_HEADER = struct.Struct("<4sBBH4I")


def save_feature_batch(path, batch: np.ndarray) -> None:
    """Write a (n_samples, 256, blocks, scales) array of feature tensors."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1] != BINS:
        raise ValueError(f"expected shape (samples, {BINS}, blocks, scales)")
    n, bins, blocks, scales = batch.shape
    header = _FEAT_HEADER.pack(
        _FEAT_MAGIC, _FEAT_VERSION, 0x3C, 0, bins, blocks, scales, n
    )
    payload = np.moveaxis(batch, 0, -1).ravel(order="F").astype("<f8")
    with open(Path(path), "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def load_feature_batch(path) -> np.ndarray:
    """Read a feature batch written by :func:`save_feature_batch`."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc
    if len(raw) < _FEAT_HEADER.size:
        raise DataError(f"{path} is too short to be a feature file")
    magic, version, endian, _, bins, blocks, scales, n = _FEAT_HEADER.unpack_from(raw)
    if magic != _FEAT_MAGIC:
        raise DataError(f"{path} is not a feature file (bad magic {magic!r})")
    if version != _FEAT_VERSION:
        raise DataError(
            f"{path}: unsupported feature format version {version}, expected {_FEAT_VERSION}"
        )
    if endian != 0x3C:
        raise DataError(f"{path}: unsupported endianness tag {endian:#x}")
    expected = _FEAT_HEADER.size + 8 * bins * blocks * scales * n
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f8", offset=_FEAT_HEADER.size)
    arr = flat.reshape((bins, blocks, scales, n), order="F")
    return np.ascontiguousarray(np.moveaxis(arr, -1, 0))


def save_feature_text(path, t: FeatureTensor) -> None:
    """Plain-text dump for debugging: one block histogram per line."""
    lines = [f"# bins={t.bins} n_blocks={t.n_blocks} n_scales={t.n_scales}"]
    for s in range(t.n_scales):
        for j in range(t.n_blocks):
            vals = " ".join("%.17g" % v for v in t.data[:, j, s])
            lines.append(f"{s} {j} {vals}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
