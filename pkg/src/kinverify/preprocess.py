"""Face image preprocessing.

Stages, in pipeline order: grayscale load, bilinear resize to a fixed
target, fixed face crop, single-scale Retinex illumination correction, and
elliptical background masking.  Everything operates on 2-D float64 arrays
with intensities nominally in [0, 255] and is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DataError

# Rec. 601 luma weights used to collapse RGB input to a single channel.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# Ranges narrower than this count as flat when rescaling to [0, 255]; keeps
# blur round-off on constant images from being amplified to full contrast.
_FLAT_TOL = 1e-9

METHODS = ("basic", "retinex", "mask", "retinex+mask")


@dataclass(frozen=True)
class Ellipse:
    """Axis-aligned ellipse. x runs along columns, y along rows."""

    x0: float
    y0: float
    a: float  # semi-axis along x, pixels
    b: float  # semi-axis along y, pixels

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("ellipse semi-axes must be positive")


@dataclass(frozen=True)
class PreprocConfig:
    """Preprocessing parameters.

    Crop bounds are inclusive pixel indices into the resized image, so the
    defaults produce a 115 x 126 face region out of a 200 x 200 resample.
    ``ellipse=None`` means the mask ellipse is inscribed in the crop.
    """

    target_size: tuple[int, int] = (200, 200)  # (height, width)
    crop_x: tuple[int, int] = (55, 180)  # inclusive column range
    crop_y: tuple[int, int] = (43, 157)  # inclusive row range
    retinex_sigma: float = 15.0
    mask_fill: float = 0.0
    enable_retinex: bool = True
    enable_mask: bool = True
    ellipse: Ellipse | None = None

    def __post_init__(self):
        th, tw = self.target_size
        if th <= 0 or tw <= 0:
            raise ConfigError("target_size must be positive")
        x0, x1 = self.crop_x
        y0, y1 = self.crop_y
        if not (0 <= x0 <= x1 < tw and 0 <= y0 <= y1 < th):
            raise ConfigError("crop ranges must lie inside target_size")
        if self.retinex_sigma <= 0:
            raise ConfigError("retinex_sigma must be positive")

    @property
    def cropped_shape(self) -> tuple[int, int]:
        return (
            self.crop_y[1] - self.crop_y[0] + 1,
            self.crop_x[1] - self.crop_x[0] + 1,
        )

    @classmethod
    def for_method(cls, method: str, **overrides) -> "PreprocConfig":
        """Config for one of the four named preprocessing variants."""
        flags = {
            "basic": (False, False),
            "retinex": (True, False),
            "mask": (False, True),
            "retinex+mask": (True, True),
        }
        try:
            retinex, mask = flags[method]
        except KeyError:
            raise ConfigError(
                f"unknown method {method!r}; expected one of {', '.join(METHODS)}"
            ) from None
        return cls(enable_retinex=retinex, enable_mask=mask, **overrides)


def load_grayscale(path) -> np.ndarray:
    """Load an image file as a float64 grayscale matrix in [0, 255].

    Multi-channel input is reduced with the Rec. 601 luma weights
    (0.299 R + 0.587 G + 0.114 B).  16-bit integer input is scaled down to
    the 8-bit range.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                return np.asarray(im, dtype=np.float64)
            if mode in ("I", "I;16"):
                return np.asarray(im, dtype=np.float64) * (255.0 / 65535.0)
            if mode == "F":
                return np.asarray(im, dtype=np.float64)
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, SyntaxError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    wr, wg, wb = LUMA_WEIGHTS
    return rgb[..., 0] * wr + rgb[..., 1] * wg + rgb[..., 2] * wb


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-center aligned bilinear resample with edge clamping.

    Output pixel (i, j) samples the source at
    ((i + 0.5) * H / out_h - 0.5, (j + 0.5) * W / out_w - 0.5); coordinates
    outside the grid clamp to the nearest edge pixel.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a non-empty 2-D image")
    in_h, in_w = img.shape
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    y0c = np.clip(y0, 0, in_h - 1)
    y1c = np.clip(y0 + 1, 0, in_h - 1)
    x0c = np.clip(x0, 0, in_w - 1)
    x1c = np.clip(x0 + 1, 0, in_w - 1)
    p00 = img[np.ix_(y0c, x0c)]
    p01 = img[np.ix_(y0c, x1c)]
    p10 = img[np.ix_(y1c, x0c)]
    p11 = img[np.ix_(y1c, x1c)]
    top = p00 * (1.0 - fx) + p01 * fx
    bottom = p10 * (1.0 - fx) + p11 * fx
    return top * (1.0 - fy) + bottom * fy


def resize_and_crop(img: np.ndarray, cfg: PreprocConfig | None = None) -> np.ndarray:
    """Resize to the configured target size, then take the fixed face crop."""
    cfg = cfg if cfg is not None else PreprocConfig()
    th, tw = cfg.target_size
    resized = bilinear_resize(img, th, tw)
    x0, x1 = cfg.crop_x
    y0, y1 = cfg.crop_y
    return resized[y0 : y1 + 1, x0 : x1 + 1].copy()


def _rescale_255(values: np.ndarray) -> np.ndarray:
    lo = float(values.min())
    hi = float(values.max())
    if hi - lo <= _FLAT_TOL:
        return np.zeros_like(values)
    return (values - lo) * (255.0 / (hi - lo))


def retinex_ssr(img: np.ndarray, sigma: float = 15.0) -> np.ndarray:
    """Single-scale Retinex with a Gaussian surround.

    Computes log(S + 1) - log(G_sigma * S + 1), an estimate of the log
    reflectance with the smooth illumination component removed, then
    min-max rescales the result to [0, 255].  A flat input maps to all
    zeros.  Boundaries are handled by symmetric reflection.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    img = np.asarray(img, dtype=np.float64)
    surround = ndimage.gaussian_filter(img, sigma, mode="reflect", truncate=4.0)
    r = np.log(img + 1.0) - np.log(surround + 1.0)
    return _rescale_255(r)


def default_ellipse(shape: tuple[int, int]) -> Ellipse:
    """Ellipse inscribed in an image of the given (height, width)."""
    h, w = shape
    return Ellipse(x0=(w - 1) / 2.0, y0=(h - 1) / 2.0, a=w / 2.0, b=h / 2.0)


def elliptical_mask(
    img: np.ndarray, ellipse: Ellipse | None = None, fill: float = 0.0
) -> np.ndarray:
    """Keep pixels inside the ellipse, set everything else to ``fill``.

    A pixel (x, y) is kept iff ((x - x0)/a)^2 + ((y - y0)/b)^2 <= 1.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    e = ellipse if ellipse is not None else default_ellipse(img.shape)
    ys = np.arange(img.shape[0], dtype=np.float64)[:, None]
    xs = np.arange(img.shape[1], dtype=np.float64)[None, :]
    inside = ((xs - e.x0) / e.a) ** 2 + ((ys - e.y0) / e.b) ** 2 <= 1.0
    return np.where(inside, img, float(fill))


def preprocess_image(img: np.ndarray, cfg: PreprocConfig | None = None) -> np.ndarray:
    """Run resize/crop and the enabled enhancement stages on a loaded image.

    Retinex runs before masking so the fill value never contaminates the
    Gaussian surround near the ellipse boundary.
    """
    cfg = cfg if cfg is not None else PreprocConfig()
    out = resize_and_crop(img, cfg)
    if cfg.enable_retinex:
        out = retinex_ssr(out, cfg.retinex_sigma)
    if cfg.enable_mask:
        ellipse = cfg.ellipse if cfg.ellipse is not None else default_ellipse(out.shape)
        out = elliptical_mask(out, ellipse, cfg.mask_fill)
    return out


def save_image(path, img: np.ndarray) -> None:
    """Write a float image as 8-bit grayscale, rounding and clipping."""
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(Path(path))


def preprocess_pipeline(
    path, cfg: PreprocConfig | None = None, debug_dir=None
) -> np.ndarray:
    """Load an image file and preprocess it.

    When ``debug_dir`` is given, every intermediate stage is also written
    there as a numbered 8-bit grayscale file for visual inspection.
    """
    cfg = cfg if cfg is not None else PreprocConfig()
    stages: list[tuple[str, np.ndarray]] = []
    img = load_grayscale(path)
    stages.append(("grayscale", img))
    out = resize_and_crop(img, cfg)
    stages.append(("resize_crop", out))
    if cfg.enable_retinex:
        out = retinex_ssr(out, cfg.retinex_sigma)
        stages.append(("retinex", out))
    if cfg.enable_mask:
        ellipse = cfg.ellipse if cfg.ellipse is not None else default_ellipse(out.shape)
        out = elliptical_mask(out, ellipse, cfg.mask_fill)
        stages.append(("mask", out))
    if debug_dir is not None:
        debug_dir = Path(debug_dir)
        debug_dir.mkdir(parents=True, exist_ok=True)
        stem = Path(path).stem
        for i, (name, stage_img) in enumerate(stages):
            save_image(debug_dir / f"{stem}_{i:02d}_{name}.png", stage_img)
    return out
