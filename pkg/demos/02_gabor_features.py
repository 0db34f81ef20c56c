"""Look inside the Gabor feature extractor.

Top row: the real-part kernels of the first wavelength at each of the four
orientations.  Middle: an oriented grating and its magnitude response for a
matched and a mismatched filter (the matched one lights up).  Bottom: the
block-histogram feature tensor of one preprocessed face, one heatmap per
scale group.

Writes demos/output/gabor_features.png.
"""

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from kinverify import BlockGrid, convolve, default_bank, extract_feature_tensor, gabor_kernel
from kinverify.dataset import _compose_face, _texture

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

bank = default_bank(n_scales=4)
thetas = sorted({p.theta for p, _ in bank.filters})

fig = plt.figure(figsize=(12, 10))
gs = fig.add_gridspec(3, 12)

# kernels of the first wavelength, real part, zero phase
for i, theta in enumerate(thetas):
    params = next(
        p for p, part in bank.filters
        if part == "real" and p.theta == theta and p.wavelength == 16.0 and p.psi == 0.0
    )
    ax = fig.add_subplot(gs[0, 3 * i : 3 * i + 3])
    ax.imshow(gabor_kernel(params, "real", radius=40), cmap="RdBu")
    ax.set_title(f"theta = {math.degrees(theta):.1f} deg", fontsize=9)
    ax.axis("off")

# orientation selectivity on a synthetic grating
ys, xs = np.mgrid[0:115, 0:126].astype(float)
theta_g = math.radians(90.0)
grating = 127.5 + 127.5 * np.cos(2 * np.pi * (xs * math.cos(theta_g) + ys * math.sin(theta_g)) / 16.0)
matched = next(p for p, part in bank.filters if part == "real" and p.theta == theta_g and p.wavelength == 16.0)
mismatched = next(p for p, part in bank.filters if part == "real" and p.theta == math.radians(45.0) and p.wavelength == 16.0)
for i, (params, title) in enumerate([(None, "grating (16 px, 90 deg)"), (matched, "matched filter |response|"), (mismatched, "45 deg filter |response|")]):
    ax = fig.add_subplot(gs[1, 4 * i : 4 * i + 4])
    if params is None:
        ax.imshow(grating, cmap="gray")
    else:
        r = convolve(grating, gabor_kernel(params, "real", radius=40))
        i_ = convolve(grating, gabor_kernel(params, "imag", radius=40))
        ax.imshow(np.hypot(r, i_), cmap="magma")
    ax.set_title(title, fontsize=9)
    ax.axis("off")

# the feature tensor of one face: 256-bin histograms per block, per scale
rng = np.random.default_rng(7)
face = _compose_face(_texture(rng, 115, 126), _texture(rng, 115, 126))
grid = BlockGrid.for_shape(face.shape, rows=4, cols=4)
tensor = extract_feature_tensor(face, bank, grid)
for s in range(min(3, tensor.n_scales)):
    ax = fig.add_subplot(gs[2, 4 * s : 4 * s + 4])
    ax.imshow(np.log1p(tensor.data[:, :, s]), aspect="auto", cmap="viridis")
    ax.set_title(f"scale group {s}: log(1 + count)", fontsize=9)
    ax.set_xlabel("block")
    if s == 0:
        ax.set_ylabel("intensity bin")

fig.tight_layout()
fig.savefig(out_dir / "gabor_features.png", dpi=130)
print(f"wrote {out_dir / 'gabor_features.png'}")
print(f"tensor shape: {tensor.data.shape}, block mass: {grid.block_pixels}")
