"""Train the tensor cross-view projection on toy data and look at what it does.

Forty "families" each get a latent 8x6x4 tensor; the parent and child view
of a family are independently noised copies.  After training, same-family
cosine scores separate cleanly from cross-family ones, and the per-mode
eigenvalue spectra show how much discriminative energy each mode carries.

Writes demos/output/tensor_projection.png.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from kinverify import LabeledPairSet, TxqdaConfig, project_batch, train_txqda

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

rng = np.random.default_rng(0)
n_families, dims = 40, (8, 6, 4)
latents = rng.normal(size=(n_families,) + dims)
noise = 0.35
parents = np.moveaxis(latents + noise * rng.normal(size=latents.shape), 0, -1)
children = np.moveaxis(latents + noise * rng.normal(size=latents.shape), 0, -1)

positives = [(i, i) for i in range(n_families)]
negatives = [
    (int(i), int(j))
    for i, j in zip(rng.permutation(n_families), rng.permutation(n_families))
    if i != j
]
pairs = LabeledPairSet(positives=positives, negatives=negatives)

basis = train_txqda(parents, children, pairs, TxqdaConfig(d=60))
print(f"swept {basis.n_sweeps} times; projected size {np.prod(basis.output_dims)} -> keep {basis.d}")

proj_p = project_batch(parents, basis)
proj_c = project_batch(children, basis)


def cosines(a, b):
    return np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))


pos_scores = cosines(proj_p, proj_c)
neg_idx = np.asarray(negatives)
neg_scores = cosines(proj_p[neg_idx[:, 0]], proj_c[neg_idx[:, 1]])

fig, axes = plt.subplots(1, 2, figsize=(11, 4))
for k, lam in enumerate(basis.eigenvalues):
    axes[0].plot(lam, marker="o", label=f"mode {k + 1} ({len(lam)} dims)")
axes[0].axhline(1.0, color="gray", lw=0.8, ls="--")
axes[0].set_title("generalized eigenvalues per mode")
axes[0].set_xlabel("component")
axes[0].set_ylabel("extra/intra variance ratio")
axes[0].legend(fontsize=8)

bins = np.linspace(-1, 1, 40)
axes[1].hist(pos_scores, bins=bins, alpha=0.6, label="same family")
axes[1].hist(neg_scores, bins=bins, alpha=0.6, label="cross family")
axes[1].set_title("cosine scores after projection")
axes[1].set_xlabel("cosine similarity")
axes[1].legend(fontsize=8)

fig.tight_layout()
fig.savefig(out_dir / "tensor_projection.png", dpi=130)
print(f"wrote {out_dir / 'tensor_projection.png'}")
print(f"mean same-family score {pos_scores.mean():.3f}, cross-family {neg_scores.mean():.3f}")
