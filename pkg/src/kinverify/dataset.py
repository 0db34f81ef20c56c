"""Pair manifests, fold assignment, negative sampling, synthetic families.

A manifest is a UTF-8 text file with one ``parent,child,family_id`` record
per line (paths relative to the manifest's directory, ``#`` starts a
comment).  Families are the class labels: a positive pair shares a
family_id, folds partition families so no identity leaks between train and
test.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError


@dataclass(frozen=True)
class ManifestEntry:
    parent_path: Path
    child_path: Path
    family_id: int


@dataclass
class PairManifest:
    entries: list[ManifestEntry]
    root_dir: Path

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def families(self) -> np.ndarray:
        return np.array([e.family_id for e in self.entries], dtype=np.int64)

    @property
    def n_families(self) -> int:
        return len(set(e.family_id for e in self.entries))


@dataclass
class FoldAssignment:
    k: int
    fold_of: dict[int, int]

    def families_in(self, fold: int) -> list[int]:
        return sorted(f for f, v in self.fold_of.items() if v == fold)


@dataclass
class LabeledPairSet:
    """Index pairs (parent_index, child_index) into a sample list."""

    positives: list[tuple[int, int]]
    negatives: list[tuple[int, int]]


def _check_image(path: Path) -> None:
    try:
        with Image.open(path) as im:
            im.verify()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DataError(f"{path} does not decode as an image: {exc}") from exc


def load_manifest(path) -> PairManifest:
    """Parse and validate a manifest file.

    Every record must have three fields and a non-negative family id, and
    every referenced file must exist and decode as an image.  Row order is
    preserved.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest file not found: {path}")
    root = path.parent
    entries: list[ManifestEntry] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 comma-separated fields")
        try:
            family_id = int(fields[2])
        except ValueError:
            raise DataError(f"{path}:{lineno}: family_id {fields[2]!r} is not an integer") from None
        if family_id < 0:
            raise DataError(f"{path}:{lineno}: family_id must be non-negative")
        parent = root / fields[0]
        child = root / fields[1]
        for p in (parent, child):
            if not p.is_file():
                raise DataError(f"{path}:{lineno}: image path does not exist: {p}")
            _check_image(p)
        entries.append(ManifestEntry(parent, child, family_id))
    if not entries:
        raise DataError(f"manifest {path} holds no records")
    return PairManifest(entries=entries, root_dir=root)


def folds_from_families(families, k: int, seed: int) -> FoldAssignment:
    """Deal shuffled family ids round-robin into k folds."""
    unique = sorted(set(int(f) for f in families))
    if k < 2:
        raise DataError("k must be at least 2")
    if k > len(unique):
        raise DataError(f"k={k} exceeds the number of families ({len(unique)})")
    if seed < 0:
        raise DataError("seed must be non-negative")
    order = np.array(unique, dtype=np.int64)
    np.random.default_rng(np.random.SeedSequence([int(seed), 0xF01D])).shuffle(order)
    return FoldAssignment(k=k, fold_of={int(f): i % k for i, f in enumerate(order)})


def make_folds(manifest: PairManifest, k: int, seed: int) -> FoldAssignment:
    """Family-level fold assignment; fold sizes differ by at most one."""
    return folds_from_families(manifest.families, k, seed)


def sample_cross_family_pairs(families, count: int, rng, indices=None) -> list[tuple[int, int]]:
    """Sample `count` distinct (i, j) pairs with different family ids.

    ``indices`` restricts both sides to a subset of sample positions;
    returned pairs use the original positions.  Sampling is uniform over
    all cross-family combinations, without replacement.
    """
    families = np.asarray(families, dtype=np.int64)
    idx = np.arange(len(families)) if indices is None else np.asarray(indices, dtype=np.int64)
    if count == 0:
        return []
    fams = families[idx]
    if len(set(fams.tolist())) < 2:
        raise DataError("need at least two families to form negative pairs")
    cross = np.argwhere(fams[:, None] != fams[None, :])
    if count > len(cross):
        raise DataError(
            f"requested {count} negative pairs but only {len(cross)} cross-family "
            f"combinations exist"
        )
    chosen = rng.choice(len(cross), size=count, replace=False)
    return [(int(idx[a]), int(idx[b])) for a, b in cross[chosen]]


def sample_negative_pairs(manifest: PairManifest, per_positive: int, seed: int) -> LabeledPairSet:
    """Positives are the manifest rows; negatives are sampled cross-family.

    Emits per_positive negatives for every positive, never pairing two
    samples of the same family.  Deterministic for a fixed seed.
    """
    if per_positive < 0:
        raise DataError("per_positive must be non-negative")
    if seed < 0:
        raise DataError("seed must be non-negative")
    positives = [(i, i) for i in range(len(manifest.entries))]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4E9]))
    negatives = sample_cross_family_pairs(
        manifest.families, per_positive * len(positives), rng
    )
    return LabeledPairSet(positives=positives, negatives=negatives)


def _texture(rng, h: int, w: int) -> np.ndarray:
    """Random oriented-grating mixture plus a blob layout, scaled to [0, 1]."""
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    t = np.zeros((h, w))
    for _ in range(4):
        wl = rng.uniform(10.0, 36.0)
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.6, 1.0)
        t += amp * np.sin(2.0 * np.pi * (xs * np.cos(theta) + ys * np.sin(theta)) / wl + phase)
    for _ in range(5):
        cx = rng.uniform(0.15, 0.85) * w
        cy = rng.uniform(0.15, 0.85) * h
        s = rng.uniform(0.05, 0.18) * min(h, w)
        amp = rng.uniform(-1.5, 1.5)
        t += amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * s * s))
    lo, hi = t.min(), t.max()
    return (t - lo) / (hi - lo) if hi > lo else np.zeros_like(t)


def _illumination(rng, h: int, w: int, strength: float) -> np.ndarray:
    """Smooth multiplicative field: a ramp plus one long-wavelength wave."""
    gx = rng.uniform(-1.0, 1.0)
    gy = rng.uniform(-1.0, 1.0)
    wl = rng.uniform(0.9, 1.8) * max(h, w)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    theta = rng.uniform(0.0, np.pi)
    if strength <= 0:
        return np.ones((h, w))
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    ramp = 2.0 * gx * (xs / max(w - 1, 1) - 0.5) + 2.0 * gy * (ys / max(h - 1, 1) - 0.5)
    wave = np.sin(2.0 * np.pi * (xs * np.cos(theta) + ys * np.sin(theta)) / wl + phase)
    field = 1.0 + strength * (0.45 * ramp + 0.25 * wave)
    return np.clip(field, 0.15, None)


def _compose_face(face01: np.ndarray, clutter01: np.ndarray) -> np.ndarray:
    """Face texture inside a centered ellipse, clutter outside, in [40, 215]."""
    h, w = face01.shape
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    fa, fb = 0.46 * w, 0.46 * h
    inside = ((xs - (w - 1) / 2.0) / fa) ** 2 + ((ys - (h - 1) / 2.0) / fb) ** 2 <= 1.0
    tex = np.where(inside, face01, clutter01)
    return 40.0 + 175.0 * tex


# Background clutter decorrelates this much faster than the face texture,
# so masking it out genuinely helps at moderate kin_noise.
_CLUTTER_NOISE_BOOST = 3.0


def generate_synthetic_dataset(
    n_families: int,
    image_size: tuple[int, int] = (200, 200),
    kin_noise: float = 0.2,
    seed: int = 0,
    out_dir=None,
    illum_strength: float = 0.3,
    ext: str = "png",
) -> PairManifest:
    """Write parent/child image pairs with a controllable kinship signal.

    Each family draws a latent texture (oriented gratings plus blobs); the
    child blends that texture with an independent draw by ``kin_noise``
    (0 = identical, 1 = unrelated).  Each image gets its own smooth
    multiplicative illumination field scaled by ``illum_strength``.
    Everything is derived from ``seed``, so output files are
    bit-reproducible.
    """
    if n_families < 2:
        raise DataError("need at least two families (negatives are impossible otherwise)")
    h, w = int(image_size[0]), int(image_size[1])
    if h < 64 or w < 64:
        raise DataError("image size must be at least 64x64")
    if not 0.0 <= kin_noise <= 1.0:
        raise DataError("kin_noise must lie in [0, 1]")
    if seed < 0:
        raise DataError("seed must be non-negative")
    if out_dir is None:
        raise DataError("out_dir is required")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory {out_dir} is not writable: {exc}") from exc

    clutter_noise = min(1.0, _CLUTTER_NOISE_BOOST * kin_noise)
    streams = np.random.SeedSequence([int(seed), 0x5F0D]).spawn(n_families)
    lines = []
    entries: list[ManifestEntry] = []
    for fam in range(n_families):
        rng = np.random.default_rng(streams[fam])
        face = _texture(rng, h, w)
        face_indep = _texture(rng, h, w)
        clutter_parent = _texture(rng, h, w)
        clutter_indep = _texture(rng, h, w)
        light_parent = _illumination(rng, h, w, illum_strength)
        light_child = _illumination(rng, h, w, illum_strength)

        child_face = (1.0 - kin_noise) * face + kin_noise * face_indep
        child_clutter = (1.0 - clutter_noise) * clutter_parent + clutter_noise * clutter_indep
        parent_img = _compose_face(face, clutter_parent) * light_parent
        child_img = _compose_face(child_face, child_clutter) * light_child

        parent_name = f"fam{fam:03d}_parent.{ext}"
        child_name = f"fam{fam:03d}_child.{ext}"
        for name, img in ((parent_name, parent_img), (child_name, child_img)):
            arr = np.clip(np.rint(img), 0, 255).astype(np.uint8)
            Image.fromarray(arr, mode="L").save(out_dir / name)
        lines.append(f"{parent_name},{child_name},{fam}")
        entries.append(ManifestEntry(out_dir / parent_name, out_dir / child_name, fam))

    manifest_path = out_dir / "manifest.csv"
    manifest_path.write_text(
        "# parent_rel_path,child_rel_path,family_id\n" + "\n".join(lines) + "\n",
        encoding="utf-8",
    )
    return PairManifest(entries=entries, root_dir=out_dir)
