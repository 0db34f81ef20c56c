"""Acceptance suite: one test per release criterion.

Run with ``pytest -s tests/test_acceptance.py`` to see a PASS/FAIL line per
criterion.  Criteria 7 and 8 run the full pipeline on generated family
datasets and take a few minutes combined.
"""

import os
import time
from contextlib import contextmanager

import numpy as np
import pytest
import scipy.linalg

from kinverify.dataset import (
    LabeledPairSet,
    generate_synthetic_dataset,
    load_manifest,
    make_folds,
)
from kinverify.gabor import (
    BlockGrid,
    convolve,
    default_bank,
    extract_feature_tensor,
    gabor_kernel,
)
from kinverify.pipeline import (
    RunConfig,
    SynthParams,
    TxqdaParams,
    config_from_dict,
    extract_features,
    run_all,
    run_method,
)
from kinverify.preprocess import retinex_ssr
from kinverify.txqda import TxqdaConfig, mode_product, project_batch, refold, train_txqda, unfold


@contextmanager
def criterion(number, label):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[criterion {number:>2}] {label}: FAIL")
        raise
    print(f"[criterion {number:>2}] {label} ({time.perf_counter() - start:.1f}s): PASS")


# --- independent oracles -------------------------------------------------


def loop_correlate(img, kernel):
    rh, rw = kernel.shape[0] // 2, kernel.shape[1] // 2
    padded = np.pad(img, ((rh, rh), (rw, rw)), mode="symmetric")
    out = np.zeros(img.shape)
    for i in range(img.shape[0]):
        for j in range(img.shape[1]):
            out[i, j] = np.sum(padded[i : i + kernel.shape[0], j : j + kernel.shape[1]] * kernel)
    return out


def loop_mode_product(t, a, mode):
    i1, i2, i3 = t.shape
    shape = list(t.shape)
    shape[mode] = a.shape[0]
    out = np.zeros(shape)
    for r in range(a.shape[0]):
        for x in range(i1):
            for y in range(i2):
                for z in range(i3):
                    idx = [x, y, z]
                    src = idx[mode]
                    idx[mode] = r
                    out[tuple(idx)] += a[r, src] * t[x, y, z]
    return out


def flat_cross_view_oracle(x, z, pairs, dim, reg_scale):
    def scatter(idx):
        d = x[:, [i for i, _ in idx]] - z[:, [j for _, j in idx]]
        return (d @ d.T) / len(idx)

    s_i = scatter(pairs.positives)
    s_e = scatter(pairs.negatives)
    n = x.shape[0]
    ridge = reg_scale * np.trace(s_i) / n
    vals, vecs = scipy.linalg.eigh(s_e, s_i + ridge * np.eye(n))
    vals = vals[::-1][:dim]
    vecs = vecs[:, ::-1][:, :dim].copy()
    for col in vecs.T:
        col /= np.linalg.norm(col)
        if col[np.argmax(np.abs(col))] < 0:
            col *= -1.0
    return vecs, vals, s_i, s_e, ridge


def face_image(seed=5, size=200):
    from kinverify.dataset import _compose_face, _texture

    rng = np.random.default_rng(seed)
    return _compose_face(_texture(rng, size, size), _texture(rng, size, size))


# --- criteria ------------------------------------------------------------


def test_criterion_1_kernel_analytics():
    with criterion(1, "kernel analytics on the 32-filter bank"):
        start = time.perf_counter()
        bank = default_bank(n_scales=4)
        assert bank.n_filters == 32
        for params, part in bank.filters:
            radius = bank.kernel_radius(params.sigma)
            k = gabor_kernel(params, part, radius)
            if part == "real" and params.psi == 0.0:
                assert k[radius, radius] == 1.0
            # parity depends on (part, phase): cosine carriers with zero
            # phase are even, sine carriers odd; a 90 degree phase swaps them
            even = (part == "real") == (abs(params.psi) < 1e-12)
            flipped = k[::-1, ::-1]
            if even:
                assert np.abs(k - flipped).max() < 1e-12
            else:
                assert np.abs(k + flipped).max() < 1e-12
        assert time.perf_counter() - start < 1.0


def test_criterion_2_convolution_oracle():
    with criterion(2, "fft vs direct convolution on 10 random 128x128 images"):
        start = time.perf_counter()
        rng = np.random.default_rng(21)
        bank = default_bank(n_scales=4)
        big = gabor_kernel(*bank.filters[0], radius=40)  # 81x81
        small = gabor_kernel(*bank.filters[9], radius=15)  # 31x31
        for i in range(10):
            img = rng.uniform(0.0, 255.0, (128, 128))
            kernel = big if i % 2 == 0 else small
            a = convolve(img, kernel, method="fft")
            b = convolve(img, kernel, method="direct")
            assert np.abs(a - b).max() < 1e-8
        # spot-check both implementations against a plain nested loop
        img = rng.uniform(0.0, 255.0, (32, 32))
        ref = loop_correlate(img, small)
        assert np.abs(convolve(img, small, method="fft") - ref).max() < 1e-8
        assert np.abs(convolve(img, small, method="direct") - ref).max() < 1e-8
        assert time.perf_counter() - start < 30.0


def test_criterion_3_histogram_mass_conservation():
    with criterion(3, "histogram mass conservation on 100 random images"):
        rng = np.random.default_rng(3)
        bank = default_bank(n_scales=2, base_wavelength=6.0)
        for _ in range(100):
            h = int(rng.integers(40, 80))
            w = int(rng.integers(40, 80))
            img = rng.uniform(0.0, 255.0, (h, w))
            grid = BlockGrid.for_shape((h, w), rows=3, cols=3)
            t = extract_feature_tensor(img, bank, grid)
            fiber_sums = t.data.sum(axis=0)
            assert np.all(fiber_sums == grid.block_pixels)


def test_criterion_4_retinex_illumination_invariance():
    with criterion(4, "retinex multiplicative invariance and recovery"):
        img = face_image()
        base = retinex_ssr(img, 15.0)
        for c in (0.5, 2.0):
            assert np.abs(retinex_ssr(c * img, 15.0) - base).max() < 1.0
        ys, xs = np.mgrid[0:160, 0:160].astype(np.float64)
        reflectance = np.where(((xs // 8) + (ys // 8)) % 2 == 0, 60.0, 180.0)
        illumination = 0.4 + 1.2 * (xs / 159.0)
        out = retinex_ssr(reflectance * illumination, 15.0)
        corr = np.corrcoef(out.ravel(), np.log(reflectance).ravel())[0, 1]
        assert corr > 0.9


def test_criterion_5_cross_view_oracle_equivalence():
    with criterion(5, "vector-case equivalence with the flat cross-view oracle"):
        start = time.perf_counter()
        rng = np.random.default_rng(55)
        dim, n = 40, 200
        means = rng.normal(size=(40, dim))
        labels = rng.integers(0, 40, size=n)
        x = means[labels].T + 0.3 * rng.normal(size=(dim, n))
        z = means[labels].T + 0.3 * rng.normal(size=(dim, n))
        negatives = []
        while len(negatives) < n:
            i, j = rng.integers(0, n, size=2)
            if labels[i] != labels[j]:
                negatives.append((int(i), int(j)))
        pairs = LabeledPairSet(positives=[(i, i) for i in range(n)], negatives=negatives)

        basis = train_txqda(x, z, pairs, TxqdaConfig(reg=1e-3, d=dim))
        w_ref, lam_ref, s_i, s_e, ridge = flat_cross_view_oracle(x, z, pairs, dim, 1e-3)
        assert np.abs(basis.eigenvalues[0] - lam_ref).max() < 1e-8

        w = basis.factors[0]
        resid = s_e @ w - (s_i + ridge * np.eye(dim)) @ w * basis.eigenvalues[0][None, :]
        assert np.linalg.norm(resid, axis=0).max() < 1e-8

        keep = 25
        proj = project_batch(x, basis, d=keep)
        proj_z = project_batch(z, basis, d=keep)
        ref = (w_ref.T @ x).T[:, :keep]
        ref_z = (w_ref.T @ z).T[:, :keep]

        def cosines(a, b):
            return np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
            )

        idx = np.asarray(negatives)
        for mine, theirs in (
            (cosines(proj, proj_z), cosines(ref, ref_z)),
            (cosines(proj[idx[:, 0]], proj_z[idx[:, 1]]), cosines(ref[idx[:, 0]], ref_z[idx[:, 1]])),
        ):
            assert np.abs(mine - theirs).max() < 1e-6
        assert time.perf_counter() - start < 10.0


def test_criterion_6_tensor_operation_oracles():
    with criterion(6, "mode product and unfolding against nested-loop oracles"):
        rng = np.random.default_rng(66)
        for _ in range(5):
            t = rng.normal(size=(4, 5, 3))
            for mode in range(3):
                a = rng.normal(size=(int(rng.integers(2, 6)), t.shape[mode]))
                mine = mode_product(t, a, mode)
                assert np.abs(mine - loop_mode_product(t, a, mode)).max() < 1e-10
                np.testing.assert_array_equal(refold(unfold(t, mode), mode, t.shape), t)


def _separability_config(tmp_path, kin_noise, name):
    return RunConfig(
        synthetic=SynthParams(
            families=50,
            kin_noise=kin_noise,
            illum_strength=0.3,
            seed=11,
            out_dir=str(tmp_path / name),
        ),
        methods=("retinex+mask",),
        txqda=TxqdaParams(d=190, d_sweep=(190,)),
        output_dir=str(tmp_path / f"{name}_out"),
    )


def test_criterion_7_end_to_end_synthetic_separability(tmp_path):
    with criterion(7, "synthetic separability (50 families, 5 folds, d=190)"):
        start = time.perf_counter()
        cfg = _separability_config(tmp_path, 0.2, "separable")
        manifest = generate_synthetic_dataset(
            50, (200, 200), 0.2, seed=11, out_dir=tmp_path / "separable", illum_strength=0.3
        )
        folds = make_folds(manifest, 5, cfg.eval.seed)
        features = extract_features(manifest, "retinex+mask", cfg)
        report = run_method(features, folds, cfg, "retinex+mask").reports[190]
        assert report.mean_accuracy >= 0.90

        manifest = generate_synthetic_dataset(
            50, (200, 200), 1.0, seed=11, out_dir=tmp_path / "chance", illum_strength=0.3
        )
        features = extract_features(manifest, "retinex+mask", cfg)
        chance = run_method(features, folds, cfg, "retinex+mask").reports[190]
        assert 0.35 <= chance.mean_accuracy <= 0.65
        assert time.perf_counter() - start < 600.0


def test_criterion_8_method_ordering_under_illumination(tmp_path):
    with criterion(8, "retinex variants beat the basic method under strong ramps"):
        manifest = generate_synthetic_dataset(
            40, (200, 200), 0.25, seed=19, out_dir=tmp_path / "illum", illum_strength=1.0
        )
        cfg = RunConfig(
            synthetic=SynthParams(
                families=40, kin_noise=0.25, illum_strength=1.0, seed=19,
                out_dir=str(tmp_path / "illum"),
            ),
            txqda=TxqdaParams(d=190, d_sweep=(190,)),
            output_dir=str(tmp_path / "illum_out"),
        )
        folds = make_folds(manifest, 5, cfg.eval.seed)
        means = {}
        for method in ("basic", "retinex", "mask", "retinex+mask"):
            features = extract_features(manifest, method, cfg)
            means[method] = run_method(features, folds, cfg, method).reports[190].mean_accuracy
        print(f"    accuracies: {means}")
        assert means["retinex"] >= means["basic"] + 0.02
        assert means["retinex+mask"] >= means["basic"] + 0.02
        # the combined method never loses noticeably to its components
        for method in ("basic", "retinex", "mask"):
            assert means["retinex+mask"] >= means[method] - 0.02


def test_criterion_9_run_all_determinism(tmp_path):
    with criterion(9, "byte-identical run-all CSV reports"):
        base = {
            "dataset": {
                "synthetic": {
                    "families": 6,
                    "height": 64,
                    "width": 64,
                    "kin_noise": 0.2,
                    "seed": 5,
                    "out_dir": "data",
                }
            },
            "features": {"n_scales": 2, "grid_rows": 2, "grid_cols": 2},
            "txqda": {"d": 12, "d_sweep": [8, 12], "target_mode1": 32},
            "eval": {"k": 2, "seed": 9},
            "output_dir": "out",
        }
        for sub in ("a", "b"):
            run_all(config_from_dict(base), base_dir=tmp_path / sub)
        first = (tmp_path / "a" / "out" / "report.csv").read_bytes()
        second = (tmp_path / "b" / "out" / "report.csv").read_bytes()
        assert first == second


def test_criterion_10_optional_real_dataset():
    manifest_path = os.environ.get("KINVERIFY_KINFACE_MANIFEST")
    if not manifest_path:
        pytest.skip("set KINVERIFY_KINFACE_MANIFEST to a 150-pair manifest to enable")
    with criterion(10, "run-all completes on the real 150-pair manifest"):
        manifest = load_manifest(manifest_path)
        assert len(manifest) == 150
        cfg = RunConfig(manifest=manifest_path, output_dir="kinface_out")
        result = run_all(cfg)
        assert len(result.method_results) == 4
