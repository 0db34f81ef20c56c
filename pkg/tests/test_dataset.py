import numpy as np
import pytest
from PIL import Image

from kinverify.dataset import (
    generate_synthetic_dataset,
    load_manifest,
    make_folds,
    sample_negative_pairs,
)
from kinverify.errors import DataError


def write_image(path, value=128, size=(64, 64)):
    arr = np.full(size, value, dtype=np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def write_manifest(tmp_path, n_families, pairs_per_family=1):
    lines = ["# test manifest"]
    fam = 0
    for f in range(n_families):
        for p in range(pairs_per_family):
            parent = tmp_path / f"f{f}_{p}_p.png"
            child = tmp_path / f"f{f}_{p}_c.png"
            write_image(parent, value=(f * 7 + p) % 256)
            write_image(child, value=(f * 11 + p) % 256)
            lines.append(f"{parent.name},{child.name},{f}")
    path = tmp_path / "manifest.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestLoadManifest:
    def test_parses_three_rows(self, tmp_path):
        path = write_manifest(tmp_path, 3)
        manifest = load_manifest(path)
        assert len(manifest) == 3
        assert sorted(set(manifest.families.tolist())) == [0, 1, 2]

    def test_preserves_row_order(self, tmp_path):
        path = write_manifest(tmp_path, 4)
        manifest = load_manifest(path)
        assert [e.family_id for e in manifest.entries] == [0, 1, 2, 3]

    def test_negative_family_id_reports_row(self, tmp_path):
        write_image(tmp_path / "a.png")
        write_image(tmp_path / "b.png")
        path = tmp_path / "manifest.csv"
        path.write_text("a.png,b.png,-1\n", encoding="utf-8")
        with pytest.raises(DataError, match=":1:"):
            load_manifest(path)

    def test_malformed_row_reports_row_number(self, tmp_path):
        write_image(tmp_path / "a.png")
        path = tmp_path / "manifest.csv"
        path.write_text("# comment\na.png,0\n", encoding="utf-8")
        with pytest.raises(DataError, match=":2:"):
            load_manifest(path)

    def test_missing_image_path_rejected(self, tmp_path):
        write_image(tmp_path / "a.png")
        path = tmp_path / "manifest.csv"
        path.write_text("a.png,gone.png,0\n", encoding="utf-8")
        with pytest.raises(DataError, match="does not exist"):
            load_manifest(path)

    def test_non_image_file_rejected(self, tmp_path):
        write_image(tmp_path / "a.png")
        (tmp_path / "b.png").write_bytes(b"not an image")
        path = tmp_path / "manifest.csv"
        path.write_text("a.png,b.png,0\n", encoding="utf-8")
        with pytest.raises(DataError, match="decode"):
            load_manifest(path)

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_manifest(tmp_path / "absent.csv")

    def test_dataset_scale_manifest(self, tmp_path):
        path = write_manifest(tmp_path, 150)
        assert len(load_manifest(path)) == 150


class TestMakeFolds:
    def test_balanced_split(self, tmp_path):
        manifest = load_manifest(write_manifest(tmp_path, 10))
        folds = make_folds(manifest, k=5, seed=0)
        sizes = [len(folds.families_in(f)) for f in range(5)]
        assert sizes == [2, 2, 2, 2, 2]

    def test_deterministic_for_fixed_seed(self, tmp_path):
        manifest = load_manifest(write_manifest(tmp_path, 12))
        a = make_folds(manifest, k=4, seed=33)
        b = make_folds(manifest, k=4, seed=33)
        assert a.fold_of == b.fold_of

    def test_seed_changes_assignment(self, tmp_path):
        manifest = load_manifest(write_manifest(tmp_path, 12))
        a = make_folds(manifest, k=4, seed=1)
        b = make_folds(manifest, k=4, seed=2)
        assert a.fold_of != b.fold_of

    def test_large_split_counted_by_brute_force(self, tmp_path):
        manifest = load_manifest(write_manifest(tmp_path, 150))
        folds = make_folds(manifest, k=5, seed=7)
        counts = {}
        for fam in manifest.families.tolist():
            counts[folds.fold_of[fam]] = counts.get(folds.fold_of[fam], 0) + 1
        assert counts == {f: 30 for f in range(5)}

    def test_partition_property(self, tmp_path):
        manifest = load_manifest(write_manifest(tmp_path, 17))
        folds = make_folds(manifest, k=4, seed=3)
        all_assigned = [fam for f in range(4) for fam in folds.families_in(f)]
        assert sorted(all_assigned) == sorted(set(manifest.families.tolist()))
        sizes = [len(folds.families_in(f)) for f in range(4)]
        assert max(sizes) - min(sizes) <= 1

    def test_too_many_folds_rejected(self, tmp_path):
        manifest = load_manifest(write_manifest(tmp_path, 3))
        with pytest.raises(DataError):
            make_folds(manifest, k=4, seed=0)
        with pytest.raises(DataError):
            make_folds(manifest, k=1, seed=0)


class TestNegativeSampling:
    def test_two_families_one_each(self, tmp_path):
        manifest = load_manifest(write_manifest(tmp_path, 2))
        pairs = sample_negative_pairs(manifest, per_positive=1, seed=0)
        assert len(pairs.negatives) == 2
        fams = manifest.families
        for i, j in pairs.negatives:
            assert fams[i] != fams[j]

    def test_zero_per_positive_gives_empty_set(self, tmp_path):
        manifest = load_manifest(write_manifest(tmp_path, 3))
        pairs = sample_negative_pairs(manifest, per_positive=0, seed=0)
        assert pairs.negatives == []
        assert len(pairs.positives) == 3

    def test_large_manifest_exhaustive_family_check(self, tmp_path):
        manifest = load_manifest(write_manifest(tmp_path, 150))
        pairs = sample_negative_pairs(manifest, per_positive=1, seed=5)
        assert len(pairs.negatives) == 150
        fams = manifest.families
        for i, j in pairs.negatives:  # exhaustive scan of every emitted pair
            assert fams[i] != fams[j]
        assert len(set(pairs.negatives)) == 150  # no duplicates
        assert not set(pairs.negatives) & set(pairs.positives)

    def test_deterministic(self, tmp_path):
        manifest = load_manifest(write_manifest(tmp_path, 9))
        a = sample_negative_pairs(manifest, per_positive=2, seed=11)
        b = sample_negative_pairs(manifest, per_positive=2, seed=11)
        assert a.negatives == b.negatives

    def test_single_family_rejected(self, tmp_path):
        manifest = load_manifest(write_manifest(tmp_path, 1, pairs_per_family=3))
        with pytest.raises(DataError):
            sample_negative_pairs(manifest, per_positive=1, seed=0)

    def test_multi_pair_families_never_paired_with_themselves(self, tmp_path):
        manifest = load_manifest(write_manifest(tmp_path, 4, pairs_per_family=3))
        pairs = sample_negative_pairs(manifest, per_positive=3, seed=2)
        fams = manifest.families
        for i, j in pairs.negatives:
            assert fams[i] != fams[j]


class TestSyntheticGenerator:
    def test_manifest_layout_and_size(self, tmp_path):
        manifest = generate_synthetic_dataset(
            3, (64, 64), kin_noise=0.2, seed=0, out_dir=tmp_path / "d"
        )
        assert len(manifest) == 3
        names = sorted(p.name for p in (tmp_path / "d").iterdir())
        assert names == [
            "fam000_child.png",
            "fam000_parent.png",
            "fam001_child.png",
            "fam001_parent.png",
            "fam002_child.png",
            "fam002_parent.png",
            "manifest.csv",
        ]
        reloaded = load_manifest(tmp_path / "d" / "manifest.csv")
        assert len(reloaded) == 3

    def test_bit_reproducible(self, tmp_path):
        a = generate_synthetic_dataset(3, (64, 64), 0.4, seed=9, out_dir=tmp_path / "a")
        b = generate_synthetic_dataset(3, (64, 64), 0.4, seed=9, out_dir=tmp_path / "b")
        for ea, eb in zip(a.entries, b.entries):
            assert ea.parent_path.read_bytes() == eb.parent_path.read_bytes()
            assert ea.child_path.read_bytes() == eb.child_path.read_bytes()
        assert (tmp_path / "a" / "manifest.csv").read_text() == (
            tmp_path / "b" / "manifest.csv"
        ).read_text()

    def test_seed_changes_content(self, tmp_path):
        a = generate_synthetic_dataset(2, (64, 64), 0.4, seed=1, out_dir=tmp_path / "a")
        b = generate_synthetic_dataset(2, (64, 64), 0.4, seed=2, out_dir=tmp_path / "b")
        assert a.entries[0].parent_path.read_bytes() != b.entries[0].parent_path.read_bytes()

    def test_zero_noise_zero_illum_gives_identical_pairs(self, tmp_path):
        manifest = generate_synthetic_dataset(
            2, (64, 64), kin_noise=0.0, seed=4, out_dir=tmp_path / "d", illum_strength=0.0
        )
        for e in manifest.entries:
            assert e.parent_path.read_bytes() == e.child_path.read_bytes()

    def test_zero_noise_with_illumination_differs_only_smoothly(self, tmp_path):
        manifest = generate_synthetic_dataset(
            2, (128, 128), kin_noise=0.0, seed=4, out_dir=tmp_path / "d", illum_strength=0.8
        )
        e = manifest.entries[0]
        parent = np.asarray(Image.open(e.parent_path), dtype=np.float64)
        child = np.asarray(Image.open(e.child_path), dtype=np.float64)
        assert np.abs(parent - child).max() > 5.0  # illumination really differs
        ratio = (child + 1.0) / (parent + 1.0)
        grad = np.abs(np.diff(ratio, axis=1)).mean()
        assert grad < 0.02  # ratio field is smooth

    def test_preconditions(self, tmp_path):
        with pytest.raises(DataError):
            generate_synthetic_dataset(1, (64, 64), 0.2, 0, tmp_path / "x")
        with pytest.raises(DataError):
            generate_synthetic_dataset(2, (32, 64), 0.2, 0, tmp_path / "x")
        with pytest.raises(DataError):
            generate_synthetic_dataset(2, (64, 64), 1.5, 0, tmp_path / "x")
