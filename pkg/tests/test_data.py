import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layer_ensembles.data import (
    DatasetSpec,
    GeometricAug,
    augment,
    convolve_reflect,
    corrupt_gaussian,
    corrupt_random_convolution,
    generate,
    load_dataset,
    make_sample,
    normalize,
    random_kernel,
    read_pgm,
    read_tensor,
    save_dataset,
    swap_patches,
    write_pgm,
    write_tensor,
)

SMALL = dict(train=6, val=3, test=4, image_size=32)


class TestSynthetic:
    def test_deterministic(self):
        a = generate(DatasetSpec(**SMALL))
        b = generate(DatasetSpec(**SMALL))
        for split in ("train", "val", "test"):
            for s, t in zip(a[split], b[split]):
                assert s.image.tobytes() == t.image.tobytes()
                assert s.mask.tobytes() == t.mask.tobytes()
                assert s.id == t.id and s.tags == t.tags

    def test_sample_independent_of_split_sizes(self):
        a = make_sample(DatasetSpec(**SMALL), "test", 2)
        b = generate(DatasetSpec(train=1, val=1, test=3, image_size=32))["test"][2]
        assert a.image.tobytes() == b.image.tobytes()

    def test_seed_changes_data(self):
        a = make_sample(DatasetSpec(**SMALL, seed=0), "train", 0)
        b = make_sample(DatasetSpec(**SMALL, seed=1), "train", 0)
        assert not np.array_equal(a.image, b.image)

    def test_splits_are_disjoint(self):
        ds = generate(DatasetSpec(**SMALL))
        ids = [s.id for split in ("train", "val", "test") for s in ds[split]]
        assert len(ids) == len(set(ids))
        images = {s.image.tobytes() for split in ("train", "val", "test") for s in ds[split]}
        assert len(images) == len(ids)

    @pytest.mark.parametrize("k,labels", [(1, {0, 1}), (3, {0, 1, 2, 3})])
    def test_label_sets(self, k, labels):
        ds = generate(DatasetSpec(**SMALL, num_classes=k))
        for s in ds["train"]:
            assert s.image.shape == (1, 32, 32)
            assert s.mask.shape == (32, 32)
            assert set(np.unique(s.mask)) <= labels
            assert (s.mask > 0).any()
        seen = set().union(*(set(np.unique(s.mask)) for s in ds["train"]))
        assert seen == labels

    def test_low_contrast_fraction(self):
        spec = DatasetSpec(train=0, val=0, test=200, image_size=16, low_contrast_fraction=0.3)
        frac = np.mean(["low-contrast" in s.tags for s in generate(spec)["test"]])
        assert 0.2 < frac < 0.4

    @pytest.mark.parametrize("kwargs", [dict(num_classes=2), dict(image_size=8),
                                        dict(low_contrast_fraction=1.5), dict(train=-1)])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ValueError):
            DatasetSpec(**kwargs)


class TestNormalize:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 100), st.floats(-50, 50))
    def test_zero_mean_unit_std(self, seed, scale, shift):
        img = np.random.default_rng(seed).standard_normal((1, 9, 7)) * scale + shift
        out = normalize(img)
        assert abs(out.mean()) < 1e-12
        assert abs(out.std() - 1) < 1e-12

    def test_constant_rejected(self):
        with pytest.raises(ValueError):
            normalize(np.ones((4, 4)))


class TestAugmentation:
    @settings(max_examples=30, deadline=None)
    @given(st.booleans(), st.booleans(), st.integers(0, 3))
    def test_geometric_invertible(self, fh, fv, rot):
        arr = np.arange(2 * 5 * 5, dtype=float).reshape(2, 5, 5)
        geo = GeometricAug(fh, fv, rot)
        np.testing.assert_array_equal(geo.invert(geo.apply(arr)), arr)

    def test_rotation_is_rot90(self):
        arr = np.arange(9).reshape(3, 3)
        np.testing.assert_array_equal(GeometricAug(rot90=1).apply(arr), np.rot90(arr))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_patch_swap_preserves_pixels(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.standard_normal((1, 32, 32))
        out = swap_patches(img, rng)
        np.testing.assert_array_equal(np.sort(out.ravel()), np.sort(img.ravel()))
        assert (out != img).sum() > 0

    def test_augment_moves_mask_with_image(self):
        s = make_sample(DatasetSpec(**SMALL), "train", 0)
        rng = np.random.default_rng(3)
        out = augment(s, rng)
        assert out.mask.shape == s.mask.shape
        assert out.mask.sum() == s.mask.sum()
        assert s.image.shape == out.image.shape


class TestCorruption:
    def test_zero_std_identity(self):
        img = np.random.default_rng(0).standard_normal((1, 8, 8))
        out = corrupt_gaussian(img, np.random.default_rng(1), mean=0.0, std=0.0)
        np.testing.assert_array_equal(out, img)

    def test_gaussian_moments(self):
        img = np.zeros((1, 64, 64))
        out = corrupt_gaussian(img, np.random.default_rng(2))
        n = out.size
        assert abs(out.mean() - 0.3) < 3 * 0.7 / np.sqrt(n)
        assert abs(out.std() - 0.7) < 0.05

    def test_negative_std_rejected(self):
        with pytest.raises(ValueError):
            corrupt_gaussian(np.zeros((2, 2)), np.random.default_rng(0), std=-1)

    def test_unit_kernel_is_identity_after_renormalization(self):
        img = normalize(np.random.default_rng(4).standard_normal((1, 16, 16)))
        out = corrupt_random_convolution(img, np.random.default_rng(5), kernel_size=1)
        np.testing.assert_allclose(out, img, atol=1e-12)

    def test_box_kernel_preserves_ramp_interior(self):
        ramp = np.add.outer(np.arange(20.0), 2 * np.arange(20.0))
        out = convolve_reflect(ramp, np.full((5, 5), 1 / 25))
        assert np.max(np.abs(out[2:-2, 2:-2] - ramp[2:-2, 2:-2])) < 1e-9

    def test_kernel_sums_to_one(self):
        k = random_kernel(np.random.default_rng(0), 9)
        assert k.shape == (9, 9)
        assert k.sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("size", [0, 4])
    def test_even_kernel_rejected(self, size):
        with pytest.raises(ValueError):
            random_kernel(np.random.default_rng(0), size)

    def test_corruptions_leave_input_untouched(self):
        s = make_sample(DatasetSpec(**SMALL), "test", 1)
        before = s.image.copy()
        corrupt_gaussian(s.image, np.random.default_rng(0))
        corrupt_random_convolution(normalize(s.image), np.random.default_rng(0))
        np.testing.assert_array_equal(s.image, before)


class TestIo:
    def test_tensor_round_trip(self, tmp_path):
        arr = np.random.default_rng(0).standard_normal((2, 3, 4))
        write_tensor(tmp_path / "a.ten", arr)
        assert read_tensor(tmp_path / "a.ten").tobytes() == arr.tobytes()

    def test_tensor_bad_magic(self, tmp_path):
        (tmp_path / "x.ten").write_bytes(b"nope")
        with pytest.raises(ValueError):
            read_tensor(tmp_path / "x.ten")

    def test_tensor_truncated(self, tmp_path):
        write_tensor(tmp_path / "a.ten", np.zeros((3, 3)))
        blob = (tmp_path / "a.ten").read_bytes()
        (tmp_path / "a.ten").write_bytes(blob[:-8])
        with pytest.raises(ValueError, match="payload"):
            read_tensor(tmp_path / "a.ten")

    def test_pgm_round_trip(self, tmp_path):
        img = np.linspace(0, 1, 12).reshape(3, 4)
        write_pgm(tmp_path / "p.pgm", img)
        px = read_pgm(tmp_path / "p.pgm")
        assert px.shape == (3, 4)
        assert px[0, 0] == 0 and px[-1, -1] == 255

    def test_dataset_round_trip(self, tmp_path):
        ds = generate(DatasetSpec(**SMALL))
        save_dataset(ds, tmp_path, previews=True)
        back = load_dataset(tmp_path, ds.spec)
        for split in ("train", "val", "test"):
            assert [s.id for s in back[split]] == [s.id for s in ds[split]]
            for s, t in zip(ds[split], back[split]):
                assert s.image.tobytes() == t.image.tobytes()
                np.testing.assert_array_equal(s.mask, t.mask)
                assert s.tags == t.tags
        header = (tmp_path / "manifest.csv").read_text().splitlines()[0]
        assert header == "id,image_path,mask_path,split,tags"
