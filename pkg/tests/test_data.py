import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikeatconv import data
from spikeatconv.errors import ConfigError, DataFormatError


def random_ds(n=7, classes=10, shape=(3, 32, 32), seed=0):
    r = np.random.default_rng(seed)
    return data.Dataset(r.integers(0, 256, (n,) + shape, dtype=np.uint8), r.integers(0, classes, n), classes)


class TestCifar:
    def test_record_arithmetic(self):
        assert 50000 * (data.CIFAR_LABEL_BYTES["c100"] + data.CIFAR_PIXELS) == 50000 * 3074 == 153_700_000
        assert data.CIFAR_LABEL_BYTES["c10"] + data.CIFAR_PIXELS == 3073

    @pytest.mark.parametrize("variant,classes", [("c10", 10), ("c100", 100)])
    def test_round_trip_bytes(self, tmp_path, variant, classes):
        ds = random_ds(classes=classes)
        coarse = np.arange(len(ds), dtype=np.uint8) % 20 if variant == "c100" else None
        path = tmp_path / "batch.bin"
        data.write_cifar(path, ds, variant, coarse)
        raw = path.read_bytes()
        back = data.load_cifar(path, variant)
        np.testing.assert_array_equal(back.images, ds.images)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.classes == classes
        assert data.cifar_bytes(back, variant, coarse) == raw

    def test_c100_labels_in_range(self, tmp_path):
        ds = random_ds(n=50, classes=100, seed=3)
        path = tmp_path / "train.bin"
        data.write_cifar(path, ds, "c100", np.full(50, 19, np.uint8))
        labels = data.load_cifar(path, "c100").labels
        assert labels.min() >= 0 and labels.max() < 100

    def test_c100_corrupt_fine_label(self, tmp_path):
        raw = bytearray(data.cifar_bytes(random_ds(n=2, classes=100), "c100"))
        raw[1] = 150
        path = tmp_path / "train.bin"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError):
            data.load_cifar(path, "c100")

    def test_truncated(self, tmp_path):
        path = tmp_path / "batch.bin"
        path.write_bytes(data.cifar_bytes(random_ds(n=3))[:-10])
        with pytest.raises(DataFormatError, match="3073"):
            data.load_cifar(path, "c10")

    def test_directory_layout(self, tmp_path):
        root = tmp_path / data.CIFAR_SUBDIRS["c10"]
        root.mkdir()
        parts = [random_ds(n=2, seed=i) for i in range(5)]
        for name, part in zip(data.CIFAR_FILES["c10"]["train"], parts):
            data.write_cifar(root / name, part)
        ds = data.load_cifar(tmp_path, "c10", "train")
        assert len(ds) == 10
        np.testing.assert_array_equal(ds.images[8:], parts[4].images)
        with pytest.raises(DataFormatError, match="missing"):
            data.load_cifar(tmp_path, "c10", "test")

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            data.parse_cifar(b"", "c20")


class TestIdx:
    def test_round_trip(self, tmp_path):
        ds = random_ds(n=5, shape=(1, 28, 28))
        data.write_idx(tmp_path / "img", tmp_path / "lab", ds)
        back = data.load_idx(tmp_path / "img", tmp_path / "lab", classes=10)
        np.testing.assert_array_equal(back.images, ds.images)
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_bad_magic(self, tmp_path):
        ds = random_ds(n=5, shape=(1, 28, 28))
        data.write_idx(tmp_path / "img", tmp_path / "lab", ds)
        with pytest.raises(DataFormatError):
            data.load_idx(tmp_path / "lab", tmp_path / "img")

    def test_count_mismatch(self, tmp_path):
        data.write_idx(tmp_path / "img", tmp_path / "lab", random_ds(n=5, shape=(1, 8, 8)))
        data.write_idx(tmp_path / "img2", tmp_path / "lab2", random_ds(n=4, shape=(1, 8, 8)))
        with pytest.raises(DataFormatError):
            data.load_idx(tmp_path / "img", tmp_path / "lab2")

    def test_truncated(self, tmp_path):
        data.write_idx(tmp_path / "img", tmp_path / "lab", random_ds(n=5, shape=(1, 8, 8)))
        raw = (tmp_path / "img").read_bytes()
        (tmp_path / "img").write_bytes(raw[:-3])
        with pytest.raises(DataFormatError):
            data.load_idx(tmp_path / "img", tmp_path / "lab")


class TestDataset:
    def test_validation(self):
        with pytest.raises(DataFormatError):
            data.Dataset(np.zeros((2, 1, 4, 4), np.float32), np.zeros(2, np.int64), 2)
        with pytest.raises(DataFormatError):
            data.Dataset(np.zeros((2, 1, 4, 4), np.uint8), np.array([0, 2]), 2)
        with pytest.raises(DataFormatError):
            data.Dataset(np.zeros((0, 1, 4, 4), np.uint8), np.zeros(0, np.int64), 2)

    def test_read_only(self):
        ds = random_ds()
        with pytest.raises(ValueError):
            ds.images[0, 0, 0, 0] = 1

    def test_resize_nearest(self):
        ds = random_ds(n=2, shape=(3, 4, 4))
        big = ds.resized(8).images
        np.testing.assert_array_equal(big[:, :, ::2, ::2], ds.images)
        np.testing.assert_array_equal(big[:, :, 1::2, 1::2], ds.images)
        assert ds.resized(4) is ds


class TestSynthetic:
    def test_deterministic(self):
        a, b = data.synthetic(4, 8, 64, seed=5), data.synthetic(4, 8, 64, seed=5)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert not np.array_equal(a.images, data.synthetic(4, 8, 64, seed=6).images)

    def test_balanced(self):
        ds = data.synthetic(4, 8, 16)
        np.testing.assert_array_equal(np.bincount(ds.labels), [8, 8, 8, 8])

    def test_splits_differ(self):
        tr, te = data.synthetic_splits(3, 4, 2, 16)
        assert (len(tr), len(te), te.split) == (12, 6, "test")

    def test_class_means_separable(self):
        ds = data.synthetic(10, 20, 32, noise=0.1)
        means = np.stack([ds.images[ds.labels == k].mean(axis=0) for k in range(10)]).reshape(10, -1)
        hits = 0
        for img, lab in zip(ds.images.reshape(len(ds), -1).astype(float), ds.labels):
            hits += int(np.argmin(((means - img) ** 2).sum(axis=1)) == lab)
        assert hits / len(ds) > 0.9


class TestAugment:
    def test_hflip_zero_identity(self, rng):
        img = rng.integers(0, 256, (3, 16, 16), dtype=np.uint8)
        cfg = data.AugmentConfig(hflip=0.0, rotation=0.0, shear=0.0, crop_padding=0)
        np.testing.assert_array_equal(data.augment(cfg, img, rng), img)

    def test_hflip_one_flips(self, rng):
        img = rng.integers(0, 256, (3, 16, 16), dtype=np.uint8)
        cfg = data.AugmentConfig(hflip=1.0, rotation=0.0, shear=0.0, crop_padding=0)
        np.testing.assert_array_equal(data.augment(cfg, img, rng), img[:, :, ::-1])

    @pytest.mark.parametrize("interp", ["nearest", "bilinear"])
    def test_zero_rotation_bit_equal(self, rng, interp):
        img = rng.integers(0, 256, (3, 15, 16), dtype=np.uint8)
        np.testing.assert_array_equal(data.warp(img, data.affine_matrix(0.0, 0.0), interpolation=interp), img)

    def test_quarter_turn_nearest(self, rng):
        img = rng.integers(0, 256, (2, 9, 9), dtype=np.uint8)
        out = data.warp(img, data.affine_matrix(90.0, 0.0), interpolation="nearest")
        assert any(np.array_equal(out, np.rot90(img, k, axes=(1, 2))) for k in (1, 3))

    def test_zero_padding(self):
        img = np.full((1, 8, 8), 200, np.uint8)
        out = data.warp(img, data.affine_matrix(45.0, 0.0))
        assert out[0, 0, 0] == 0 and out[0, 4, 4] == 200

    def test_translate(self, rng):
        img = rng.integers(1, 256, (1, 6, 6), dtype=np.uint8)
        out = data.translate(img, 2, -1)
        np.testing.assert_array_equal(out[0, :4, 1:], img[0, 2:, :5])
        assert not out[0, 4:].any() and not out[0, :, 0].any()

    @settings(max_examples=20)
    @given(seed=st.integers(0, 2**31))
    def test_determinism_and_labels(self, seed):
        ds = data.synthetic(3, 4, 16, seed=1)
        cfg = data.AugmentConfig(seed=seed)
        it = lambda: list(data.BatchIterator(ds, 5, data.Normalization.fit(ds), cfg, seed=seed))
        a, b = it(), it()
        for (xa, ya), (xb, yb) in zip(a, b):
            np.testing.assert_array_equal(xa, xb)
            np.testing.assert_array_equal(ya, yb)
        plain = list(data.BatchIterator(ds, 5, data.Normalization.fit(ds), None, seed=seed))
        for (_, ya), (_, yp) in zip(a, plain):
            np.testing.assert_array_equal(ya, yp)

    def test_config_validation(self):
        for kwargs in (dict(hflip=1.5), dict(rotation=-1.0), dict(crop_padding=-1), dict(interpolation="cubic")):
            with pytest.raises(ConfigError):
                data.AugmentConfig(**kwargs)


class TestNormalizeBatches:
    def test_stats(self):
        ds = data.synthetic(5, 20, 32)
        x = data.Normalization.fit(ds).apply(ds.images, np.float64)
        assert np.abs(x.mean(axis=(0, 2, 3))).max() < 0.05
        assert np.abs(x.std(axis=(0, 2, 3)) - 1).max() < 0.05

    def test_normalize_default_stats(self, rng):
        x = data.normalize(rng.integers(0, 256, (4, 2, 5, 5), dtype=np.uint8), dtype=np.float64)
        np.testing.assert_allclose(x.mean(axis=(0, 2, 3)), 0, atol=1e-12)

    def test_batch_iterator_covers_epoch(self):
        ds = data.synthetic(3, 5, 8)
        it = data.BatchIterator(ds, 4, data.Normalization.fit(ds), seed=2)
        batches = list(it)
        assert len(batches) == len(it) == 4
        assert sorted(np.concatenate([y for _, y in batches]).tolist()) == sorted(ds.labels.tolist())
        it.epoch = 1
        assert not np.array_equal(np.concatenate([y for _, y in it]), np.concatenate([y for _, y in batches]))
