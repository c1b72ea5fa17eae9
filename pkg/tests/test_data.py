"""IDX ingestion, dequantization, and binarization."""

import struct

import numpy as np
import pytest

from aisbench.data import (Dataset, IdxFormatError, binarize, dequantize,
                           load_mnist_idx, select_examples)

PIXELS = np.array([
    [0, 255, 17, 4], [128, 3, 220, 255], [1, 2, 3, 4], [250, 0, 0, 9],
], dtype=np.uint8)
LABELS = np.array([7, 2, 2, 5], dtype=np.uint8)


@pytest.fixture
def idx_files(tmp_path):
    images = tmp_path / "images-idx3-ubyte"
    labels = tmp_path / "labels-idx1-ubyte"
    images.write_bytes(struct.pack(">iiii", 0x803, 4, 2, 2) + PIXELS.tobytes())
    labels.write_bytes(struct.pack(">ii", 0x801, 4) + LABELS.tobytes())
    return images, labels


class TestIdxLoader:
    def test_fixture_round_trip(self, idx_files):
        ds = load_mnist_idx(*idx_files)
        assert ds.x.shape == (4, 4)
        assert np.array_equal(ds.x, PIXELS.astype(float) / 255.0)
        assert np.array_equal(ds.labels, LABELS)

    def test_wrong_magic_names_both_values(self, idx_files, tmp_path):
        bad = tmp_path / "bad"
        bad.write_bytes(struct.pack(">iiii", 0x807, 4, 2, 2) + PIXELS.tobytes())
        with pytest.raises(IdxFormatError, match="0x00000807.*0x00000803"):
            load_mnist_idx(bad)

    def test_truncated_file_reports_offset(self, idx_files, tmp_path):
        bad = tmp_path / "short"
        bad.write_bytes(struct.pack(">iiii", 0x803, 4, 2, 2) + PIXELS.tobytes()[:7])
        with pytest.raises(IdxFormatError, match="truncated.*byte 16"):
            load_mnist_idx(bad)

    def test_label_count_mismatch(self, idx_files, tmp_path):
        images, _ = idx_files
        bad = tmp_path / "labels2"
        bad.write_bytes(struct.pack(">ii", 0x801, 3) + LABELS.tobytes()[:3])
        with pytest.raises(IdxFormatError, match="3 labels for 4 images"):
            load_mnist_idx(images, bad)

    def test_label_filter(self, idx_files):
        ds = load_mnist_idx(*idx_files)
        only_twos = ds.filter_label(2)
        assert len(only_twos) == 2
        assert np.all(only_twos.labels == 2)
        assert np.array_equal(only_twos.x, ds.x[[1, 2]])


class TestDequantize:
    def test_bounds_per_pixel_value(self, idx_files):
        ds = load_mnist_idx(idx_files[0])
        out = dequantize(ds, seed=1)
        lo = PIXELS.astype(float) / 256.0
        hi = (PIXELS.astype(float) + 1.0) / 256.0
        assert np.all(out.x >= lo) and np.all(out.x < hi)
        # pixel 0 lands in [0, 1/256); pixel 255 in [255/256, 1)
        assert 0.0 <= out.x[0, 0] < 1 / 256
        assert 255 / 256 <= out.x[1, 3] < 1.0

    def test_seeded_determinism(self, idx_files):
        ds = load_mnist_idx(idx_files[0])
        a = dequantize(ds, seed=5)
        b = dequantize(ds, seed=5)
        c = dequantize(ds, seed=6)
        assert np.array_equal(a.x, b.x)
        assert not np.array_equal(a.x, c.x)

    def test_requires_integer_grid(self):
        ds = Dataset(np.array([[0.3, 0.6]]))
        with pytest.raises(ValueError, match="integer"):
            dequantize(ds, seed=0)


class TestBinarize:
    def test_threshold(self):
        ds = Dataset(np.array([[0.6, 0.4, 0.5, 0.0, 1.0]]))
        out = binarize(ds, "threshold")
        assert np.array_equal(out.x, [[1.0, 0.0, 1.0, 0.0, 1.0]])
        assert out.binary

    def test_stochastic_frequency(self):
        p = 0.37
        ds = Dataset(np.full((10_000, 1), p))
        out = binarize(ds, "stochastic", seed=3)
        assert abs(out.x.mean() - p) < 0.02

    def test_all_zero_image_unchanged(self):
        ds = Dataset(np.zeros((2, 6)))
        for mode in ("stochastic", "threshold"):
            out = binarize(ds, mode, seed=1)
            assert np.array_equal(out.x, ds.x)

    def test_file_mode(self, tmp_path):
        good = tmp_path / "bin.npy"
        np.save(good, np.array([[0.0, 1.0], [1.0, 1.0]]))
        out = binarize(mode="file", source=good)
        assert out.binary and len(out) == 2
        bad = tmp_path / "soft.npy"
        np.save(bad, np.array([[0.0, 0.5]]))
        with pytest.raises(ValueError, match="non-binary"):
            binarize(mode="file", source=bad)

    def test_pipeline_stays_in_unit_interval(self, idx_files):
        ds = load_mnist_idx(idx_files[0])
        step1 = dequantize(ds, seed=2)
        step2 = binarize(step1, "threshold")
        step3 = dequantize(step2, seed=3)
        for out in (step1, step2, step3):
            assert np.min(out.x) >= 0.0 and np.max(out.x) < 1.0 or out.binary


class TestSelection:
    def test_seeded_shuffle_reproducible(self):
        ds = Dataset(np.random.default_rng(0).random((50, 3)))
        ids1, xs1 = select_examples(ds, 10, seed=9)
        ids2, xs2 = select_examples(ds, 10, seed=9)
        assert np.array_equal(ids1, ids2)
        assert np.array_equal(xs1, xs2)
        assert len(set(ids1.tolist())) == 10

    def test_requesting_too_many(self):
        ds = Dataset(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            select_examples(ds, 4, seed=0)
