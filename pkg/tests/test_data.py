import struct
from collections import Counter

import numpy as np
import pytest

from minnet.data import (IdxFormatError, LabeledDataset, BatchCursor, encode_idx_images,
                         encode_idx_labels, load_mnist, make_parity_dataset, make_xor_dataset,
                         next_batch, normalize_images, one_hot, parse_idx_images,
                         parse_idx_labels, shuffle, split_data, split_matlab, split_tf,
                         split_torch, write_idx_fixture)
from minnet.tensor import make_rng

# per-class counts of the standard MNIST label files, computed once from the files
TRAIN_CLASS_COUNTS = [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949]
TEST_CLASS_COUNTS = [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009]


def _tagged(n, classes=10):
    """Samples whose single feature equals their index, labels derived from it."""
    return LabeledDataset(np.arange(n, dtype=float)[:, None], np.arange(n) % classes, classes)


def _pairs(ds):
    return Counter(zip(ds.data[:, 0].tolist(), ds.label.tolist()))


class TestIdx:
    def test_single_zero_image(self):
        raw = struct.pack(">4i", 2051, 1, 28, 28) + bytes(784)
        img = parse_idx_images(raw)
        assert img.shape == (1, 28, 28) and not img.any()

    def test_labels_fixture(self):
        np.testing.assert_array_equal(parse_idx_labels(encode_idx_labels([5, 0, 4])), [5, 0, 4])

    def test_label_out_of_range(self):
        with pytest.raises(IdxFormatError, match="255"):
            parse_idx_labels(struct.pack(">2i", 2049, 1) + bytes([255]))

    def test_bad_magic(self):
        with pytest.raises(IdxFormatError, match="magic"):
            parse_idx_images(struct.pack(">4i", 2049, 1, 2, 2) + bytes(4))

    def test_truncated_payload_reports_sizes(self):
        with pytest.raises(IdxFormatError, match="expected 8 .* got 7"):
            parse_idx_images(struct.pack(">4i", 2051, 2, 2, 2) + bytes(7))

    def test_truncated_header(self):
        with pytest.raises(IdxFormatError):
            parse_idx_labels(b"\x00\x00")

    def test_row_major_pixels(self):
        pixels = np.arange(6, dtype=np.uint8).reshape(1, 2, 3)
        np.testing.assert_array_equal(parse_idx_images(encode_idx_images(pixels))[0], pixels[0])

    def test_round_trip_bytes(self):
        rng = make_rng(0)
        pixels = rng.integers(0, 256, (3, 4, 5)).astype(np.uint8)
        raw = encode_idx_images(pixels)
        assert encode_idx_images(parse_idx_images(raw)) == raw
        raw_l = encode_idx_labels([1, 9, 3])
        assert encode_idx_labels(parse_idx_labels(raw_l)) == raw_l

    def test_fixture_loader(self, tmp_path):
        rng = make_rng(1)
        write_idx_fixture(tmp_path, rng.integers(0, 256, (6, 28, 28)), [0, 1, 2, 3, 4, 5])
        write_idx_fixture(tmp_path, rng.integers(0, 256, (2, 28, 28)), [7, 8], prefix="test")
        train, test = load_mnist(tmp_path)
        assert train.data.shape == (6, 784) and test.data.shape == (2, 784)
        assert train.data.max() <= 1.0
        train4, _ = load_mnist(tmp_path, flatten=False)
        assert train4.data.shape == (6, 1, 28, 28)

    def test_missing_files_named(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="t10k-labels-idx1-ubyte"):
            load_mnist(tmp_path)


class TestRealMnist:
    def test_sizes_and_class_counts(self, mnist):
        train, test = mnist
        assert train.data.shape == (60000, 784) and test.data.shape == (10000, 784)
        assert np.bincount(train.label).tolist() == TRAIN_CLASS_COUNTS
        assert np.bincount(test.label).tolist() == TEST_CLASS_COUNTS
        assert 0.0 <= train.data.min() and train.data.max() == 1.0


class TestEncoding:
    def test_normalize_extremes(self):
        out = normalize_images(np.array([[[0, 255]]]))
        np.testing.assert_array_equal(out, [[[0.0, 1.0]]])

    def test_flatten_round_trip(self):
        x = make_rng(0).integers(0, 256, (3, 28, 28))
        flat = normalize_images(x, flatten=True)
        assert flat.shape == (3, 784)
        np.testing.assert_array_equal(flat.reshape(3, 28, 28).reshape(3, 784), flat)

    def test_one_hot(self):
        np.testing.assert_array_equal(one_hot([3], 10)[0], np.eye(10)[3])
        labels = make_rng(1).integers(0, 10, 50)
        oh = one_hot(labels, 10)
        np.testing.assert_array_equal(oh.sum(axis=1), 1.0)
        np.testing.assert_array_equal(oh.argmax(axis=1), labels)

    def test_one_hot_range(self):
        with pytest.raises(ValueError):
            one_hot([10], 10)

    def test_dataset_invariants(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((3, 2)), np.zeros(2, dtype=int), 10)
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((1, 2)), np.array([10]), 10)


class TestShuffleAndSplit:
    def test_shuffle_preserves_pairs(self):
        ds = _tagged(100)
        out = shuffle(ds, make_rng(0))
        assert _pairs(out) == _pairs(ds)
        np.testing.assert_array_equal(out.data[:, 0].astype(int) % 10, out.label)
        assert not np.array_equal(out.data, ds.data)

    def test_shuffle_seeded(self):
        ds = _tagged(50)
        a, b = shuffle(ds, make_rng(3)), shuffle(ds, make_rng(3))
        np.testing.assert_array_equal(a.data, b.data)

    def test_split_sizes(self):
        front, back = split_data(_tagged(60000), 0.75)
        assert (len(front), len(back)) == (45000, 15000)

    @pytest.mark.parametrize("p", [0.0, -1.0, 1.5])
    def test_split_fallback(self, p):
        front, _ = split_data(_tagged(100), p)
        assert len(front) == 90

    def test_split_in_order(self):
        ds = _tagged(37)
        front, back = split_data(ds, 0.4)
        np.testing.assert_array_equal(np.concatenate([front.data, back.data]), ds.data)

    def test_torch_split_shuffles(self):
        train, val = split_torch(_tagged(400), make_rng(0))
        assert (len(train), len(val)) == (300, 100)
        assert _pairs(train) + _pairs(val) == _pairs(_tagged(400))

    def test_matlab_split(self):
        train = _tagged(60000)
        test = LabeledDataset(np.arange(60000, 70000, dtype=float)[:, None], np.zeros(10000, int), 10)
        tr, va, te = split_matlab(train, test)
        assert (len(tr), len(va), len(te)) == (45000, 15000, 10000)
        assert tr.data[-1, 0] == 44999 and va.data[0, 0] == 45000 and te.data[0, 0] == 60000

    def test_tf_split(self):
        tr, va = split_tf(_tagged(60000))
        assert (len(tr), len(va)) == (55000, 5000) and va.data[0, 0] == 0


class TestSynthetic:
    def test_xor_zero_one(self):
        ds = make_xor_dataset("zero-one")
        np.testing.assert_array_equal(ds.label[:, 0], [0, 1, 1, 0])

    def test_xor_shifted(self):
        ds = make_xor_dataset("shifted")
        assert set(np.unique(ds.data)) == {-0.5, 0.5} and set(np.unique(ds.label)) == {-0.5, 0.5}

    @pytest.mark.parametrize("encoding", ["zero-one", "shifted"])
    def test_xor_truth(self, encoding):
        ds = make_xor_dataset(encoding)
        shift = 0.5 if encoding == "shifted" else 0.0
        x, y = ds.data + shift, ds.label[:, 0] + shift
        np.testing.assert_array_equal(y, (x[:, 0] != x[:, 1]).astype(float))

    def test_parity_two_is_xor(self):
        ds = make_parity_dataset(2)
        np.testing.assert_array_equal(ds.label, [0, 1, 1, 0])

    def test_parity_ten_balanced(self):
        ds = make_parity_dataset(10)
        assert len(ds) == 1024 and np.bincount(ds.label).tolist() == [512, 512]
        np.testing.assert_array_equal(ds.label, ds.data.sum(axis=1).astype(int) % 2)

    def test_parity_three_ones(self):
        ds = make_parity_dataset(3)
        assert ds.label[-1] == 1

    def test_parity_random(self):
        ds = make_parity_dataset(5, "random", m=40, rng=make_rng(0))
        assert ds.data.shape == (40, 5)
        np.testing.assert_array_equal(ds.label, ds.data.sum(axis=1).astype(int) % 2)


class TestBatching:
    def test_batches_per_epoch(self):
        ds = _tagged(60000)
        cursor = BatchCursor(ds, make_rng(0))
        count = 0
        while cursor.epochs_completed == 0:
            cursor.next_batch(50)
            count += 1
        assert count == 1200

    def test_exact_coverage(self):
        ds = _tagged(100)
        cursor = BatchCursor(ds, make_rng(1))
        seen = Counter()
        for _ in range(10):
            seen += _pairs(cursor.next_batch(10))
        assert seen == _pairs(ds)

    def test_coverage_with_ragged_batches(self):
        ds = _tagged(100)
        cursor = BatchCursor(ds, make_rng(2))
        seen = Counter()
        for _ in range(10):
            seen += _pairs(cursor.next_batch(30))
        assert all(v == 3 for v in seen.values()) and len(seen) == 100

    def test_full_size_batch(self):
        ds = _tagged(20)
        batch, cursor = next_batch(ds, 20, BatchCursor(ds, make_rng(3)))
        assert _pairs(batch) == _pairs(ds) and cursor.epochs_completed == 1

    def test_foreign_cursor(self):
        with pytest.raises(ValueError):
            next_batch(_tagged(5), 2, BatchCursor(_tagged(5), make_rng(0)))
