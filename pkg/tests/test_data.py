import gzip
import struct

import numpy as np
import pytest

from popdescent.errors import DomainError, IdxFormatError, TestSetAccessError
from popdescent.harness.data import (
    DATA_DIR_ENV,
    FMNIST_FILES,
    Dataset,
    find_fmnist,
    load_idx,
    make_synthetic,
    resolve_data_dir,
    split,
    split_fmnist,
    write_idx,
)
from popdescent.individual import Batch
from popdescent.localsearch import MlpModel, MlpSpec
from popdescent.streams import BatchStream, substream


def _fixture(tmp_path):
    images = np.array([[[0, 255], [128, 1]], [[7, 8], [9, 250]]], dtype=np.uint8)
    labels = np.array([3, 9], dtype=np.uint8)
    ip, lp = tmp_path / "img", tmp_path / "lbl"
    write_idx(images, labels, ip, lp)
    return images, labels, ip, lp


class TestIdx:
    def test_round_trip(self, tmp_path):
        images, labels, ip, lp = _fixture(tmp_path)
        ds = load_idx(ip, lp)
        assert ds.inputs.shape == (2, 4)
        assert ds.sample_shape == (2, 2)
        np.testing.assert_array_equal(ds.inputs * 255, images.reshape(2, 4))
        assert ds.inputs[0, 1] == 1.0 and ds.inputs[0, 0] == 0.0
        assert ds.targets.tolist() == [3, 9]

    def test_bytes_are_big_endian(self, tmp_path):
        _, _, ip, lp = _fixture(tmp_path)
        raw = ip.read_bytes()
        assert raw[:4] == b"\x00\x00\x08\x03"
        assert struct.unpack(">III", raw[4:16]) == (2, 2, 2)
        assert lp.read_bytes()[:8] == b"\x00\x00\x08\x01\x00\x00\x00\x02"

    def test_gzip(self, tmp_path):
        images, labels, ip, lp = _fixture(tmp_path)
        gz_i, gz_l = tmp_path / "img.gz", tmp_path / "lbl.gz"
        gz_i.write_bytes(gzip.compress(ip.read_bytes()))
        gz_l.write_bytes(gzip.compress(lp.read_bytes()))
        assert load_idx(gz_i, gz_l).inputs.tobytes() == load_idx(ip, lp).inputs.tobytes()

    def test_bad_magic(self, tmp_path):
        _, _, ip, lp = _fixture(tmp_path)
        with pytest.raises(IdxFormatError) as info:
            load_idx(lp, lp)
        assert info.value.offset == 0

    def test_truncated(self, tmp_path):
        _, _, ip, lp = _fixture(tmp_path)
        ip.write_bytes(ip.read_bytes()[:-3])
        with pytest.raises(IdxFormatError) as info:
            load_idx(ip, lp)
        assert "truncated" in str(info.value)

    def test_trailing_bytes(self, tmp_path):
        _, _, ip, lp = _fixture(tmp_path)
        ip.write_bytes(ip.read_bytes() + b"\x00")
        with pytest.raises(IdxFormatError) as info:
            load_idx(ip, lp)
        assert info.value.offset == 16 + 8

    def test_count_mismatch(self, tmp_path):
        images, _, ip, lp = _fixture(tmp_path)
        write_idx(images, np.array([1, 2, 3], dtype=np.uint8), ip, lp)
        with pytest.raises(IdxFormatError) as info:
            load_idx(ip, lp)
        assert info.value.offset == 4

    def test_find_files(self, tmp_path, monkeypatch):
        assert find_fmnist(tmp_path) is None
        images, labels, _, _ = _fixture(tmp_path)
        for names in FMNIST_FILES.values():
            write_idx(images, labels, tmp_path / names[0], tmp_path / names[1])
        found = find_fmnist(tmp_path)
        assert set(found) == {"train", "test"}
        monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path))
        assert resolve_data_dir(None) == str(tmp_path)
        assert resolve_data_dir("/elsewhere") == "/elsewhere"


class TestSynthetic:
    def test_seeded(self):
        a = make_synthetic("two_moons", 100, 0.2, substream(0, "d"))
        b = make_synthetic("two_moons", 100, 0.2, substream(0, "d"))
        assert a.inputs.tobytes() == b.inputs.tobytes()
        assert a.targets.tobytes() == b.targets.tobytes()

    @pytest.mark.parametrize("kind", ["two_moons", "blobs"])
    @pytest.mark.parametrize("n", [4, 5, 101])
    def test_balance(self, kind, n):
        ds = make_synthetic(kind, n, 0.1, substream(n))
        counts = np.bincount(ds.targets, minlength=2)
        assert abs(counts[0] - counts[1]) <= 1
        assert ds.inputs.shape == (n, 2)

    def test_four_gives_two_per_class(self):
        ds = make_synthetic("blobs", 4, 0.0, substream(0))
        assert np.bincount(ds.targets).tolist() == [2, 2]

    def test_errors(self):
        with pytest.raises(DomainError):
            make_synthetic("two_moons", 3, 0.1, substream(0))
        with pytest.raises(DomainError):
            make_synthetic("spirals", 10, 0.1, substream(0))

    def test_blobs_separable_mlp_fits(self):
        from popdescent.core import PopDescentConfig, init_population, run

        ds = make_synthetic("blobs", 100, 0.0, substream(0, "blobs"))
        assert ds.inputs[ds.targets == 0, 0].max() < ds.inputs[ds.targets == 1, 0].min()
        model = MlpModel(MlpSpec((2, 8, 2)))
        stream = BatchStream(ds.inputs, ds.targets, 20)
        pop = init_population(model, 3, 1, seed=0, alpha={"learning_rate": 0.05})
        res = run(pop, model, stream, stream, PopDescentConfig(m=1, iterations=5, batches_per_iteration=20), seed=0)
        assert model.accuracy(res.best.theta, Batch(ds.inputs, ds.targets)) == 1.0


class TestSplit:
    def _ds(self, n=100):
        x = np.arange(n, dtype=np.float64).reshape(n, 1)
        return Dataset(x, np.zeros(n, dtype=np.int64), 2)

    def test_sizes_and_disjoint(self):
        s = split(self._ds(), (0.8, 0.1, 0.1), substream(0))
        assert len(s.train) == 80 and len(s.cv) == 10 and len(s.test) == 10
        ids = set(s.train.inputs[:, 0]) | set(s.cv.inputs[:, 0])
        test_ids = s.test.evaluate("peek", lambda b: set(b.inputs[:, 0]))
        assert len(ids) == 90 and not ids & test_ids

    def test_seeded(self):
        a = split(self._ds(), (0.8, 0.1, 0.1), substream(5))
        b = split(self._ds(), (0.8, 0.1, 0.1), substream(5))
        assert a.train.inputs.tobytes() == b.train.inputs.tobytes()

    def test_train_cap(self):
        s = split(self._ds(20_000), (0.8, 0.1, 0.1), substream(0), train_cap=10_000)
        assert len(s.train) == 10_000

    def test_bad_fractions(self):
        with pytest.raises(DomainError):
            split(self._ds(), (0.8, 0.2, 0.1), substream(0))
        with pytest.raises(DomainError):
            split(self._ds(), (0.8, 0.0, 0.1), substream(0))

    def test_fmnist_split(self):
        train = Dataset(np.arange(50.0).reshape(50, 1), np.zeros(50, dtype=np.int64), 10)
        test = Dataset(np.zeros((5, 1)), np.zeros(5, dtype=np.int64), 10)
        s = split_fmnist(train, test, substream(0), 30, 10)
        assert len(s.train) == 30 and len(s.cv) == 10 and len(s.test) == 5
        assert not set(s.train.inputs[:, 0]) & set(s.cv.inputs[:, 0])
        with pytest.raises(DomainError):
            split_fmnist(train, test, substream(0), 45, 10)


class TestGuard:
    def test_single_access(self):
        s = split(TestSplit()._ds(), (0.8, 0.1, 0.1), substream(0))
        assert s.test.evaluate(("pd", 0), lambda b: b.size) == 10
        with pytest.raises(TestSetAccessError):
            s.test.evaluate(("pd", 0), lambda b: b.size)

    def test_verify(self):
        s = split(TestSplit()._ds(), (0.8, 0.1, 0.1), substream(0))
        s.test.evaluate("a", lambda b: 0)
        s.test.verify(["a"])
        with pytest.raises(TestSetAccessError):
            s.test.verify(["a", "b"])
        s.test.evaluate("c", lambda b: 0)
        with pytest.raises(TestSetAccessError):
            s.test.verify(["a"])
