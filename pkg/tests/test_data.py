import numpy as np
import pytest
from PIL import Image

from mpoxmamba.data import (
    DatasetIndex,
    ImageStore,
    kfold_split,
    load_dataset,
    load_image,
    make_synthetic_dataset,
)
from mpoxmamba.errors import ConfigError, DataError


def write_dataset(root, spec, size=(20, 16)):
    """spec: {class_name: count}; writes small solid-color images."""
    rng = np.random.default_rng(0)
    for cls, count in spec.items():
        d = root / cls
        d.mkdir(parents=True)
        for i in range(count):
            arr = rng.integers(0, 255, size=(size[0], size[1], 3), dtype=np.uint8)
            Image.fromarray(arr).save(d / f"img_{i:03d}.png")


class TestLoadDataset:
    def test_two_class_layout(self, tmp_path):
        write_dataset(tmp_path, {"mpox": 5, "others": 7})
        index = load_dataset(tmp_path)
        assert len(index) == 12
        assert index.class_names == ["mpox", "others"]
        assert index.labels().tolist() == [0] * 5 + [1] * 7

    def test_four_class_layout(self, tmp_path):
        write_dataset(tmp_path, {"chickenpox": 3, "measles": 2, "mpox": 4, "normal": 5})
        index = load_dataset(tmp_path)
        assert index.num_classes == 4
        assert len(index) == 14

    def test_empty_root_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path / "missing")
        (tmp_path / "empty").mkdir()
        with pytest.raises(DataError):
            load_dataset(tmp_path / "empty")

    def test_empty_class_folder_rejected(self, tmp_path):
        write_dataset(tmp_path, {"a": 2})
        (tmp_path / "b").mkdir()
        with pytest.raises(DataError):
            load_dataset(tmp_path)

    def test_deterministic_ordering(self, tmp_path):
        write_dataset(tmp_path, {"b": 3, "a": 3})
        first = load_dataset(tmp_path)
        second = load_dataset(tmp_path)
        assert [e.path for e in first.entries] == [e.path for e in second.entries]
        assert first.class_names == ["a", "b"]


class TestLoadImage:
    def test_resize_and_range(self, tmp_path):
        write_dataset(tmp_path, {"a": 1}, size=(50, 37))
        index = load_dataset(tmp_path)
        arr = load_image(index.root / index.entries[0].path, (24, 24))
        assert arr.shape == (3, 24, 24)
        assert arr.dtype == np.float32
        assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_undecodable_file_names_the_file(self, tmp_path):
        bad = tmp_path / "broken.png"
        bad.write_bytes(b"this is not an image")
        with pytest.raises(DataError, match="broken.png"):
            load_image(bad, (8, 8))

    def test_store_batches(self, tmp_path):
        write_dataset(tmp_path, {"a": 2, "b": 2})
        store = ImageStore(load_dataset(tmp_path), (16, 16))
        batch = store.batch([0, 2, 3])
        assert batch.shape == (3, 3, 16, 16)


class TestKfoldSplit:
    def test_ten_samples_five_folds(self):
        labels = np.array([0, 1] * 5)
        split = kfold_split(labels, k=5, seed=0)
        assert sorted(len(f) for f in split.folds) == [2, 2, 2, 2, 2]

    def test_msld_sized_dataset_fold_sizes(self):
        labels = np.array([0] * 102 + [1] * 126)
        split = kfold_split(labels, k=5, seed=0)
        assert sorted((len(f) for f in split.folds), reverse=True) == [46, 46, 46, 45, 45]

    def test_folds_disjoint_exhaustive_stratified(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 3, size=140)
        labels[:15] = np.arange(15) % 3  # every class comfortably >= k
        split = kfold_split(labels, k=5, seed=3)
        all_ids = np.concatenate(split.folds)
        assert len(all_ids) == len(labels)
        assert len(np.unique(all_ids)) == len(labels)
        for cls in np.unique(labels):
            per_fold = [int((labels[f] == cls).sum()) for f in split.folds]
            assert max(per_fold) - min(per_fold) <= 1

    def test_same_seed_same_assignment(self):
        labels = np.array([0] * 40 + [1] * 25)
        a = kfold_split(labels, k=5, seed=9)
        b = kfold_split(labels, k=5, seed=9)
        for fa, fb in zip(a.folds, b.folds):
            np.testing.assert_array_equal(fa, fb)

    def test_class_smaller_than_k_rejected(self):
        labels = np.array([0] * 10 + [1] * 3)
        with pytest.raises(ConfigError):
            kfold_split(labels, k=5)

    def test_train_val_partition(self):
        labels = np.array([0, 1] * 20)
        split = kfold_split(labels, k=4, seed=2)
        train = split.train_indices(1)
        val = split.val_indices(1)
        assert set(train) & set(val) == set()
        assert len(train) + len(val) == 40


class TestSyntheticDataset:
    def test_shapes_and_balance(self):
        images, labels = make_synthetic_dataset(n=64, hw=(64, 64), seed=7)
        assert images.shape == (64, 3, 64, 64)
        assert images.dtype == np.float32
        assert labels.sum() == 32
        assert images.min() >= 0.0 and images.max() <= 1.0

    def test_classes_have_distinct_color_statistics(self):
        images, labels = make_synthetic_dataset(n=32, hw=(32, 32), seed=1)
        red0 = images[labels == 0][:, 0].mean()
        red1 = images[labels == 1][:, 0].mean()
        assert red0 - red1 > 0.3

    def test_fixed_seed_reproducible(self):
        a, _ = make_synthetic_dataset(n=8, hw=(16, 16), seed=5)
        b, _ = make_synthetic_dataset(n=8, hw=(16, 16), seed=5)
        np.testing.assert_array_equal(a, b)
