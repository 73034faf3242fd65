import gzip
import struct

import numpy as np
import pandas as pd
import pytest
from sklearn.linear_model import LogisticRegression

from src.components.data_ingestion import (
    DataIngestion,
    DataIngestionConfig,
    iterate_batches,
    load_csv,
    load_idx,
    split_dataset,
    synth_blobs,
    synth_two_rings,
)
from src.exception import CustomException, DataFormatError


def write_idx_pair(directory, images, labels, image_magic=0x00000803, label_count=None, compress=False):
    count, rows, cols = images.shape
    image_bytes = struct.pack(">IIII", image_magic, count, rows, cols) + images.astype(np.uint8).tobytes()
    label_count = count if label_count is None else label_count
    label_bytes = struct.pack(">II", 0x00000801, label_count) + labels.astype(np.uint8).tobytes()
    suffix = ".gz" if compress else ""
    images_path = directory / f"images.idx{suffix}"
    labels_path = directory / f"labels.idx{suffix}"
    opener = gzip.open if compress else open
    with opener(images_path, "wb") as f:
        f.write(image_bytes)
    with opener(labels_path, "wb") as f:
        f.write(label_bytes)
    return images_path, labels_path


def four_images():
    images = np.arange(4 * 3 * 3, dtype=np.uint8).reshape(4, 3, 3) * 7
    return images, np.array([3, 1, 4, 1], dtype=np.uint8)


@pytest.mark.parametrize("compress", [False, True])
def test_load_idx_fixture(tmp_path, compress):
    images, labels = four_images()
    images_path, labels_path = write_idx_pair(tmp_path, images, labels, compress=compress)
    dataset = load_idx(images_path, labels_path)
    assert len(dataset) == 4
    assert dataset.sample_shape == (1, 3, 3)
    assert dataset.num_classes == 10
    np.testing.assert_array_equal(dataset.labels, [3, 1, 4, 1])
    np.testing.assert_allclose(dataset.features[2, 0], images[2] / 255.0, rtol=1e-6)


def test_load_idx_limit(tmp_path):
    images, labels = four_images()
    dataset = load_idx(*write_idx_pair(tmp_path, images, labels), limit=2)
    assert len(dataset) == 2


def test_load_idx_bad_magic(tmp_path):
    images, labels = four_images()
    paths = write_idx_pair(tmp_path, images, labels, image_magic=0x00000801)
    with pytest.raises(DataFormatError, match="magic"):
        load_idx(*paths)


def test_load_idx_count_mismatch(tmp_path):
    images, labels = four_images()
    paths = write_idx_pair(tmp_path, images, labels[:3], label_count=3)
    with pytest.raises(DataFormatError, match="count mismatch"):
        load_idx(*paths)


def test_load_idx_truncated_payload(tmp_path):
    images, labels = four_images()
    images_path, labels_path = write_idx_pair(tmp_path, images, labels)
    raw = images_path.read_bytes()
    images_path.write_bytes(raw[:-5])
    with pytest.raises(DataFormatError, match="Truncated"):
        load_idx(images_path, labels_path)


def test_blobs_are_deterministic():
    first, second = synth_blobs(50, 4, seed=7), synth_blobs(50, 4, seed=7)
    np.testing.assert_array_equal(first.features, second.features)
    np.testing.assert_array_equal(first.labels, second.labels)
    assert not np.array_equal(first.features, synth_blobs(50, 4, seed=8).features)


def test_one_sample_per_class():
    dataset = synth_blobs(3, 3, seed=0)
    assert sorted(dataset.labels.tolist()) == [0, 1, 2]
    with pytest.raises(ValueError):
        synth_blobs(2, 3, seed=0)


def test_separated_blobs_are_linearly_separable():
    dataset = synth_blobs(300, 3, seed=0, separation=10.0, noise=0.5)
    model = LogisticRegression(max_iter=1000).fit(dataset.features, dataset.labels)
    assert model.score(dataset.features, dataset.labels) == 1.0


def test_two_rings():
    dataset = synth_two_rings(200, seed=1)
    assert dataset.num_classes == 2
    radii = np.linalg.norm(dataset.features, axis=1)
    assert radii[dataset.labels == 1].mean() < radii[dataset.labels == 0].mean()


def test_load_csv_encodes_labels_and_standardizes(tmp_path):
    path = tmp_path / "data.csv"
    pd.DataFrame(
        {"a": [1.0, 2.0, 3.0, 4.0], "b": [10, 20, 10, 20], "label": ["yes", "no", "yes", "no"]}
    ).to_csv(path, index=False)
    dataset = load_csv(path, "label")
    np.testing.assert_array_equal(dataset.labels, [1, 0, 1, 0])
    assert dataset.metadata["classes"] == ["no", "yes"]
    np.testing.assert_allclose(dataset.features.mean(axis=0), 0.0, atol=1e-6)


def test_load_csv_errors(tmp_path):
    path = tmp_path / "data.csv"
    pd.DataFrame({"a": ["x", "y"], "label": [0, 1]}).to_csv(path, index=False)
    with pytest.raises(DataFormatError, match="Non-numeric"):
        load_csv(path, "label")
    with pytest.raises(DataFormatError, match="Label column"):
        load_csv(path, "target")
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "missing.csv", "label")


def test_split_is_stratified_and_seeded():
    dataset = synth_blobs(100, 4, seed=0)
    train, test = split_dataset(dataset, 0.2, seed=3)
    assert len(train) == 80 and len(test) == 20
    assert np.bincount(test.labels).tolist() == [5, 5, 5, 5]
    again, _ = split_dataset(dataset, 0.2, seed=3)
    np.testing.assert_array_equal(train.features, again.features)


def test_iterate_batches_covers_dataset_once():
    dataset = synth_blobs(23, 2, seed=0)
    batches = list(iterate_batches(dataset, 5, rng=np.random.default_rng(0)))
    assert [len(labels) for _, labels in batches] == [5, 5, 5, 5, 3]
    seen = np.concatenate([features for features, _ in batches])
    assert sorted(map(tuple, seen)) == sorted(map(tuple, dataset.features))


def test_ingestion_component_unknown_kind_is_wrapped():
    with pytest.raises(CustomException, match="Unknown dataset kind"):
        DataIngestion(DataIngestionConfig(kind="parquet")).initiate_data_ingestion(0)


def test_ingestion_component_splits():
    train, test = DataIngestion(DataIngestionConfig(n_samples=50, classes=2)).initiate_data_ingestion(1)
    assert len(train) + len(test) == 50
    assert train.metadata["split"] == "train"
