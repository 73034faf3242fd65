import gzip
import os
import struct
import sys
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.datasets import make_blobs, make_circles
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from src.exception import CustomException, DataFormatError
from src.logger import logging


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATA_KINDS = ("blobs", "rings", "idx", "csv")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    normalization: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise DataFormatError(
                f"{len(self.features)} samples but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataFormatError(
                f"Labels must lie in [0, {self.num_classes}), got [{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return tuple(self.features.shape[1:])

    def subset(self, indices, **metadata):
        return Dataset(
            features=self.features[indices],
            labels=self.labels[indices],
            num_classes=self.num_classes,
            normalization=dict(self.normalization),
            metadata={**self.metadata, **metadata},
        )

    def head(self, limit):
        if limit is None or limit >= len(self):
            return self
        return self.subset(np.arange(limit), limit=int(limit))


def _open_idx(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic, header_dims):
    # [magic][count][dims...] big-endian uint32, then unsigned bytes
    with _open_idx(path) as f:
        raw = f.read()
    header_size = 4 * (1 + header_dims)
    if len(raw) < header_size:
        raise DataFormatError(f"IDX file {path} is shorter than its header")
    magic, *dims = struct.unpack(">" + "I" * (1 + header_dims), raw[:header_size])
    if magic != expected_magic:
        raise DataFormatError(
            f"Bad IDX magic in {path}: expected 0x{expected_magic:08x}, got 0x{magic:08x}"
        )
    expected = int(np.prod(dims))
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header_size)
    if payload.size < expected:
        raise DataFormatError(
            f"Truncated IDX payload in {path}: expected {expected} bytes, got {payload.size}"
        )
    return dims, payload[:expected]


def load_idx(images_path, labels_path, limit=None):
    """Read an IDX image/label pair; pixels scaled to [0, 1] as [N, 1, H, W]."""
    (count, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (label_count,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if count != label_count:
        raise DataFormatError(f"IDX count mismatch: {count} images but {label_count} labels")

    images = pixels.reshape(count, 1, rows, cols).astype(np.float32) / 255.0
    labels = labels.astype(np.int64)
    num_classes = int(labels.max()) + 1 if count else 0
    dataset = Dataset(
        features=images,
        labels=labels,
        num_classes=max(num_classes, 10),
        normalization={"scale": 1.0 / 255.0},
        metadata={"kind": "idx", "images_path": str(images_path), "labels_path": str(labels_path)},
    )
    logging.info(f"Read IDX dataset from {images_path} with shape {images.shape}")
    return dataset.head(limit)


def load_csv(path, label_column, limit=None):
    """Tabular data: standardized float features, labels encoded to 0..K-1."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"CSV dataset not found at {path}")
    df = pd.read_csv(path)
    if label_column not in df.columns:
        raise DataFormatError(f"Label column '{label_column}' not in {list(df.columns)}")
    if limit is not None:
        df = df.head(limit)

    feature_frame = df.drop(columns=[label_column])
    non_numeric = [c for c in feature_frame.columns if not pd.api.types.is_numeric_dtype(feature_frame[c])]
    if non_numeric:
        raise DataFormatError(f"Non-numeric feature columns: {non_numeric}")

    codes, classes = pd.factorize(df[label_column], sort=True)
    scaler = StandardScaler()
    features = scaler.fit_transform(feature_frame.to_numpy(dtype=np.float64)).astype(np.float32)
    logging.info(f"Read CSV dataset from {path} with shape {df.shape}")
    return Dataset(
        features=features,
        labels=codes,
        num_classes=len(classes),
        normalization={"mean": scaler.mean_.tolist(), "scale": scaler.scale_.tolist()},
        metadata={
            "kind": "csv",
            "csv_path": str(path),
            "columns": list(feature_frame.columns),
            "classes": [str(c) for c in classes],
        },
    )


def synth_blobs(n, classes, seed, separation=4.0, noise=0.5):
    """Gaussian clusters with centers spaced evenly on a circle."""
    if n < classes:
        raise ValueError(f"Need at least one sample per class: n={n}, classes={classes}")
    angles = 2 * np.pi * np.arange(classes) / classes
    centers = separation * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    features, labels = make_blobs(
        n_samples=n, centers=centers, cluster_std=noise, random_state=seed
    )
    return Dataset(
        features=features.astype(np.float32),
        labels=labels,
        num_classes=classes,
        metadata={"kind": "blobs", "seed": int(seed)},
    )


def synth_two_rings(n, seed, noise=0.05):
    features, labels = make_circles(n_samples=n, noise=noise, factor=0.5, random_state=seed)
    return Dataset(
        features=features.astype(np.float32),
        labels=labels,
        num_classes=2,
        metadata={"kind": "rings", "seed": int(seed)},
    )


def split_dataset(dataset, test_size, seed):
    indices = np.arange(len(dataset))
    _, class_counts = np.unique(dataset.labels, return_counts=True)
    stratify = dataset.labels if class_counts.min() >= 2 else None
    train_idx, test_idx = train_test_split(
        indices, test_size=test_size, random_state=seed, stratify=stratify
    )
    return dataset.subset(np.sort(train_idx), split="train"), dataset.subset(np.sort(test_idx), split="test")


def iterate_batches(dataset, batch_size, rng=None):
    """Yield ``(features, labels)`` batches; shuffled when ``rng`` is given."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    order = np.arange(len(dataset)) if rng is None else rng.permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield dataset.features[idx], dataset.labels[idx]


@dataclass
class DataIngestionConfig:
    kind: str = "blobs"
    n_samples: int = 500
    classes: int = 3
    separation: float = 4.0
    noise: float = 0.5
    images_path: str = None
    labels_path: str = None
    csv_path: str = None
    label_column: str = "label"
    limit: int = None
    test_size: float = 0.2


class DataIngestion:
    def __init__(self, ingestion_config=None):
        self.ingestion_config = ingestion_config or DataIngestionConfig()

    def load(self, seed):
        cfg = self.ingestion_config
        if cfg.kind == "blobs":
            return synth_blobs(cfg.n_samples, cfg.classes, seed, separation=cfg.separation, noise=cfg.noise)
        if cfg.kind == "rings":
            return synth_two_rings(cfg.n_samples, seed, noise=cfg.noise)
        if cfg.kind == "idx":
            return load_idx(cfg.images_path, cfg.labels_path, limit=cfg.limit)
        if cfg.kind == "csv":
            return load_csv(cfg.csv_path, cfg.label_column, limit=cfg.limit)
        raise DataFormatError(f"Unknown dataset kind '{cfg.kind}', expected one of {DATA_KINDS}")

    def initiate_data_ingestion(self, seed=0):
        logging.info("Entered the data ingestion component")
        try:
            dataset = self.load(seed)
            logging.info(
                f"Loaded {self.ingestion_config.kind} dataset: {len(dataset)} samples, "
                f"sample shape {dataset.sample_shape}, {dataset.num_classes} classes"
            )
            logging.info("Train test split initiated")
            train_set, test_set = split_dataset(dataset, self.ingestion_config.test_size, seed)
            logging.info(f"Ingestion of the data is completed: {len(train_set)} train / {len(test_set)} test")
            return train_set, test_set
        except CustomException:
            raise
        except Exception as e:
            raise CustomException(e, sys)
