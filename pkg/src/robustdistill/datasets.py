"""Dataset ingestion: synthetic generators, the 8x8 digits set, and the
canonical CIFAR-10 binary batch format.

All loaders produce pixel values in [0, 1] (the clip operator's data range)
and deterministic train/test splits given the descriptor's seed.
"""

import gzip
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetParseError, IntegrityError, InvalidConfigError
from .seeding import numpy_generator

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 1024 pixel bytes
CIFAR_LABEL_RANGE = 10


@dataclass
class LabeledExamples:
    """A batch of examples: ``x`` in [0, 1] with shape (n, *input_shape), ``y`` class indices."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise InvalidConfigError("x and y lengths differ")
        if self.x.size and (self.x.min() < 0.0 or self.x.max() > 1.0):
            raise InvalidConfigError("pixel values must lie in [0, 1]")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise InvalidConfigError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.y)

    @property
    def input_shape(self) -> tuple:
        return tuple(self.x.shape[1:])

    def subset(self, indices) -> "LabeledExamples":
        idx = np.asarray(indices)
        return LabeledExamples(self.x[idx], self.y[idx], self.num_classes)


@dataclass
class DatasetSplits:
    name: str
    train: LabeledExamples
    test: LabeledExamples
    num_classes: int
    metadata: dict = field(default_factory=dict)


def _split(x, y, num_classes, test_fraction, seed, name, metadata=None):
    n = len(y)
    order = numpy_generator(seed, "split").permutation(n)
    n_test = int(round(n * test_fraction))
    test_idx, train_idx = order[:n_test], order[n_test:]
    return DatasetSplits(
        name=name,
        train=LabeledExamples(x[train_idx], y[train_idx], num_classes),
        test=LabeledExamples(x[test_idx], y[test_idx], num_classes),
        num_classes=num_classes,
        metadata=metadata or {},
    )


def _check_keys(descriptor, allowed):
    unknown = set(descriptor) - set(allowed) - {"name"}
    if unknown:
        raise InvalidConfigError(f"unknown dataset fields {sorted(unknown)} for {descriptor.get('name')}")


def _moons(descriptor):
    _check_keys(descriptor, {"n", "noise", "seed", "test_fraction"})
    n = int(descriptor.get("n", 1000))
    noise = float(descriptor.get("noise", 0.1))
    seed = int(descriptor.get("seed", 0))
    rng = numpy_generator(seed, "moons")
    n0 = n // 2
    n1 = n - n0
    t0 = np.linspace(0, np.pi, n0)
    t1 = np.linspace(0, np.pi, n1)
    pts = np.concatenate([
        np.stack([np.cos(t0), np.sin(t0)], axis=1),
        np.stack([1 - np.cos(t1), -np.sin(t1) + 0.5], axis=1),
    ])
    pts = pts + rng.normal(scale=noise, size=pts.shape)
    labels = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    # fixed affine map into [0, 1]^2 with headroom for the noise tails
    x = np.clip((pts + 2.0) / 5.0, 0.0, 1.0)
    return _split(x, labels, 2, float(descriptor.get("test_fraction", 0.25)), seed, "synthetic-moons",
                  {"n": n, "noise": noise, "seed": seed})


def _blobs(descriptor):
    _check_keys(descriptor, {"n", "centers", "std", "seed", "test_fraction"})
    centers = np.asarray(descriptor.get("centers", [[0.3, 0.3], [0.7, 0.7]]), dtype=np.float64)
    n = int(descriptor.get("n", 1000))
    std = float(descriptor.get("std", 0.08))
    seed = int(descriptor.get("seed", 0))
    rng = numpy_generator(seed, "blobs")
    k = len(centers)
    per = [n // k + (1 if i < n % k else 0) for i in range(k)]
    xs, ys = [], []
    for i, (c, m) in enumerate(zip(centers, per)):
        xs.append(rng.normal(loc=c, scale=std, size=(m, centers.shape[1])))
        ys.append(np.full(m, i, np.int64))
    x = np.clip(np.concatenate(xs), 0.0, 1.0)
    return _split(x, np.concatenate(ys), k, float(descriptor.get("test_fraction", 0.25)), seed,
                  "synthetic-blobs", {"n": n, "std": std, "seed": seed})


def _digits(descriptor):
    _check_keys(descriptor, {"path", "seed", "test_fraction"})
    path = descriptor.get("path")
    if path:
        opener = gzip.open if str(path).endswith(".gz") else open
        try:
            with opener(path, "rb") as f:
                raw = np.loadtxt(f, delimiter=",")
        except ValueError as e:
            raise DatasetParseError(f"{path}: malformed digits csv: {e}")
        if raw.ndim != 2 or raw.shape[1] != 65:
            raise DatasetParseError(f"{path}: expected 65 columns (64 features + label)")
        feats, labels = raw[:, :64], raw[:, 64].astype(np.int64)
    else:
        from sklearn.datasets import load_digits  # bundled copy of the canonical set

        bunch = load_digits()
        feats, labels = bunch.data, bunch.target.astype(np.int64)
    if feats.min() < 0 or feats.max() > 16:
        raise DatasetParseError("digits features must lie in 0..16")
    x = (feats / 16.0).reshape(-1, 8, 8, 1)
    seed = int(descriptor.get("seed", 0))
    return _split(x, labels, 10, float(descriptor.get("test_fraction", 0.2)), seed, "digits-8x8",
                  {"seed": seed, "source": path or "bundled"})


def parse_cifar10_binary(path, sha256=None):
    """Parse one CIFAR-10 binary batch file into (pixels in [0,1] HWC, labels).

    Record layout: 1 label byte then 3072 pixel bytes (three 32x32 planes,
    R then G then B). Raises DatasetParseError with a byte offset on malformed
    files and IntegrityError on checksum mismatch.
    """
    with open(path, "rb") as f:
        data = f.read()
    if sha256 is not None:
        actual = hashlib.sha256(data).hexdigest()
        if actual != sha256:
            raise IntegrityError(f"{path}: sha256 mismatch: expected {sha256}, got {actual}")
    if len(data) == 0:
        raise DatasetParseError(f"{path}: empty file", byte_offset=0)
    if len(data) % CIFAR_RECORD_BYTES != 0:
        raise DatasetParseError(
            f"{path}: size {len(data)} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record",
            byte_offset=len(data) - len(data) % CIFAR_RECORD_BYTES,
        )
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= CIFAR_LABEL_RANGE)[0]
    if len(bad):
        raise DatasetParseError(
            f"{path}: label {labels[bad[0]]} out of range at record {bad[0]}",
            byte_offset=int(bad[0]) * CIFAR_RECORD_BYTES,
        )
    pixels = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return pixels.astype(np.float64) / 255.0, labels


def _cifar(descriptor):
    _check_keys(descriptor, {"path", "train_files", "test_files", "sha256", "seed",
                             "test_fraction", "subset_train", "subset_test"})
    seed = int(descriptor.get("seed", 0))
    shas = descriptor.get("sha256") or {}

    def load_files(paths):
        xs, ys = [], []
        for p in paths:
            px, lb = parse_cifar10_binary(p, shas.get(os.path.basename(str(p))))
            xs.append(px)
            ys.append(lb)
        return np.concatenate(xs), np.concatenate(ys)

    if descriptor.get("train_files"):
        x_tr, y_tr = load_files(descriptor["train_files"])
        if descriptor.get("test_files"):
            x_te, y_te = load_files(descriptor["test_files"])
        else:
            raise InvalidConfigError("cifar10-binary with train_files requires test_files")
        splits = DatasetSplits(
            name="cifar10-binary",
            train=LabeledExamples(x_tr, y_tr, 10),
            test=LabeledExamples(x_te, y_te, 10),
            num_classes=10,
            metadata={"seed": seed},
        )
    elif descriptor.get("path"):
        px, lb = parse_cifar10_binary(descriptor["path"], shas.get(os.path.basename(str(descriptor["path"]))))
        splits = _split(px, lb, 10, float(descriptor.get("test_fraction", 0.2)), seed,
                        "cifar10-binary", {"seed": seed})
    else:
        raise InvalidConfigError("cifar10-binary needs path or train_files/test_files")

    for key, attr in (("subset_train", "train"), ("subset_test", "test")):
        k = descriptor.get(key)
        if k:
            split = getattr(splits, attr)
            idx = numpy_generator(seed, key).permutation(len(split))[: int(k)]
            setattr(splits, attr, split.subset(np.sort(idx)))
    return splits


_LOADERS = {
    "synthetic-moons": _moons,
    "synthetic-blobs": _blobs,
    "digits-8x8": _digits,
    "cifar10-binary": _cifar,
}


def load_dataset(descriptor: dict) -> DatasetSplits:
    """Load the dataset named by ``descriptor['name']``; see module docstring."""
    if not isinstance(descriptor, dict) or "name" not in descriptor:
        raise InvalidConfigError("dataset descriptor must be a mapping with a 'name'")
    loader = _LOADERS.get(descriptor["name"])
    if loader is None:
        raise InvalidConfigError(f"unknown dataset {descriptor['name']!r}; known: {sorted(_LOADERS)}")
    return loader(descriptor)
