"""Datasets, the labelled/unlabelled/test split, and batch iteration.

Everything here is deterministic in its seed arguments.  Unlabelled
batches carry no label field at all, so a training loop cannot leak
ground truth by accident; test indices stay out of both training pools
by construction of the split.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

DATASET_FORMAT = "frematch-dataset-v1"


@dataclass
class Dataset:
    name: str
    samples: np.ndarray   # (N, ...) fp64; 2-d for points, 3-d for images
    labels: np.ndarray    # (N,) integer class ids
    num_classes: int

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.samples.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.samples.shape[0]} samples but "
                             f"{self.labels.shape[0]} labels")
        if self.labels.size:
            if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
                raise ValueError("label outside [0, num_classes)")
            present = np.unique(self.labels)
            if present.size != self.num_classes:
                missing = sorted(set(range(self.num_classes)) - set(present.tolist()))
                raise ValueError(f"classes never observed: {missing}")

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.samples.shape[1:]))


def make_two_moons(n: int, noise: float, seed: int) -> Dataset:
    """Two interleaved half-circle classes, n/2 points each.  Class 0
    walks the upper unit half-circle, class 1 the reflected arc shifted
    to interleave with it.  Gaussian noise is added to every coordinate."""
    if n < 2 or n % 2:
        raise ValueError(f"n must be even and >= 2, got {n}")
    if noise < 0.0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    samples = np.vstack([upper, lower])
    samples += np.random.default_rng(seed).normal(0.0, noise, samples.shape)
    labels = np.repeat([0, 1], half)
    return Dataset(name="two_moons", samples=samples, labels=labels, num_classes=2)


def make_blobs(n: int, centers: np.ndarray, sigma: float, seed: int) -> Dataset:
    """Isotropic Gaussian clusters, one class per center row."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    k = centers.shape[0]
    if k < 2:
        raise ValueError(f"need at least 2 centers, got {k}")
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if n < k:
        raise ValueError(f"n={n} smaller than the number of centers {k}")
    counts = [n // k + (1 if i < n % k else 0) for i in range(k)]
    rng = np.random.default_rng(seed)
    chunks, labels = [], []
    for i, count in enumerate(counts):
        chunks.append(centers[i] + sigma * rng.standard_normal((count, centers.shape[1])))
        labels.extend([i] * count)
    return Dataset(name="blobs", samples=np.vstack(chunks),
                   labels=np.array(labels), num_classes=k)


# ---------------------------------------------------------------------------
# split


@dataclass
class SslSplit:
    labelled_idx: np.ndarray
    unlabelled_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        self.labelled_idx = np.asarray(self.labelled_idx, dtype=np.int64)
        self.unlabelled_idx = np.asarray(self.unlabelled_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        pools = [self.labelled_idx, self.unlabelled_idx, self.test_idx]
        total = sum(p.size for p in pools)
        if np.unique(np.concatenate(pools)).size != total:
            raise ValueError("split pools overlap")


def split_ssl(ds: Dataset, labels_per_class: int, test_frac: float,
              seed: int) -> SslSplit:
    """Class-stratified split: first carve the test set out of each
    class, then take exactly labels_per_class labelled samples per
    class, leaving the rest unlabelled."""
    if labels_per_class < 1:
        raise ValueError(f"labels_per_class must be >= 1, got {labels_per_class}")
    if not (0.0 <= test_frac < 1.0):
        raise ValueError(f"test_frac must be in [0, 1), got {test_frac}")
    rng = np.random.default_rng(seed)
    labelled, unlabelled, test = [], [], []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(test_frac * idx.size))
        if idx.size - n_test < labels_per_class:
            raise ValueError(f"class {c}: {idx.size - n_test} training samples "
                             f"cannot supply {labels_per_class} labels")
        test.append(idx[:n_test])
        labelled.append(idx[n_test:n_test + labels_per_class])
        unlabelled.append(idx[n_test + labels_per_class:])
    return SslSplit(labelled_idx=np.concatenate(labelled),
                    unlabelled_idx=np.concatenate(unlabelled),
                    test_idx=np.concatenate(test))


# ---------------------------------------------------------------------------
# batches


@dataclass
class LabelledBatch:
    x: np.ndarray
    y: np.ndarray


@dataclass
class UnlabelledBatch:
    x: np.ndarray


def batcher(ds: Dataset, split: SslSplit, labelled_bs: int, mu: float,
            seed: int, epoch: int):
    """One epoch of paired batches.  The unlabelled pool is shuffled
    once and partitioned into B = ceil(|U| / floor(mu * labelled_bs))
    batches; the labelled pool reshuffles and cycles as often as
    needed to keep pace."""
    if labelled_bs < 1:
        raise ValueError(f"labelled_bs must be >= 1, got {labelled_bs}")
    if mu < 1.0:
        raise ValueError(f"mu must be >= 1, got {mu}")
    if split.labelled_idx.size == 0 or split.unlabelled_idx.size == 0:
        raise ValueError("both training pools must be non-empty")
    unlabelled_bs = int(mu * labelled_bs)
    num_batches = math.ceil(split.unlabelled_idx.size / unlabelled_bs)

    rng_u = np.random.default_rng([seed, epoch, 2])
    u_order = split.unlabelled_idx[rng_u.permutation(split.unlabelled_idx.size)]

    rng_l = np.random.default_rng([seed, epoch, 1])
    l_stream = []
    while len(l_stream) < num_batches * labelled_bs:
        l_stream.extend(split.labelled_idx[rng_l.permutation(split.labelled_idx.size)])
    l_stream = np.array(l_stream[:num_batches * labelled_bs])

    for b in range(num_batches):
        l_idx = l_stream[b * labelled_bs:(b + 1) * labelled_bs]
        u_idx = u_order[b * unlabelled_bs:(b + 1) * unlabelled_bs]
        yield (LabelledBatch(x=ds.samples[l_idx], y=ds.labels[l_idx]),
               UnlabelledBatch(x=ds.samples[u_idx]))


def iterate_labelled(ds: Dataset, indices: np.ndarray, batch_size: int,
                     seed: int, epoch: int):
    """Plain one-pass shuffled batching over a labelled pool (the fully
    supervised baseline path)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ValueError("labelled pool is empty")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = indices[np.random.default_rng([seed, epoch, 3]).permutation(indices.size)]
    for b in range(math.ceil(indices.size / batch_size)):
        chunk = order[b * batch_size:(b + 1) * batch_size]
        yield LabelledBatch(x=ds.samples[chunk], y=ds.labels[chunk])


def epoch_length(unlabelled_count: int, labelled_bs: int, mu: float) -> int:
    return math.ceil(unlabelled_count / int(mu * labelled_bs))


# ---------------------------------------------------------------------------
# files: one JSON header line, fp64 sample block, int32 label block


def save_dataset(path, ds: Dataset) -> None:
    header = {
        "format": DATASET_FORMAT,
        "name": ds.name,
        "num_samples": int(ds.samples.shape[0]),
        "sample_shape": list(ds.samples.shape[1:]),
        "num_classes": ds.num_classes,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(ds.samples.astype("<f8").tobytes())
        fh.write(ds.labels.astype("<i4").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"corrupt dataset header: {exc}") from exc
    if header.get("format") != DATASET_FORMAT:
        raise ValueError(f"unknown dataset format {header.get('format')!r}")
    n = header["num_samples"]
    shape = tuple(header["sample_shape"])
    sample_bytes = n * int(np.prod(shape)) * 8
    if len(payload) != sample_bytes + n * 4:
        raise ValueError(f"dataset payload is {len(payload)} bytes, header "
                         f"promises {sample_bytes + n * 4}")
    samples = np.frombuffer(payload, dtype="<f8", count=n * int(np.prod(shape)))
    labels = np.frombuffer(payload, dtype="<i4", offset=sample_bytes)
    return Dataset(name=header["name"], samples=samples.reshape((n, *shape)).copy(),
                   labels=labels.astype(np.int64), num_classes=header["num_classes"])


def save_split(path, split: SslSplit) -> None:
    doc = {"labelled": split.labelled_idx.tolist(),
           "unlabelled": split.unlabelled_idx.tolist(),
           "test": split.test_idx.tolist()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_split(path) -> SslSplit:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return SslSplit(labelled_idx=np.array(doc["labelled"], dtype=np.int64),
                    unlabelled_idx=np.array(doc["unlabelled"], dtype=np.int64),
                    test_idx=np.array(doc["test"], dtype=np.int64))


def load_digits8x8() -> Dataset:
    """Bundled 8x8 grayscale digit images (10 classes, 1797 samples,
    intensities scaled to [0, 1])."""
    ref = resources.files("frematch") / "assets" / "digits8x8.bin"
    with resources.as_file(ref) as path:
        return load_dataset(path)
