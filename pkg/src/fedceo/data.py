"""Synthetic datasets, client partitioning, and the ASCII dataset format.

The file format is one header line ``d num_classes num_samples`` followed
by one ``label f1 ... fd`` line per sample, plain ASCII decimals.  Floats
are written with enough digits to round-trip float64 exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dp import rng_stream
from .errors import EmptyDataset, ParseError, TooManyClients

PARTITION_MODES = ("iid", "label_shard", "dirichlet")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray    # (n,) int64
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-d, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be one per feature row")
        if self.features.shape[0] == 0:
            raise EmptyDataset("dataset has no samples")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("label outside [0, num_classes)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


def synth_blobs(num_classes: int, dim: int, samples: int, spread: float, seed: int) -> Dataset:
    """Gaussian blobs: one random center per class, isotropic noise of the
    given spread, exactly samples/num_classes points per class."""
    if num_classes < 1 or dim < 1 or samples < 1:
        raise ValueError("num_classes, dim and samples must be positive")
    if samples % num_classes:
        raise ValueError(
            f"samples ({samples}) must be divisible by num_classes ({num_classes}) "
            "so the label histogram is exactly uniform"
        )
    if spread < 0:
        raise ValueError(f"spread must be nonnegative, got {spread}")
    rng = rng_stream(seed, purpose="data")
    per_class = samples // num_classes
    centers = rng.standard_normal((num_classes, dim))
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    noise = rng.standard_normal((samples, dim))
    return Dataset(centers[labels] + spread * noise, labels, num_classes)


def split_train_test(data: Dataset, test_fraction: float, seed: int):
    """Stratified split; per class the same fraction is held out."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = rng_stream(seed, round_no=1, purpose="data")
    test_idx = []
    for c in range(data.num_classes):
        members = np.flatnonzero(data.labels == c)
        if members.size == 0:
            continue
        take = int(round(members.size * test_fraction))
        take = min(max(take, 1), members.size - 1) if members.size > 1 else 0
        test_idx.append(rng.permutation(members)[:take])
    test_idx = np.sort(np.concatenate(test_idx)) if test_idx else np.array([], dtype=np.int64)
    mask = np.zeros(data.n, dtype=bool)
    mask[test_idx] = True
    return data.subset(np.flatnonzero(~mask)), data.subset(test_idx)


# ---------------------------------------------------------------------------
# Client partitioning


def partition_indices(labels: np.ndarray, n_clients: int, mode: str, *,
                      shards_per_client: int = 2, alpha: float = 0.5,
                      seed: int = 0) -> list[np.ndarray]:
    """Index sets of a disjoint cover of range(len(labels)), one per client.

    Every client receives at least one sample regardless of mode; the
    non-iid modes steal singletons from the largest client when a draw
    leaves someone empty.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n_clients < 1:
        raise ValueError(f"n_clients must be >= 1, got {n_clients}")
    if n_clients > n:
        raise TooManyClients(f"{n_clients} clients but only {n} samples")
    if mode not in PARTITION_MODES:
        raise ValueError(f"unknown partition mode {mode!r}")
    rng = rng_stream(seed, purpose="partition")

    if mode == "iid":
        parts = np.array_split(rng.permutation(n), n_clients)
    elif mode == "label_shard":
        if shards_per_client < 1:
            raise ValueError("shards_per_client must be >= 1")
        order = np.argsort(labels, kind="stable")
        shards = np.array_split(order, n_clients * shards_per_client)
        dealt = rng.permutation(len(shards))
        parts = [
            np.concatenate([shards[s] for s in dealt[i::n_clients]])
            for i in range(n_clients)
        ]
    else:  # dirichlet
        if alpha <= 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        parts = [[] for _ in range(n_clients)]
        for c in np.unique(labels):
            members = rng.permutation(np.flatnonzero(labels == c))
            weights = rng.dirichlet(np.full(n_clients, alpha))
            cuts = (np.cumsum(weights)[:-1] * members.size).astype(int)
            for k, chunk in enumerate(np.split(members, cuts)):
                parts[k].append(chunk)
        parts = [
            np.concatenate(p) if p else np.array([], dtype=np.int64) for p in parts
        ]

    parts = [np.asarray(p, dtype=np.int64) for p in parts]
    # repair empty clients so every partition is usable for training
    while any(p.size == 0 for p in parts):
        donor = int(np.argmax([p.size for p in parts]))
        needy = next(i for i, p in enumerate(parts) if p.size == 0)
        parts[needy] = parts[donor][-1:]
        parts[donor] = parts[donor][:-1]
    return parts


def partition(data: Dataset, n_clients: int, mode: str, *,
              shards_per_client: int = 2, alpha: float = 0.5,
              seed: int = 0) -> list[Dataset]:
    """Split a dataset across clients; see :func:`partition_indices`."""
    parts = partition_indices(data.labels, n_clients, mode,
                              shards_per_client=shards_per_client,
                              alpha=alpha, seed=seed)
    return [data.subset(p) for p in parts]


# ---------------------------------------------------------------------------
# ASCII serialization


def save_dataset(path, data: Dataset) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{data.dim} {data.num_classes} {data.n}\n")
        for row, label in zip(data.features, data.labels):
            values = " ".join(repr(float(v)) for v in row)
            fh.write(f"{int(label)} {values}\n")


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty dataset file", line=1)
    head = lines[0].split()
    if len(head) != 3:
        raise ParseError("header must be 'dim num_classes num_samples'", line=1)
    try:
        dim, num_classes, count = (int(tok) for tok in head)
    except ValueError:
        raise ParseError("header fields must be integers", line=1) from None
    if count < 1:
        raise EmptyDataset("dataset file declares zero samples")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != count:
        raise ParseError(
            f"header declares {count} samples but file has {len(body)}",
            line=len(lines),
        )
    features = np.empty((count, dim))
    labels = np.empty(count, dtype=np.int64)
    for i, ln in enumerate(body):
        tokens = ln.split()
        lineno = i + 2
        if len(tokens) != dim + 1:
            raise ParseError(f"expected {dim + 1} fields, got {len(tokens)}", line=lineno)
        try:
            label = int(tokens[0])
            row = [float(tok) for tok in tokens[1:]]
        except ValueError:
            raise ParseError("malformed number", line=lineno) from None
        if not 0 <= label < num_classes:
            raise ParseError(f"label {label} outside [0, {num_classes})", line=lineno)
        if not all(np.isfinite(row)):
            raise ParseError("non-finite feature value", line=lineno)
        labels[i] = label
        features[i] = row
    return Dataset(features, labels, num_classes)
