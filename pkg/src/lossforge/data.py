"""Datasets for the surrogate: synthetic generators plus CSV and IDX readers."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class LoadError(ValueError):
    pass


@dataclass(eq=False)
class Dataset:
    features: np.ndarray      # (n, d) float64
    labels: np.ndarray        # (n, K) one-hot float64
    train_idx: np.ndarray
    val_idx: np.ndarray

    def __post_init__(self):
        if self.labels.ndim != 2 or self.labels.shape[1] < 2:
            raise ValueError("labels must be one-hot with at least 2 classes")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels differ in length")
        if not np.allclose(self.labels.sum(axis=1), 1.0):
            raise ValueError("label rows must sum to 1")
        if np.intersect1d(self.train_idx, self.val_idx).size:
            raise ValueError("train and validation splits overlap")

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def class_ids(self) -> np.ndarray:
        return self.labels.argmax(axis=1)

    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[self.train_idx], self.labels[self.train_idx]

    def val(self) -> tuple[np.ndarray, np.ndarray]:
        return self.features[self.val_idx], self.labels[self.val_idx]

    def same_as(self, other: "Dataset") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("features", "labels", "train_idx", "val_idx"))


def one_hot(classes: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((classes.size, k))
    out[np.arange(classes.size), classes] = 1.0
    return out


def stratified_split(classes: np.ndarray, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    train, val = [], []
    for c in np.unique(classes):
        idx = np.flatnonzero(classes == c)
        rng.shuffle(idx)
        n_val = int(round(val_fraction * idx.size))
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def generate_synthetic(kind: str = "blobs", n: int = 3000, k: int = 3, d: int = 2,
                       noise: float = 0.3, seed: int = 0, val_fraction: float = 0.1) -> Dataset:
    """Balanced ``blobs`` (Gaussian clusters on a circle) or ``spirals`` (2-D arms)."""
    if kind not in ("blobs", "spirals"):
        raise ValueError(f"unknown synthetic kind {kind!r}")
    if k < 2 or n < k or d < 1:
        raise ValueError("need k >= 2, n >= k and d >= 1")
    if kind == "spirals" and d != 2:
        raise ValueError("spirals are two-dimensional")
    rng = np.random.default_rng(seed)
    counts = np.full(k, n // k)
    counts[: n % k] += 1
    classes = np.repeat(np.arange(k), counts)
    if kind == "blobs":
        centers = np.zeros((k, d))
        angles = 2 * np.pi * np.arange(k) / k
        if d == 1:
            centers[:, 0] = 1.5 * np.arange(k)
        else:
            centers[:, 0] = 1.5 * np.cos(angles)
            centers[:, 1] = 1.5 * np.sin(angles)
        x = centers[classes] + noise * rng.standard_normal((n, d))
    else:
        t = np.concatenate([np.linspace(0.0, 1.0, c) for c in counts])
        radius = 0.1 + 0.9 * t
        theta = 2 * np.pi * classes / k + 3 * np.pi * t
        x = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        x = x + noise * rng.standard_normal((n, 2))
    train, val = stratified_split(classes, val_fraction, seed)
    return Dataset(x, one_hot(classes, k), train, val)


# --- CSV --------------------------------------------------------------------

def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_csv(path: str | Path, val_fraction: float = 0.1, seed: int = 0) -> Dataset:
    """Numeric columns, last column an integer class id; header row optional."""
    raw = Path(path).read_bytes()
    rows, labels = [], []
    offset = 0
    width = None
    for lineno, line in enumerate(raw.splitlines(keepends=True)):
        start = offset
        offset += len(line)
        text = line.decode("utf-8", errors="replace").strip()
        if not text:
            continue
        tokens = [t.strip() for t in text.split(",")]
        if lineno == 0 and not all(_is_number(t) for t in tokens):
            continue  # header
        if width is None:
            width = len(tokens)
            if width < 2:
                raise LoadError(f"byte {start}: need at least one feature and a label column")
        if len(tokens) != width:
            raise LoadError(f"byte {start}: expected {width} columns, got {len(tokens)}")
        try:
            values = [float(t) for t in tokens[:-1]]
            label = float(tokens[-1])
        except ValueError:
            raise LoadError(f"byte {start}: non-numeric value") from None
        if label != int(label) or label < 0:
            raise LoadError(f"byte {start}: label must be a non-negative integer")
        rows.append(values)
        labels.append(int(label))
    if not rows:
        raise LoadError("byte 0: no data rows")
    classes = np.array(labels)
    k = max(int(classes.max()) + 1, 2)
    train, val = stratified_split(classes, val_fraction, seed)
    return Dataset(np.array(rows, dtype=np.float64), one_hot(classes, k), train, val)


def save_csv(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w") as fh:
        for x, c in zip(dataset.features, dataset.class_ids):
            fh.write(",".join(repr(float(v)) for v in x) + f",{int(c)}\n")


# --- IDX --------------------------------------------------------------------

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
_IDX_CODES = {np.dtype(v).str[1:]: k for k, v in _IDX_TYPES.items()}


def read_idx(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in _IDX_TYPES:
        raise LoadError(f"{path}: byte 0: bad IDX magic number")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise LoadError(f"{path}: byte 4: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = np.dtype(_IDX_TYPES[raw[2]])
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header != expected:
        raise LoadError(f"{path}: byte {header}: expected {expected} data bytes, "
                        f"found {len(raw) - header}")
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims)


def write_idx(array: np.ndarray, path: str | Path) -> None:
    array = np.asarray(array)
    big = array.astype(array.dtype.newbyteorder(">"))
    code = _IDX_CODES[np.dtype(array.dtype).newbyteorder("=").str[1:]]
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + big.tobytes())


def _labels_path(images: Path) -> Path:
    name = images.name.replace("images", "labels").replace("idx3", "idx1")
    return images.with_name(name)


def load_idx(images_path: str | Path, labels_path: str | Path | None = None,
             val_fraction: float = 0.1, seed: int = 0) -> Dataset:
    """Image/label IDX pair; pixels scaled to [0, 1] and flattened."""
    images_path = Path(images_path)
    labels_path = Path(labels_path) if labels_path else _labels_path(images_path)
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise LoadError(f"{labels_path}: byte 4: label count does not match image count")
    x = images.reshape(images.shape[0], -1).astype(np.float64)
    if images.dtype == np.uint8:
        x /= 255.0
    elif x.size and x.max() > x.min():
        x = (x - x.min()) / (x.max() - x.min())
    classes = labels.astype(np.int64)
    if classes.min() < 0:
        raise LoadError(f"{labels_path}: byte {4 + 4}: negative label")
    k = max(int(classes.max()) + 1, 2)
    train, val = stratified_split(classes, val_fraction, seed)
    return Dataset(x, one_hot(classes, k), train, val)


def load_dataset(path: str | Path, format: str = "csv", **kwargs) -> Dataset:
    if format == "csv":
        return load_csv(path, **kwargs)
    if format == "idx":
        return load_idx(path, **kwargs)
    raise ValueError(f"unknown dataset format {format!r}")
