"""Dataset ingestion, vertical partitioning, and persistence.

Covers the IDX image/label file format, two synthetic generators (Gaussian
blobs and template images at MNIST geometry), contiguous-column vertical
partitioning, binary model checkpoints, and binary gradient-trace files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .nn import ContractError, Mlp, ShapeError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

CHECKPOINT_MAGIC = b"VFLX"
CHECKPOINT_VERSION = 1
TRACE_MAGIC = b"VFLT"
TRACE_VERSION = 1

_ACTIVATION_CODES = {"relu": 0, "identity": 1}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_CODES.items()}


class FormatError(ValueError):
    """A file does not match its declared binary format."""


class TruncatedFileError(FormatError):
    """A file ended before its declared payload length."""


class CheckpointVersionError(FormatError):
    """A checkpoint was written by an incompatible format version."""


@dataclass
class VerticalDataset:
    """Aligned per-party feature shards plus the active party's labels."""

    ids: np.ndarray
    parts: list[np.ndarray]
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.parts = [np.asarray(p, dtype=np.float64) for p in self.parts]
        if not self.parts:
            raise ContractError("dataset needs at least one party shard")
        n = self.ids.shape[0]
        for p in self.parts:
            if p.ndim != 2 or p.shape[0] != n:
                raise ShapeError("every shard must have one row per sample id")
        if self.labels.shape != (n,):
            raise ShapeError("labels must have one entry per sample id")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError("label values out of class range")

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    @property
    def num_parties(self) -> int:
        return len(self.parts)

    def restrict(self, rows) -> "VerticalDataset":
        """Row-subset copy, keeping alignment across every shard."""
        rows = np.asarray(rows, dtype=np.int64)
        return replace(
            self,
            ids=self.ids[rows],
            parts=[p[rows] for p in self.parts],
            labels=self.labels[rows],
        )

    def class_rows(self, classes) -> np.ndarray:
        """Row indices whose label is in the given class set."""
        mask = np.isin(self.labels, np.asarray(sorted(classes), dtype=np.int64))
        return np.nonzero(mask)[0]


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise TruncatedFileError(f"file ended while reading {what}")
    return data


def load_idx(path) -> np.ndarray:
    """Parse one IDX file.

    Image files (magic 0x00000803) come back as float64 [n, rows, cols]
    scaled to [0, 1]; label files (magic 0x00000801) as int64 [n].
    """
    with open(path, "rb") as f:
        magic = struct.unpack(">I", _read_exact(f, 4, "magic"))[0]
        if magic == IDX_IMAGE_MAGIC:
            n, rows, cols = struct.unpack(">III", _read_exact(f, 12, "image header"))
            raw = _read_exact(f, n * rows * cols, "image pixels")
            pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows, cols)
            return pixels.astype(np.float64) / 255.0
        if magic == IDX_LABEL_MAGIC:
            (n,) = struct.unpack(">I", _read_exact(f, 4, "label header"))
            raw = _read_exact(f, n, "label bytes")
            return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    raise FormatError(f"unrecognized IDX magic 0x{magic:08X}")


def save_idx_images(path, images) -> None:
    """Write [n, rows, cols] values in [0,1] as an IDX image file."""
    arr = np.asarray(images)
    if arr.ndim != 3:
        raise ShapeError("images must be [n, rows, cols]")
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *data.shape))
        f.write(data.tobytes())


def save_idx_labels(path, labels) -> None:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ShapeError("labels must be 1-D")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, y.shape[0]))
        f.write(y.astype(np.uint8).tobytes())


def synth_blobs(
    num_classes: int,
    per_class: int,
    dim: int,
    separation: float,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Unit-variance Gaussian blobs; class c is centered at separation*e_{c mod dim}."""
    if num_classes < 2:
        raise ContractError("need at least two classes")
    if dim < 1:
        raise ContractError("dimension must be at least 1")
    if separation < 0:
        raise ContractError("separation must be non-negative")
    rng = np.random.default_rng(seed)
    features = []
    labels = []
    for c in range(num_classes):
        center = np.zeros(dim)
        center[c % dim] = separation
        features.append(rng.normal(0.0, 1.0, size=(per_class, dim)) + center)
        labels.append(np.full(per_class, c, dtype=np.int64))
    return np.concatenate(features), np.concatenate(labels)


def synth_images(
    num_classes: int,
    per_class: int,
    seed: int,
    noise: float = 0.4,
    side: int = 28,
    intensity_range: tuple[float, float] = (0.55, 1.0),
    background: float = 0.35,
    spread: float = 0.45,
    modes: int = 2,
    class_noise=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Template-image classes at MNIST geometry, flattened to [n, side*side].

    Each class owns `modes` fixed smooth sub-templates (think handwriting
    styles): Gaussian bumps anchored near the class's own cell of a grid
    over the image, positions jittered by the seed, `spread` (in cell
    units) controlling how far bumps wander from the anchor. A sample picks
    one mode, scales it by a random intensity, adds a constant background
    and pixel noise, and clips to [0, 1]. Distinct cells keep classes apart
    in pixel space; the modes put real gaps inside each class's manifold.

    class_noise optionally overrides the noise level per class (classes
    differ in difficulty, the way real digit classes do).
    """
    if num_classes < 2:
        raise ContractError("need at least two classes")
    if per_class < 1:
        raise ContractError("per_class must be at least 1")
    if modes < 1:
        raise ContractError("modes must be at least 1")
    if class_noise is not None and len(class_noise) != num_classes:
        raise ContractError("class_noise needs one level per class")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    cols = int(np.ceil(np.sqrt(num_classes)))
    rows = int(np.ceil(num_classes / cols))
    cell_w, cell_h = side / cols, side / rows
    templates = []
    for c in range(num_classes):
        ax = (c % cols + 0.5) * cell_w
        ay = (c // cols + 0.5) * cell_h
        class_modes = []
        for _ in range(modes):
            img = np.zeros((side, side))
            for _ in range(3):
                cx = np.clip(ax + rng.uniform(-spread, spread) * cell_w,
                             0.08 * side, 0.92 * side)
                cy = np.clip(ay + rng.uniform(-spread, spread) * cell_h,
                             0.08 * side, 0.92 * side)
                width = rng.uniform(0.12, 0.25) * min(cell_w, cell_h)
                img += np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * width**2)))
            img = img / img.max() * 0.9
            class_modes.append(img.ravel())
        templates.append(class_modes)
    features = []
    labels = []
    lo, hi = intensity_range
    for c in range(num_classes):
        sigma = noise if class_noise is None else float(class_noise[c])
        mode_of = rng.integers(0, modes, size=per_class)
        base = np.stack([templates[c][m] for m in mode_of])
        scale = rng.uniform(lo, hi, size=(per_class, 1))
        x = (
            background
            + scale * base
            + rng.normal(0.0, sigma, size=(per_class, side * side))
        )
        features.append(np.clip(x, 0.0, 1.0))
        labels.append(np.full(per_class, c, dtype=np.int64))
    return np.concatenate(features), np.concatenate(labels)


def vertical_partition(features, num_parties: int) -> list[np.ndarray]:
    """Contiguous column stripes; the last party absorbs the remainder."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("features must be 2-D")
    d = x.shape[1]
    if num_parties < 1 or num_parties > d:
        raise ContractError(
            f"cannot split {d} columns across {num_parties} parties"
        )
    width = d // num_parties
    parts = []
    for k in range(num_parties):
        start = k * width
        stop = d if k == num_parties - 1 else (k + 1) * width
        parts.append(x[:, start:stop].copy())
    return parts


def make_vertical_dataset(
    features,
    labels,
    num_classes: int,
    num_parties: int,
    split: str = "train",
    ids=None,
) -> VerticalDataset:
    x = np.asarray(features, dtype=np.float64)
    if ids is None:
        ids = np.arange(x.shape[0], dtype=np.int64)
    return VerticalDataset(
        ids=ids,
        parts=vertical_partition(x, num_parties),
        labels=labels,
        num_classes=num_classes,
        split=split,
    )


def _write_block(f, arr: np.ndarray) -> None:
    flat = np.ascontiguousarray(arr, dtype="<f8").ravel()
    f.write(struct.pack("<Q", flat.size))
    f.write(flat.tobytes())


def _read_block(f, shape) -> np.ndarray:
    (count,) = struct.unpack("<Q", _read_exact(f, 8, "block length"))
    expected = int(np.prod(shape))
    if count != expected:
        raise FormatError(
            f"weight block holds {count} values, expected {expected}"
        )
    raw = _read_exact(f, count * 8, "weight block")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def _write_model(f, model: Mlp) -> None:
    f.write(struct.pack("<I", len(model.layers)))
    for layer in model.layers:
        f.write(
            struct.pack(
                "<IIB", layer.in_dim, layer.out_dim,
                _ACTIVATION_CODES[layer.activation],
            )
        )
        _write_block(f, layer.weights)
        _write_block(f, layer.bias)


def _read_model(f) -> Mlp:
    (n_layers,) = struct.unpack("<I", _read_exact(f, 4, "layer count"))
    layers = []
    for _ in range(n_layers):
        in_dim, out_dim, code = struct.unpack(
            "<IIB", _read_exact(f, 9, "layer header")
        )
        if code not in _ACTIVATION_NAMES:
            raise FormatError(f"unknown activation code {code}")
        w = _read_block(f, (in_dim, out_dim))
        b = _read_block(f, (out_dim,))
        layers.append(nn.DenseLayer(w, b, _ACTIVATION_NAMES[code]))
    return Mlp(layers=layers)


def save_checkpoint(fed, path, seed_provenance: str = "") -> None:
    """Write federation weights and topology; a JSON sidecar sits next to it.

    Binary layout: magic, version, K, class count, concat order, the top
    model, then each bottom model in ascending party id, all little-endian
    with length-prefixed float64 weight blocks.
    """
    path = str(path)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<III", CHECKPOINT_VERSION, fed.num_parties,
                            fed.num_classes))
        for party_id in fed.concat_order:
            f.write(struct.pack("<I", party_id))
        _write_model(f, fed.active.top_model)
        for party in sorted(fed.passives, key=lambda p: p.party_id):
            f.write(struct.pack("<I", party.party_id))
            f.write(struct.pack("<I", party.feature_shard.shape[1]))
            _write_model(f, party.bottom_model)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "num_parties": fed.num_parties,
        "num_classes": fed.num_classes,
        "concat_order": list(fed.concat_order),
        "embedding_dims": [p.embedding_dim for p in fed.ordered_passives()],
        "seed_provenance": seed_provenance,
    }
    with open(path + ".meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path):
    """Rebuild a federation from a checkpoint; shards come back empty.

    The loaded federation predicts on supplied feature batches; attach real
    shards and labels before resuming training.
    """
    from .federation import ActiveParty, PassiveParty, SplitFederation

    path = str(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError("not a checkpoint file (bad magic)")
        version, num_parties, num_classes = struct.unpack(
            "<III", _read_exact(f, 12, "checkpoint header")
        )
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint version {version} is not supported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        concat_order = tuple(
            struct.unpack("<I", _read_exact(f, 4, "concat order"))[0]
            for _ in range(num_parties)
        )
        top = _read_model(f)
        passives = []
        for _ in range(num_parties):
            (party_id,) = struct.unpack("<I", _read_exact(f, 4, "party id"))
            (shard_width,) = struct.unpack("<I", _read_exact(f, 4, "shard width"))
            bottom = _read_model(f)
            passives.append(
                PassiveParty(party_id, bottom, np.zeros((0, shard_width)))
            )
    active = ActiveParty(top, np.zeros(0, dtype=np.int64), num_classes)
    return SplitFederation(active, passives, num_classes, concat_order=concat_order)


def save_trace(path, vectors, sample_indices, labels, scenario: str) -> None:
    """Write per-sample gradient records with a scenario-naming header.

    labels may be None; each record then carries -1 in the label slot.
    """
    vecs = np.asarray(vectors, dtype=np.float64)
    if vecs.ndim != 2:
        raise ShapeError("trace vectors must be 2-D")
    idx = np.asarray(sample_indices, dtype=np.int64)
    if idx.shape[0] != vecs.shape[0]:
        raise ShapeError("one sample index per trace vector is required")
    has_labels = labels is not None
    if has_labels:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape[0] != vecs.shape[0]:
            raise ShapeError("one label per trace vector is required")
    name = scenario.encode("utf-8")
    with open(path, "wb") as f:
        f.write(TRACE_MAGIC)
        f.write(struct.pack("<I", TRACE_VERSION))
        f.write(struct.pack("<I", len(name)))
        f.write(name)
        f.write(struct.pack("<IB", vecs.shape[0], int(has_labels)))
        for i in range(vecs.shape[0]):
            label = int(labels[i]) if has_labels else -1
            f.write(struct.pack("<IiQ", int(idx[i]), label, vecs.shape[1]))
            f.write(np.ascontiguousarray(vecs[i], dtype="<f8").tobytes())


def load_trace(path):
    """Read a gradient-trace file; returns (vectors, indices, labels, scenario)."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != TRACE_MAGIC:
            raise FormatError("not a gradient-trace file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != TRACE_VERSION:
            raise FormatError(f"trace version {version} is not supported")
        (name_len,) = struct.unpack("<I", _read_exact(f, 4, "scenario length"))
        scenario = _read_exact(f, name_len, "scenario").decode("utf-8")
        n, has_labels = struct.unpack("<IB", _read_exact(f, 5, "record count"))
        vectors, indices, labels = [], [], []
        for _ in range(n):
            sample_idx, label, dim = struct.unpack(
                "<IiQ", _read_exact(f, 16, "record header")
            )
            raw = _read_exact(f, dim * 8, "record payload")
            vectors.append(np.frombuffer(raw, dtype="<f8").copy())
            indices.append(sample_idx)
            labels.append(label)
    vecs = np.vstack(vectors) if vectors else np.zeros((0, 0))
    out_labels = np.asarray(labels, dtype=np.int64) if has_labels else None
    return vecs, np.asarray(indices, dtype=np.int64), out_labels, scenario
