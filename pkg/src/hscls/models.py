"""DNN and Text-CNN assembly, training, prediction, and weight serialization."""

from __future__ import annotations

import copy
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from ._seeds import derive_seed
from .corpus import TokenSequence

WEIGHTS_MAGIC = b"HSCW"
WEIGHTS_FORMAT_VERSION = 1

CONFIDENCE_BANDS = (0.80, 0.90)


class WeightsIOError(Exception):
    """Base class for weights-file problems."""


class TruncatedFileError(WeightsIOError):
    pass


class ChecksumError(WeightsIOError):
    pass


class UnsupportedVersionError(WeightsIOError):
    pass


class VocabularyMismatchError(ValueError):
    """Inputs were tokenized with a different vocabulary than the weights."""


@dataclass
class TextCnnConfig:
    kernel_sizes: list[int] = field(default_factory=lambda: [3, 4, 5])
    filters_per_kernel: int = 128
    embedding_dim: int = 100
    dropout: float = 0.5
    n_conv_blocks: int = 1

    def __post_init__(self):
        if not self.kernel_sizes:
            raise ValueError("kernel_sizes must be non-empty")
        if any(not 1 <= k <= 10 for k in self.kernel_sizes):
            raise ValueError(f"kernel sizes must be within 1..10, got {self.kernel_sizes}")
        if self.filters_per_kernel < 1 or self.embedding_dim < 1:
            raise ValueError("filters_per_kernel and embedding_dim must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 1 <= self.n_conv_blocks <= 5:
            raise ValueError(f"n_conv_blocks must be within 1..5, got {self.n_conv_blocks}")


@dataclass
class DnnConfig:
    initial_neurons: int = 11
    neuron_pct: float = 0.44
    neuron_shrink: float = 0.31
    dropout: float = 0.37
    embedding_dim: int = 66
    n_layer_cap: int = 8

    def __post_init__(self):
        if self.initial_neurons < 1:
            raise ValueError("initial_neurons must be >= 1")
        if not 0.0 < self.neuron_pct <= 1.0:
            raise ValueError("neuron_pct must be in (0, 1]")
        if not 0.0 < self.neuron_shrink < 1.0:
            raise ValueError("neuron_shrink must be in (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.embedding_dim < 1 or self.n_layer_cap < 1:
            raise ValueError("embedding_dim and n_layer_cap must be positive")


# Finalized hyperparameter presets. prose_345 keeps the three parallel kernel
# branches; paper_final is the single-kernel tuned configuration.
TEXTCNN_PRESETS = {
    "paper_final": TextCnnConfig(kernel_sizes=[5], filters_per_kernel=128, embedding_dim=100, n_conv_blocks=1),
    "prose_345": TextCnnConfig(kernel_sizes=[3, 4, 5], filters_per_kernel=128, embedding_dim=100, n_conv_blocks=1),
}

DNN_PRESETS = {
    "paper_final": DnnConfig(
        initial_neurons=11, neuron_pct=0.44, neuron_shrink=0.31, dropout=0.37, embedding_dim=66, n_layer_cap=8
    ),
    "paper_upsampled": DnnConfig(
        initial_neurons=168, neuron_pct=0.95, neuron_shrink=0.466, dropout=0.10, embedding_dim=43, n_layer_cap=8
    ),
}

NEURON_BUDGET = 5000  # neuron_pct scales against this fixed pool


def dnn_layer_plan(cfg: DnnConfig) -> list[int]:
    """Hidden-layer widths: start at initial_neurons, shrink geometrically.

    A layer is added while the cumulative width stays within the budget
    ``round(neuron_pct * 5000)``, the layer count stays within the cap, and
    the next width is at least 2. The first layer is always emitted, even
    when it alone exceeds the budget.
    """
    budget = round(cfg.neuron_pct * NEURON_BUDGET)
    widths = [cfg.initial_neurons]
    cumulative = cfg.initial_neurons
    while len(widths) < cfg.n_layer_cap:
        nxt = max(1, round(widths[-1] * cfg.neuron_shrink))
        if nxt < 2 or cumulative + nxt > budget:
            break
        widths.append(nxt)
        cumulative += nxt
    return widths


class DnnModel:
    """embedding -> flatten -> [dense + relu + dropout]* -> dense -> softmax."""

    architecture = "dnn"

    def __init__(self, cfg: DnnConfig, vocab_size: int, n_classes: int, max_len: int, seed: int = 0):
        self.config = cfg
        self.vocab_size = vocab_size
        self.n_classes = n_classes
        self.max_len = max_len
        self.seed = seed
        rng = np.random.default_rng(derive_seed(seed, "init-dnn"))
        d = cfg.embedding_dim
        self.embedding = nn.Embedding(
            nn.Parameter(nn.glorot_uniform((vocab_size, d), vocab_size, d, rng), "embedding")
        )
        self.flatten = nn.Flatten()
        self.blocks: list[tuple[nn.Dense, nn.ReLU, nn.Dropout]] = []
        width_in = max_len * d
        for i, width in enumerate(dnn_layer_plan(cfg)):
            dense = nn.Dense(
                nn.Parameter(nn.glorot_uniform((width, width_in), width_in, width, rng), f"dense{i}_w"),
                nn.Parameter(np.zeros(width), f"dense{i}_b"),
            )
            drop = nn.Dropout(cfg.dropout, derive_seed(seed, f"dropout-{i}"))
            self.blocks.append((dense, nn.ReLU(), drop))
            width_in = width
        self.out = nn.Dense(
            nn.Parameter(nn.glorot_uniform((n_classes, width_in), width_in, n_classes, rng), "out_w"),
            nn.Parameter(np.zeros(n_classes), "out_b"),
        )

    def params(self) -> list[nn.Parameter]:
        ps = [self.embedding.table]
        for dense, _, _ in self.blocks:
            ps.extend([dense.weight, dense.bias])
        ps.extend([self.out.weight, self.out.bias])
        return ps

    def forward(self, ids: np.ndarray, training: bool = False) -> np.ndarray:
        x = self.flatten.forward(self.embedding.forward(ids))
        for dense, relu, drop in self.blocks:
            x = drop.forward(relu.forward(dense.forward(x)), training)
        return nn.softmax(self.out.forward(x))

    def backward(self, dlogits: np.ndarray) -> None:
        g = self.out.backward(dlogits)
        for dense, relu, drop in reversed(self.blocks):
            g = dense.backward(relu.backward(drop.backward(g)))
        self.embedding.backward(self.flatten.backward(g))

    def reset_dropout(self) -> None:
        for _, _, drop in self.blocks:
            drop.reset()


class _CnnBranch:
    def __init__(self, convs: list[tuple[nn.Conv1d, nn.ReLU]]):
        self.convs = convs
        self.pool = nn.MaxPoolOverTime()

    def forward(self, x: np.ndarray) -> np.ndarray:
        for conv, relu in self.convs:
            x = relu.forward(conv.forward(x))
        return self.pool.forward(x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        g = self.pool.backward(grad)
        for conv, relu in reversed(self.convs):
            g = conv.backward(relu.backward(g))
        return g


class TextCnnModel:
    """embedding -> parallel {conv1d -> relu (xblocks) -> max-over-time pool}
    per kernel size -> concat -> dropout -> dense -> softmax.
    """

    architecture = "text_cnn"

    def __init__(self, cfg: TextCnnConfig, vocab_size: int, n_classes: int, max_len: int, seed: int = 0):
        for k in cfg.kernel_sizes:
            remaining = max_len - cfg.n_conv_blocks * (k - 1)
            if remaining < 1:
                raise ValueError(
                    f"kernel size {k} with {cfg.n_conv_blocks} block(s) does not fit max_len {max_len}"
                )
        self.config = cfg
        self.vocab_size = vocab_size
        self.n_classes = n_classes
        self.max_len = max_len
        self.seed = seed
        rng = np.random.default_rng(derive_seed(seed, "init-textcnn"))
        d = cfg.embedding_dim
        f = cfg.filters_per_kernel
        self.embedding = nn.Embedding(
            nn.Parameter(nn.glorot_uniform((vocab_size, d), vocab_size, d, rng), "embedding")
        )
        self.branches: list[_CnnBranch] = []
        for k in cfg.kernel_sizes:
            convs = []
            in_dim = d
            for b in range(cfg.n_conv_blocks):
                w = nn.Parameter(
                    nn.glorot_uniform((f, k, in_dim), k * in_dim, f, rng), f"conv_k{k}_b{b}_w"
                )
                bias = nn.Parameter(np.zeros(f), f"conv_k{k}_b{b}_b")
                convs.append((nn.Conv1d(w, bias), nn.ReLU()))
                in_dim = f
            self.branches.append(_CnnBranch(convs))
        self.concat = nn.Concat()
        self.dropout = nn.Dropout(cfg.dropout, derive_seed(seed, "dropout-cnn"))
        width = f * len(cfg.kernel_sizes)
        self.out = nn.Dense(
            nn.Parameter(nn.glorot_uniform((n_classes, width), width, n_classes, rng), "out_w"),
            nn.Parameter(np.zeros(n_classes), "out_b"),
        )

    def params(self) -> list[nn.Parameter]:
        ps = [self.embedding.table]
        for branch in self.branches:
            for conv, _ in branch.convs:
                ps.extend([conv.weight, conv.bias])
        ps.extend([self.out.weight, self.out.bias])
        return ps

    def forward(self, ids: np.ndarray, training: bool = False) -> np.ndarray:
        x = self.embedding.forward(ids)
        pooled = [branch.forward(x) for branch in self.branches]
        z = self.dropout.forward(self.concat.forward(pooled), training)
        return nn.softmax(self.out.forward(z))

    def backward(self, dlogits: np.ndarray) -> None:
        g = self.dropout.backward(self.out.backward(dlogits))
        parts = self.concat.backward(g)
        dx = None
        for branch, gpart in zip(self.branches, parts):
            bgrad = branch.backward(gpart)
            dx = bgrad if dx is None else dx + bgrad
        self.embedding.backward(dx)

    def reset_dropout(self) -> None:
        self.dropout.reset()


Model = DnnModel | TextCnnModel


def build_dnn(cfg: DnnConfig, vocab_size: int, n_classes: int, max_len: int, seed: int = 0) -> DnnModel:
    return DnnModel(cfg, vocab_size, n_classes, max_len, seed)


def build_text_cnn(cfg: TextCnnConfig, vocab_size: int, n_classes: int, max_len: int, seed: int = 0) -> TextCnnModel:
    return TextCnnModel(cfg, vocab_size, n_classes, max_len, seed)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    seed: int = 0
    early_stop_patience: int = 5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class ModelWeights:
    architecture: str
    config: TextCnnConfig | DnnConfig
    vocab_hash: str
    class_list: list[str]
    params: dict[str, np.ndarray]
    metadata: dict
    format_version: int = WEIGHTS_FORMAT_VERSION

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(self.architecture.encode())
        h.update(json.dumps(asdict(self.config), sort_keys=True).encode())
        h.update(json.dumps(self.class_list).encode())
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()


def _seqs_to_arrays(seqs: Sequence[TokenSequence], n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    ids = np.array([s.ids for s in seqs], dtype=np.int64)
    labels = np.array([s.label_id for s in seqs], dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("label_id out of range for the class count")
    return ids, labels


def _accuracy(model: Model, ids: np.ndarray, labels: np.ndarray, batch: int = 256) -> float:
    hits = 0
    for start in range(0, len(ids), batch):
        probs = model.forward(ids[start : start + batch], training=False)
        hits += int((probs.argmax(axis=1) == labels[start : start + batch]).sum())
    return hits / len(ids)


def train(
    model: Model,
    train_seqs: Sequence[TokenSequence],
    valid_seqs: Sequence[TokenSequence],
    cfg: TrainConfig,
    vocab_hash: str = "",
    class_list: Sequence[str] | None = None,
) -> tuple[ModelWeights, list[dict]]:
    """Mini-batch gradient descent with early stopping on validation accuracy.

    Returns the best-validation weights (final weights when no validation set
    is given) plus a per-epoch history of train loss and validation accuracy.
    """
    if not train_seqs:
        raise ValueError("training set is empty")
    n_classes = model.n_classes
    train_ids, train_labels = _seqs_to_arrays(train_seqs, n_classes)
    valid_ids, valid_labels = _seqs_to_arrays(valid_seqs, n_classes)
    if len(valid_labels) and not set(valid_labels.tolist()) <= set(train_labels.tolist()):
        raise ValueError("validation set contains classes absent from the training set")

    model.reset_dropout()
    optimizer = nn.make_optimizer(cfg.optimizer, cfg.learning_rate)
    params = model.params()
    history: list[dict] = []
    best_acc = -1.0
    best_epoch = -1
    best_snapshot = None
    final_loss = float("nan")

    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, f"shuffle-{epoch}"))
        order = rng.permutation(len(train_ids))
        loss_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            batch_ids = train_ids[sel]
            targets = nn.one_hot(train_labels[sel], n_classes)
            probs = model.forward(batch_ids, training=True)
            loss = nn.cross_entropy_loss(probs, targets)
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite training loss at epoch {epoch}; aborting")
            loss_sum += loss * len(sel)
            model.backward(nn.softmax_xent_grad(probs, targets) / len(sel))
            optimizer.step(params)
        final_loss = loss_sum / len(train_ids)

        valid_acc = _accuracy(model, valid_ids, valid_labels) if len(valid_ids) else float("nan")
        history.append({"epoch": epoch, "train_loss": final_loss, "valid_accuracy": valid_acc})

        if len(valid_ids):
            if valid_acc > best_acc:
                best_acc = valid_acc
                best_epoch = epoch
                best_snapshot = {p.name: p.value.copy() for p in params}
            elif epoch - best_epoch >= cfg.early_stop_patience:
                break

    if best_snapshot is None:
        best_snapshot = {p.name: p.value.copy() for p in params}
        best_epoch = len(history) - 1
    weights = ModelWeights(
        architecture=model.architecture,
        config=copy.deepcopy(model.config),
        vocab_hash=vocab_hash,
        class_list=list(class_list) if class_list is not None else [str(i) for i in range(n_classes)],
        params=best_snapshot,
        metadata={
            "seed": cfg.seed,
            "epochs_run": len(history),
            "best_epoch": best_epoch,
            "best_valid_accuracy": best_acc if best_acc >= 0 else None,
            "final_loss": final_loss,
            "max_len": model.max_len,
            "optimizer": cfg.optimizer,
            "learning_rate": cfg.learning_rate,
            "init": "glorot_uniform",
        },
    )
    return weights, history


def model_from_weights(weights: ModelWeights, seed: int = 0) -> Model:
    vocab_size = weights.params["embedding"].shape[0]
    n_classes = len(weights.class_list)
    max_len = int(weights.metadata["max_len"])
    if weights.architecture == "dnn":
        model: Model = DnnModel(weights.config, vocab_size, n_classes, max_len, seed)
    elif weights.architecture == "text_cnn":
        model = TextCnnModel(weights.config, vocab_size, n_classes, max_len, seed)
    else:
        raise ValueError(f"unknown architecture {weights.architecture!r}")
    for p in model.params():
        stored = weights.params.get(p.name)
        if stored is None or stored.shape != p.value.shape:
            raise ValueError(f"stored parameter {p.name!r} missing or shape-mismatched")
        p.value = np.array(stored, dtype=np.float64)
        p.grad = np.zeros_like(p.value)
    return model


@dataclass
class Prediction:
    record_id: str
    probs: np.ndarray
    code: str
    confidence: float
    band: str
    top_codes: list[str]
    top_probs: list[float]


def confidence_band(confidence: float, thresholds: tuple[float, float] = CONFIDENCE_BANDS) -> str:
    low, high = thresholds
    if confidence >= high:
        return "high"
    if confidence >= low:
        return "medium"
    return "low"


def predict(
    weights: ModelWeights,
    seqs: Sequence[TokenSequence],
    vocab_hash: str | None = None,
    top_k: int = 3,
    batch: int = 256,
) -> list[Prediction]:
    """Deterministic forward pass (dropout off) over tokenized inputs."""
    if vocab_hash is not None and weights.vocab_hash and vocab_hash != weights.vocab_hash:
        raise VocabularyMismatchError(
            f"inputs tokenized with vocabulary {vocab_hash[:12]}... but weights expect "
            f"{weights.vocab_hash[:12]}..."
        )
    model = model_from_weights(weights)
    ids = np.array([s.ids for s in seqs], dtype=np.int64)
    out: list[Prediction] = []
    for start in range(0, len(seqs), batch):
        probs = model.forward(ids[start : start + batch], training=False)
        for row, seq in zip(probs, seqs[start : start + batch]):
            order = np.argsort(-row, kind="stable")[:top_k]
            conf = float(row[order[0]])
            out.append(
                Prediction(
                    record_id=seq.original_record_id,
                    probs=row,
                    code=weights.class_list[order[0]],
                    confidence=conf,
                    band=confidence_band(conf),
                    top_codes=[weights.class_list[i] for i in order],
                    top_probs=[float(row[i]) for i in order],
                )
            )
    return out


# --- weights container -------------------------------------------------------
#
# magic "HSCW" | uint32 LE manifest length | manifest JSON (UTF-8) |
# concatenated little-endian float64 tensor blobs | uint32 LE CRC-32C over
# all preceding bytes.

_CRC32C_TABLE = []
for _n in range(256):
    _c = _n
    for _ in range(8):
        _c = (_c >> 1) ^ 0x82F63B78 if _c & 1 else _c >> 1
    _CRC32C_TABLE.append(_c)


def crc32c(data: bytes, crc: int = 0) -> int:
    crc ^= 0xFFFFFFFF
    for b in data:
        crc = _CRC32C_TABLE[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFF


def _config_to_dict(config: TextCnnConfig | DnnConfig) -> dict:
    return asdict(config)


def _config_from_dict(architecture: str, raw: dict) -> TextCnnConfig | DnnConfig:
    if architecture == "text_cnn":
        return TextCnnConfig(**raw)
    if architecture == "dnn":
        return DnnConfig(**raw)
    raise UnsupportedVersionError(f"unknown architecture {architecture!r}")


def save_weights(weights: ModelWeights, path: str | Path) -> None:
    blobs = io.BytesIO()
    directory = []
    offset = 0
    for name in sorted(weights.params):
        raw = np.ascontiguousarray(weights.params[name], dtype="<f8").tobytes()
        directory.append(
            {"name": name, "shape": list(weights.params[name].shape), "offset": offset, "length": len(raw)}
        )
        blobs.write(raw)
        offset += len(raw)
    manifest = {
        "format_version": weights.format_version,
        "architecture": weights.architecture,
        "config": _config_to_dict(weights.config),
        "vocab_hash": weights.vocab_hash,
        "class_list": weights.class_list,
        "metadata": weights.metadata,
        "tensors": directory,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    body = WEIGHTS_MAGIC + struct.pack("<I", len(manifest_bytes)) + manifest_bytes + blobs.getvalue()
    payload = body + struct.pack("<I", crc32c(body))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def load_weights(path: str | Path) -> ModelWeights:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise TruncatedFileError(f"{path}: file too short to be a weights container")
    if data[:4] != WEIGHTS_MAGIC:
        raise UnsupportedVersionError(f"{path}: not a weights container (bad magic)")
    (manifest_len,) = struct.unpack("<I", data[4:8])
    manifest_end = 8 + manifest_len
    if len(data) < manifest_end + 4:
        raise TruncatedFileError(f"{path}: truncated manifest")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if crc32c(data[:-4]) != stored_crc:
        raise ChecksumError(f"{path}: CRC-32C mismatch; file is corrupt")
    manifest = json.loads(data[8:manifest_end].decode("utf-8"))
    if manifest.get("format_version") != WEIGHTS_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: format version {manifest.get('format_version')} not supported "
            f"(this build reads version {WEIGHTS_FORMAT_VERSION})"
        )
    blob_base = manifest_end
    params: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        start = blob_base + entry["offset"]
        end = start + entry["length"]
        if end > len(data) - 4:
            raise TruncatedFileError(f"{path}: tensor {entry['name']!r} extends past end of file")
        arr = np.frombuffer(data[start:end], dtype="<f8").reshape(entry["shape"])
        params[entry["name"]] = arr.astype(np.float64)
    return ModelWeights(
        architecture=manifest["architecture"],
        config=_config_from_dict(manifest["architecture"], manifest["config"]),
        vocab_hash=manifest["vocab_hash"],
        class_list=list(manifest["class_list"]),
        params=params,
        metadata=dict(manifest["metadata"]),
        format_version=manifest["format_version"],
    )
