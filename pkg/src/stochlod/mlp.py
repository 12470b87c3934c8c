"""Fully connected ReLU network trained with Adam on a relative squared error."""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1
_MAGIC = b"STOCHLOD"

DEFAULT_SCHEDULE = ((1, 30, 1e-3), (31, 40, 1e-4), (41, 60, 9.5e-5))
HIERARCHICAL_SCHEDULE = ((1, 40, 1e-3), (41, 60, 1e-4))


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


def tapered_widths(n_in: int, n_out: int) -> list[int]:
    """Layer widths in, in, in/2, in/2, in/4, in/4, out, out, out (eight layers)."""
    return [n_in, n_in, n_in // 2, n_in // 2, n_in // 4, n_in // 4, n_out, n_out, n_out]


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # W_l with shape (out, in)
    biases: list[np.ndarray]

    def __post_init__(self):
        for l in range(1, len(self.weights)):
            if self.weights[l].shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l + 1} input {self.weights[l].shape[1]} does not "
                                 f"match layer {l} output {self.weights[l - 1].shape[0]}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        return [tuple(W.shape) for W in self.weights]

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def activations(self) -> list[str]:
        return ["relu"] * (len(self.weights) - 1) + ["identity"]

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "MlpModel":
        return MlpModel([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    @classmethod
    def init(cls, widths, seed=0) -> "MlpModel":
        """He-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            bound = math.sqrt(6.0 / n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, widths) -> "MlpModel":
        return cls([np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])],
                   [np.zeros(o) for o in widths[1:]])


def forward(model: MlpModel, x: np.ndarray, keep: bool = False):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.weights[0].shape[1]:
        raise ValueError(f"input width {x.shape[1]} != first layer input {model.weights[0].shape[1]}")
    acts = [x]
    last = len(model.weights) - 1
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        x = x @ W.T + b
        if l < last:
            x = np.maximum(x, 0.0)
        acts.append(x)
    return (x, acts) if keep else x


def _target_norms(targets: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", targets, targets)
    if np.any(sq <= 0):
        raise ValueError("target with zero norm in batch")
    return sq


def loss(model: MlpModel, inputs: np.ndarray, targets: np.ndarray) -> float:
    """Mean over rows of half the relative squared error."""
    if len(inputs) == 0:
        raise ValueError("empty batch")
    out = forward(model, inputs)
    sq = _target_norms(targets)
    diff = out - targets
    return float(0.5 * np.mean(np.einsum("ij,ij->i", diff, diff) / sq))


def backward(model: MlpModel, inputs: np.ndarray, targets: np.ndarray):
    """Loss and its gradients ``(dW_list, db_list)``."""
    out, acts = forward(model, inputs, keep=True)
    n = out.shape[0]
    sq = _target_norms(targets)
    diff = out - targets
    value = float(0.5 * np.mean(np.einsum("ij,ij->i", diff, diff) / sq))
    delta = diff / (n * sq[:, None])
    gW = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for l in range(len(model.weights) - 1, -1, -1):
        gW[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l]) * (acts[l] > 0)
    return value, gW, gb


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: tuple = DEFAULT_SCHEDULE

    @classmethod
    def fresh(cls, model: MlpModel, schedule=DEFAULT_SCHEDULE) -> "AdamState":
        ps = model.params()
        return cls([np.zeros_like(p) for p in ps], [np.zeros_like(p) for p in ps],
                   schedule=tuple(tuple(s) for s in schedule))

    def lr(self, epoch: int) -> float:
        for first, last, rate in self.schedule:
            if first <= epoch <= last:
                return float(rate)
        return float(self.schedule[-1][2])


def adam_step(model: MlpModel, state: AdamState, grads, lr: float) -> None:
    """In-place bias-corrected Adam update."""
    gW, gb = grads
    g = [x for pair in zip(gW, gb) for x in pair]
    params = model.params()
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, gi, m, v in zip(params, g, state.m, state.v):
        if p.shape != gi.shape:
            raise ValueError(f"gradient shape {gi.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * gi
        v *= state.beta2
        v += (1.0 - state.beta2) * gi * gi
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class TrainTrace:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    initial_train: float = float("nan")
    initial_val: float = float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            w.writerow([0, repr(self.initial_train), repr(self.initial_val)])
            for row in zip(self.epochs, self.train_loss, self.val_loss):
                w.writerow([row[0], repr(row[1]), repr(row[2])])


def dataset_loss(model: MlpModel, inputs, targets, chunk: int = 4096) -> float:
    total = 0.0
    n = len(inputs)
    for s in range(0, n, chunk):
        x = np.asarray(inputs[s:s + chunk])
        total += loss(model, x, np.asarray(targets[s:s + chunk])) * len(x)
    return total / n


def train(model: MlpModel, train_set, val_set=None, schedule=DEFAULT_SCHEDULE, epochs: int | None = None,
          batch_size: int = 100, seed=0, state: AdamState | None = None, log=None):
    """Mini-batch Adam with per-epoch reshuffling; returns ``(model, state, trace)``.

    ``train_set`` and ``val_set`` are ``(inputs, targets)`` pairs.  The epoch
    training loss is the mean of the batch losses.
    """
    x_train, y_train = train_set
    n = len(x_train)
    if n == 0:
        raise ValueError("empty training set")
    if epochs is None:
        epochs = max(last for _, last, _ in schedule)
    state = state or AdamState.fresh(model, schedule)
    state.schedule = tuple(tuple(s) for s in schedule)
    rng = np.random.default_rng(seed)
    trace = TrainTrace()
    trace.initial_train = dataset_loss(model, x_train, y_train)
    if val_set is not None and len(val_set[0]):
        trace.initial_val = dataset_loss(model, *val_set)
    for epoch in range(1, epochs + 1):
        lr = state.lr(epoch)
        order = rng.permutation(n)
        batch_losses = []
        for b, s in enumerate(range(0, n, batch_size)):
            idx = np.sort(order[s:s + batch_size])
            xb = np.asarray(x_train[idx])
            yb = np.asarray(y_train[idx])
            value, gW, gb = backward(model, xb, yb)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b} "
                                    f"(rows {idx[:5].tolist()}...)")
            adam_step(model, state, (gW, gb), lr)
            batch_losses.append(value)
        trace.epochs.append(epoch)
        trace.train_loss.append(float(np.mean(batch_losses)))
        val = dataset_loss(model, *val_set) if val_set is not None and len(val_set[0]) else float("nan")
        trace.val_loss.append(val)
        if log is not None:
            log(f"epoch {epoch:3d}  lr {lr:.2e}  train {trace.train_loss[-1]:.4e}  val {val:.4e}")
    return model, state, trace


# -- checkpoints --------------------------------------------------------------

def _named_arrays(model: MlpModel, state: AdamState | None):
    arrays = []
    for l, (W, b) in enumerate(zip(model.weights, model.biases), start=1):
        arrays += [(f"W{l}", W), (f"b{l}", b)]
    if state is not None:
        for i, (m, v) in enumerate(zip(state.m, state.v)):
            arrays += [(f"adam_m{i}", m), (f"adam_v{i}", v)]
    return arrays


def save_checkpoint(path, model: MlpModel, state: AdamState | None = None) -> None:
    """Binary checkpoint: magic, u64 header length, JSON header, raw little-endian doubles."""
    arrays = _named_arrays(model, state)
    offset = 0
    entries = []
    for name, arr in arrays:
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "version": CHECKPOINT_VERSION,
        "layer_dims": [list(d) for d in model.layer_dims],
        "activations": model.activations,
        "arrays": entries,
    }
    if state is not None:
        header["adam"] = {"t": state.t, "beta1": state.beta1, "beta2": state.beta2,
                          "eps": state.eps, "schedule": [list(s) for s in state.schedule]}
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, expect_dims=None):
    """Returns ``(model, state_or_None, header)``."""
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen])
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    dims = [tuple(d) for d in header["layer_dims"]]
    if expect_dims is not None and dims != [tuple(d) for d in expect_dims]:
        raise CheckpointError(f"checkpoint layer dims {[list(d) for d in dims]} do not match "
                              f"expected {[list(d) for d in expect_dims]}")
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"]))
        start = base + e["offset"]
        arrays[e["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=start) \
            .reshape(e["shape"]).astype(float)
    L = len(dims)
    model = MlpModel([arrays[f"W{l}"] for l in range(1, L + 1)],
                     [arrays[f"b{l}"] for l in range(1, L + 1)])
    if [tuple(d) for d in model.layer_dims] != dims:
        raise CheckpointError(f"{path}: array shapes disagree with header dims")
    state = None
    if "adam" in header:
        ad = header["adam"]
        n = 2 * L
        state = AdamState([arrays[f"adam_m{i}"] for i in range(n)],
                          [arrays[f"adam_v{i}"] for i in range(n)],
                          t=ad["t"], beta1=ad["beta1"], beta2=ad["beta2"], eps=ad["eps"],
                          schedule=tuple(tuple(s) for s in ad["schedule"]))
    return model, state, header
