"""Trainable model: encoder, decoder, feature filter, and linear classifier.

All four components are fully connected stacks (tanh on hidden layers, final
layer linear) over float64 numpy arrays; the classifier is a bias-free weight
matrix so a logit is exactly a row/feature inner product. Gradients are
hand-derived per layer and checked against finite differences in the test
suite. Losses reduce as: sum over vector components, mean over the batch.

Checkpoints are a little-endian binary of named tensors ("FTLC" magic,
versioned); round trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigInvalid,
    CorruptRecord,
    DimensionMismatch,
    EmptyBatch,
    FormatVersionMismatch,
    LabelOutOfRange,
)
from .numerics import derive_rng

CHECKPOINT_MAGIC = b"FTLC"
CHECKPOINT_VERSION = 1

COMPONENTS = ("enc", "dec", "filt", "fc")


@dataclass
class LayerStack:
    """Fully connected layers; tanh after every layer except the last."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigInvalid("layer stack needs matching, nonempty weight/bias lists")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigInvalid("layer weight must be (out, in) with bias (out,)")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass keeping post-activation outputs for backprop."""
        if x.shape[1] != self.in_dim:
            raise DimensionMismatch(f"stack expects inputs of dim {self.in_dim}, got {x.shape[1]}")
        acts = [x]
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = np.tanh(z) if i < last else z
            acts.append(a)
        return a, acts

    def backward(
        self, acts: list[np.ndarray], d_out: np.ndarray
    ) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
        """Backprop d_out through the stack; returns (d_in, dWs, dbs)."""
        last = len(self.weights) - 1
        grads_w: list[np.ndarray] = [np.empty(0)] * len(self.weights)
        grads_b: list[np.ndarray] = [np.empty(0)] * len(self.weights)
        d = d_out
        for i in range(last, -1, -1):
            dz = d if i == last else d * (1.0 - acts[i + 1] ** 2)
            grads_w[i] = dz.T @ acts[i]
            grads_b[i] = dz.sum(axis=0)
            d = dz @ self.weights[i]
        return d, grads_w, grads_b


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    n_classes: int
    g_dim: int = 32
    f_dim: int = 32
    enc_hidden: tuple[int, ...] = (64,)
    dec_hidden: tuple[int, ...] = (64,)
    filt_hidden: tuple[int, ...] = (64,)

    def validate(self) -> None:
        dims = (self.input_dim, self.n_classes, self.g_dim, self.f_dim)
        if any(v < 1 for v in dims):
            raise ConfigInvalid("network dimensions must be >= 1")
        if any(h < 1 for h in self.enc_hidden + self.dec_hidden + self.filt_hidden):
            raise ConfigInvalid("hidden sizes must be >= 1")


@dataclass
class NetworkParams:
    """Weights of the encoder, decoder, filter, and bias-free classifier."""

    enc: LayerStack
    dec: LayerStack
    filt: LayerStack
    fc: np.ndarray  # (n_classes, f_dim)

    def tensors(self) -> dict[str, np.ndarray]:
        """Named views of every parameter tensor, in a stable order."""
        out: dict[str, np.ndarray] = {}
        for name, stack in (("enc", self.enc), ("dec", self.dec), ("filt", self.filt)):
            for i, (w, b) in enumerate(zip(stack.weights, stack.biases)):
                out[f"{name}.w{i}"] = w
                out[f"{name}.b{i}"] = b
        out["fc.w"] = self.fc
        return out

    def copy(self) -> "NetworkParams":
        def _cp(stack: LayerStack) -> LayerStack:
            return LayerStack([w.copy() for w in stack.weights], [b.copy() for b in stack.biases])

        return NetworkParams(_cp(self.enc), _cp(self.dec), _cp(self.filt), self.fc.copy())

    @property
    def n_classes(self) -> int:
        return self.fc.shape[0]


def _init_stack(rng: np.random.Generator, dims: list[int]) -> LayerStack:
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(3.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return LayerStack(weights, biases)


def init_params(cfg: NetworkConfig, seed: int) -> NetworkParams:
    """Fan-in scaled uniform init, zero biases; deterministic in the seed."""
    cfg.validate()
    rng = derive_rng(seed, "network-init")
    enc = _init_stack(rng, [cfg.input_dim, *cfg.enc_hidden, cfg.g_dim])
    dec = _init_stack(rng, [cfg.g_dim, *cfg.dec_hidden, cfg.input_dim])
    filt = _init_stack(rng, [cfg.g_dim, *cfg.filt_hidden, cfg.f_dim])
    limit = np.sqrt(3.0 / cfg.f_dim)
    fc = rng.uniform(-limit, limit, (cfg.n_classes, cfg.f_dim))
    return NetworkParams(enc=enc, dec=dec, filt=filt, fc=fc)


@dataclass(frozen=True)
class LossWeights:
    alpha_sfmx: float = 1.0
    alpha_recon: float = 1.0
    alpha_reg: float = 0.25

    def __post_init__(self):
        if self.alpha_sfmx < 0 or self.alpha_recon < 0 or self.alpha_reg < 0:
            raise ConfigInvalid("loss weights must be nonnegative")


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def encode(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    xb, single = _as_batch(x)
    g = params.enc.forward(xb)
    return g[0] if single else g


def decode(params: NetworkParams, g: np.ndarray) -> np.ndarray:
    gb, single = _as_batch(g)
    x = params.dec.forward(gb)
    return x[0] if single else x


def filter_features(params: NetworkParams, g: np.ndarray) -> np.ndarray:
    gb, single = _as_batch(g)
    f = params.filt.forward(gb)
    return f[0] if single else f


def logits(params: NetworkParams, f: np.ndarray) -> np.ndarray:
    fb, single = _as_batch(f)
    if fb.shape[1] != params.fc.shape[1]:
        raise DimensionMismatch(f"classifier expects dim {params.fc.shape[1]}, got {fb.shape[1]}")
    z = fb @ params.fc.T
    return z[0] if single else z


def loss_recon(x: np.ndarray, x_prime: np.ndarray) -> float:
    """Squared L2 reconstruction error, summed per sample, averaged over batch."""
    xb, _ = _as_batch(x)
    pb, _ = _as_batch(x_prime)
    if xb.shape != pb.shape:
        raise DimensionMismatch(f"reconstruction shape {pb.shape} differs from input {xb.shape}")
    if xb.shape[0] == 0:
        raise EmptyBatch("reconstruction loss over an empty batch")
    return float(np.mean(np.sum((pb - xb) ** 2, axis=1)))


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.size == 0:
        raise EmptyBatch("no labels in batch")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    return labels


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def loss_softmax(z: np.ndarray, labels: np.ndarray) -> float:
    """Cross-entropy under a max-shifted softmax, averaged over the batch."""
    zb, _ = _as_batch(z)
    labels = _check_labels(labels, zb.shape[1])
    if labels.shape[0] != zb.shape[0]:
        raise DimensionMismatch("one label per logit row required")
    logp = _log_softmax(zb)
    return float(-np.mean(logp[np.arange(zb.shape[0]), labels]))


def loss_ml2(w: np.ndarray, f: np.ndarray) -> float:
    """Metric-L2 penalty: squared norm of the logit vector, batch-averaged."""
    fb, _ = _as_batch(f)
    if w.shape[1] != fb.shape[1]:
        raise DimensionMismatch(f"classifier expects dim {w.shape[1]}, got {fb.shape[1]}")
    if fb.shape[0] == 0:
        raise EmptyBatch("m-L2 loss over an empty batch")
    z = fb @ w.T
    return float(np.mean(np.sum(z * z, axis=1)))


def loss_total(
    params: NetworkParams,
    x: np.ndarray,
    labels: np.ndarray,
    weights: LossWeights,
) -> tuple[float, dict[str, float], dict[str, np.ndarray]]:
    """Composite objective and its gradient for every parameter tensor.

    Returns (total, components, grads) where components holds the three
    unweighted loss terms and grads is keyed like NetworkParams.tensors().
    Callers implement freezing by discarding gradient entries before the
    optimizer step.
    """
    xb, _ = _as_batch(x)
    if xb.shape[0] == 0:
        raise EmptyBatch("loss_total over an empty batch")
    labels = _check_labels(labels, params.n_classes)
    if labels.shape[0] != xb.shape[0]:
        raise DimensionMismatch("one label per sample required")
    n = xb.shape[0]

    g, enc_acts = params.enc.forward_cached(xb)
    x_prime, dec_acts = params.dec.forward_cached(g)
    f, filt_acts = params.filt.forward_cached(g)
    z = f @ params.fc.T

    logp = _log_softmax(z)
    sfmx = float(-np.mean(logp[np.arange(n), labels]))
    recon = float(np.mean(np.sum((x_prime - xb) ** 2, axis=1)))
    reg = float(np.mean(np.sum(z * z, axis=1)))
    total = weights.alpha_sfmx * sfmx + weights.alpha_recon * recon + weights.alpha_reg * reg

    probs = np.exp(logp)
    probs[np.arange(n), labels] -= 1.0
    dz = (weights.alpha_sfmx / n) * probs + (weights.alpha_reg * 2.0 / n) * z

    grads: dict[str, np.ndarray] = {"fc.w": dz.T @ f}
    df = dz @ params.fc
    dg_filt, filt_gw, filt_gb = params.filt.backward(filt_acts, df)
    dxp = (weights.alpha_recon * 2.0 / n) * (x_prime - xb)
    dg_dec, dec_gw, dec_gb = params.dec.backward(dec_acts, dxp)
    _, enc_gw, enc_gb = params.enc.backward(enc_acts, dg_filt + dg_dec)

    for name, gw, gb in (("enc", enc_gw, enc_gb), ("dec", dec_gw, dec_gb), ("filt", filt_gw, filt_gb)):
        for i, (w_grad, b_grad) in enumerate(zip(gw, gb)):
            grads[f"{name}.w{i}"] = w_grad
            grads[f"{name}.b{i}"] = b_grad

    components = {"sfmx": sfmx, "recon": recon, "reg": reg}
    return total, components, grads


def loss_features(
    params: NetworkParams,
    g: np.ndarray,
    labels: np.ndarray,
    weights: LossWeights,
) -> tuple[float, dict[str, np.ndarray]]:
    """Softmax + m-L2 objective for batches entering at the filter.

    Inputs are rich features, so the encoder and decoder are not on the
    computational path at all: their gradients are identically zero and no
    entries for them appear in the returned gradient dict.
    """
    gb, _ = _as_batch(g)
    if gb.shape[0] == 0:
        raise EmptyBatch("feature batch is empty")
    labels = _check_labels(labels, params.n_classes)
    if labels.shape[0] != gb.shape[0]:
        raise DimensionMismatch("one label per feature required")
    n = gb.shape[0]

    f, filt_acts = params.filt.forward_cached(gb)
    z = f @ params.fc.T
    logp = _log_softmax(z)
    sfmx = float(-np.mean(logp[np.arange(n), labels]))
    reg = float(np.mean(np.sum(z * z, axis=1)))
    total = weights.alpha_sfmx * sfmx + weights.alpha_reg * reg

    probs = np.exp(logp)
    probs[np.arange(n), labels] -= 1.0
    dz = (weights.alpha_sfmx / n) * probs + (weights.alpha_reg * 2.0 / n) * z
    grads: dict[str, np.ndarray] = {"fc.w": dz.T @ f}
    _, filt_gw, filt_gb = params.filt.backward(filt_acts, dz @ params.fc)
    for i, (w_grad, b_grad) in enumerate(zip(filt_gw, filt_gb)):
        grads[f"filt.w{i}"] = w_grad
        grads[f"filt.b{i}"] = b_grad
    return total, grads


class Adam:
    """Adaptive-moment optimizer over named tensors.

    Moments are tracked per tensor name; tensors never passed to update()
    (frozen components) keep both their values and their moments untouched.
    A zero learning rate leaves parameters bit-identical.
    """

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate < 0:
            raise ConfigInvalid("learning rate must be nonnegative")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, grad in grads.items():
            p = tensors[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def drop_frozen(grads: dict[str, np.ndarray], frozen: frozenset[str] | set[str]) -> dict[str, np.ndarray]:
    """Remove gradient entries for frozen components ('enc', 'dec', 'filt', 'fc')."""
    unknown = set(frozen) - set(COMPONENTS)
    if unknown:
        raise ConfigInvalid(f"unknown frozen components: {sorted(unknown)}")
    return {k: v for k, v in grads.items() if k.split(".", 1)[0] not in frozen}


def train_step(
    params: NetworkParams,
    x: np.ndarray,
    labels: np.ndarray,
    weights: LossWeights,
    opt: Adam,
    frozen: frozenset[str] | set[str] = frozenset(),
) -> tuple[float, dict[str, float]]:
    """One composite-loss step on raw inputs, honoring the frozen set."""
    total, components, grads = loss_total(params, x, labels, weights)
    opt.update(params.tensors(), drop_frozen(grads, frozen))
    return total, components


def train_step_features(
    params: NetworkParams,
    g: np.ndarray,
    labels: np.ndarray,
    weights: LossWeights,
    opt: Adam,
) -> float:
    """One softmax + m-L2 step on rich-feature batches (filter and classifier only)."""
    total, grads = loss_features(params, g, labels, weights)
    opt.update(params.tensors(), grads)
    return total


def save_checkpoint(params: NetworkParams, path: str | Path) -> None:
    """Write all parameter tensors with shape headers; lossless."""
    tensors = params.tensors()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptRecord(f"checkpoint truncated: wanted {n} bytes, got {len(buf)}")
    return buf


def load_checkpoint(path: str | Path) -> NetworkParams:
    """Read a checkpoint written by save_checkpoint; bit-exact round trip."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != CHECKPOINT_MAGIC:
            raise CorruptRecord("bad magic; not a checkpoint file")
        (version,) = struct.unpack("<H", _read_exact(f, 2))
        if version != CHECKPOINT_VERSION:
            raise FormatVersionMismatch(f"unknown checkpoint version {version}")
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(f, 8 * ndim))
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(f, 8 * size), dtype="<f8").reshape(shape).copy()
            tensors[name] = data
        if f.read(1):
            raise CorruptRecord("trailing bytes after checkpoint payload")

    def _stack(prefix: str) -> LayerStack:
        ws, bs, i = [], [], 0
        while f"{prefix}.w{i}" in tensors:
            ws.append(tensors[f"{prefix}.w{i}"])
            bs.append(tensors[f"{prefix}.b{i}"])
            i += 1
        if not ws:
            raise CorruptRecord(f"checkpoint missing tensors for component {prefix!r}")
        return LayerStack(ws, bs)

    if "fc.w" not in tensors:
        raise CorruptRecord("checkpoint missing classifier tensor fc.w")
    return NetworkParams(enc=_stack("enc"), dec=_stack("dec"), filt=_stack("filt"), fc=tensors["fc.w"])
