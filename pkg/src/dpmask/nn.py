"""Fixed-architecture conv nets with hand-written forward and backward passes.

Two architectures are supported (a LeNet variant and a small custom conv
net), both over 28x28x1 inputs with 10 output logits. Backpropagation is
derived per layer; there is no autodiff. The backward walk supports four
products from one forward cache:

  * summed parameter gradients over a batch (and the batch mean),
  * per-example parameter gradients,
  * per-example squared gradient norms (dense layers use the rank-1
    factorization ||a x dz||_F^2 = ||a||^2 ||dz||^2, so nothing large is
    materialized),
  * the gradient with respect to the input pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensorops import DTYPE, SeededRng

INPUT_SHAPE = (28, 28, 1)
NUM_CLASSES = 10

ARCH_LENET = "lenet"
ARCH_CUSTOM = "custom"


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | avgpool | maxpool | flatten | dense
    filters: Optional[int] = None
    units: Optional[int] = None
    kernel: Optional[tuple] = None
    stride: Optional[int] = None
    padding: Optional[str] = None  # valid | same
    activation: str = "none"  # relu | none

    def __post_init__(self):
        windowed = self.kind in ("conv", "avgpool", "maxpool")
        if windowed != (self.kernel is not None and self.stride is not None and self.padding is not None):
            raise ValueError(f"kernel/stride/padding must be present iff windowed layer, got {self}")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "dense")


@dataclass(frozen=True)
class Architecture:
    name: str
    layers: tuple
    pool_stride: int = 1


def architecture(name: str, pool_stride: int = 1) -> Architecture:
    """Expand an architecture name into its fixed layer list.

    pool_stride defaults to 1 exactly as specified for both nets; pass 2 to
    compare against the conventional non-overlapping pooling variant.
    """
    ps = int(pool_stride)
    if name == ARCH_LENET:
        layers = (
            LayerSpec("conv", filters=6, kernel=(3, 3), stride=1, padding="valid", activation="relu"),
            LayerSpec("avgpool", kernel=(2, 2), stride=ps, padding="valid"),
            LayerSpec("conv", filters=16, kernel=(3, 3), stride=1, padding="valid", activation="relu"),
            LayerSpec("avgpool", kernel=(2, 2), stride=ps, padding="valid"),
            LayerSpec("flatten"),
            LayerSpec("dense", units=120, activation="relu"),
            LayerSpec("dense", units=84, activation="relu"),
            LayerSpec("dense", units=NUM_CLASSES, activation="none"),
        )
    elif name == ARCH_CUSTOM:
        layers = (
            LayerSpec("conv", filters=16, kernel=(8, 8), stride=2, padding="same", activation="relu"),
            LayerSpec("maxpool", kernel=(2, 2), stride=ps, padding="valid"),
            LayerSpec("conv", filters=32, kernel=(4, 4), stride=2, padding="valid", activation="relu"),
            LayerSpec("maxpool", kernel=(2, 2), stride=ps, padding="valid"),
            LayerSpec("flatten"),
            LayerSpec("dense", units=32, activation="relu"),
            LayerSpec("dense", units=NUM_CLASSES, activation="none"),
        )
    else:
        raise ValueError(f"unknown architecture {name!r} (expected {ARCH_LENET!r} or {ARCH_CUSTOM!r})")
    return Architecture(name=name, layers=layers, pool_stride=ps)


@dataclass
class Model:
    arch: Architecture
    params: list  # [W, b] per trainable layer, architecture order
    metadata: dict = field(default_factory=dict)


# GradientSet: list of arrays, one per entry of Model.params, same shapes.
GradientSet = list


def _same_padding(size: int, kernel: int, stride: int) -> tuple:
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    beg = total // 2
    return beg, total - beg


def _window_out(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return math.ceil(size / stride)
    return (size - kernel) // stride + 1


def layer_output_shape(spec: LayerSpec, in_shape: tuple) -> tuple:
    if spec.kind == "conv":
        h, w, _ = in_shape
        kh, kw = spec.kernel
        return (
            _window_out(h, kh, spec.stride, spec.padding),
            _window_out(w, kw, spec.stride, spec.padding),
            spec.filters,
        )
    if spec.kind in ("avgpool", "maxpool"):
        h, w, c = in_shape
        kh, kw = spec.kernel
        return (_window_out(h, kh, spec.stride, "valid"), _window_out(w, kw, spec.stride, "valid"), c)
    if spec.kind == "flatten":
        return (int(np.prod(in_shape)),)
    if spec.kind == "dense":
        return (spec.units,)
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def param_shapes(arch: Architecture) -> list:
    """Parameter tensor shapes in Model.params order, fixed by the architecture."""
    shapes = []
    in_shape = INPUT_SHAPE
    for spec in arch.layers:
        if spec.kind == "conv":
            kh, kw = spec.kernel
            shapes.append((kh, kw, in_shape[2], spec.filters))
            shapes.append((spec.filters,))
        elif spec.kind == "dense":
            shapes.append((in_shape[0], spec.units))
            shapes.append((spec.units,))
        in_shape = layer_output_shape(spec, in_shape)
    return shapes


def param_layer_map(arch: Architecture) -> list:
    """(layer_index, 'W'|'b') for each entry of Model.params."""
    out = []
    for i, spec in enumerate(arch.layers):
        if spec.has_params:
            out.append((i, "W"))
            out.append((i, "b"))
    return out


def build_model(arch: Architecture, seed: int) -> Model:
    """Initialize parameters with Glorot-uniform weights and zero biases."""
    rng = SeededRng(seed).fork(0)
    params = []
    in_shape = INPUT_SHAPE
    for spec in arch.layers:
        if spec.kind == "conv":
            kh, kw = spec.kernel
            cin, f = in_shape[2], spec.filters
            fan_in, fan_out = kh * kw * cin, kh * kw * f
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            params.append(rng.uniform((kh, kw, cin, f), -limit, limit))
            params.append(np.zeros(f, dtype=DTYPE))
        elif spec.kind == "dense":
            fan_in, fan_out = in_shape[0], spec.units
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            params.append(rng.uniform((fan_in, fan_out), -limit, limit))
            params.append(np.zeros(spec.units, dtype=DTYPE))
        in_shape = layer_output_shape(spec, in_shape)
    return Model(arch=arch, params=params, metadata={"seed": int(seed), "pool_stride": arch.pool_stride})


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def _check_input(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4 or x.shape[1:] != INPUT_SHAPE:
        raise ValueError(f"expected input of shape (N, 28, 28, 1), got {x.shape}")
    return x


def _conv_cols(x: np.ndarray, spec: LayerSpec) -> tuple:
    """im2col: returns (cols (N, oh*ow, kh*kw*cin), padded shape, pads, out hw)."""
    kh, kw = spec.kernel
    s = spec.stride
    if spec.padding == "same":
        ph = _same_padding(x.shape[1], kh, s)
        pw = _same_padding(x.shape[2], kw, s)
        xp = np.pad(x, ((0, 0), ph, pw, (0, 0)))
    else:
        ph = pw = (0, 0)
        xp = x
    oh = _window_out(x.shape[1], kh, s, spec.padding)
    ow = _window_out(x.shape[2], kw, s, spec.padding)
    # (N, H', W', C, kh, kw) -> stride-sample -> (N, oh, ow, kh, kw, C)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::s, ::s]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(x.shape[0], oh * ow, kh * kw * x.shape[3]), xp.shape, (ph, pw), (oh, ow)


def _cols_to_input(dcols: np.ndarray, spec: LayerSpec, padded_shape, pads, out_hw, cin: int) -> np.ndarray:
    """Scatter im2col gradients back to the (unpadded) input."""
    kh, kw = spec.kernel
    s = spec.stride
    oh, ow = out_hw
    n = dcols.shape[0]
    d6 = dcols.reshape(n, oh, ow, kh, kw, cin)
    dxp = np.zeros(padded_shape, dtype=DTYPE)
    for di in range(kh):
        for dj in range(kw):
            dxp[:, di : di + s * oh : s, dj : dj + s * ow : s, :] += d6[:, :, :, di, dj, :]
    (pt, pb), (pl, pr) = pads
    return dxp[:, pt : padded_shape[1] - pb, pl : padded_shape[2] - pr, :]


def _pool_windows(x: np.ndarray, spec: LayerSpec) -> np.ndarray:
    kh, kw = spec.kernel
    s = spec.stride
    return sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::s, ::s]  # (N, oh, ow, C, kh, kw)


def forward_cached(model: Model, x: np.ndarray) -> tuple:
    """Run the network; return (logits, caches) with enough state for backward."""
    x = _check_input(x)
    a = x
    caches = []
    p = 0
    for spec in model.arch.layers:
        if spec.kind == "conv":
            W, b = model.params[p], model.params[p + 1]
            p += 2
            cols, padded_shape, pads, out_hw = _conv_cols(a, spec)
            z = cols @ W.reshape(-1, W.shape[-1]) + b
            z = z.reshape(a.shape[0], out_hw[0], out_hw[1], W.shape[-1])
            out = np.maximum(z, 0.0) if spec.activation == "relu" else z
            caches.append({"cols": cols, "padded_shape": padded_shape, "pads": pads,
                           "out_hw": out_hw, "cin": a.shape[3], "z": z})
            a = out
        elif spec.kind == "avgpool":
            win = _pool_windows(a, spec)
            caches.append({"in_shape": a.shape})
            a = win.mean(axis=(4, 5))
        elif spec.kind == "maxpool":
            win = _pool_windows(a, spec)
            kh, kw = spec.kernel
            flat = win.reshape(win.shape[:4] + (kh * kw,))
            amax = flat.argmax(axis=-1)  # first max in row-major window scan
            caches.append({"in_shape": a.shape, "amax": amax})
            a = np.take_along_axis(flat, amax[..., None], axis=-1)[..., 0]
        elif spec.kind == "flatten":
            caches.append({"in_shape": a.shape})
            a = a.reshape(a.shape[0], -1)
        elif spec.kind == "dense":
            W, b = model.params[p], model.params[p + 1]
            p += 2
            z = a @ W + b
            out = np.maximum(z, 0.0) if spec.activation == "relu" else z
            caches.append({"a_in": a, "z": z})
            a = out
    return a, caches


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Logits of shape (N, 10)."""
    return forward_cached(model, x)[0]


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _check_labels(labels, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
        raise ValueError(f"labels out of range 0..{NUM_CLASSES - 1}")
    return labels.astype(np.int64)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(logits: np.ndarray, labels) -> float:
    """Mean over the batch of -log softmax(logits)[label], max-stabilized."""
    logits = np.asarray(logits, dtype=DTYPE)
    labels = _check_labels(labels, logits.shape[0])
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(len(labels)), labels]))


def cross_entropy_dlogits(logits: np.ndarray, labels, mean: bool = True) -> np.ndarray:
    """d loss / d logits; divided by N when mean, else one per-example row each."""
    labels = _check_labels(labels, logits.shape[0])
    d = softmax(logits)
    d[np.arange(len(labels)), labels] -= 1.0
    if mean:
        d /= logits.shape[0]
    return d


def cw_margin_dlogits(logits: np.ndarray, labels, k: float = 0.0) -> np.ndarray:
    """Gradient of the untargeted margin max(Z_y - max_{i!=y} Z_i, -k) per example."""
    labels = _check_labels(labels, logits.shape[0])
    n = logits.shape[0]
    idx = np.arange(n)
    masked = logits.copy()
    masked[idx, labels] = -np.inf
    runner_up = masked.argmax(axis=1)
    margin = logits[idx, labels] - masked[idx, runner_up]
    d = np.zeros_like(logits)
    active = margin > -k
    d[idx[active], labels[active]] = 1.0
    d[idx[active], runner_up[active]] = -1.0
    return d


def cw_margins(logits: np.ndarray, labels) -> np.ndarray:
    """Untargeted margin Z_y - max_{i!=y} Z_i per example (positive = still correct)."""
    labels = _check_labels(labels, logits.shape[0])
    idx = np.arange(logits.shape[0])
    masked = logits.copy()
    masked[idx, labels] = -np.inf
    return logits[idx, labels] - masked.max(axis=1)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def _backward(model: Model, caches: list, dlogits: np.ndarray, mode: str = "sum",
              want_input_grad: bool = False):
    """Shared backward walk.

    mode 'sum':   gradients summed over the batch.
    mode 'per':   per-example gradients, leading batch dim on every array.
    mode 'sqnorm': per-example squared global gradient norms, shape (N,).
    mode 'input': no parameter gradients at all (cheap path for attacks).
    Returns (grads-or-sqnorms or None, dx or None).
    """
    n = dlogits.shape[0]
    grads = [None] * len(model.params) if mode in ("sum", "per") else None
    sqn = np.zeros(n, dtype=DTYPE) if mode == "sqnorm" else None
    d = dlogits
    p = len(model.params)
    for li in range(len(model.arch.layers) - 1, -1, -1):
        spec = model.arch.layers[li]
        cache = caches[li]
        last_layer = li == 0 and not want_input_grad
        if spec.kind == "dense":
            p -= 2
            W = model.params[p]
            dz = d * (cache["z"] > 0) if spec.activation == "relu" else d
            a_in = cache["a_in"]
            if mode == "sum":
                grads[p] = a_in.T @ dz
                grads[p + 1] = dz.sum(axis=0)
            elif mode == "per":
                grads[p] = np.einsum("ni,nj->nij", a_in, dz)
                grads[p + 1] = dz.copy()
            elif mode == "sqnorm":
                # rank-1: ||a dz^T||_F^2 = ||a||^2 ||dz||^2
                dz_sq = np.einsum("nj,nj->n", dz, dz)
                sqn += np.einsum("ni,ni->n", a_in, a_in) * dz_sq + dz_sq
            d = None if last_layer and mode != "sqnorm" else dz @ W.T
        elif spec.kind == "flatten":
            d = d.reshape(cache["in_shape"])
        elif spec.kind == "avgpool":
            kh, kw = spec.kernel
            s = spec.stride
            in_shape = cache["in_shape"]
            oh, ow = d.shape[1], d.shape[2]
            dshare = d / (kh * kw)
            dx = np.zeros(in_shape, dtype=DTYPE)
            for di in range(kh):
                for dj in range(kw):
                    dx[:, di : di + s * oh : s, dj : dj + s * ow : s, :] += dshare
            d = dx
        elif spec.kind == "maxpool":
            kh, kw = spec.kernel
            s = spec.stride
            in_shape = cache["in_shape"]
            amax = cache["amax"]
            oh, ow = d.shape[1], d.shape[2]
            dx = np.zeros(in_shape, dtype=DTYPE)
            for widx in range(kh * kw):
                di, dj = divmod(widx, kw)
                dx[:, di : di + s * oh : s, dj : dj + s * ow : s, :] += d * (amax == widx)
            d = dx
        elif spec.kind == "conv":
            p -= 2
            W = model.params[p]
            dz = d * (cache["z"] > 0) if spec.activation == "relu" else d
            f = W.shape[-1]
            dzf = dz.reshape(n, -1, f)
            cols = cache["cols"]
            if mode == "sum":
                grads[p] = np.tensordot(cols, dzf, axes=([0, 1], [0, 1])).reshape(W.shape)
                grads[p + 1] = dzf.sum(axis=(0, 1))
            elif mode == "per":
                # batched matmul hits BLAS; einsum over 3 operands does not
                grads[p] = np.matmul(cols.transpose(0, 2, 1), dzf).reshape((n,) + W.shape)
                grads[p + 1] = dzf.sum(axis=1)
            elif mode == "sqnorm":
                per = np.matmul(cols.transpose(0, 2, 1), dzf)
                sqn += np.einsum("nkf,nkf->n", per, per)
                db = dzf.sum(axis=1)
                sqn += np.einsum("nf,nf->n", db, db)
            if last_layer:
                d = None
            else:
                dcols = dzf @ W.reshape(-1, f).T
                d = _cols_to_input(dcols, spec, cache["padded_shape"], cache["pads"],
                                   cache["out_hw"], cache["cin"])
    if mode == "sqnorm":
        return sqn, None
    return grads, (d if want_input_grad else None)


def param_gradients(model: Model, batch: np.ndarray, labels) -> GradientSet:
    """Mean-over-batch gradient of the cross-entropy loss for every parameter."""
    batch = _check_input(batch)
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    logits, caches = forward_cached(model, batch)
    grads, _ = _backward(model, caches, cross_entropy_dlogits(logits, labels, mean=True))
    return grads


def per_example_gradient_chunks(model: Model, batch: np.ndarray, labels,
                                chunk_size: int = 32) -> Iterator:
    """Yield (start, grads) where each grads array has a leading chunk dim.

    Chunking caps the working set: a full LeNet per-example batch would not
    fit in memory.
    """
    batch = _check_input(batch)
    labels = _check_labels(labels, batch.shape[0])
    for start in range(0, batch.shape[0], chunk_size):
        xb = batch[start : start + chunk_size]
        yb = labels[start : start + chunk_size]
        logits, caches = forward_cached(model, xb)
        grads, _ = _backward(model, caches, cross_entropy_dlogits(logits, yb, mean=False), mode="per")
        yield start, grads


def per_example_gradients(model: Model, batch: np.ndarray, labels,
                          chunk_size: int = 32) -> list:
    """One GradientSet per example; entry i equals param_gradients on {example i}."""
    if np.asarray(batch).shape[0] == 0:
        raise ValueError("empty batch")
    out = []
    for _, grads in per_example_gradient_chunks(model, batch, labels, chunk_size):
        for i in range(grads[0].shape[0]):
            out.append([g[i] for g in grads])
    return out


def per_example_sq_norms(model: Model, caches: list, dlogits: np.ndarray) -> np.ndarray:
    """Squared global L2 norm of each example's parameter gradient."""
    sqn, _ = _backward(model, caches, dlogits, mode="sqnorm")
    return sqn


def summed_gradients(model: Model, caches: list, dlogits: np.ndarray) -> GradientSet:
    grads, _ = _backward(model, caches, dlogits, mode="sum")
    return grads


LOSS_KINDS = ("cross_entropy", "cw")


def input_gradient(model: Model, x: np.ndarray, y, loss_kind: str = "cross_entropy",
                   cw_k: float = 0.0) -> np.ndarray:
    """Gradient of the chosen per-example loss w.r.t. input pixels.

    Rows are independent: each example's slice is the gradient of its own
    (unaveraged) loss.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"invalid loss_kind {loss_kind!r}, expected one of {LOSS_KINDS}")
    x = _check_input(x)
    logits, caches = forward_cached(model, x)
    if loss_kind == "cross_entropy":
        d = cross_entropy_dlogits(logits, y, mean=False)
    else:
        d = cw_margin_dlogits(logits, y, k=cw_k)
    _, dx = _backward(model, caches, d, mode="input", want_input_grad=True)
    return dx


def predict(model: Model, batch: np.ndarray) -> np.ndarray:
    """Argmax class per example; ties resolve to the lowest class index."""
    return logits_predict(forward(model, batch))


def logits_predict(logits: np.ndarray) -> np.ndarray:
    return np.asarray(logits).argmax(axis=1)


def accuracy(model: Model, dataset, batch_size: int = 500) -> float:
    """Fraction of correct predictions over a Dataset or an (images, labels) pair."""
    if hasattr(dataset, "images"):
        images, labels = dataset.images, dataset.labels
    else:
        images, labels = dataset
    if len(labels) == 0:
        raise ValueError("empty dataset")
    correct = 0
    for start in range(0, len(labels), batch_size):
        xb = images[start : start + batch_size]
        correct += int(np.sum(predict(model, xb) == labels[start : start + batch_size]))
    return correct / len(labels)
