"""Gradient pathology measurements: magnitude distributions and zero fractions.

Statistics aggregate per-example weight gradients (biases excluded) over a
fixed batch, streamed in chunks so even the large LeNet dense layer never
materializes all 250 per-example copies at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .tensorops import DTYPE

DEFAULT_ZERO_TOL = 1e-12
DEFAULT_BINS = 101


@dataclass
class GradientStats:
    model_id: str
    layer_index: int
    bin_edges: np.ndarray
    counts: np.ndarray
    min: float
    max: float
    mean: float
    stddev: float
    zero_fraction: float
    n_elements: int
    batch: dict = field(default_factory=dict)

    @property
    def max_abs(self) -> float:
        return max(abs(self.min), abs(self.max))


def weight_param_index(arch: nn.Architecture, layer_index: int) -> int:
    """Index into Model.params of the weight tensor at an architecture layer."""
    for p, (li, which) in enumerate(nn.param_layer_map(arch)):
        if li == layer_index and which == "W":
            return p
    kind = arch.layers[layer_index].kind if 0 <= layer_index < len(arch.layers) else "missing"
    raise ValueError(f"layer {layer_index} ({kind}) has no parameters")


def first_dense_layer_index(arch: nn.Architecture) -> int:
    for i, spec in enumerate(arch.layers):
        if spec.kind == "dense":
            return i
    raise ValueError("architecture has no dense layer")


def layer_gradient_stats(model: nn.Model, batch: np.ndarray, labels, layer_index: int,
                         zero_tol: float = DEFAULT_ZERO_TOL, bins: int = DEFAULT_BINS,
                         chunk_size: int = 16) -> GradientStats:
    """Distribution of one layer's per-example weight gradients over a batch.

    Two streamed passes: the first finds the range and the moments, the
    second fills `bins` uniform histogram bins over the observed [min, max].
    """
    from .training import model_id

    p_idx = weight_param_index(model.arch, layer_index)
    vmin, vmax = np.inf, -np.inf
    total = 0
    zeros = 0
    s1 = 0.0
    s2 = 0.0
    for _, grads in nn.per_example_gradient_chunks(model, batch, labels, chunk_size):
        g = grads[p_idx].ravel()
        vmin = min(vmin, float(g.min()))
        vmax = max(vmax, float(g.max()))
        total += g.size
        zeros += int(np.sum(np.abs(g) <= zero_tol))
        s1 += float(g.sum())
        s2 += float(np.sum(g * g))
    if total == 0:
        raise ValueError("empty batch")
    if vmax <= vmin:
        vmax = vmin + 1e-30  # degenerate constant distribution
    edges = np.linspace(vmin, vmax, bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    for _, grads in nn.per_example_gradient_chunks(model, batch, labels, chunk_size):
        counts += np.histogram(grads[p_idx].ravel(), bins=edges)[0]
    mean = s1 / total
    var = max(s2 / total - mean * mean, 0.0)
    return GradientStats(
        model_id=model_id(model.metadata),
        layer_index=layer_index,
        bin_edges=edges,
        counts=counts,
        min=vmin,
        max=vmax,
        mean=mean,
        stddev=float(np.sqrt(var)),
        zero_fraction=zeros / total,
        n_elements=total,
        batch={"n": int(batch.shape[0]), "zero_tol": zero_tol},
    )


def zero_fraction_profile(model: nn.Model, batch: np.ndarray, labels,
                          zero_tol: float = DEFAULT_ZERO_TOL) -> list:
    """(layer_index, zero gradient fraction) per parameterized layer, in order.

    Fractions are over the batch-mean weight gradient: an entry counts as
    zero only when no example in the batch contributes to it, which is what
    the per-layer zero-percentage plot measures.
    """
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    grads = nn.param_gradients(model, batch, labels)
    out = []
    for p, (li, which) in enumerate(nn.param_layer_map(model.arch)):
        if which != "W":
            continue
        g = grads[p]
        out.append((li, float(np.mean(np.abs(g) <= zero_tol))))
    return out
