"""Independent reference implementations used as test oracles.

Everything here is deliberately written as plain scalar loops (or direct
formula transcriptions) with no shared code paths into the package, so a
bug in the engine cannot hide in its own oracle.
"""

import math

import numpy as np


def scalar_forward(model, image):
    """Nested-loop forward pass over one (28, 28, 1) image; returns logits list."""
    a = [[[float(image[i, j, c]) for c in range(image.shape[2])]
          for j in range(image.shape[1])] for i in range(image.shape[0])]
    flat = None
    p = 0
    for spec in model.arch.layers:
        if spec.kind == "conv":
            W, b = model.params[p], model.params[p + 1]
            p += 2
            kh, kw = spec.kernel
            s = spec.stride
            h, w, cin = len(a), len(a[0]), len(a[0][0])
            if spec.padding == "same":
                oh, ow = math.ceil(h / s), math.ceil(w / s)
                pad_h = max((oh - 1) * s + kh - h, 0)
                pad_w = max((ow - 1) * s + kw - w, 0)
                pt, pl = pad_h // 2, pad_w // 2
            else:
                oh, ow = (h - kh) // s + 1, (w - kw) // s + 1
                pt = pl = 0
            out = [[[0.0] * spec.filters for _ in range(ow)] for _ in range(oh)]
            for i in range(oh):
                for j in range(ow):
                    for f in range(spec.filters):
                        acc = float(b[f])
                        for di in range(kh):
                            for dj in range(kw):
                                si, sj = i * s + di - pt, j * s + dj - pl
                                if 0 <= si < h and 0 <= sj < w:
                                    for c in range(cin):
                                        acc += a[si][sj][c] * float(W[di, dj, c, f])
                        if spec.activation == "relu" and acc < 0.0:
                            acc = 0.0
                        out[i][j][f] = acc
            a = out
        elif spec.kind in ("avgpool", "maxpool"):
            kh, kw = spec.kernel
            s = spec.stride
            h, w, c = len(a), len(a[0]), len(a[0][0])
            oh, ow = (h - kh) // s + 1, (w - kw) // s + 1
            out = [[[0.0] * c for _ in range(ow)] for _ in range(oh)]
            for i in range(oh):
                for j in range(ow):
                    for ch in range(c):
                        vals = [a[i * s + di][j * s + dj][ch] for di in range(kh) for dj in range(kw)]
                        out[i][j][ch] = (sum(vals) / len(vals)) if spec.kind == "avgpool" else max(vals)
            a = out
        elif spec.kind == "flatten":
            flat = [a[i][j][c] for i in range(len(a)) for j in range(len(a[0])) for c in range(len(a[0][0]))]
        elif spec.kind == "dense":
            W, b = model.params[p], model.params[p + 1]
            p += 2
            out = []
            for u in range(spec.units):
                acc = float(b[u])
                for i, v in enumerate(flat):
                    acc += v * float(W[i, u])
                if spec.activation == "relu" and acc < 0.0:
                    acc = 0.0
                out.append(acc)
            flat = out
    return flat


def scalar_cross_entropy(logits_row, label):
    """Direct -log softmax for a single example."""
    m = max(logits_row)
    exps = [math.exp(v - m) for v in logits_row]
    return math.log(sum(exps)) - (logits_row[label] - m)


def scalar_cw_loss(logits_row, target, k):
    """Eq-style margin: max(max_{i != t} Z_i - Z_t, -k)."""
    other = max(v for i, v in enumerate(logits_row) if i != target)
    return max(other - logits_row[target], -k)


def activation_pattern(model, x):
    """ReLU sign masks and max-pool argmax choices for the current parameters."""
    from dpmask import nn

    _, caches = nn.forward_cached(model, x)
    sig = []
    for spec, cache in zip(model.arch.layers, caches):
        if spec.kind in ("conv", "dense") and spec.activation == "relu":
            sig.append(cache["z"] > 0)
        elif spec.kind == "maxpool":
            sig.append(cache["amax"].copy())
    return sig


def _pattern_stable(model, x, mutate, h):
    """True when the +/-h perturbation leaves every kink decision unchanged.

    Central differences only estimate a derivative where the loss is smooth
    on the probed interval; probes that flip a ReLU sign or a pooling argmax
    are rejected and resampled by the callers.
    """
    mutate(+h)
    plus = activation_pattern(model, x)
    mutate(-2 * h)
    minus = activation_pattern(model, x)
    mutate(+h)
    return all(np.array_equal(a, b) for a, b in zip(plus, minus))


def param_probe_stable(model, x, p_idx, flat_idx, h=1e-5):
    flat = model.params[p_idx].ravel()

    def mutate(d):
        flat[flat_idx] += d

    return _pattern_stable(model, x, mutate, h)


def pixel_probe_stable(model, x, pixel, h=1e-5):
    def mutate(d):
        x[pixel] += d

    return _pattern_stable(model, x, mutate, h)


def fd_param_gradient(model, x, y, p_idx, flat_idx, h=1e-5):
    """Central finite difference of the mean cross-entropy loss w.r.t. one weight."""
    from dpmask import nn

    flat = model.params[p_idx].ravel()
    orig = flat[flat_idx]
    flat[flat_idx] = orig + h
    lp = nn.cross_entropy_loss(nn.forward(model, x), y)
    flat[flat_idx] = orig - h
    lm = nn.cross_entropy_loss(nn.forward(model, x), y)
    flat[flat_idx] = orig
    return (lp - lm) / (2 * h)


def fd_input_gradient(model, x, y, pixel, loss_kind="cross_entropy", k=0.0, h=1e-5):
    """Central finite difference w.r.t. one input pixel of the summed per-example loss."""
    from dpmask import nn

    def total_loss():
        logits = nn.forward(model, x)
        if loss_kind == "cross_entropy":
            return sum(scalar_cross_entropy(list(row), int(lab)) for row, lab in zip(logits, y))
        total = 0.0
        for row, lab in zip(logits, y):
            other = max(v for i, v in enumerate(row) if i != lab)
            total += max(float(row[lab]) - other, -k)
        return total

    orig = x[pixel]
    x[pixel] = orig + h
    lp = total_loss()
    x[pixel] = orig - h
    lm = total_loss()
    x[pixel] = orig
    return (lp - lm) / (2 * h)


def rel_err(a, b, floor=1e-12):
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_close(analytic, fd, rel_tol=1e-4, abs_tol=1e-7, small=1e-6):
    """Spec agreement rule: relative < rel_tol, absolute < abs_tol for tiny values."""
    if abs(analytic) < small and abs(fd) < small:
        return abs(analytic - fd) < abs_tol
    return rel_err(analytic, fd) < rel_tol
