"""Differentiable operators for the HyperCEUNet layer set (NCHW layout)."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make_result, note_decision


def _unbroadcast_rows(g: np.ndarray, shape) -> np.ndarray:
    return g.reshape(shape) if g.shape != shape else g


def _im2col3(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, H*W, 9*C) patches of a zero-padded 3x3 window, tap-major."""
    b, c, h, w = x.shape
    xp = np.zeros((b, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x.transpose(0, 2, 3, 1)
    cols = np.empty((b, h, w, 9, c), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, :, 3 * i + j, :] = xp[:, i:i + h, j:j + w, :]
    return cols.reshape(b, h * w, 9 * c)


def _col2im3(cols: np.ndarray, shape) -> np.ndarray:
    b, c, h, w = shape
    cols = cols.reshape(b, h, w, 9, c)
    xp = np.zeros((b, h + 2, w + 2, c), dtype=cols.dtype)
    for i in range(3):
        for j in range(3):
            xp[:, i:i + h, j:j + w, :] += cols[:, :, :, 3 * i + j, :]
    return xp[:, 1:-1, 1:-1, :].transpose(0, 3, 1, 2)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """3x3 cross-correlation, zero padding 1, stride 1.

    weight is (Cout, Cin, 3, 3) shared over the batch, or (B, Cout, Cin, 3, 3)
    with one kernel per sample; bias is (Cout,) or (B, Cout) to match.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    b, c, h, w = x.shape
    per_sample = weight.ndim == 5
    cout = weight.shape[-4]
    if weight.shape[-3:] != (c, 3, 3) or (per_sample and weight.shape[0] != b):
        raise ValueError(f"conv2d weight {weight.shape} incompatible with input {x.shape}")
    cols = _im2col3(x.data)
    # weights reordered to (Cout, tap, Cin) to match the patch layout
    if per_sample:
        wmat = weight.data.transpose(0, 1, 3, 4, 2).reshape(b, cout, 9 * c)
        out = cols @ wmat.transpose(0, 2, 1)
    else:
        wmat = weight.data.transpose(0, 2, 3, 1).reshape(cout, 9 * c)
        out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + (bias.data[:, None, :] if per_sample else bias.data)
    y = out.reshape(b, h, w, cout).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(b, h * w, cout)
        if weight.requires_grad:
            if per_sample:
                gw = (g2.transpose(0, 2, 1) @ cols).reshape(b, cout, 3, 3, c).transpose(0, 1, 4, 2, 3)
            else:
                gw = (g2.reshape(-1, cout).T @ cols.reshape(-1, 9 * c)).reshape(cout, 3, 3, c).transpose(0, 3, 1, 2)
            weight.accumulate(gw)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g2.sum(axis=1) if per_sample else g2.sum(axis=(0, 1)))
        if x.requires_grad:
            x.accumulate(_col2im3(g2 @ wmat, (b, c, h, w)))

    return make_result(y, parents, backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Kernel 2, stride 2 transposed convolution; weight is (Cin, Cout, 2, 2)."""
    x, weight = as_tensor(x), as_tensor(weight)
    b, c, h, w = x.shape
    if weight.ndim != 4 or weight.shape[0] != c or weight.shape[2:] != (2, 2):
        raise ValueError(f"conv_transpose2d weight {weight.shape} incompatible with input {x.shape}")
    cout = weight.shape[1]
    xf = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    wmat = weight.data.reshape(c, cout * 4)
    out = (xf @ wmat).reshape(b, h, w, cout, 2, 2).transpose(0, 3, 1, 4, 2, 5)
    y = np.ascontiguousarray(out).reshape(b, cout, 2 * h, 2 * w)
    if bias is not None:
        bias = as_tensor(bias)
        y = y + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gf = g.reshape(b, cout, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5).reshape(-1, cout * 4)
        if weight.requires_grad:
            weight.accumulate((xf.T @ gf).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x.accumulate(np.ascontiguousarray((gf @ wmat.T).reshape(b, h, w, c).transpose(0, 3, 1, 2)))

    return make_result(y, parents, backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 non-overlapping max pooling; ties route the gradient to the first index."""
    x = as_tensor(x)
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {(h, w)}")
    win = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)[..., None]
    note_decision(idx)
    y = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        gx = gw.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        x.accumulate(gx)

    return make_result(y, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Fully connected layer: x (..., Din) @ weight(Dout, Din).T + bias."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear weight {weight.shape} incompatible with input {x.shape}")
    y = x.data @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        y = y + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if weight.requires_grad:
            weight.accumulate(g2.T @ x.data.reshape(-1, x.shape[-1]))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g2.sum(axis=0))
        if x.requires_grad:
            x.accumulate(g @ weight.data)

    return make_result(y, parents, backward)


fully_connected = linear


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    note_decision(mask)
    return make_result(x.data * mask, (x,), lambda g: x.accumulate(g * mask))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return make_result(y, (x,), lambda g: x.accumulate(g * y * (1 - y)))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add needs equal shapes, got {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return make_result(a.data + b.data, (a, b), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    x = as_tensor(x)
    b, c, h, w = x.shape
    y = x.data.mean(axis=(2, 3))
    return make_result(y, (x,), lambda g: x.accumulate(
        np.broadcast_to(g[:, :, None, None] / (h * w), x.shape)))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"cannot concatenate {a.shape} and {b.shape}")
    ca = a.shape[1]
    y = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g[:, :ca])
        if b.requires_grad:
            b.accumulate(g[:, ca:])

    return make_result(y, (a, b), backward)


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """x (B, C, H, W) times per-channel factors s (B, C)."""
    x, s = as_tensor(x), as_tensor(s)
    if s.shape != x.shape[:2]:
        raise ValueError(f"scale shape {s.shape} does not match {x.shape[:2]}")
    sv = s.data[:, :, None, None]

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * sv)
        if s.requires_grad:
            s.accumulate((g * x.data).sum(axis=(2, 3)))

    return make_result(x.data * sv, (x, s), backward)


def dropout_mask(shape, p: float, key) -> np.ndarray:
    """Counter-based Bernoulli keep-mask, fully determined by key (e.g. (seed, step, layer))."""
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))
    return gen.random(shape) >= p


def channel_dropout(x: Tensor, p: float, training: bool, key=(0,)) -> Tensor:
    """Zero whole channels with probability p and rescale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    keep = dropout_mask(x.shape[:2], p, key).astype(x.dtype) / (1.0 - p)
    m = keep.reshape(x.shape[:2] + (1,) * (x.ndim - 2))
    return make_result(x.data * m, (x,), lambda g: x.accumulate(g * m))


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    return make_result(x.data.reshape(shape), (x,), lambda g: x.accumulate(g.reshape(x.shape)))


def split_last(x: Tensor, sizes) -> list[Tensor]:
    """Split the trailing axis into consecutive pieces of the given sizes."""
    x = as_tensor(x)
    if sum(sizes) != x.shape[-1]:
        raise ValueError(f"sizes {sizes} do not sum to {x.shape[-1]}")
    out, start = [], 0
    for n in sizes:
        sl = (Ellipsis, slice(start, start + n))

        def backward(g, sl=sl):
            full = np.zeros_like(x.data)
            full[sl] = g
            x.accumulate(full)

        out.append(make_result(x.data[sl].copy(), (x,), backward))
        start += n
    return out


def mse_loss(pred: Tensor, target) -> Tensor:
    """Squared error summed over all elements, divided by the batch size (64-bit scalar)."""
    pred = as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ValueError(f"target shape {t.shape} does not match prediction {pred.shape}")
    bsz = pred.shape[0]
    diff = pred.data - t
    # the scalar loss is kept in 64-bit so small changes stay visible to finite differences
    y = np.asarray(np.sum(diff.astype(np.float64) ** 2) / bsz)
    scale = (2.0 / bsz) * diff
    return make_result(y, (pred,), lambda g: pred.accumulate((g * scale).astype(pred.dtype)))
