"""Spatial tensor operations: convolution, patch pooling, mask pooling, upsampling.

All windowed operations enumerate windows row-major over their origins, so
a patch index produced by :func:`avg_pool_patches` addresses the same window
as the corresponding label from :func:`max_pool2d`.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor


def pool_output_dims(h: int, w: int, kernel: tuple, stride: tuple) -> tuple:
    """Number of (rows, cols) of sliding windows; raises if a window cannot fit."""
    kh, kw = kernel
    sh, sw = stride
    if kh <= 0 or kw <= 0 or sh <= 0 or sw <= 0:
        raise ShapeError(f"kernel {kernel} and stride {stride} must be positive")
    if kh > h or kw > w:
        raise ShapeError(f"kernel {kernel} larger than input {h}x{w}")
    return (h - kh) // sh + 1, (w - kw) // sw + 1


def window_origins(h: int, w: int, kernel: tuple, stride: tuple) -> list:
    """Row-major (row, col) origins of every window, in patch-index order."""
    rows, cols = pool_output_dims(h, w, kernel, stride)
    sh, sw = stride
    return [(a * sh, b * sw) for a in range(rows) for b in range(cols)]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Cross-correlate ``x`` (N,Cin,H,W or Cin,H,W) with ``weight`` (Cout,Cin,kh,kw).

    Implemented as im2col plus one matmul per batch; the backward pass
    redistributes gradients with the mirrored strided-slice loop.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d input must be 3-d or 4-d, got {x.data.shape}")
    wd = weight.data
    if wd.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-d (Cout,Cin,kh,kw), got {wd.shape}")
    n, cin, h, w = xd.shape
    cout, cin_w, kh, kw = wd.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d input channels {cin} != weight in-channels {cin_w}")
    if bias.data.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {bias.data.shape} != ({cout},)")
    sh, sw = stride
    ph, pw = padding
    hp, wp = h + 2 * ph, w + 2 * pw
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    hout = (hp - kh) // sh + 1
    wout = (wp - kw) // sw + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    # channel-first column layout turns the whole batch into one GEMM
    xpt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((cin, kh, kw, n, hout, wout), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xpt[:, :, i:i + sh * (hout - 1) + 1:sh, j:j + sw * (wout - 1) + 1:sw]
    cols2 = cols.reshape(cin * kh * kw, n * hout * wout)
    w2 = wd.reshape(cout, cin * kh * kw)
    out_data = np.ascontiguousarray(
        (w2 @ cols2).reshape(cout, n, hout, wout).transpose(1, 0, 2, 3))
    out_data += bias.data[None, :, None, None]
    if squeeze:
        out_data = out_data[0]

    out = Tensor._make(out_data, (x, weight, bias), None)

    def _bw(g):
        g4 = g[None] if squeeze else g
        g2 = np.ascontiguousarray(g4.transpose(1, 0, 2, 3)).reshape(cout, n * hout * wout)
        if weight.requires_grad:
            weight._add_grad((g2 @ cols2.T).reshape(wd.shape))
        if bias.requires_grad:
            bias._add_grad(g4.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(cin, kh, kw, n, hout, wout)
            dxpt = np.zeros((cin, n, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxpt[:, :, i:i + sh * (hout - 1) + 1:sh, j:j + sw * (wout - 1) + 1:sw] += dcols[:, i, j]
            dxt = dxpt[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else dxpt
            dx = dxt.transpose(1, 0, 2, 3)
            x._add_grad(dx[0] if squeeze else dx)

    out._backward = _bw if out.requires_grad else None
    return out


def avg_pool_patches(u: Tensor, kernel: tuple, stride: tuple) -> Tensor:
    """Extract sliding patches from a (H,W,C) map and average each spatially.

    Returns a (K, C) matrix whose row k is the mean of patch k; windows are
    enumerated row-major over origins.  A leading batch axis is passed
    through: (N,H,W,C) -> (N,K,C).
    """
    batched = u.data.ndim == 4
    if u.data.ndim not in (3, 4):
        raise ShapeError(f"avg_pool_patches expects (H,W,C) or (N,H,W,C), got {u.data.shape}")
    ud = u.data if batched else u.data[None]
    n, h, w, c = ud.shape
    kh, kw = kernel
    sh, sw = stride
    rows, cols = pool_output_dims(h, w, kernel, stride)
    k = rows * cols

    if (kh, kw) == (1, 1) and (sh, sw) == (1, 1):
        out_data = ud.reshape(n, k, c).copy()
    else:
        win = np.lib.stride_tricks.sliding_window_view(ud, (kh, kw), axis=(1, 2))
        win = win[:, ::sh, ::sw]  # (n, rows, cols, c, kh, kw)
        out_data = win.mean(axis=(-2, -1)).reshape(n, k, c)
    if not batched:
        out_data = out_data[0]

    out = Tensor._make(out_data, (u,), None)

    def _bw(g):
        g4 = (g if batched else g[None]).reshape(n, rows, cols, c) / (kh * kw)
        du = np.zeros_like(ud)
        for i in range(kh):
            for j in range(kw):
                du[:, i:i + sh * (rows - 1) + 1:sh, j:j + sw * (cols - 1) + 1:sw, :] += g4
        u._add_grad(du if batched else du[0])

    out._backward = _bw if out.requires_grad else None
    return out


def max_pool2d(mask: np.ndarray, kernel: tuple, stride: tuple) -> np.ndarray:
    """Max-pool a binary (H,W) grid into a K-vector of {0,1} window labels.

    Window k is 1 iff any pixel inside it is 1; enumeration matches
    :func:`avg_pool_patches` exactly so labels align with patches.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeError(f"max_pool2d expects a 2-d mask, got {m.shape}")
    if not np.isin(m, (0, 1)).all():
        raise ValueError("max_pool2d mask must be binary (values in {0, 1})")
    kh, kw = kernel
    sh, sw = stride
    rows, cols = pool_output_dims(m.shape[0], m.shape[1], kernel, stride)
    win = np.lib.stride_tricks.sliding_window_view(m, (kh, kw))
    win = win[::sh, ::sw]
    return win.max(axis=(-2, -1)).reshape(rows * cols).astype(np.uint8)


def _bilinear_weights(src: int, factor: int, dtype) -> np.ndarray:
    """(factor*src, src) interpolation matrix, align-corners-false convention."""
    dst = src * factor
    mat = np.zeros((dst, src), dtype=np.float64)
    for i in range(dst):
        pos = (i + 0.5) / factor - 0.5
        pos = min(max(pos, 0.0), src - 1.0)
        i0 = int(np.floor(pos))
        i1 = min(i0 + 1, src - 1)
        t = pos - i0
        mat[i, i0] += 1.0 - t
        mat[i, i1] += t
    return mat.astype(dtype)


def bilinear_upsample(m: Tensor, factor: int) -> Tensor:
    """Upsample the trailing two axes of ``m`` by an integer factor.

    Sample centers follow (i + 0.5)/factor - 0.5 with edge clamping, so
    factor 1 is the identity and outputs stay within the input's range.
    """
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"upsample factor must be a positive integer, got {factor}")
    if m.data.ndim < 2:
        raise ShapeError(f"bilinear_upsample needs at least 2 dims, got {m.data.shape}")
    if factor == 1:
        return m * 1.0
    h, w = m.data.shape[-2], m.data.shape[-1]
    r = _bilinear_weights(h, factor, m.data.dtype)
    c = _bilinear_weights(w, factor, m.data.dtype)
    out_data = r @ m.data @ c.T
    out = Tensor._make(out_data, (m,), None)

    def _bw(g):
        m._add_grad(r.T @ g @ c)

    out._backward = _bw if out.requires_grad else None
    return out


def bilinear_upsample_array(m: np.ndarray, factor: int) -> np.ndarray:
    """Plain-array variant of :func:`bilinear_upsample` for rendering (float64)."""
    m = np.asarray(m, dtype=np.float64)
    if factor == 1:
        return m.copy()
    r = _bilinear_weights(m.shape[-2], factor, np.float64)
    c = _bilinear_weights(m.shape[-1], factor, np.float64)
    return r @ m @ c.T
