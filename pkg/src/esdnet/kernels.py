"""Raw numpy forward/backward kernels on NCHW arrays.

Everything here is stateless and deterministic: reductions run in a fixed
order and no kernel depends on thread scheduling. The differentiable
wrappers in :mod:`esdnet.autodiff` call into these.
"""

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit

from .errors import ContractError

# im2col buffers above this size are split into row chunks
COL_BUDGET_BYTES = 64 * 1024 * 1024


def conv_out_size(n, k, stride, dilation, padding):
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _check_conv(x, w, b, stride, dilation, padding):
    if x.ndim != 4 or w.ndim != 4:
        raise ContractError(f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ContractError(
            f"conv2d channel mismatch: input has {x.shape[1]}, kernel expects {w.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ContractError(f"conv2d bias shape {b.shape} != ({w.shape[0]},)")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ContractError(f"bad conv2d geometry stride={stride} dilation={dilation} padding={padding}")
    ho = conv_out_size(x.shape[2], w.shape[2], stride, dilation, padding)
    wo = conv_out_size(x.shape[3], w.shape[3], stride, dilation, padding)
    if ho < 1 or wo < 1:
        raise ContractError(f"conv2d output would be empty for input {x.shape} and kernel {w.shape}")
    return ho, wo


def _pad(x, p):
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _row_chunks(n, rows, per_row_bytes):
    """Yield (sample slice, row start, row stop) blocks that respect the col budget."""
    if n * rows * per_row_bytes <= COL_BUDGET_BYTES:
        yield slice(0, n), 0, rows
        return
    step = max(1, COL_BUDGET_BYTES // max(per_row_bytes, 1))
    for i in range(n):
        for r0 in range(0, rows, step):
            yield slice(i, i + 1), r0, min(rows, r0 + step)


def _cols(xp, kh, kw, s, d, r0, r1, wo):
    """im2col for output rows [r0, r1): returns (n, C*kh*kw, rows*wo) copy."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    base = xp[:, :, r0 * s:]
    view = as_strided(base, (n, c, kh, kw, r1 - r0, wo),
                      (sn, sc, sh * d, sw * d, sh * s, sw * s), writeable=False)
    return view.reshape(n, c * kh * kw, (r1 - r0) * wo)


def conv2d(x, w, b=None, stride=1, dilation=1, padding=0):
    ho, wo = _check_conv(x, w, b, stride, dilation, padding)
    n = x.shape[0]
    o, c, kh, kw = w.shape
    xp = _pad(x, padding)
    w2 = w.reshape(o, c * kh * kw)
    out = np.empty((n, o, ho, wo), dtype=np.result_type(x, w))
    per_row = c * kh * kw * wo * x.itemsize
    for ns, r0, r1 in _row_chunks(n, ho, per_row):
        cols = _cols(xp[ns], kh, kw, stride, dilation, r0, r1, wo)
        out[ns, :, r0:r1] = np.matmul(w2, cols).reshape(-1, o, r1 - r0, wo)
    if b is not None:
        out += b.reshape(1, o, 1, 1)
    return out


def conv2d_backward(g, x, w, stride=1, dilation=1, padding=0, need_x=True, need_w=True):
    """Return (dx, dw, db); entries not requested come back as None."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = g.shape[2:]
    xp = _pad(x, padding) if need_w else None
    w2 = w.reshape(o, c * kh * kw)
    dw = np.zeros((o, c * kh * kw), dtype=w.dtype) if need_w else None
    dxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=x.dtype) if need_x else None
    per_row = c * kh * kw * wo * x.itemsize
    s, d = stride, dilation
    for ns, r0, r1 in _row_chunks(n, ho, per_row):
        gc = g[ns, :, r0:r1].reshape(-1, o, (r1 - r0) * wo)
        if need_w:
            cols = _cols(xp[ns], kh, kw, s, d, r0, r1, wo)
            dw += np.matmul(gc, cols.transpose(0, 2, 1)).sum(axis=0)
        if need_x:
            dcols = np.matmul(w2.T, gc).reshape(-1, c, kh, kw, r1 - r0, wo)
            for i in range(kh):
                y0 = r0 * s + i * d
                for j in range(kw):
                    x0 = j * d
                    dxp[ns, :, y0:y0 + s * (r1 - r0 - 1) + 1:s, x0:x0 + s * (wo - 1) + 1:s] += dcols[:, :, i, j]
    dx = None
    if need_x:
        dx = dxp[:, :, padding:padding + h, padding:padding + wd] if padding else dxp
        dx = np.ascontiguousarray(dx)
    if need_w:
        dw = dw.reshape(w.shape)
    db = g.sum(axis=(0, 2, 3))
    return dx, dw, db


def pixel_unshuffle(x, r):
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ContractError(f"pixel_shuffle down needs H, W divisible by {r}, got {h}x{w}")
    y = x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(y).reshape(n, c * r * r, h // r, w // r)


def pixel_shuffle(x, r):
    n, c, h, w = x.shape
    if c % (r * r):
        raise ContractError(f"pixel_shuffle up needs C divisible by {r * r}, got {c}")
    y = x.reshape(n, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(y).reshape(n, c // (r * r), h * r, w * r)


@lru_cache(maxsize=256)
def interp_matrix(n_in, n_out, dtype=np.float64):
    """Half-pixel bilinear weights mapping ``n_in`` samples onto ``n_out``."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for dst in range(n_out):
        src = min(max((dst + 0.5) * scale - 0.5, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        f = src - i0
        m[dst, i0] += 1.0 - f
        m[dst, i1] += f
    m = m.astype(dtype)
    m.setflags(write=False)
    return m


def _apply_separable(x, my, mx):
    n, c, h, w = x.shape
    oh, ow = my.shape[0], mx.shape[0]
    t = x.reshape(n * c * h, w) @ mx.T                     # (nch, ow)
    t = t.reshape(n * c, h, ow).transpose(0, 2, 1).reshape(n * c * ow, h) @ my.T
    return np.ascontiguousarray(t.reshape(n, c, ow, oh).transpose(0, 1, 3, 2))


def resize_bilinear(x, out_h, out_w):
    if out_h < 1 or out_w < 1:
        raise ContractError(f"resize target must be positive, got {out_h}x{out_w}")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return x.copy()
    return _apply_separable(x, interp_matrix(h, out_h, x.dtype), interp_matrix(w, out_w, x.dtype))


def resize_bilinear_backward(g, in_h, in_w):
    oh, ow = g.shape[2:]
    if (oh, ow) == (in_h, in_w):
        return g
    my = interp_matrix(in_h, oh, g.dtype)
    mx = interp_matrix(in_w, ow, g.dtype)
    return _apply_separable(g, my.T, mx.T)


def global_avg_pool(x):
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ContractError("global_avg_pool needs non-empty spatial extent")
    # shifting by the corner value keeps constant maps exact
    ref = x[:, :, 0, 0]
    return ref + (x - ref[:, :, None, None]).mean(axis=(2, 3))


def maxpool2x2(x):
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ContractError(f"maxpool2x2 needs at least 2x2 input, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    win = x[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(g, idx, in_shape):
    n, c, h, w = in_shape
    h2, w2 = g.shape[2:]
    onehot = (idx[..., None] == np.arange(4)) * g[..., None]
    win = onehot.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    dx = np.zeros(in_shape, dtype=g.dtype)
    dx[:, :, :2 * h2, :2 * w2] = win
    return dx


def sigmoid(x):
    return expit(x)
