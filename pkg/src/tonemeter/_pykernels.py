"""Pure numpy implementations of the hot kernels.

Signatures and accumulation order match ``_ckernels.pyx`` so both backends
produce the same results; arrays are float64, NHWC, C-contiguous.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Unfold ``(N, H, W, C)`` into ``(N*H*W, kh*kw*C)`` with zero 'same' padding."""
    n, h, w, c = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((n, h + kh - 1, w + kw - 1, c))
    xp[:, ph : ph + h, pw : pw + w, :] = x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (N, H, W, C, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, kh * kw * c)


def col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: fold column gradients back onto the input."""
    n, h, w, c = shape
    ph, pw = kh // 2, kw // 2
    cols = cols.reshape(n, h, w, kh, kw, c)
    xp = np.zeros((n, h + kh - 1, w + kw - 1, c))
    for i in range(kh):
        for j in range(kw):
            xp[:, i : i + h, j : j + w, :] += cols[:, :, :, i, j, :]
    return np.ascontiguousarray(xp[:, ph : ph + h, pw : pw + w, :])


def maxpool_forward(x: np.ndarray):
    """2x2/stride-2 max pooling. Returns ``(out, argmax)``; argmax in 0..3, row-major, first max wins."""
    n, h, w, c = x.shape
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx.astype(np.intp)


def maxpool_backward(grad: np.ndarray, idx: np.ndarray) -> np.ndarray:
    n, h2, w2, c = grad.shape
    win = np.zeros((n, h2, w2, c, 4))
    np.put_along_axis(win, idx[..., None], grad[..., None], axis=-1)
    return np.ascontiguousarray(
        win.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)
    )


def kmeans_assign(points: np.ndarray, centers: np.ndarray):
    """Nearest-center labels and squared distances; ties go to the lowest center index."""
    d = points[:, None, :] - centers[None, :, :]
    d2 = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]
    labels = np.argmin(d2, axis=1)
    return labels.astype(np.intp), d2[np.arange(len(points)), labels]
