"""Quantization-free region pooling (RoIAlign) as a differentiable op.

Each output cell averages a 2x2 grid of bilinear samples. Because the sample
grid of one region is a Cartesian product of row and column positions, the
whole op factors into two interpolation matrices per region:

    out[r, c] = Wy[r] @ F[b(r), c] @ Wx[r].T

which keeps both passes as dense matrix products.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, make_result

SAMPLES_PER_BIN = 2


def interpolation_matrix(lo, hi, bins: int, extent: int, scale: float, samples: int = SAMPLES_PER_BIN) -> np.ndarray:
    """Rows of averaged bilinear weights, shape (R, bins, extent).

    ``lo``/``hi`` are region bounds in image coordinates; feature cell ``i``
    is centred at image coordinate ``(i + 0.5) / scale``.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    nreg = lo.shape[0]
    step = (hi - lo) / bins
    offsets = (np.arange(bins)[:, None] + (np.arange(samples)[None, :] + 0.5) / samples).reshape(-1)
    pos = lo[:, None] + offsets[None, :] * step[:, None]  # (R, bins*samples)
    u = np.clip(pos * scale - 0.5, 0.0, extent - 1)
    u0 = np.floor(u).astype(np.int64)
    u1 = np.minimum(u0 + 1, extent - 1)
    frac = u - u0
    mat = np.zeros((nreg, bins * samples, extent))
    rows = np.arange(nreg)[:, None]
    cols = np.arange(bins * samples)[None, :]
    np.add.at(mat, (rows, cols, u0), 1.0 - frac)
    np.add.at(mat, (rows, cols, u1), frac)
    return mat.reshape(nreg, bins, samples, extent).mean(axis=2)


def roi_align(feature: Tensor, boxes, batch_index=None, output_size: int = 14, spatial_scale: float = 1.0) -> Tensor:
    """Pool ``boxes`` (R, 4 as x1, y1, x2, y2 image coords) from ``feature`` (N, C, H, W).

    Returns an (R, C, output_size, output_size) tensor differentiable with
    respect to ``feature``.
    """
    if feature.ndim != 4:
        raise ShapeError(f"roi_align: expected (N, C, H, W) features, got {feature.shape}")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    nreg = boxes.shape[0]
    if batch_index is None:
        batch_index = np.zeros(nreg, dtype=np.int64)
    batch_index = np.asarray(batch_index, dtype=np.int64)
    n, c, h, w = feature.shape
    if nreg and (batch_index.min() < 0 or batch_index.max() >= n):
        raise ShapeError(f"roi_align: batch index out of range for batch axis (0) of size {n}")
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    if nreg and (area < 1.0).any():
        bad = int(np.flatnonzero(area < 1.0)[0])
        raise ValueError(f"roi_align: degenerate region {boxes[bad].tolist()} (area < 1 px^2)")

    p = output_size
    wy = interpolation_matrix(boxes[:, 1], boxes[:, 3], p, h, spatial_scale)
    wx = interpolation_matrix(boxes[:, 0], boxes[:, 2], p, w, spatial_scale)
    fd = feature.data
    out = np.empty((nreg, c, p, p))
    groups = [(b, np.flatnonzero(batch_index == b)) for b in np.unique(batch_index)]
    for b, idx in groups:
        t = np.tensordot(wy[idx], fd[b], axes=([2], [1]))  # (r, P, C, W)
        res = np.matmul(t.reshape(len(idx), p * c, w), wx[idx].transpose(0, 2, 1))  # (r, P*C, P)
        out[idx] = res.reshape(len(idx), p, c, p).transpose(0, 2, 1, 3)

    def grad_fn(g):
        gf = np.zeros_like(fd)
        for b, idx in groups:
            u = np.matmul(g[idx], wx[idx][:, None, :, :])  # (r, C, P, W)
            gf[b] += np.tensordot(wy[idx], u, axes=([0, 1], [0, 2])).transpose(1, 0, 2)
        return (gf,)

    return make_result(out, (feature,), grad_fn, "roi_align")


def crop_and_resize(plane: np.ndarray, boxes, output_size: int) -> np.ndarray:
    """Non-differentiable RoIAlign of a single 2-D array (e.g. a binary mask)."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    h, w = plane.shape
    wy = interpolation_matrix(boxes[:, 1], boxes[:, 3], output_size, h, 1.0)
    wx = interpolation_matrix(boxes[:, 0], boxes[:, 2], output_size, w, 1.0)
    return np.matmul(np.matmul(wy, plane.astype(np.float64)[None]), wx.transpose(0, 2, 1))
