"""Binary segmentation metrics: Dice overlap and boundary distances.

Conventions, fixed here for reproducibility:
  - dice(both empty) = 1.0;
  - boundary pixels are foreground pixels with at least one background
    4-neighbor, where pixels outside the image count as background;
  - hd95 is the 95th percentile (linear interpolation) of the pooled
    symmetric set of boundary nearest-neighbor Euclidean distances;
  - assd is the mean of the two directed average surface distances;
  - if either mask is empty, hd95/assd return the image diagonal
    (largest possible pixel-center distance) as a sentinel.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .errors import ShapeError


def _check_pair(pred: np.ndarray, gt: np.ndarray):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ShapeError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _check_pair(pred, gt)
    p, g = int(pred.sum()), int(gt.sum())
    if p + g == 0:
        return 1.0
    return 2.0 * int((pred & gt).sum()) / (p + g)


def boundary_points(mask: np.ndarray) -> np.ndarray:
    """(N, 2) row/col coordinates of the mask's 4-neighbor boundary."""
    mask = np.asarray(mask).astype(bool)
    padded = np.pad(mask, 1)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return np.argwhere(mask & ~interior)


def _sentinel(shape) -> float:
    return math.hypot(shape[0] - 1, shape[1] - 1)


def _directed_distances(pts: np.ndarray, other_boundary: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest pixel of the other boundary."""
    dt = ndimage.distance_transform_edt(~other_boundary)
    return dt[pts[:, 0], pts[:, 1]]


def _boundary_state(pred, gt):
    pred, gt = _check_pair(pred, gt)
    if not pred.any() or not gt.any():
        return None
    bp = boundary_points(pred)
    bg = boundary_points(gt)
    pred_b = np.zeros(pred.shape, dtype=bool)
    pred_b[bp[:, 0], bp[:, 1]] = True
    gt_b = np.zeros(gt.shape, dtype=bool)
    gt_b[bg[:, 0], bg[:, 1]] = True
    d_pg = _directed_distances(bp, gt_b)
    d_gp = _directed_distances(bg, pred_b)
    return d_pg, d_gp


def hd95(pred: np.ndarray, gt: np.ndarray) -> float:
    state = _boundary_state(pred, gt)
    if state is None:
        return _sentinel(np.asarray(pred).shape)
    d_pg, d_gp = state
    return float(np.percentile(np.concatenate([d_pg, d_gp]), 95, method="linear"))


def assd(pred: np.ndarray, gt: np.ndarray) -> float:
    state = _boundary_state(pred, gt)
    if state is None:
        return _sentinel(np.asarray(pred).shape)
    d_pg, d_gp = state
    return float(0.5 * (d_pg.mean() + d_gp.mean()))
