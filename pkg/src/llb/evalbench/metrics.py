"""DAVIS-style region (J) and boundary (F) measures on binary masks."""
import math

import numpy as np
from scipy import ndimage


def _binary(mask, name):
    m = np.asarray(mask)
    if m.dtype != bool:
        if not np.all((m == 0) | (m == 1)):
            raise ValueError(f"{name} must be binary; binarize before scoring")
        m = m.astype(bool)
    return m


def jaccard(pred, gt) -> float:
    p, g = _binary(pred, "pred"), _binary(gt, "gt")
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def boundary_map(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one 4-connected background neighbour."""
    m = _binary(mask, "mask")
    return m & ~ndimage.binary_erosion(m, border_value=0)


def default_tolerance(shape, fraction=0.008) -> int:
    return max(1, math.ceil(fraction * math.hypot(*shape[:2])))


def boundary_f(pred, gt, tolerance_px: int | None = None) -> float:
    p, g = _binary(pred, "pred"), _binary(gt, "gt")
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    if tolerance_px is None:
        tolerance_px = default_tolerance(p.shape)
    pb, gb = boundary_map(p), boundary_map(g)
    n_p, n_g = pb.sum(), gb.sum()
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    r = tolerance_px
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    disk = yy * yy + xx * xx <= r * r
    g_dil = ndimage.binary_dilation(gb, structure=disk)
    p_dil = ndimage.binary_dilation(pb, structure=disk)
    precision = (pb & g_dil).sum() / n_p
    recall = (gb & p_dil).sum() / n_g
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))
