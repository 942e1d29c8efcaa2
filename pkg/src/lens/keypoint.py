"""Keypoint extraction from the grounding map.

Greedy NMS picks up to m maxima with Euclidean suppression, a single
regularized Newton step on a local quadratic model refines them to sub-pixel
precision, and neighborhoods of the enhanced feature field are sampled around
them. Coordinates are plain floats: no gradient flows through the selection,
only through the feature samples taken at the fixed coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .numerics import bilinear_sample


@dataclass
class Keypoint:
    x: float   # continuous heatmap column coordinate
    y: float   # continuous heatmap row coordinate
    score: float  # heatmap value at the originating integer location


def _to_numpy(heatmap) -> np.ndarray:
    if isinstance(heatmap, torch.Tensor):
        return heatmap.detach().cpu().numpy().astype(np.float64)
    return np.asarray(heatmap, dtype=np.float64)


def nms_extract(heatmap, radius: float = 4.0, max_points: int = 16) -> list[Keypoint]:
    """Iteratively take the global maximum and zero a Euclidean disc around it.

    Stops when no value is positive or max_points are found. Ties in the
    global maximum break row-major (lowest flat index wins). The all-nonpositive
    heatmap yields an empty list.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if max_points < 1:
        raise ValueError("max_points must be >= 1")
    hm = _to_numpy(heatmap).copy()
    h, w = hm.shape
    yy, xx = np.mgrid[0:h, 0:w]
    points: list[Keypoint] = []
    r2 = radius * radius
    while len(points) < max_points:
        flat = int(np.argmax(hm))
        y, x = divmod(flat, w)
        score = hm[y, x]
        if score <= 0:
            break
        points.append(Keypoint(x=float(x), y=float(y), score=float(score)))
        hm[(yy - y) ** 2 + (xx - x) ** 2 <= r2] = 0.0
    return points


def _quadratic_model(heatmap: np.ndarray, x: int, y: int):
    """Central-difference gradient and Hessian from the 3x3 bilinear samples.

    The normalized-coordinate spacing used for sampling equals exactly one
    heatmap cell, so interior samples are the stored grid values and border
    samples follow the bilinear clamp.
    """
    field = torch.from_numpy(heatmap).unsqueeze(-1)
    offs = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (-1, 1), (1, -1)]
    pts = torch.tensor([[x + dx, y + dy] for dx, dy in offs], dtype=torch.float64)
    v = bilinear_sample(field, pts).squeeze(-1).numpy()
    d_x = 0.5 * (v[1] - v[2])
    d_y = 0.5 * (v[3] - v[4])
    d_xx = v[1] - 2.0 * v[0] + v[2]
    d_yy = v[3] - 2.0 * v[0] + v[4]
    d_xy = 0.25 * (v[5] + v[6] - v[7] - v[8])
    return np.array([d_x, d_y]), np.array([[d_xx, d_xy], [d_xy, d_yy]])


def _newton_offset(g: np.ndarray, hess: np.ndarray, eps: float) -> np.ndarray:
    a = hess[0, 0] + eps
    b = hess[0, 1]
    c = hess[1, 1] + eps
    det = a * c - b * b
    trace = abs(a + c)
    mean = 0.5 * (a + c)
    disc = np.hypot(0.5 * (a - c), b)
    eig_hi = max(abs(mean + disc), abs(mean - disc))
    eig_lo = min(abs(mean + disc), abs(mean - disc))
    cond = eig_hi / max(eig_lo, 1e-300)
    if abs(det) < 1e-12 * trace * trace or cond > 1e8:
        # diagonal fallback for ill-conditioned local curvature
        return np.array([-g[0] / (hess[0, 0] + eps), -g[1] / (hess[1, 1] + eps)])
    return np.array([-(c * g[0] - b * g[1]) / det, -(a * g[1] - b * g[0]) / det])


def subpixel_refine(heatmap, points: list[Keypoint], epsilon: float = 1e-6) -> list[Keypoint]:
    """One regularized Newton step per point, offsets clipped to [-1, 1]."""
    hm = _to_numpy(heatmap)
    h, w = hm.shape
    refined = []
    for p in points:
        xi, yi = int(round(p.x)), int(round(p.y))
        if not (0 <= xi < w and 0 <= yi < h):
            raise ValueError(f"keypoint ({p.x}, {p.y}) outside {h}x{w} heatmap")
        g, hess = _quadratic_model(hm, xi, yi)
        delta = np.clip(_newton_offset(g, hess, epsilon), -1.0, 1.0)
        refined.append(Keypoint(x=xi + float(delta[0]), y=yi + float(delta[1]), score=p.score))
    return refined


def sample_neighborhoods(features: torch.Tensor, points: list[Keypoint],
                         window: int = 3) -> list[torch.Tensor]:
    """Bilinear samples of an (h, w, d) field on a window x window grid of unit
    offsets around each keypoint, border-clamped. Returns one (window^2, d)
    tensor per keypoint; gradients flow into `features`.
    """
    if window % 2 != 1 or window < 1:
        raise ValueError("window must be odd and >= 1")
    half = window // 2
    offs = [(dx, dy) for dy in range(-half, half + 1) for dx in range(-half, half + 1)]
    out = []
    for p in points:
        pts = torch.tensor([[p.x + dx, p.y + dy] for dx, dy in offs], dtype=torch.float64)
        out.append(bilinear_sample(features, pts))
    return out
