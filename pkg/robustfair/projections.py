import logging
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy.optimize import nnls

from robustfair.exceptions import ProjectionError

logger = logging.getLogger(__name__)


def simplex_projection(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    """
    Euclidean projection onto {x >= 0, sum(x) = total} by sort-then-threshold.

    Accepts a single vector or a 2-d array, projecting each row.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        return simplex_projection(v[None, :], total)[0]
    n = v.shape[1]
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - total
    positive = u - css / np.arange(1, n + 1) > 0
    # last index where the threshold condition holds
    rho = n - 1 - np.argmax(positive[:, ::-1], axis=1)
    theta = css[np.arange(v.shape[0]), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def capped_simplex_projection(v: np.ndarray, total: float) -> np.ndarray:
    """Projection onto {x >= 0, sum(x) <= total}"""
    clipped = np.maximum(v, 0.0)
    if clipped.sum() <= total:
        return clipped
    return simplex_projection(v, total)


def l2_ball_projection(v: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    offset = v - center
    norm = float(np.linalg.norm(offset))
    if norm <= radius:
        return v.copy()
    return center + offset * (radius / norm)


def linf_ball_projection(v: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    return np.clip(v, center - radius, center + radius)


def l1_ball_projection(v: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    offset = v - center
    if np.abs(offset).sum() <= radius:
        return v.copy()
    if radius == 0:
        return center.copy()
    return center + np.sign(offset) * simplex_projection(np.abs(offset), radius)


def halfspace_projection(v: np.ndarray, normal: np.ndarray, rhs: float, equality: bool = False) -> np.ndarray:
    """Projection onto {x : normal.x <= rhs} (or == rhs)"""
    excess = float(normal @ v) - rhs
    if excess <= 0 and not equality:
        return v.copy()
    norm_sq = float(normal @ normal)
    if norm_sq == 0:
        if abs(excess) > 1e-12:
            raise ProjectionError("constraint with zero coefficients cannot be satisfied")
        return v.copy()
    return v - (excess / norm_sq) * normal


def dykstra(
    v: np.ndarray,
    projectors: Sequence[Callable[[np.ndarray], np.ndarray]],
    max_cycles: int = 5000,
    tol: float = 1e-12,
) -> np.ndarray:
    """Projection onto an intersection of convex sets by Dykstra's alternating scheme"""
    x = np.asarray(v, dtype=float).copy()
    corrections = [np.zeros_like(x) for _ in projectors]
    for cycle in range(max_cycles):
        previous = x.copy()
        for i, project in enumerate(projectors):
            y = project(x + corrections[i])
            corrections[i] = x + corrections[i] - y
            x = y
        if np.max(np.abs(x - previous)) <= tol:
            return x
    logger.debug("Dykstra stopped at the cycle cap (%d)", max_cycles)
    return x


def convex_hull_weights(points: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Mixture weights lam >= 0, sum(lam) = 1, with lam @ points closest to x,
    and the residual norm, by non-negative least squares on the augmented system.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    x = np.asarray(x, dtype=float)
    scale = max(1.0, float(np.abs(points).max()), float(np.abs(x).max()))
    # heavy row keeps sum(lam) = 1 nearly exact
    A = np.vstack([points.T / scale, 1e3 * np.ones(points.shape[0])])
    b = np.append(x / scale, 1e3)
    lam, residual = nnls(A, b)
    return lam, float(residual) * scale


def in_convex_hull(points: np.ndarray, x: np.ndarray, tol: float = 1e-7) -> bool:
    _, residual = convex_hull_weights(points, x)
    return residual <= tol
