"""Third-degree spherical-radial cubature rule."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class CubatureSet:
    n: int
    xi: np.ndarray  # n x 2n, columns are the nodes

    @property
    def count(self) -> int:
        return 2 * self.n


@dataclass(frozen=True)
class PropagatedPoints:
    points: np.ndarray
    mean: np.ndarray | None = None
    centered: np.ndarray | None = None

    def covariance(self) -> np.ndarray:
        return self.centered @ np.swapaxes(self.centered, -1, -2)


@lru_cache(maxsize=None)
def _nodes(n: int) -> np.ndarray:
    xi = np.sqrt(n) * np.hstack([np.eye(n), -np.eye(n)])
    xi.setflags(write=False)
    return xi


def make_nodes(n: int) -> CubatureSet:
    """Nodes ``+-sqrt(n) e_i``, stored as the columns of an ``n x 2n`` array."""
    if n < 1:
        raise ValueError("dimension must be positive")
    return CubatureSet(n, _nodes(n))


def translate(nodes: CubatureSet, sr_factor: np.ndarray, mean: np.ndarray) -> PropagatedPoints:
    """Cubature points ``S xi_i + mean`` for any square root ``S`` of the covariance."""
    pts = sr_factor @ nodes.xi + np.asarray(mean)[..., :, None]
    return PropagatedPoints(pts)


def statistics(points: np.ndarray) -> PropagatedPoints:
    """Equal-weight mean and scaled deviations ``(X - mean) / sqrt(2n)``.

    The row count may differ from ``n`` (measurement-space images of the
    nodes have ``m`` rows but still ``2n`` columns).
    """
    points = np.asarray(points, dtype=float)
    count = points.shape[-1]
    if count % 2:
        raise ValueError("expected an even number of cubature points")
    mean = points.mean(axis=-1)
    centered = (points - mean[..., :, None]) / np.sqrt(count)
    return PropagatedPoints(points, mean, centered)


def propagate(func, t, points: np.ndarray) -> np.ndarray:
    """Apply a state map ``func(t, x)`` to every column of an ``(..., n, 2n)`` point array."""
    return np.swapaxes(func(t, np.swapaxes(points, -1, -2)), -1, -2)
