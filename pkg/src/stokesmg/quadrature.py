"""Quadrature rules on the reference triangle {x >= 0, y >= 0, x + y <= 1}.

Low degrees use the classic symmetric rules; beyond that a collapsed tensor
Gauss rule via the Duffy map x = u, y = v(1-u) is used. The Duffy Jacobian
(1-u) raises the u-degree by one, so n = ceil((d+2)/2) points per direction
integrate total degree d exactly. Points are returned in barycentric
coordinates (l0, l1, l2) = (1-x-y, x, y).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = ["QuadratureRule", "quadrature_rule"]


@dataclass(frozen=True)
class QuadratureRule:
    """Points (barycentric) and weights; weights sum to the triangle area 1/2."""

    degree: int
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points.flags.writeable = False
        self.weights.flags.writeable = False

    @property
    def xy(self):
        """Reference coordinates (x, y) = (l1, l2)."""
        return self.points[:, 1:]

    def __len__(self):
        return len(self.weights)


def _bary(xy):
    xy = np.asarray(xy, dtype=np.float64)
    return np.column_stack([1.0 - xy[:, 0] - xy[:, 1], xy[:, 0], xy[:, 1]])


@lru_cache(maxsize=None)
def quadrature_rule(degree_exact):
    """Rule integrating all polynomials of total degree <= degree_exact."""
    if degree_exact < 1:
        raise ValueError(f"unsupported quadrature degree {degree_exact}")
    if degree_exact == 1:
        xy = np.array([[1.0 / 3.0, 1.0 / 3.0]])
        w = np.array([0.5])
    elif degree_exact == 2:
        xy = np.array([
            [2.0 / 3.0, 1.0 / 6.0],
            [1.0 / 6.0, 2.0 / 3.0],
            [1.0 / 6.0, 1.0 / 6.0],
        ])
        w = np.full(3, 1.0 / 6.0)
    else:
        n = -(-(degree_exact + 2) // 2)
        gx, gw = np.polynomial.legendre.leggauss(n)
        u = 0.5 * (gx + 1.0)
        wu = 0.5 * gw
        U, V = np.meshgrid(u, u, indexing="ij")
        WU, WV = np.meshgrid(wu, wu, indexing="ij")
        x = U.ravel()
        y = (V * (1.0 - U)).ravel()
        w = (WU * WV * (1.0 - U)).ravel()
        xy = np.column_stack([x, y])
    return QuadratureRule(degree_exact, _bary(xy), w)
