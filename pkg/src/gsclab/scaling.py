"""Scale factors shared by the resistance, trace and exit-time code."""
from __future__ import annotations

import math

from .geometry import GscPattern


def walk_dimension(pattern: GscPattern, rho_hat: float) -> float:
    return math.log(rho_hat * pattern.m_F) / math.log(pattern.L)


def fractal_dimension(pattern: GscPattern) -> float:
    return math.log(pattern.m_F) / math.log(pattern.L)


def phi(pattern: GscPattern, m: int, r: float, rho_hat: float) -> float:
    """Two-branch weight: ``r**(d_f - d_w)`` above ``L**-m``, Euclidean scaling below."""
    if not r > 0:
        raise ValueError(f"phi needs r > 0, got {r}")
    d_f = fractal_dimension(pattern)
    d_w = walk_dimension(pattern, rho_hat)
    L, d = pattern.L, pattern.d
    if r >= float(L) ** (-m):
        return r ** (d_f - d_w)
    return float(L) ** ((d_w - d_f + d - 2) * m) * r ** (d - 2)


def energy_scale(pattern: GscPattern, m: int, rho_hat: float) -> float:
    """Factor turning a Lebesgue Dirichlet integral on ``F_m`` into the form on ``F_m``.

    Equals ``L**((d_w - d_f + d - 2) m) = (rho_hat * L**(d-2))**m``.
    """
    return (rho_hat * float(pattern.L) ** (pattern.d - 2)) ** m
