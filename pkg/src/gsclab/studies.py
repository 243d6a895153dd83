"""Test-function families and multi-level sweeps used by the CLI and the checks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .extension import harmonic_extension
from .geometry import GscPattern
from .lattice import DEFAULT_NODE_CAP, build_lattice
from .resistance import HarmonicSolution, resistance_solution
from .trace import besov_profile, extension_ratio, shell_energy_profile
from .scaling import energy_scale

__all__ = ["stream", "random_smooth_data", "test_functions", "TraceRow", "trace_study"]


def stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator: Philox keyed by ``seed``, stream ``index`` in counter word 1."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, int(index), 0, 0]))


def random_smooth_data(rng: np.random.Generator, d: int, modes: int = 3):
    """Random cosine series ``sum c_j prod cos(pi j_i x_i)`` with ``0 <= j_i <= modes``."""
    js = np.array(np.meshgrid(*[np.arange(modes + 1)] * d, indexing="ij")).reshape(d, -1).T
    coef = rng.standard_normal(len(js)) / (1.0 + js.sum(axis=1))

    def f(points):
        points = np.atleast_2d(points)
        phase = np.cos(np.pi * points[:, None, :] * js[None, :, :]).prod(axis=2)
        return phase @ coef

    return f


def test_functions(pattern: GscPattern, m: int, grid_level: int, seed: int = 0, n_random: int = 3,
                   node_cap: int = DEFAULT_NODE_CAP, **solver) -> dict[str, HarmonicSolution]:
    """Resistance minimiser, harmonic coordinate functions and seeded random harmonics on ``F_m``."""
    out = {"minimizer": resistance_solution(pattern, m, grid_level, node_cap=node_cap, **solver)}
    dom = build_lattice(pattern, m, grid_level, node_cap=node_cap)
    for i in range(pattern.d):
        out[f"x{i}"] = harmonic_extension(dom, lambda p, i=i: p[:, i], **solver)
    for r in range(n_random):
        data = random_smooth_data(stream(seed, r), pattern.d)
        out[f"random{r}"] = harmonic_extension(dom, data, **solver)
    return out


@dataclass
class TraceRow:
    function: str
    m: int
    m_prime: int
    n: int
    k_max: int
    Lambda_n: float
    shell_energy: float
    trace_ratio: float
    extension_ratio: float
    tail: float


def trace_study(pattern: GscPattern, m: int, grid_level: int, rho_hat: float, n_max: int = 3,
                seed: int = 0, n_random: int = 3, node_cap: int = DEFAULT_NODE_CAP,
                **solver) -> list[TraceRow]:
    """Trace and extension ratios for every test function and ``n = 1..n_max``."""
    rows = []
    scale = energy_scale(pattern, m, rho_hat)
    funcs = test_functions(pattern, m, grid_level, seed, n_random, node_cap, **solver)
    for name, sol in funcs.items():
        prof = besov_profile(sol, rho_hat, tuple(range(1, n_max + 1)))
        shells = shell_energy_profile(sol, range(0, n_max))
        ext = extension_ratio(sol, rho_hat, **solver)
        for n in range(1, n_max + 1):
            lam = prof.lam[n]
            shell = shells.cumulative[n - 1] * scale
            if shell == 0.0:
                ratio = 0.0 if lam <= 1e-300 else math.inf
            else:
                ratio = lam / shell
            rows.append(TraceRow(name, m, grid_level, n, prof.k_max, lam, shell, ratio, ext, prof.tail))
    return rows
