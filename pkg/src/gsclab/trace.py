"""Sub-face averages, discrete boundary energies, Besov sums and shell energies."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import CellIndex, GscPattern, SubFace, subface_adjacency, subfaces
from .lattice import ResolutionError, face_nodes
from .resistance import HarmonicSolution, solve_dirichlet
from .scaling import energy_scale, phi

__all__ = [
    "BesovProfile", "ShellEnergyProfile", "subface_average", "subface_averages",
    "discrete_energy_I", "phi", "besov_profile", "lambda_energy", "shell_energy_profile",
    "trace_ratio", "extension_ratio", "decay_profile", "decay_experiment", "resolution_limit",
]


@lru_cache(maxsize=64)
def _faces_and_edges(pattern: GscPattern, m: int, k: int):
    faces = subfaces(pattern, m, k)
    edges = np.array(subface_adjacency(pattern, m, k, faces), dtype=np.int64).reshape(-1, 2)
    return faces, edges


def subface_average(solution: HarmonicSolution, face: SubFace) -> float:
    """Equal-weight mean of the boundary trace over the nodes of one sub-face."""
    nodes = face_nodes(solution.domain, face)
    if len(nodes) == 0:
        raise ResolutionError(f"{face} carries no nodes; raise m'")
    trace = solution.trace(face.axis, face.side)
    bnodes = solution.domain.boundary_nodes(face.axis, face.side)
    return float(trace[np.searchsorted(bnodes, nodes)].mean())


def subface_averages(solution: HarmonicSolution, k: int) -> np.ndarray:
    """Averages over ``subfaces(pattern, m, k)`` in list order (vectorised)."""
    dom = solution.domain
    if k > dom.grid_level:
        raise ResolutionError(f"sub-face level {k} exceeds grid level {dom.grid_level}; raise m'")
    faces, _ = _faces_and_edges(dom.pattern, dom.domain_level, k)
    scale = dom.pattern.L ** (dom.grid_level - k)
    size_k = dom.pattern.L**k
    lookup = {}
    for axis in range(dom.d):
        for side in (0, 1):
            nodes = dom.boundary_nodes(axis, side)
            parent = dom.coords[nodes] // scale
            lin = np.ravel_multi_index(parent.T, (size_k,) * dom.d)
            uniq, inv = np.unique(lin, return_inverse=True)
            sums = np.bincount(inv, weights=solution.trace(axis, side))
            counts = np.bincount(inv)
            lookup[(axis, side)] = (uniq, sums / counts)
    out = np.empty(len(faces))
    for i, f in enumerate(faces):
        uniq, avg = lookup[(f.axis, f.side)]
        lin = np.ravel_multi_index(f.cell, (size_k,) * dom.d)
        pos = np.searchsorted(uniq, lin)
        if pos >= len(uniq) or uniq[pos] != lin:
            raise ResolutionError(f"{f} carries no nodes")
        out[i] = avg[pos]
    return out


def discrete_energy_I(solution: HarmonicSolution, k: int, m: int | None = None) -> float:
    """Sum of squared average differences over adjacent level-``k`` sub-faces."""
    dom = solution.domain
    if m is not None and m != dom.domain_level:
        raise ValueError(f"solution lives on F_{dom.domain_level}, not F_{m}")
    if k < 1:
        raise ValueError("I_k needs k >= 1")
    avg = subface_averages(solution, k)
    _, edges = _faces_and_edges(dom.pattern, dom.domain_level, k)
    diff = avg[edges[:, 0]] - avg[edges[:, 1]]
    return math.fsum(diff * diff)


def resolution_limit(pattern: GscPattern, grid_level: int) -> int:
    """Finest sub-face level at which every sub-face holds at least ``4**(d-1)`` nodes."""
    per_side = 1
    j = 0
    while per_side < 4:
        per_side *= pattern.L
        j += 1
    return grid_level - j


@dataclass
class BesovProfile:
    rho_hat: float
    levels: list[int]
    I: list[float]
    weights: list[float]
    k_max: int
    truncated: bool
    lam: dict[int, float] = field(default_factory=dict)

    @property
    def terms(self) -> list[float]:
        return [w * i for w, i in zip(self.weights, self.I)]

    @property
    def tail(self) -> float:
        """Magnitude of the last computed term, a proxy for the neglected tail."""
        return self.terms[-1] if self.terms else 0.0

    def lambda_n(self, n: int) -> float:
        return math.fsum(t for k, t in zip(self.levels, self.terms) if k >= n)


def besov_profile(solution: HarmonicSolution, rho_hat: float, n_values=(1,),
                  k_max: int | None = None) -> BesovProfile:
    """``I_k`` and ``phi_m(L**-k) I_k`` for ``k >= min(n_values)`` up to the resolution limit."""
    dom = solution.domain
    pattern, m = dom.pattern, dom.domain_level
    limit = resolution_limit(pattern, dom.grid_level)
    truncated = False
    if k_max is None:
        k_max = limit
    elif k_max > limit:
        k_max, truncated = limit, True
    lo = max(1, min(n_values))
    levels = list(range(lo, k_max + 1))
    I = [discrete_energy_I(solution, k) for k in levels]
    w = [phi(pattern, m, float(pattern.L) ** (-k), rho_hat) for k in levels]
    prof = BesovProfile(rho_hat, levels, I, w, k_max, truncated)
    prof.lam = {n: prof.lambda_n(n) for n in n_values}
    return prof


def lambda_energy(solution: HarmonicSolution, n: int, rho_hat: float, k_max: int | None = None) -> float:
    if n < 1:
        raise ValueError("Lambda_n needs n >= 1")
    return besov_profile(solution, rho_hat, (n,), k_max).lam[n]


@dataclass
class ShellEnergyProfile:
    levels: list[int]
    cumulative: list[float]
    shell: list[float]
    total: float
    rate: float = float("nan")
    prefactor: float = float("nan")
    degenerate: bool = False
    truncated: bool = False

    @property
    def normalized(self) -> list[float]:
        return [c / self.total if self.total else 0.0 for c in self.cumulative]


def _fit_decay(levels, cumulative, total, floor=0.0):
    """Least-squares fit of ``log(E_n / E_total) = log C - c n`` over ``n >= 1``.

    Totals at or below ``floor`` (round-off energy of a constant) are degenerate.
    """
    pts = [(n, c / total) for n, c in zip(levels, cumulative) if n >= 1 and c > 0]
    if total <= floor or len(pts) < 2:
        return float("nan"), float("nan"), True
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.log([p[1] for p in pts])
    slope, icept = np.polyfit(x, y, 1)
    return float(-slope), float(math.exp(icept)), False


def shell_energy_profile(solution: HarmonicSolution, levels) -> ShellEnergyProfile:
    """Energy carried by ``F_{m,B_k}`` (cells touching the outer boundary) per level."""
    dom = solution.domain
    levels = sorted(levels)
    cum = []
    for k in levels:
        cells, e = solution.cell_energies(k)
        size = dom.pattern.L**k
        touch = ((cells == 0) | (cells == size - 1)).any(axis=1)
        cum.append(math.fsum(e[touch]))
    shell = [cum[i] - cum[i + 1] for i in range(len(cum) - 1)] + [cum[-1]]
    total = solution.energy
    rate, pre, degenerate = _fit_decay(levels, cum, total)
    return ShellEnergyProfile(levels, cum, shell, total, rate, pre, degenerate)


class TraceInequalityViolation(ArithmeticError):
    """Positive boundary energy over a shell that carries no energy."""


def trace_ratio(solution: HarmonicSolution, n: int, rho_hat: float, k_max: int | None = None) -> float:
    """``Lambda_n`` of the trace over the scaled energy in ``F_{m,B_{n-1}}``; ``0/0 = 0``."""
    lam = lambda_energy(solution, n, rho_hat, k_max)
    shells = shell_energy_profile(solution, [n - 1])
    dom = solution.domain
    denom = shells.cumulative[0] * energy_scale(dom.pattern, dom.domain_level, rho_hat)
    if denom == 0.0:
        if lam <= 1e-300:
            return 0.0
        raise TraceInequalityViolation(f"Lambda_{n} = {lam} over a shell with zero energy")
    return lam / denom


def extension_ratio(solution: HarmonicSolution, rho_hat: float, k_max: int | None = None, **solver) -> float:
    """Scaled energy of the harmonic extension of the trace over ``Lambda_1`` of the trace."""
    from .extension import harmonic_extension

    dom = solution.domain
    if solution.is_outer_extension:
        ext = solution
    else:
        data = {(a, s): solution.trace(a, s) for a in range(dom.d) for s in (0, 1)}
        ext = harmonic_extension(dom, data, **solver)
    lam = lambda_energy(solution, 1, rho_hat, k_max)
    e = ext.energy * energy_scale(dom.pattern, dom.domain_level, rho_hat)
    if lam == 0.0:
        if e <= 1e-24:
            return 0.0
        raise TraceInequalityViolation("Lambda_1 vanishes for non-constant boundary data")
    return e / lam


# ---------------------------------------------------------------------------
# decay near the boundary of a cell

def neighbourhood_mask(solution_or_domain, cell: CellIndex) -> np.ndarray:
    """Nodes lying in level-``l`` cells of ``F_m`` whose closed cube meets ``cell``."""
    dom = getattr(solution_or_domain, "domain", solution_or_domain)
    l, q = cell
    ids = dom.cell_ids(l)
    return np.all(np.abs(ids - np.asarray(q)) <= 1, axis=1)


def image_shell_mask(domain, cell: CellIndex, n: int) -> np.ndarray:
    """Nodes in ``Psi_Q(F_{B_n})``: depth-``n`` sub-cells of ``cell`` touching its boundary."""
    l, q = cell
    L = domain.pattern.L
    inside = np.all(domain.cell_ids(l) == np.asarray(q), axis=1)
    sub = domain.cell_ids(l + n) - np.asarray(q) * L**n
    touch = ((sub == 0) | (sub == L**n - 1)).any(axis=1)
    return inside & touch


def decay_profile(solution: HarmonicSolution, cell: CellIndex, depth: int) -> ShellEnergyProfile:
    """Energies of the image shells inside ``cell`` normalised by the neighbourhood energy."""
    dom = solution.domain
    l = cell.level
    truncated = False
    if l + depth > dom.grid_level:
        depth, truncated = dom.grid_level - l, True
    levels = list(range(depth + 1))
    cum = [solution.region_energy(image_shell_mask(dom, cell, n)) for n in levels]
    total = solution.region_energy(neighbourhood_mask(dom, cell))
    shell = [cum[i] - cum[i + 1] for i in range(len(cum) - 1)] + [cum[-1]]
    scale = float(np.max(np.abs(solution.values))) ** 2 * dom.conductance * len(dom.edges)
    rate, pre, degenerate = _fit_decay(levels, cum, total, floor=1e-20 * scale)
    return ShellEnergyProfile(levels, cum, shell, total, rate, pre, degenerate, truncated)


def default_data(points: np.ndarray) -> np.ndarray:
    """Smooth generic boundary data: a fixed linear plus bilinear combination."""
    d = points.shape[1]
    w = 0.5 ** np.arange(d)
    return points @ w + points[:, 0] * points[:, 1]


def decay_experiment(domain, cell: CellIndex, depth: int, data=None, **solver) -> ShellEnergyProfile:
    """Solve with data clamped outside the cell neighbourhood, then profile the image shells."""
    if data is None:
        data = default_data
    nb = neighbourhood_mask(domain, cell)
    outside = np.flatnonzero(~nb)
    if len(outside) == 0:
        raise ValueError("the cell neighbourhood covers the whole domain; use a finer cell")
    sol = solve_dirichlet(domain, (outside, data(domain.centers[outside])), **solver)
    return decay_profile(sol, cell, depth)
