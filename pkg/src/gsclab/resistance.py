"""Dirichlet problems on lattice domains and the face-to-face resistance series."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .geometry import CellIndex, GscPattern
from .lattice import DEFAULT_NODE_CAP, LatticeDomain, build_lattice
from .scaling import energy_scale, fractal_dimension, phi
from .solvers import SingularSystemError, SolverError, solve_spd

INTERNAL_FACE = -1


@dataclass
class Ghosts:
    """Half-edges from boundary nodes to prescribed values on a face.

    A node on a face sits half a grid step away from it, so the link carries
    twice the edge conductance.  ``face`` is ``2*axis + side`` for outer faces
    and ``INTERNAL_FACE`` for cut interior faces; ``points`` are the face points
    the values belong to.
    """

    nodes: np.ndarray
    values: np.ndarray
    conductance: np.ndarray
    face: np.ndarray
    points: np.ndarray | None = None

    @classmethod
    def empty(cls, d: int = 2) -> "Ghosts":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0),
                   np.zeros(0, dtype=np.int64), np.zeros((0, d)))

    def __len__(self):
        return len(self.nodes)

    def __add__(self, other: "Ghosts") -> "Ghosts":
        return Ghosts(
            np.concatenate([self.nodes, other.nodes]),
            np.concatenate([self.values, other.values]),
            np.concatenate([self.conductance, other.conductance]),
            np.concatenate([self.face, other.face]),
            np.concatenate([self.points, other.points]),
        )


def face_ghosts(domain: LatticeDomain, axis: int, side: int, value) -> Ghosts:
    """Ghost links pinning the outer face ``{x_axis = side}`` to ``value``.

    ``value`` may be a scalar, an array over the face nodes (in node order), or
    a callable evaluated at the face points.
    """
    nodes = domain.boundary_nodes(axis, side)
    pts = domain.centers[nodes].copy()
    pts[:, axis] = float(side)
    if callable(value):
        vals = np.asarray(value(pts), dtype=float)
    else:
        vals = np.broadcast_to(np.asarray(value, dtype=float), (len(nodes),)).copy()
    cond = np.full(len(nodes), 2.0 * domain.conductance)
    return Ghosts(nodes, vals, cond, np.full(len(nodes), 2 * axis + side), pts)


def outer_ghosts(domain: LatticeDomain, value) -> Ghosts:
    """Ghost links on every outer face (a corner node gets one link per face)."""
    out = Ghosts.empty(domain.d)
    for axis in range(domain.d):
        for side in (0, 1):
            out = out + face_ghosts(domain, axis, side, value)
    return out


def assemble_laplacian(domain: LatticeDomain, active=None) -> sp.csr_matrix:
    """Weighted graph Laplacian; off-diagonals are minus the edge conductance."""
    edges = domain.edges if active is None else domain.edges[active]
    n = domain.n_nodes
    c = domain.conductance
    u, v = edges[:, 0], edges[:, 1]
    w = np.full(len(u), -c)
    off = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
                        shape=(n, n))
    deg = np.bincount(np.concatenate([u, v]), minlength=n) * c
    return (off + sp.diags(deg)).tocsr()


@dataclass(eq=False)
class HarmonicSolution:
    domain: LatticeDomain
    values: np.ndarray
    edge_energy: np.ndarray
    ghosts: Ghosts
    ghost_energy: np.ndarray
    fixed: np.ndarray = field(repr=False)
    residual: float = 0.0
    iterations: int = 0
    method: str = "direct"
    seconds: float = 0.0
    active: np.ndarray | None = field(default=None, repr=False)

    @cached_property
    def energy(self) -> float:
        return math.fsum(self.edge_energy) + math.fsum(self.ghost_energy)

    def cell_energies(self, n: int):
        """Energy per level-``n`` cell; edges between two cells give half to each.

        Returns ``(cells, energies)`` over the level-``n`` cells that hold nodes,
        in lexicographic order.
        """
        dom = self.domain
        ids = dom.cell_ids(n)
        size = dom.pattern.L**n
        lin = np.ravel_multi_index(ids.T, (size,) * dom.d)
        uniq, node_cell = np.unique(lin, return_inverse=True)
        cu = node_cell[dom.edges[:, 0]]
        cv = node_cell[dom.edges[:, 1]]
        half = 0.5 * self.edge_energy
        k = len(uniq)
        e = np.bincount(cu, weights=half, minlength=k) + np.bincount(cv, weights=half, minlength=k)
        if len(self.ghosts):
            e += np.bincount(node_cell[self.ghosts.nodes], weights=self.ghost_energy, minlength=k)
        cells = np.stack(np.unravel_index(uniq, (size,) * dom.d), axis=1)
        return cells, e

    def per_cell_energy(self, n: int) -> dict[CellIndex, float]:
        cells, e = self.cell_energies(n)
        return {CellIndex(n, tuple(int(v) for v in c)): float(x) for c, x in zip(cells, e)}

    def region_energy(self, node_mask: np.ndarray) -> float:
        """Energy of edges inside a node set; straddling edges count half."""
        u, v = self.domain.edges.T
        w = 0.5 * (node_mask[u].astype(float) + node_mask[v].astype(float))
        g = math.fsum(self.ghost_energy[node_mask[self.ghosts.nodes]]) if len(self.ghosts) else 0.0
        return math.fsum(self.edge_energy * w) + g

    def trace(self, axis: int, side: int) -> np.ndarray:
        """Boundary values on the face nodes of ``{x_axis = side}``, in node order.

        Where a ghost link pins the face the prescribed value is used, elsewhere
        the node value.
        """
        nodes = self.domain.boundary_nodes(axis, side)
        out = self.values[nodes].copy()
        code = 2 * axis + side
        sel = self.ghosts.face == code
        if sel.any():
            pos = np.searchsorted(nodes, self.ghosts.nodes[sel])
            out[pos] = self.ghosts.values[sel]
        return out

    @property
    def is_outer_extension(self) -> bool:
        """True when this is the harmonic extension of its own outer-face data."""
        if self.fixed.any() or self.active is not None:
            return False
        dom = self.domain
        for axis in range(dom.d):
            for side in (0, 1):
                sel = self.ghosts.face == 2 * axis + side
                if not np.array_equal(np.sort(self.ghosts.nodes[sel]), dom.boundary_nodes(axis, side)):
                    return False
        return len(self.ghosts) == sum(len(dom.boundary_nodes(a, s)) for a in range(dom.d) for s in (0, 1))

    def boundary_range(self) -> tuple[float, float]:
        data = np.concatenate([self.values[self.fixed], self.ghosts.values])
        return float(data.min()), float(data.max())

    def satisfies_max_principle(self, tol: float = 1e-8) -> bool:
        lo, hi = self.boundary_range()
        scale = max(1.0, abs(lo), abs(hi))
        return bool(self.values.min() >= lo - tol * scale and self.values.max() <= hi + tol * scale)


def _as_fixed(domain: LatticeDomain, fixed):
    mask = np.zeros(domain.n_nodes, dtype=bool)
    vals = np.zeros(domain.n_nodes)
    if fixed is None:
        return mask, vals
    if isinstance(fixed, dict):
        nodes = np.fromiter(fixed.keys(), dtype=np.int64, count=len(fixed))
        v = np.fromiter(fixed.values(), dtype=float, count=len(fixed))
    else:
        nodes, v = fixed
        nodes = np.asarray(nodes, dtype=np.int64)
        v = np.broadcast_to(np.asarray(v, dtype=float), nodes.shape)
    mask[nodes] = True
    vals[nodes] = v
    return mask, vals


def solve_dirichlet(domain: LatticeDomain, fixed=None, ghosts: Ghosts | None = None, *,
                    active=None, tol: float = 1e-10, method: str = "direct",
                    x0=None, maxiter=None) -> HarmonicSolution:
    """Minimise the network energy subject to clamped nodes and ghost links.

    ``fixed`` is a ``{node: value}`` dict or a ``(nodes, values)`` pair; those
    nodes are eliminated from the system.  ``active`` optionally switches edges
    off (cut faces are then expected to carry ghost links).
    """
    t0 = time.perf_counter()
    if ghosts is None:
        ghosts = Ghosts.empty(domain.d)
    fmask, fvals = _as_fixed(domain, fixed)
    if not fmask.any() and len(ghosts) == 0:
        raise SingularSystemError("no Dirichlet data: the energy has a null space")
    n = domain.n_nodes
    lap = assemble_laplacian(domain, active)
    gdiag = np.bincount(ghosts.nodes, weights=ghosts.conductance, minlength=n)
    grhs = np.bincount(ghosts.nodes, weights=ghosts.conductance * ghosts.values, minlength=n)
    A = (lap + sp.diags(gdiag)).tocsr()
    free = np.flatnonzero(~fmask)
    fixed_idx = np.flatnonzero(fmask)
    x = fvals.copy()
    residual, iters = 0.0, 0
    if len(free):
        Aff = A[free][:, free]
        b = grhs[free] - A[free][:, fixed_idx] @ fvals[fixed_idx]
        _check_anchored(Aff, lap, free, fmask, gdiag)
        start = None if x0 is None else np.asarray(x0, dtype=float)[free]
        xf, residual, iters = solve_spd(Aff, b, method=method, tol=tol, x0=start, maxiter=maxiter)
        x[free] = xf
    edges = domain.edges
    emask = np.ones(len(edges), dtype=bool) if active is None else np.asarray(active, dtype=bool)
    diff = x[edges[:, 0]] - x[edges[:, 1]]
    edge_energy = np.where(emask, domain.conductance * diff * diff, 0.0)
    gdiff = x[ghosts.nodes] - ghosts.values
    ghost_energy = ghosts.conductance * gdiff * gdiff
    return HarmonicSolution(domain, x, edge_energy, ghosts, ghost_energy, fmask,
                            residual, iters, method, time.perf_counter() - t0,
                            None if active is None else emask)


def _check_anchored(Aff, lap, free, fmask, gdiag):
    """Every component of the free subgraph must see Dirichlet data."""
    ncomp, labels = csgraph.connected_components(Aff, directed=False)
    anchored = np.zeros(ncomp, dtype=bool)
    anchored[labels[gdiag[free] > 0]] = True
    if fmask.any():
        # a free node with a clamped neighbour is anchored
        touching = np.asarray(abs(lap[free][:, np.flatnonzero(fmask)]).sum(axis=1)).ravel() > 0
        anchored[labels[touching]] = True
    if not anchored.all():
        raise SingularSystemError(f"{int((~anchored).sum())} component(s) carry no Dirichlet data")


# ---------------------------------------------------------------------------
# resistance

def resistance_solution(pattern: GscPattern, n: int, grid_level: int, axis: int = 0, *,
                        clamp: bool = False, node_cap: int = DEFAULT_NODE_CAP,
                        **solver) -> HarmonicSolution:
    """Minimiser for data 0 on ``{x_axis = 0}`` and 1 on ``{x_axis = 1}`` over ``F_n``.

    By default the data sit on the faces themselves (ghost links).  With
    ``clamp=True`` the layers of cubes touching the two faces are clamped instead.
    """
    dom = build_lattice(pattern, n, grid_level, node_cap=node_cap)
    if clamp:
        lo = dom.boundary_nodes(axis, 0)
        hi = dom.boundary_nodes(axis, 1)
        nodes = np.concatenate([lo, hi])
        vals = np.concatenate([np.zeros(len(lo)), np.ones(len(hi))])
        return solve_dirichlet(dom, (nodes, vals), **solver)
    g = face_ghosts(dom, axis, 0, 0.0) + face_ghosts(dom, axis, 1, 1.0)
    return solve_dirichlet(dom, ghosts=g, **solver)


def raw_resistance(pattern: GscPattern, n: int, grid_level: int, *, axis: int = 0,
                   check_axes: bool = False, **kw) -> float:
    """Minimal Lebesgue Dirichlet energy ``D_n`` for 0/1 data on opposite faces of ``F_n``."""
    D = resistance_solution(pattern, n, grid_level, axis, **kw).energy
    if check_axes:
        for other in range(pattern.d):
            if other == axis:
                continue
            D2 = resistance_solution(pattern, n, grid_level, other, **kw).energy
            if abs(D2 - D) > 1e-8 * abs(D):
                raise AssertionError(f"axis {other} gives D={D2!r}, axis {axis} gives {D!r}")
    return D


@dataclass
class ResistanceRow:
    n: int
    m_prime: int
    D: float
    ratio: float
    R_hat: float = float("nan")
    residual: float = 0.0
    iterations: int = 0
    seconds: float = 0.0


@dataclass
class ResistanceSeries:
    pattern: GscPattern
    extra: int
    rows: list[ResistanceRow]
    D0: float
    half_factor: bool = False
    complete: bool = True
    error: str = ""
    rho_hat: float = float("nan")
    rho_regression: float = float("nan")

    @property
    def rhobar_hat(self) -> float:
        return self.rho_hat * self.pattern.m_F / self.pattern.L**2

    @property
    def dw_hat(self) -> float:
        return math.log(self.rho_hat * self.pattern.m_F) / math.log(self.pattern.L)

    @property
    def ds_hat(self) -> float:
        return 2 * fractal_dimension(self.pattern) / self.dw_hat

    @property
    def R_hat(self) -> np.ndarray:
        return np.array([r.R_hat for r in self.rows])

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.rows])

    def normalized_resistance(self, D: float, n: int) -> float:
        L, d = self.pattern.L, self.pattern.d
        R = 1.0 / (self.rho_hat**n * float(L) ** ((d - 2) * n) * D)
        return 2.0 * R if self.half_factor else R


def resistance_series(pattern: GscPattern, n_max: int, extra: int = 2, *,
                      half_factor: bool = False, node_cap: int = DEFAULT_NODE_CAP,
                      progress=None, **solver) -> ResistanceSeries:
    """``D_n`` for ``n = 0..n_max`` at ``m' = n + extra`` plus the scaling estimates.

    ``rho_hat`` is the last ratio ``D_{n_max-1} / D_{n_max}`` divided by
    ``L**(d-2)``; ``rho_regression`` is the least-squares rate over the last
    three ratios.  A failing solve stops the series and marks it incomplete.
    """
    if n_max < 2:
        raise ValueError("resistance_series needs n_max >= 2")
    scale = float(pattern.L) ** (pattern.d - 2)
    D0 = raw_resistance(pattern, 0, extra, node_cap=node_cap, **solver)
    series = ResistanceSeries(pattern, extra, [], D0, half_factor)
    prev = D0
    for n in range(1, n_max + 1):
        try:
            sol = resistance_solution(pattern, n, n + extra, node_cap=node_cap, **solver)
        except (SolverError, RuntimeError) as exc:
            series.complete = False
            series.error = f"n={n}: {exc}"
            break
        row = ResistanceRow(n, n + extra, sol.energy, prev / sol.energy,
                            residual=sol.residual, iterations=sol.iterations, seconds=sol.seconds)
        series.rows.append(row)
        if progress:
            progress(row)
        prev = sol.energy
    if len(series.rows) >= 1:
        series.rho_hat = series.rows[-1].ratio / scale
        Ds = [D0] + [r.D for r in series.rows]
        tail = np.arange(len(Ds))[-4:]
        slope = np.polyfit(tail, np.log(np.array(Ds)[tail]), 1)[0]
        series.rho_regression = math.exp(-slope) / scale
        for r in series.rows:
            r.R_hat = series.normalized_resistance(r.D, r.n)
    return series


# ---------------------------------------------------------------------------
# local uniformity checks

def _ball(domain: LatticeDomain, center, r: float) -> np.ndarray:
    dist = np.linalg.norm(domain.centers - np.asarray(center, dtype=float), axis=1)
    return dist < r


def harnack_ratio(pattern: GscPattern, m: int, grid_level: int, center, r: float,
                  data=None, **solver) -> float:
    """``max / min`` over ``B(center, r/2)`` of the harmonic function in ``B(center, r)``.

    Values outside the ball are clamped to ``data(points)`` (default: constant 1),
    which must be positive.
    """
    dom = build_lattice(pattern, m, grid_level)
    inside = _ball(dom, center, r)
    outside = np.flatnonzero(~inside)
    if data is None:
        vals = np.ones(len(outside))
    else:
        vals = np.asarray(data(dom.centers[outside]), dtype=float)
    if (vals <= 0).any():
        raise ValueError("Harnack data must be positive")
    sol = solve_dirichlet(dom, (outside, vals), **solver)
    half = _ball(dom, center, r / 2)
    if not half.any():
        raise ValueError("half-ball contains no nodes; refine the grid")
    lo, hi = sol.values[half].min(), sol.values[half].max()
    if lo <= 0:
        raise ValueError("degenerate harmonic function: non-positive infimum on the half-ball")
    return float(hi / lo)


def poincare_ratio(solution: HarmonicSolution, x, r: float, rho_hat: float, c: float = 0.5) -> float:
    """``phi_m(r) * variance on B(x, c r)`` over the scaled energy in ``B(x, r)``.

    The variance uses the normalised node measure; the energy is the network
    energy in the ball times ``energy_scale``.  ``0/0`` is reported as 0.
    """
    dom = solution.domain
    pattern, m = dom.pattern, dom.domain_level
    small = _ball(dom, x, c * r)
    if not small.any():
        raise ValueError("inner ball contains no nodes; refine the grid")
    f = solution.values[small]
    var = float(np.mean((f - f.mean()) ** 2))
    big = _ball(dom, x, r)
    local = solution.region_energy(big) * energy_scale(pattern, m, rho_hat)
    if local == 0.0:
        if var == 0.0:
            return 0.0
        raise ArithmeticError("zero local energy with non-zero deviation")
    return phi(pattern, m, r, rho_hat) * var / local


def sampled_function(domain: LatticeDomain, values) -> HarmonicSolution:
    """Wrap node values (or a callable of node centres) with their network energy.

    No boundary data are attached; the result is not harmonic in general.
    """
    if callable(values):
        values = values(domain.centers)
    x = np.asarray(values, dtype=float)
    diff = x[domain.edges[:, 0]] - x[domain.edges[:, 1]]
    return HarmonicSolution(domain, x, domain.conductance * diff * diff, Ghosts.empty(domain.d),
                            np.zeros(0), np.zeros(domain.n_nodes, dtype=bool), method="none")
