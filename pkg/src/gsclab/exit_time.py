"""Mean exit times of the reflected nearest-neighbour walk, by Poisson solves."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import CellIndex, GscPattern
from .lattice import DEFAULT_NODE_CAP, LatticeDomain, build_lattice
from .solvers import SingularSystemError, SolverError, solve_spd

__all__ = [
    "graph_laplacian", "mean_hitting_steps", "far_face_targets", "mean_exit",
    "ExitRow", "ExitTimeSeries", "exit_series",
]


def graph_laplacian(n_nodes: int, edges) -> sp.csr_matrix:
    """Unit-weight Laplacian ``D - A`` of an undirected edge list."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    u, v = edges[:, 0], edges[:, 1]
    ones = np.ones(2 * len(u))
    adj = sp.coo_matrix((ones, (np.concatenate([u, v]), np.concatenate([v, u]))),
                        shape=(n_nodes, n_nodes)).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (sp.diags(deg) - adj).tocsr()


def mean_hitting_steps(lap, targets, hold_degree: int | None = None, *,
                       method: str = "direct", tol: float = 1e-10) -> np.ndarray:
    """Expected number of steps to reach ``targets`` from every node.

    With ``hold_degree=None`` the walk jumps to a uniformly chosen neighbour,
    so ``s = 1 + mean(s over neighbours)``.  With ``hold_degree=k`` each of
    ``k`` directions is tried with probability ``1/k`` and a missing edge
    means staying put (lazy reflection), which gives ``(D - A) s = k``.
    """
    lap = sp.csr_matrix(lap)
    n = lap.shape[0]
    tmask = np.zeros(n, dtype=bool)
    tmask[np.asarray(targets, dtype=np.int64)] = True
    if not tmask.any():
        raise ValueError("target set is empty")
    free = np.flatnonzero(~tmask)
    s = np.zeros(n)
    if len(free) == 0:
        return s
    deg = lap.diagonal()
    if np.any(deg[free] == 0):
        raise SingularSystemError("isolated non-target node; no path to the targets")
    rhs = deg[free] if hold_degree is None else np.full(len(free), float(hold_degree))
    A = lap[free][:, free]
    try:
        x, res, _ = solve_spd(A, rhs, method=method, tol=tol)
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, SolverError):
            raise
        raise SingularSystemError(f"hitting-time system is singular: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("some nodes cannot reach the targets")
    s[free] = x
    return s


def far_face_targets(domain: LatticeDomain) -> np.ndarray:
    """Nodes in the boundary layers ``{x_i = 1}``, one per axis, merged and sorted."""
    parts = [domain.boundary_nodes(a, 1) for a in range(domain.d)]
    return np.unique(np.concatenate(parts))


def mean_exit(pattern: GscPattern, n: int, grid_level: int, start: CellIndex | None = None,
              targets=None, *, lazy: bool = True, node_cap: int = DEFAULT_NODE_CAP,
              method: str = "direct", tol: float = 1e-10) -> float:
    """Raw mean step count from ``start`` to ``targets`` on the lattice of ``F_n``.

    ``start`` defaults to the origin cell at the grid level; ``targets`` is a
    node array or a list of ``(axis, side)`` faces and defaults to the far faces.
    """
    dom = build_lattice(pattern, n, grid_level, node_cap=node_cap)
    if start is None:
        start = CellIndex(grid_level, (0,) * pattern.d)
    if start.level != grid_level:
        raise ValueError("start must be a grid-level cell")
    node = dom.node_of(start.coords)
    if node < 0:
        raise ValueError(f"start cell {start} is not in the domain")
    if targets is None:
        tnodes = far_face_targets(dom)
    elif len(targets) and isinstance(targets[0], tuple):
        tnodes = np.unique(np.concatenate([dom.boundary_nodes(a, s) for a, s in targets]))
    else:
        tnodes = np.asarray(targets, dtype=np.int64)
    lap = graph_laplacian(dom.n_nodes, dom.edges)
    s = mean_hitting_steps(lap, tnodes, 2 * pattern.d if lazy else None, method=method, tol=tol)
    return float(s[node])


@dataclass
class ExitRow:
    n: int
    m_prime: int
    steps: float
    t_n: float
    a_n: float
    alpha_n: float
    rel_change: float
    seconds: float = 0.0


@dataclass
class ExitTimeSeries:
    pattern: GscPattern
    rho_hat: float
    extra: int
    rows: list[ExitRow] = field(default_factory=list)
    lazy: bool = True

    @property
    def rhobar_hat(self) -> float:
        return self.rho_hat * self.pattern.m_F / self.pattern.L**2

    @property
    def a(self) -> np.ndarray:
        return np.array([r.a_n for r in self.rows])

    @property
    def alpha(self) -> np.ndarray:
        return np.array([r.alpha_n for r in self.rows])

    @property
    def c0_hat(self) -> float:
        return self.rows[-1].a_n if self.rows else float("nan")

    @property
    def final_gap(self) -> float:
        return abs(self.rows[-1].rel_change) if len(self.rows) > 1 else float("nan")


def exit_series(pattern: GscPattern, n_max: int, rho_hat: float, extra: int = 2, *,
                lazy: bool = True, node_cap: int = DEFAULT_NODE_CAP, progress=None,
                method: str = "direct", tol: float = 1e-10) -> ExitTimeSeries:
    """``a_n = t_n / rhobar_hat**n`` for ``n = 1..n_max`` at ``m' = n + extra``.

    ``t_n = s_n h**2 / d`` converts steps of spacing ``h`` to Brownian time.
    """
    out = ExitTimeSeries(pattern, float(rho_hat), extra, lazy=lazy)
    rhobar = out.rhobar_hat
    prev = None
    for n in range(1, n_max + 1):
        mp = n + extra
        t0 = time.perf_counter()
        s = mean_exit(pattern, n, mp, lazy=lazy, node_cap=node_cap, method=method, tol=tol)
        h = float(pattern.L) ** (-mp)
        t = s * h * h / pattern.d
        a = t / rhobar**n
        rel = float("nan") if prev is None else (a - prev) / prev
        out.rows.append(ExitRow(n, mp, s, t, a, 1.0 / a, rel, time.perf_counter() - t0))
        if progress is not None:
            progress(out.rows[-1])
        prev = a
    return out
