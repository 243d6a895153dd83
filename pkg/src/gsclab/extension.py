"""Explicit extension constructions: corner interpolation, bump correction,
average-prescribing fills, cutoff functions and harmonic extension."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import CellIndex, GscPattern, cell_array, contains_cell
from .lattice import DEFAULT_NODE_CAP, LatticeDomain, ResolutionError, build_lattice
from .resistance import INTERNAL_FACE, Ghosts, HarmonicSolution, face_ghosts, solve_dirichlet
from .scaling import energy_scale, phi


def _corners(k: int) -> np.ndarray:
    """Corners of ``[0,1]^k`` in lexicographic order, shape ``(2**k, k)``."""
    return np.array(list(itertools.product((0, 1), repeat=k)), dtype=float).reshape(-1, k)


def multilinear_interp(u, x) -> np.ndarray:
    """Evaluate the multilinear interpolant of corner values ``u`` at points ``x``.

    ``u`` lists the ``2**k`` corner values in lexicographic corner order
    (``00, 01, 10, 11`` for ``k = 2``); ``x`` has shape ``(N, k)`` or ``(k,)``.
    """
    u = np.asarray(u, dtype=float).ravel()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = x.shape[1]
    if len(u) != 2**k:
        raise ValueError(f"need {2 ** k} corner values for a {k}-cube, got {len(u)}")
    out = np.zeros(len(x))
    for c, val in zip(_corners(k), u):
        out += val * np.prod(np.where(c == 1, x, 1.0 - x), axis=1)
    return out


def bump(x) -> np.ndarray:
    """``prod 6 x_i (1 - x_i)``: C^1, zero on the boundary, unit mean."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.prod(6.0 * x * (1.0 - x), axis=1)


@dataclass(frozen=True)
class FaceFunction:
    """Multilinear corner interpolant plus ``beta`` times the fixed bump."""

    corners: np.ndarray
    beta: float

    @property
    def dim(self) -> int:
        return int(np.log2(len(self.corners)))

    @property
    def mean(self) -> float:
        return float(np.mean(self.corners)) + self.beta

    def __call__(self, x) -> np.ndarray:
        return multilinear_interp(self.corners, x) + self.beta * bump(x)


def bump_correct(u, a: float) -> FaceFunction:
    """Face function with the boundary values of ``v_u`` and mean ``a``."""
    u = np.asarray(u, dtype=float).ravel()
    return FaceFunction(u, float(a - u.mean()))


def gradient_bound(u) -> float:
    """``(k) * max |u(y) - u(z)|`` over corners differing in one coordinate."""
    u = np.asarray(u, dtype=float).ravel()
    k = int(np.log2(len(u)))
    corners = _corners(k).astype(int)
    best = 0.0
    for i, ci in enumerate(corners):
        for j, cj in enumerate(corners):
            if np.abs(ci - cj).sum() == 1:
                best = max(best, abs(u[i] - u[j]))
    return k * best


# ---------------------------------------------------------------------------
# faces of level-n cells

class CellFace(NamedTuple):
    """Axis-aligned unit (d-1)-cube at level ``level``: ``{x_axis = pos}`` times ``others``."""

    axis: int
    pos: int
    others: tuple[int, ...]

    def corners(self, level: int) -> list[tuple[int, ...]]:
        out = []
        for bits in itertools.product((0, 1), repeat=len(self.others)):
            pt = list(o + b for o, b in zip(self.others, bits))
            pt.insert(self.axis, self.pos)
            out.append(tuple(pt))
        return out


def cell_faces(pattern: GscPattern, n: int, m: int) -> list[CellFace]:
    """Faces ``Psi_Q(B)``, ``Q`` a level-``n`` cell, ``B`` a level-``m`` outer sub-face of ``F_m``.

    Shared faces of neighbouring cells appear once.  Sorted, so the list index
    is the canonical face id.
    """
    k = n + m
    L = pattern.L
    out = set()
    sub = cell_array(pattern, m)
    for q in cell_array(pattern, n):
        base = q * L**m
        for b in sub:
            for axis in range(pattern.d):
                for side in (0, 1):
                    if b[axis] != (0 if side == 0 else L**m - 1):
                        continue
                    c = base + b
                    others = tuple(int(v) for j, v in enumerate(c) if j != axis)
                    out.add(CellFace(axis, int(c[axis]) + side, others))
    return sorted(out)


@dataclass
class PrescribedFill:
    solution: HarmonicSolution
    faces: list[CellFace]
    targets: np.ndarray
    averages: np.ndarray
    face_functions: list[FaceFunction]

    @property
    def quadrature_error(self) -> float:
        return float(np.max(np.abs(self.averages - self.targets)))


def _level_n_ghosts(domain: LatticeDomain, n: int, k: int, evaluate) -> tuple[Ghosts, np.ndarray]:
    """Ghost links on every face of a node lying on its level-``n`` cell boundary.

    Returns the ghosts and the mask of edges that stay active (edges crossing a
    level-``n`` cell boundary are cut).
    """
    L = domain.pattern.L
    cells = domain.cell_ids(n)
    cut = np.any(cells[domain.edges[:, 0]] != cells[domain.edges[:, 1]], axis=1)
    span = L ** (domain.grid_level - n)
    local = domain.coords % span
    parts = []
    for axis in range(domain.d):
        for side in (0, 1):
            nodes = np.flatnonzero(local[:, axis] == (0 if side == 0 else span - 1))
            pts = domain.centers[nodes].copy()
            pts[:, axis] = (domain.coords[nodes, axis] + side) * domain.h
            outer = domain.coords[nodes, axis] == (0 if side == 0 else domain.size - 1)
            face = np.where(outer, 2 * axis + side, INTERNAL_FACE)
            parts.append(Ghosts(nodes, evaluate(pts, axis), np.full(len(nodes), 2.0 * domain.conductance),
                                face, pts))
    g = parts[0]
    for p in parts[1:]:
        g = g + p
    return g, ~cut


def _locate(points: np.ndarray, axis: int, k: int, L: int):
    """Face key and local chart coordinates of points on faces normal to ``axis``."""
    scaled = points * float(L) ** k
    pos = np.rint(scaled[:, axis]).astype(np.int64)
    rest = np.delete(scaled, axis, axis=1)
    others = np.floor(rest).astype(np.int64)
    return pos, others, rest - others


def prescribe_averages(pattern: GscPattern, n: int, m: int, targets, grid_level: int, *,
                       node_cap: int = DEFAULT_NODE_CAP, **solver) -> PrescribedFill:
    """Fill ``F_{n+m}`` so that every face in ``cell_faces(pattern, n, m)`` has the target mean.

    Corner values are the plain mean of the targets of incident faces; each
    face carries the bump-corrected interpolant; the rest is filled
    harmonically, separately inside each level-``n`` cell.
    """
    k = n + m
    if grid_level < k:
        raise ResolutionError(f"grid level {grid_level} cannot resolve level-{k} faces")
    faces = cell_faces(pattern, n, m)
    if isinstance(targets, dict):
        targets = np.array([targets[f] for f in faces], dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(targets) != len(faces):
        raise ValueError(f"need {len(faces)} targets, got {len(targets)}")
    acc: dict[tuple, list[float]] = {}
    for f, t in zip(faces, targets):
        for v in f.corners(k):
            acc.setdefault(v, []).append(t)
    corner_value = {v: float(np.mean(ts)) for v, ts in acc.items()}
    funcs = [bump_correct([corner_value[v] for v in f.corners(k)], t) for f, t in zip(faces, targets)]
    index = {f: i for i, f in enumerate(faces)}
    sums = np.zeros(len(faces))
    counts = np.zeros(len(faces))

    def evaluate(pts, axis):
        pos, others, t = _locate(pts, axis, k, pattern.L)
        out = np.empty(len(pts))
        keys = [CellFace(axis, int(p), tuple(int(v) for v in o)) for p, o in zip(pos, others)]
        fid = np.array([index[key] for key in keys], dtype=np.int64)
        for i in np.unique(fid):
            sel = fid == i
            out[sel] = funcs[i](t[sel])
        # a shared face is seen from both sides at every point, so the mean is unaffected
        sums[:] += np.bincount(fid, weights=out, minlength=len(faces))
        counts[:] += np.bincount(fid, minlength=len(faces))
        return out

    dom = build_lattice(pattern, k, grid_level, node_cap=node_cap)
    ghosts, active = _level_n_ghosts(dom, n, k, evaluate)
    sol = solve_dirichlet(dom, ghosts=ghosts, active=active, **solver)
    return PrescribedFill(sol, faces, targets, sums / counts, funcs)


def face_averages_of(solution: HarmonicSolution, faces: list[CellFace], k: int) -> np.ndarray:
    """Averages of a grid function over level-``k`` cell faces.

    Across an edge the face value is the mean of the two node values; on a
    face with a node on one side only, the node value (or its ghost value on
    an outer face) is used.
    """
    dom = solution.domain
    L = dom.pattern.L
    span = L ** (dom.grid_level - k)
    index = {f: i for i, f in enumerate(faces)}
    sums = np.zeros(len(faces))
    counts = np.zeros(len(faces))
    x = solution.values
    for axis in range(dom.d):
        for side in (0, 1):
            # each face point is visited from the node on its lower side, or from
            # the upper node when the lower one is missing
            nodes = np.flatnonzero(dom.coords[:, axis] % span == (span - 1 if side == 1 else 0))
            nb = dom.coords[nodes].copy()
            nb[:, axis] += 1 if side == 1 else -1
            inside = (nb[:, axis] >= 0) & (nb[:, axis] < dom.size)
            other = np.full(len(nodes), -1)
            if inside.any():
                other[inside] = dom.node_of(nb[inside])
            if side == 0:
                nodes, other = nodes[other < 0], other[other < 0]
            ghost = np.full(dom.n_nodes, np.nan)
            sel = solution.ghosts.face == 2 * axis + side
            ghost[solution.ghosts.nodes[sel]] = solution.ghosts.values[sel]
            own = np.where(np.isnan(ghost[nodes]), x[nodes], ghost[nodes])
            vals = np.where(other >= 0, 0.5 * (x[nodes] + x[np.maximum(other, 0)]), own)
            fpos = (dom.coords[nodes, axis] + side) // span
            rest = np.delete(dom.coords[nodes], axis, axis=1) // span
            for p, o, v in zip(fpos, rest, vals):
                i = index.get(CellFace(axis, int(p), tuple(int(t) for t in o)))
                if i is not None:
                    sums[i] += v
                    counts[i] += 1
    if (counts == 0).any():
        raise ResolutionError("some faces carry no nodes of the sampled function")
    return sums / counts


def oscillation_constant(h: HarmonicSolution, fill: PrescribedFill, n: int) -> float:
    """Smallest ``C`` with ``|h(x) - g(y)| <= C osc_{S_Q} h`` over level-``n`` cells ``Q``."""
    hd, gd = h.domain, fill.solution.domain
    hc, gc = hd.cell_ids(n), gd.cell_ids(n)
    worst = 0.0
    for q in np.unique(gc, axis=0):
        hin = np.all(hc == q, axis=1)
        gin = np.all(gc == q, axis=1)
        nb = np.all(np.abs(hc - q) <= 1, axis=1)
        osc = h.values[nb].max() - h.values[nb].min()
        gap = max(abs(h.values[hin].max() - fill.solution.values[gin].min()),
                  abs(fill.solution.values[gin].max() - h.values[hin].min()))
        if osc > 0:
            worst = max(worst, gap / osc)
        elif gap > 1e-12:
            return float("inf")
    return worst


# ---------------------------------------------------------------------------
# cutoff functions and harmonic extension

@dataclass
class CutoffResult:
    solution: HarmonicSolution
    energy: float
    phi: float

    @property
    def ratio(self) -> float:
        return self.energy / self.phi


def cutoff(pattern: GscPattern, m: int, cell: CellIndex, grid_level: int, rho_hat: float,
           **solver) -> CutoffResult:
    """Harmonic function equal to 1 on ``F_{m,Q}`` and 0 on cells not meeting ``Q``."""
    n, q = cell
    if n < 1:
        raise ValueError("cutoff cells need level >= 1")
    if not contains_cell(pattern, cell, m):
        raise ValueError(f"{cell} is not a cell of F_{m}")
    dom = build_lattice(pattern, m, grid_level)
    ids = dom.cell_ids(n)
    one = np.all(ids == np.asarray(q), axis=1)
    zero = np.any(np.abs(ids - np.asarray(q)) > 1, axis=1)
    if not zero.any():
        raise ValueError(f"every cell of level {n} meets {cell}; use a finer cell")
    nodes = np.concatenate([np.flatnonzero(one), np.flatnonzero(zero)])
    vals = np.concatenate([np.ones(one.sum()), np.zeros(zero.sum())])
    sol = solve_dirichlet(dom, (nodes, vals), **solver)
    e = sol.energy * energy_scale(pattern, m, rho_hat)
    return CutoffResult(sol, e, phi(pattern, m, float(pattern.L) ** (-n), rho_hat))


def harmonic_extension(domain: LatticeDomain, data, **solver) -> HarmonicSolution:
    """Energy minimiser with prescribed values on the whole outer boundary.

    ``data`` is a callable of boundary points, or a dict ``{(axis, side): values}``
    where values follow ``domain.boundary_nodes(axis, side)`` order (or are
    callables / scalars).
    """
    g = Ghosts.empty(domain.d)
    for axis in range(domain.d):
        for side in (0, 1):
            v = data if callable(data) else data[(axis, side)]
            g = g + face_ghosts(domain, axis, side, v)
    return solve_dirichlet(domain, ghosts=g, **solver)
