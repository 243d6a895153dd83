"""Pre-carpet domains as resistor networks of cell-centred nodes."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import csgraph, coo_matrix

from .geometry import CellIndex, GscPattern, SubFace, contains_cell, level_mask, subfaces

DEFAULT_NODE_CAP = 2_000_000


class DomainSizeError(RuntimeError):
    """The requested lattice exceeds the configured node cap."""


class ResolutionError(ValueError):
    """The grid is too coarse to carry the requested sub-face."""


@dataclass(eq=False)
class LatticeDomain:
    """Level-``grid_level`` cubes of ``F_m`` joined across shared faces.

    ``coords`` is an ``(N, d)`` integer array in lexicographic order; node ``i``
    is the cube ``coords[i] * h + [0, h]^d`` with ``h = L**-grid_level``.
    Each edge carries conductance ``L**(-(d-2) * grid_level)`` so that the
    network energy of a sampled smooth function approximates the Lebesgue
    Dirichlet integral.
    """

    pattern: GscPattern
    domain_level: int
    grid_level: int
    coords: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    edge_axis: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.pattern.d

    @property
    def size(self) -> int:
        """Number of grid cubes per side of the unit cube."""
        return self.pattern.L**self.grid_level

    @property
    def h(self) -> float:
        return float(self.pattern.L) ** (-self.grid_level)

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def conductance(self) -> float:
        return float(self.pattern.L) ** (-(self.d - 2) * self.grid_level)

    @cached_property
    def linear(self) -> np.ndarray:
        return np.ravel_multi_index(self.coords.T, (self.size,) * self.d)

    @cached_property
    def centers(self) -> np.ndarray:
        return (self.coords + 0.5) * self.h

    @cached_property
    def tags(self) -> np.ndarray:
        """Bitmask of outer faces touched; bit ``2*i + s`` for face ``{x_i = s}``."""
        t = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.d):
            t |= (self.coords[:, i] == 0).astype(np.int64) << (2 * i)
            t |= (self.coords[:, i] == self.size - 1).astype(np.int64) << (2 * i + 1)
        return t

    def tag_list(self, node: int) -> list[tuple[int, int]]:
        t = int(self.tags[node])
        return [(i, s) for i in range(self.d) for s in (0, 1) if t >> (2 * i + s) & 1]

    @property
    def cells(self) -> list[CellIndex]:
        return [CellIndex(self.grid_level, tuple(int(v) for v in c)) for c in self.coords]

    @property
    def weights(self) -> np.ndarray:
        """Node masses of the normalised measure on ``F_m``."""
        return np.full(self.n_nodes, 1.0 / self.n_nodes)

    def node_of(self, coords) -> int:
        """Node id of a grid cube, or ``-1`` when the cube is not in the domain."""
        lin = np.ravel_multi_index(tuple(np.asarray(coords).T), (self.size,) * self.d)
        pos = np.searchsorted(self.linear, lin)
        pos = np.minimum(pos, self.n_nodes - 1)
        return np.where(self.linear[pos] == lin, pos, -1)

    def cell_ids(self, n: int) -> np.ndarray:
        """Level-``n`` ancestor of each node as integer coordinates."""
        if n > self.grid_level:
            raise ValueError("cell level exceeds grid level")
        return self.coords // self.pattern.L ** (self.grid_level - n)

    def is_connected(self) -> bool:
        if self.n_nodes == 0:
            return False
        n, _ = csgraph.connected_components(self.adjacency(), directed=False)
        return n == 1

    def adjacency(self):
        u, v = self.edges.T
        ones = np.ones(len(u))
        a = coo_matrix((ones, (u, v)), shape=(self.n_nodes,) * 2)
        return (a + a.T).tocsr()

    def boundary_nodes(self, axis: int, side: int) -> np.ndarray:
        target = 0 if side == 0 else self.size - 1
        return np.flatnonzero(self.coords[:, axis] == target)

    def outer_boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.tags != 0)


def _edges_from_mask(mask: np.ndarray):
    """Face-adjacent pairs of true entries, indexed by rank among true entries."""
    size = mask.shape[0]
    d = mask.ndim
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[mask] = np.arange(int(mask.sum()))
    parts, axes = [], []
    for ax in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[ax] = slice(0, size - 1)
        hi[ax] = slice(1, size)
        both = mask[tuple(lo)] & mask[tuple(hi)]
        u = index[tuple(lo)][both]
        v = index[tuple(hi)][both]
        parts.append(np.stack([u, v], axis=1))
        axes.append(np.full(len(u), ax, dtype=np.int8))
    edges = np.concatenate(parts)
    edge_axis = np.concatenate(axes)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order], edge_axis[order]


def build_lattice(pattern: GscPattern, m: int, grid_level: int | None = None,
                  node_cap: int = DEFAULT_NODE_CAP) -> LatticeDomain:
    """Materialise ``F_m`` on the level-``grid_level`` grid (default ``grid_level = m``)."""
    if grid_level is None:
        grid_level = m
    if not 0 <= m <= grid_level:
        raise ValueError(f"need 0 <= m <= m', got m={m}, m'={grid_level}")
    expected = pattern.m_F**m * pattern.L ** (pattern.d * (grid_level - m))
    if expected > node_cap:
        raise DomainSizeError(f"F_{m} at grid level {grid_level} has {expected} nodes (cap {node_cap})")
    mask = level_mask(pattern, m, grid_level)
    coords = np.argwhere(mask)
    edges, edge_axis = _edges_from_mask(mask)
    return LatticeDomain(pattern, m, grid_level, coords, edges, edge_axis)


def restrict_to_cell(domain: LatticeDomain, cell: CellIndex) -> LatticeDomain:
    """Sub-domain ``F_{m,Q}`` re-based to the unit cube through the inverse of ``Psi_Q``."""
    n, q = cell
    if n > domain.grid_level:
        raise ValueError("restriction cell must have level <= grid level")
    if not contains_cell(domain.pattern, cell, domain.domain_level):
        raise ValueError(f"{cell} is not a retained cell")
    scale = domain.pattern.L ** (domain.grid_level - n)
    sel = np.all(domain.coords // scale == np.asarray(q), axis=1)
    ids = np.flatnonzero(sel)
    remap = np.full(domain.n_nodes, -1, dtype=np.int64)
    remap[ids] = np.arange(len(ids))
    keep_edge = sel[domain.edges[:, 0]] & sel[domain.edges[:, 1]]
    edges = remap[domain.edges[keep_edge]]
    return LatticeDomain(
        domain.pattern,
        max(domain.domain_level - n, 0),
        domain.grid_level - n,
        domain.coords[ids] - np.asarray(q) * scale,
        edges,
        domain.edge_axis[keep_edge],
    )


def face_nodes(domain: LatticeDomain, face: SubFace) -> np.ndarray:
    """Nodes whose cubes touch the outer sub-face ``face``."""
    k, cell, axis, side = face
    size_k = domain.pattern.L**k
    if cell[axis] != (0 if side == 0 else size_k - 1):
        raise ValueError(f"{face} is not on the boundary of the unit cube")
    if k > domain.grid_level:
        raise ResolutionError(
            f"sub-face level {k} is finer than grid level {domain.grid_level}; raise m'"
        )
    scale = domain.pattern.L ** (domain.grid_level - k)
    on_face = domain.coords[:, axis] == (0 if side == 0 else domain.size - 1)
    inside = np.all(domain.coords // scale == np.asarray(cell), axis=1)
    return np.flatnonzero(on_face & inside)


def face_measure(pattern: GscPattern, m: int, k: int) -> dict[SubFace, float]:
    """Equal weights on level-``k`` outer sub-faces summing to one."""
    faces = subfaces(pattern, m, k)
    w = 1.0 / len(faces)
    return {f: w for f in faces}


def write_graph_csv(domain: LatticeDomain, edge_path, node_path) -> None:
    with open(edge_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", "v", "conductance"])
        c = repr(domain.conductance)
        for u, v in domain.edges:
            w.writerow([int(u), int(v), c])
    with open(node_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"x{i}" for i in range(domain.d)] + ["tags"])
        for i, c in enumerate(domain.coords):
            tags = "|".join(f"{a}:{s}" for a, s in domain.tag_list(i))
            w.writerow([i, *(int(v) for v in c), tags])
