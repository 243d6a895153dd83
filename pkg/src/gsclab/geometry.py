"""Generalized Sierpinski carpet patterns: cells, faces, sub-faces and dimensions.

All geometry is done in exact integer arithmetic.  A cell of level ``n`` is an
integer vector ``c`` with ``0 <= c_i < L**n`` and stands for the closed cube
``prod [c_i, c_i + 1] * L**-n``.  Iteration order is always lexicographic in
the coordinate tuple (axis 0 most significant).
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

AXIOM_NAMES = ("Symmetry", "Connectedness", "Non-diagonality", "Borders included")


class PatternError(ValueError):
    """Malformed generator data."""


class EmptyRegionError(ValueError):
    """A slab-removal query left no cells at all."""


class CellIndex(NamedTuple):
    level: int
    coords: tuple[int, ...]


class SubFace(NamedTuple):
    """Outer sub-face ``{x_axis = side}`` of a level-``level`` cell."""

    level: int
    cell: tuple[int, ...]
    axis: int
    side: int

    def box(self) -> tuple[tuple[int, int], ...]:
        """Closed integer box (in units of ``L**-level``) covered by the sub-face."""
        out = []
        for j, c in enumerate(self.cell):
            if j == self.axis:
                out.append((c + self.side, c + self.side))
            else:
                out.append((c, c + 1))
        return tuple(out)


@dataclass(frozen=True, eq=False)
class GscPattern:
    """Generator of a carpet: dimension, subdivision and the kept level-1 cubes."""

    d: int
    L: int
    keep: np.ndarray = field(repr=False)

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        if self.d < 2:
            raise PatternError(f"dimension must be >= 2, got {self.d}")
        if self.L < 3:
            raise PatternError(f"L_F must be >= 3, got {self.L}")
        if keep.size != self.L**self.d:
            raise PatternError(
                f"mask has {keep.size} entries, expected L_F^d = {self.L ** self.d}"
            )
        if not keep.any():
            raise PatternError("a pattern must keep at least one cube")
        keep = keep.reshape((self.L,) * self.d).copy()
        keep.setflags(write=False)
        object.__setattr__(self, "keep", keep)

    @classmethod
    def from_removed(cls, d: int, L: int, removed) -> "GscPattern":
        keep = np.ones((L,) * d, dtype=bool)
        for idx in removed:
            idx = tuple(int(i) for i in idx)
            if len(idx) != d or any(not 0 <= i < L for i in idx):
                raise PatternError(f"removed index {idx} out of range")
            keep[idx] = False
        return cls(d, L, keep)

    @property
    def m_F(self) -> int:
        return int(self.keep.sum())

    @property
    def removed(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in ix) for ix in np.argwhere(~self.keep)]

    def digest(self) -> str:
        """SHA-256 of ``d``, ``L`` and the row-major bit-packed mask."""
        h = hashlib.sha256(f"{self.d}:{self.L}:".encode())
        h.update(np.packbits(self.keep.ravel(order="C")).tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, GscPattern):
            return NotImplemented
        return self.d == other.d and self.L == other.L and np.array_equal(self.keep, other.keep)

    def __hash__(self):
        return hash(self.digest())


def standard_carpet() -> GscPattern:
    return GscPattern.from_removed(2, 3, [(1, 1)])


def full_cube(d: int = 2, L: int = 3) -> GscPattern:
    return GscPattern(d, L, np.ones((L,) * d, dtype=bool))


def menger_sponge() -> GscPattern:
    # drop the 7 cubes that have at least two coordinates equal to 1
    removed = [c for c in itertools.product(range(3), repeat=3) if sum(v == 1 for v in c) >= 2]
    return GscPattern.from_removed(3, 3, removed)


# ---------------------------------------------------------------------------
# pattern files

def load_pattern(path) -> GscPattern:
    """Read a ``key = value`` pattern file with keys ``d``, ``L_F``, ``removed``."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PatternError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = json.loads(val)
        except json.JSONDecodeError as exc:
            raise PatternError(f"{path}:{lineno}: bad value for {key!r}") from exc
    unknown = set(values) - {"d", "L_F", "removed"}
    if unknown:
        raise PatternError(f"unknown keys in pattern file: {sorted(unknown)}")
    try:
        return GscPattern.from_removed(int(values["d"]), int(values["L_F"]), values.get("removed", []))
    except KeyError as exc:
        raise PatternError(f"pattern file is missing {exc.args[0]!r}") from None


def dump_pattern(pattern: GscPattern) -> str:
    removed = json.dumps([list(r) for r in pattern.removed])
    return f"d = {pattern.d}\nL_F = {pattern.L}\nremoved = {removed}\n"


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class AxiomResult:
    name: str
    passed: bool
    witness: str = ""


@dataclass(frozen=True)
class ValidationReport:
    results: tuple[AxiomResult, ...]

    @property
    def valid(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failed(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]

    def __getitem__(self, name: str) -> AxiomResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)


def cube_isometries(d: int):
    """Yield ``(perm, flips)`` for all ``2**d * d!`` symmetries of the cube."""
    for perm in itertools.permutations(range(d)):
        for flips in itertools.product((False, True), repeat=d):
            yield perm, flips


def _apply_isometry(mask: np.ndarray, perm, flips) -> np.ndarray:
    out = np.transpose(mask, perm)
    for ax, f in enumerate(flips):
        if f:
            out = np.flip(out, axis=ax)
    return out


def _face_structure(d: int) -> np.ndarray:
    return ndimage.generate_binary_structure(d, 1)


def _n_components(mask: np.ndarray) -> int:
    _, n = ndimage.label(mask, structure=_face_structure(mask.ndim))
    return n


def _check_symmetry(p: GscPattern) -> AxiomResult:
    for perm, flips in cube_isometries(p.d):
        if not np.array_equal(_apply_isometry(p.keep, perm, flips), p.keep):
            return AxiomResult(AXIOM_NAMES[0], False, f"not invariant under perm={perm} flips={flips}")
    return AxiomResult(AXIOM_NAMES[0], True)


def _check_connectedness(p: GscPattern) -> AxiomResult:
    n = _n_components(p.keep)
    if n != 1:
        return AxiomResult(AXIOM_NAMES[1], False, f"interior of F_1 has {n} components")
    return AxiomResult(AXIOM_NAMES[1], True)


def _block_shapes(d: int):
    """Block shapes with extent 2 on a non-empty subset of axes and 1 elsewhere."""
    for r in range(1, d + 1):
        for axes in itertools.combinations(range(d), r):
            yield tuple(2 if i in axes else 1 for i in range(d))


def _check_nondiagonality(p: GscPattern) -> AxiomResult:
    # Blocks at level n >= 2 meet at most 2 level-1 cubes per axis, so F_1 ∩ B
    # is (a product refinement of) one of these level-1 sub-blocks.
    struct = _face_structure(p.d)
    for shape in _block_shapes(p.d):
        ranges = [range(p.L - s + 1) for s in shape]
        for origin in itertools.product(*ranges):
            sl = tuple(slice(o, o + s) for o, s in zip(origin, shape))
            block = p.keep[sl]
            if block.any():
                _, n = ndimage.label(block, structure=struct)
                if n > 1:
                    return AxiomResult(
                        AXIOM_NAMES[2], False, f"block {shape} at {origin} splits into {n} pieces"
                    )
    return AxiomResult(AXIOM_NAMES[2], True)


def _check_borders(p: GscPattern) -> AxiomResult:
    for a in range(p.L):
        idx = (a,) + (0,) * (p.d - 1)
        if not p.keep[idx]:
            return AxiomResult(AXIOM_NAMES[3], False, f"cube {idx} on the edge x_2=...=x_d=0 is removed")
    return AxiomResult(AXIOM_NAMES[3], True)


def validate_pattern(pattern: GscPattern) -> ValidationReport:
    """Check the four carpet axioms independently.

    The keep-all mask passes every axiom and is accepted as a reference case.
    """
    if pattern.m_F == 0:
        raise PatternError("pattern keeps no cubes")
    return ValidationReport(
        (
            _check_symmetry(pattern),
            _check_connectedness(pattern),
            _check_nondiagonality(pattern),
            _check_borders(pattern),
        )
    )


def nondiagonality_bruteforce(pattern: GscPattern, n: int) -> bool:
    """Scan every ``2^d`` block of level-``n`` cubes against ``F_1`` directly."""
    fine = upsample(pattern.keep, pattern.L ** (n - 1))
    struct = _face_structure(pattern.d)
    size = pattern.L**n
    for origin in itertools.product(range(size - 1), repeat=pattern.d):
        block = fine[tuple(slice(o, o + 2) for o in origin)]
        if block.any():
            _, k = ndimage.label(block, structure=struct)
            if k > 1:
                return False
    return True


# ---------------------------------------------------------------------------
# cells

def upsample(mask: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return mask
    return np.kron(mask, np.ones((factor,) * mask.ndim, dtype=bool)).astype(bool)


def level_mask(pattern: GscPattern, n: int, grid_level: int | None = None) -> np.ndarray:
    """Boolean array over level-``grid_level`` cubes marking those inside ``F_n``."""
    if grid_level is None:
        grid_level = n
    if grid_level < n:
        raise ValueError("grid_level must be >= n")
    mask = np.ones((1,) * pattern.d, dtype=bool)
    for _ in range(n):
        mask = np.kron(mask, pattern.keep).astype(bool)
    return upsample(mask, pattern.L ** (grid_level - n))


def cell_array(pattern: GscPattern, n: int, m: int | None = None) -> np.ndarray:
    """Level-``n`` cells of ``F_m`` (default ``m = n``) as a lexicographic int array."""
    if m is None:
        m = n
    return np.argwhere(level_mask(pattern, min(n, m), n))


def enumerate_cells(pattern: GscPattern, n: int) -> list[CellIndex]:
    """Cells of ``Q_n(F)``, lexicographically ordered; there are ``m_F**n`` of them."""
    return [CellIndex(n, tuple(int(v) for v in c)) for c in cell_array(pattern, n)]


def contains_cell(pattern: GscPattern, cell: CellIndex, m: int | None = None) -> bool:
    """Whether ``cell`` lies in ``F_m`` (every prefix up to level ``m`` is kept)."""
    n, coords = cell
    if m is None:
        m = n
    if any(not 0 <= c < pattern.L**n for c in coords):
        return False
    for j in range(1, min(n, m) + 1):
        digit = tuple((c // pattern.L ** (n - j)) % pattern.L for c in coords)
        if not pattern.keep[digit]:
            return False
    return True


@dataclass(frozen=True)
class DimensionReport:
    m_F: int
    m_I: int
    d_f: float
    d_I: float
    rho_hat: float | None = None
    rhobar_hat: float | None = None
    dw_hat: float | None = None
    ds_hat: float | None = None

    def with_rho(self, rho_hat: float, L: int) -> "DimensionReport":
        dw = math.log(rho_hat * self.m_F) / math.log(L)
        return DimensionReport(
            self.m_F, self.m_I, self.d_f, self.d_I,
            rho_hat=rho_hat,
            rhobar_hat=rho_hat * self.m_F / L**2,
            dw_hat=dw,
            ds_hat=2 * self.d_f / dw,
        )


def face_counts(pattern: GscPattern) -> dict[tuple[int, int], int]:
    """Number of kept level-1 cubes meeting each face ``{x_i = s}``."""
    out = {}
    for i in range(pattern.d):
        for s in (0, 1):
            out[(i, s)] = int(np.take(pattern.keep, 0 if s == 0 else pattern.L - 1, axis=i).sum())
    return out


def dims(pattern: GscPattern) -> DimensionReport:
    counts = face_counts(pattern)
    m_I = counts[(0, 0)]
    if len(set(counts.values())) != 1:
        raise AssertionError(f"face counts differ across faces: {counts}")
    logL = math.log(pattern.L)
    return DimensionReport(pattern.m_F, m_I, math.log(pattern.m_F) / logL, math.log(m_I) / logL)


def _touches_boundary(cells: np.ndarray, size: int) -> np.ndarray:
    return ((cells == 0) | (cells == size - 1)).any(axis=1)


def boundary_shell(pattern: GscPattern, m: int, n: int) -> list[CellIndex]:
    """Cells of ``Q_n(F_m)`` whose closed cube meets the boundary of the unit cube."""
    cells = cell_array(pattern, n, m)
    sel = cells[_touches_boundary(cells, pattern.L**n)]
    return [CellIndex(n, tuple(int(v) for v in c)) for c in sel]


# ---------------------------------------------------------------------------
# sub-faces

def subfaces(pattern: GscPattern, m: int, k: int) -> list[SubFace]:
    """Level-``k`` sub-faces of the outer boundary of ``F_m``, sorted."""
    size = pattern.L**k
    cells = cell_array(pattern, k, m)
    out = []
    for c in cells:
        t = tuple(int(v) for v in c)
        for axis in range(pattern.d):
            if t[axis] == 0:
                out.append(SubFace(k, t, axis, 0))
            if t[axis] == size - 1:
                out.append(SubFace(k, t, axis, 1))
    out.sort()
    return out


def subface_vertices(face: SubFace) -> list[tuple[int, ...]]:
    """Lattice corners of a sub-face, in units of ``L**-level``."""
    box = face.box()
    return [tuple(v) for v in itertools.product(*[sorted({lo, hi}) for lo, hi in box])]


def subfaces_intersect(a: SubFace, b: SubFace) -> bool:
    if a.level != b.level:
        raise ValueError("sub-faces must share a level")
    return all(lo1 <= hi2 and lo2 <= hi1 for (lo1, hi1), (lo2, hi2) in zip(a.box(), b.box()))


def subface_adjacency(pattern: GscPattern, m: int, k: int, faces=None) -> list[tuple[int, int]]:
    """Edges ``(i, j)``, ``i < j``, of the relation ``~`` on ``subfaces(pattern, m, k)``.

    Two distinct sub-faces are adjacent when their closed sets meet or when both
    lie in one level ``k - 1`` sub-face.
    """
    if k < 1:
        raise ValueError("sub-face adjacency needs k >= 1")
    if faces is None:
        faces = subfaces(pattern, m, k)
    groups: dict[tuple, list[int]] = {}
    for i, f in enumerate(faces):
        # closed unit (d-1)-cubes on the integer lattice meet iff they share a corner
        for v in subface_vertices(f):
            groups.setdefault(("v", v), []).append(i)
        parent = tuple(c // pattern.L for c in f.cell)
        groups.setdefault(("p", f.axis, f.side, parent), []).append(i)
    edges = set()
    for members in groups.values():
        for a, b in itertools.combinations(members, 2):
            edges.add((min(a, b), max(a, b)))
    return sorted(edges)


# ---------------------------------------------------------------------------
# slab removal (connectivity away from faces)

def connectivity_check(pattern: GscPattern, m: int, j: int, faces) -> bool:
    """Whether ``F_m`` minus the open ``L**-j / 2`` slabs along ``faces`` stays connected.

    Works on the level-``m`` cell graph; a cell survives when part of its
    interior lies outside every slab.  Raises :class:`EmptyRegionError` when
    nothing survives.
    """
    if j < 1:
        raise ValueError("slab level j must be >= 1")
    mask = level_mask(pattern, m).copy()
    size = pattern.L**m
    # cell index a survives on the low side iff a + 1 > L^(m-j)/2, i.e. 2(a+1) > L^(m-j)
    width = pattern.L ** (m - j) if m >= j else None
    idx = np.arange(size)
    for axis, side in faces:
        if width is None:
            continue
        pos = idx if side == 0 else size - 1 - idx
        cut = 2 * (pos + 1) <= width
        shape = [1] * pattern.d
        shape[axis] = size
        mask &= ~cut.reshape(shape)
    if not mask.any():
        raise EmptyRegionError(f"no cells of F_{m} survive slab removal at level {j}")
    return _n_components(mask) == 1
