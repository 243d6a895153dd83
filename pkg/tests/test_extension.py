import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsclab.extension import (
    FaceFunction, bump, bump_correct, cell_faces, cutoff, face_averages_of, gradient_bound,
    harmonic_extension, multilinear_interp, oscillation_constant, prescribe_averages,
)
from gsclab.geometry import CellIndex
from gsclab.lattice import ResolutionError, build_lattice
from gsclab.resistance import resistance_solution, sampled_function, solve_dirichlet

GAUSS_X, GAUSS_W = np.polynomial.legendre.leggauss(4)
GAUSS_X, GAUSS_W = (GAUSS_X + 1) / 2, GAUSS_W / 2


def cube_mean(f, k):
    """Tensor Gauss-Legendre mean over [0,1]^k (exact for degree <= 7 per axis)."""
    pts = np.array(list(itertools.product(GAUSS_X, repeat=k)))
    w = np.prod(np.array(list(itertools.product(GAUSS_W, repeat=k))), axis=1)
    return float(w @ f(pts))


# -- corner interpolation -------------------------------------------------------

def test_interp_one_dimensional():
    t = np.linspace(0, 1, 11)[:, None]
    assert np.allclose(multilinear_interp([2.0, 5.0], t), 2.0 * (1 - t[:, 0]) + 5.0 * t[:, 0])


def test_interp_constant():
    x = np.random.default_rng(0).random((50, 2))
    assert np.allclose(multilinear_interp([3.0] * 4, x), 3.0)


def test_interp_centre_of_square():
    # corner values 0, 1, 1, 2: centre value is their mean in either corner order
    assert multilinear_interp([0, 1, 1, 2], [0.5, 0.5])[0] == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31))
def test_interp_mean_and_corners(k, seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(2**k)
    assert cube_mean(lambda x: multilinear_interp(u, x), k) == pytest.approx(u.sum() / 2**k, abs=1e-12)
    corners = np.array(list(itertools.product((0, 1), repeat=k)), dtype=float)
    assert np.allclose(multilinear_interp(u, corners), u)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31))
def test_interp_reproduces_multilinear_functions(k, seed):
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(2**k)
    monos = list(itertools.product((0, 1), repeat=k))
    f = lambda x: sum(c * np.prod(x ** np.array(e), axis=1) for c, e in zip(coef, monos))
    corners = np.array(monos, dtype=float)
    x = rng.random((40, k))
    assert np.allclose(multilinear_interp(f(corners), x), f(x))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 2), st.integers(0, 2**31))
def test_gradient_bound_holds_on_grid(k, seed):
    u = np.random.default_rng(seed).standard_normal(2**k)
    h = 1e-6
    x = np.random.default_rng(seed + 1).random((200, k)) * (1 - 2 * h) + h
    grads = []
    for i in range(k):
        e = np.zeros(k)
        e[i] = h
        grads.append((multilinear_interp(u, x + e) - multilinear_interp(u, x - e)) / (2 * h))
    norm = np.sqrt(np.sum(np.array(grads) ** 2, axis=0))
    assert norm.max() <= gradient_bound(u) + 1e-6


def test_interp_wrong_corner_count():
    with pytest.raises(ValueError):
        multilinear_interp([1, 2, 3], [[0.5, 0.5]])


# -- bump correction --------------------------------------------------------------

def test_bump_properties():
    for k in (1, 2, 3):
        assert cube_mean(bump, k) == pytest.approx(1.0, abs=1e-12)
    edge = np.array([[0.0, 0.3], [1.0, 0.7], [0.4, 0.0], [0.2, 1.0]])
    assert np.all(bump(edge) == 0.0)


def test_bump_correct_examples():
    w = bump_correct([4.0, 4.0], 4.0)
    assert w.beta == 0.0
    t = np.linspace(0, 1, 9)[:, None]
    assert np.allclose(bump_correct([0.0, 0.0], 1.0)(t), 6 * t[:, 0] * (1 - t[:, 0]))
    assert np.allclose(bump_correct([0.0, 1.0], 0.5)(t), t[:, 0])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31), st.floats(-10, 10))
def test_bump_correct_mean_and_boundary(k, seed, a):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(2**k)
    w = bump_correct(u, a)
    assert cube_mean(w, k) == pytest.approx(a, abs=1e-12)
    assert w.mean == pytest.approx(a, abs=1e-12)
    pts = rng.random((100, k))
    pts[np.arange(100), rng.integers(0, k, 100)] = rng.integers(0, 2, 100)
    assert np.allclose(w(pts), multilinear_interp(u, pts), atol=1e-13)


def test_gluing_along_shared_edge():
    # two unit squares [0,1]x[0,1] and [1,2]x[0,1] share the edge x = 1
    rng = np.random.default_rng(4)
    left = rng.standard_normal(4)   # corners 00, 01, 10, 11
    right = rng.standard_normal(4)
    right[0], right[1] = left[2], left[3]
    wl = bump_correct(left, 0.3)
    wr = bump_correct(right, -2.0)
    s = np.linspace(0, 1, 17)
    on_left = wl(np.column_stack([np.ones_like(s), s]))
    on_right = wr(np.column_stack([np.zeros_like(s), s]))
    assert np.array_equal(on_left, on_right)


def test_face_function_dim():
    assert FaceFunction(np.zeros(4), 0.0).dim == 2


# -- faces of level-n cells -------------------------------------------------------

def test_cell_faces_counts(sc, square):
    # 8 cells x 12 outer level-1 sub-faces, shared faces counted once
    faces = cell_faces(sc, 1, 1)
    assert len(faces) == 72
    assert faces == sorted(faces)
    assert len(cell_faces(square, 0, 1)) == 12
    assert len(cell_faces(sc, 0, 2)) == 36


# -- prescribed averages ------------------------------------------------------------

def test_constant_targets_give_constant(sc):
    n_faces = len(cell_faces(sc, 1, 1))
    fill = prescribe_averages(sc, 1, 1, np.full(n_faces, 2.5), 3)
    assert np.allclose(fill.solution.values, 2.5, atol=1e-12)
    assert fill.quadrature_error < 1e-12


def test_full_square_x1_targets(square):
    faces = cell_faces(square, 0, 1)
    targets = []
    for f in faces:
        if f.axis == 0:
            targets.append(f.pos / 3)
        else:
            targets.append((f.others[0] + 0.5) / 3)
    errs = []
    for mp in (3, 4):
        fill = prescribe_averages(square, 0, 1, targets, mp)
        errs.append(fill.quadrature_error)
        # corner values come from neighbouring averages, so the fill only tracks x1
        assert np.max(np.abs(fill.solution.values - fill.solution.domain.centers[:, 0])) < 0.1
    assert errs[0] < 1e-3 and errs[1] < errs[0] / 2


def test_harmonic_round_trip_on_carpet(sc):
    h = resistance_solution(sc, 2, 4)
    faces = cell_faces(sc, 1, 1)
    targets = face_averages_of(h, faces, 2)
    fill = prescribe_averages(sc, 1, 1, targets, 4)
    measured = face_averages_of(fill.solution, faces, 2)
    assert fill.quadrature_error < 0.05
    assert np.max(np.abs(measured - targets)) < 0.1
    C = oscillation_constant(h, fill, 1)
    assert np.isfinite(C) and C > 0


def test_prescription_is_linear(sc):
    faces = cell_faces(sc, 1, 1)
    rng = np.random.default_rng(11)
    a, b = rng.standard_normal(len(faces)), rng.standard_normal(len(faces))
    fa = prescribe_averages(sc, 1, 1, a, 3).solution.values
    fb = prescribe_averages(sc, 1, 1, b, 3).solution.values
    fab = prescribe_averages(sc, 1, 1, a + 2 * b, 3).solution.values
    assert np.allclose(fab, fa + 2 * fb, atol=1e-10)


def test_fill_harmonic_inside_cells(sc):
    faces = cell_faces(sc, 1, 1)
    fill = prescribe_averages(sc, 1, 1, np.random.default_rng(2).standard_normal(len(faces)), 4)
    assert fill.solution.residual < 1e-10


def test_quadrature_error_shrinks(sc):
    faces = cell_faces(sc, 1, 1)
    t = np.random.default_rng(5).standard_normal(len(faces))
    errs = [prescribe_averages(sc, 1, 1, t, mp).quadrature_error for mp in (3, 4, 5)]
    assert errs[1] <= errs[0] / 2 and errs[2] <= errs[1] / 2


def test_prescription_input_errors(sc):
    with pytest.raises(ValueError):
        prescribe_averages(sc, 1, 1, [1.0, 2.0], 3)
    with pytest.raises(ResolutionError):
        prescribe_averages(sc, 1, 1, np.zeros(72), 1)


def test_targets_as_mapping(sc):
    faces = cell_faces(sc, 1, 1)
    fill = prescribe_averages(sc, 1, 1, {f: 1.0 for f in faces}, 3)
    assert np.allclose(fill.solution.values, 1.0)


# -- cutoffs ---------------------------------------------------------------------------

def test_cutoff_full_square_corner(square):
    res = cutoff(square, 1, CellIndex(1, (0, 0)), 2, 1.0)
    dense = cutoff(square, 1, CellIndex(1, (0, 0)), 2, 1.0, method="dense")
    assert res.energy == pytest.approx(dense.energy, rel=1e-12)
    assert res.energy > 0


def test_cutoff_boundary_values(sc):
    res = cutoff(sc, 3, CellIndex(2, (0, 0)), 3, 1.25)
    dom = res.solution.domain
    ids = dom.cell_ids(2)
    inside = np.all(ids == (0, 0), axis=1)
    far = np.any(np.abs(ids - np.array([0, 0])) > 1, axis=1)
    assert np.all(res.solution.values[inside] == 1.0)
    assert np.all(res.solution.values[far] == 0.0)


def test_cutoff_ratio_stable_across_m(sc):
    ratios = [cutoff(sc, m, CellIndex(2, (0, 0)), m, 1.25).ratio for m in (3, 4)]
    assert all(np.isfinite(ratios))
    assert max(ratios) / min(ratios) < 2


def test_cutoff_needs_far_cells(square):
    with pytest.raises(ValueError):
        cutoff(square, 1, CellIndex(1, (1, 1)), 2, 1.0)
    with pytest.raises(ValueError):
        cutoff(square, 1, CellIndex(0, (0, 0)), 1, 1.0)


# -- harmonic extension ----------------------------------------------------------------

def test_extension_constant(sc):
    ext = harmonic_extension(build_lattice(sc, 2, 3), lambda p: np.full(len(p), -4.0))
    assert np.allclose(ext.values, -4.0)
    assert ext.energy == pytest.approx(0.0, abs=1e-20)


def test_extension_x1(square):
    ext = harmonic_extension(build_lattice(square, 0, 3), lambda p: p[:, 0])
    assert np.allclose(ext.values, ext.domain.centers[:, 0], atol=1e-12)


def test_extension_minimises_energy(sc):
    dom = build_lattice(sc, 2, 3)
    data = lambda p: np.sin(3 * p[:, 0]) + p[:, 1] ** 2
    ext = harmonic_extension(dom, data)
    rng = np.random.default_rng(0)
    bump_ = rng.standard_normal(dom.n_nodes) * 0.01
    competitor = solve_dirichlet(dom, (np.arange(dom.n_nodes), ext.values + bump_), ghosts=ext.ghosts)
    assert ext.energy < competitor.energy


def test_extension_beats_prescribed_fill(sc):
    faces = cell_faces(sc, 0, 1)
    t = np.random.default_rng(3).standard_normal(len(faces))
    fill = prescribe_averages(sc, 0, 1, t, 3)
    dom = fill.solution.domain
    data = {(a, s): fill.solution.trace(a, s) for a in range(2) for s in (0, 1)}
    ext = harmonic_extension(dom, data)
    assert ext.energy <= fill.solution.energy * (1 + 1e-12)
