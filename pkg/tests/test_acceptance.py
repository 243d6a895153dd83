"""Acceptance checks, one test per criterion; each prints a PASS/FAIL line."""
import dataclasses
import json
import math
import shutil
import time

import numpy as np
import pytest

from gsclab.cli import main
from gsclab.exit_time import exit_series
from gsclab.extension import CellFace, _locate, cell_faces, prescribe_averages
from gsclab.geometry import CellIndex, dims, full_cube, standard_carpet
from gsclab.lattice import build_lattice
import gsclab.resistance as gres
from gsclab.resistance import resistance_solution, resistance_series
from gsclab.scaling import walk_dimension
from gsclab.studies import stream, trace_study
from gsclab.trace import besov_profile, decay_profile, default_data, discrete_energy_I, neighbourhood_mask

BIG = 3_000_000
SEED = 20240101

# worst relative additivity gap over every solution checked in this module
ADDITIVITY = {"worst": 0.0, "count": 0}


def check_additivity(sol, levels=(1, 2, 3)):
    total = sol.energy
    for n in levels:
        if n > sol.domain.grid_level:
            continue
        _, e = sol.cell_energies(n)
        gap = abs(math.fsum(e) - total) / abs(total) if total else abs(math.fsum(e))
        ADDITIVITY["worst"] = max(ADDITIVITY["worst"], gap)
    ADDITIVITY["count"] += 1
    return sol


@pytest.fixture(scope="module", autouse=True)
def audit_solves():
    """Check additivity on every Dirichlet solve made through the package."""
    import gsclab.extension
    import gsclab.resistance
    import gsclab.trace

    mods = [m for m in (gsclab.resistance, gsclab.extension, gsclab.trace) if hasattr(m, "solve_dirichlet")]
    original = gsclab.resistance.solve_dirichlet

    def audited(*args, **kw):
        return check_additivity(original(*args, **kw))

    mp = pytest.MonkeyPatch()
    for m in mods:
        mp.setattr(m, "solve_dirichlet", audited)
    yield
    mp.undo()


@pytest.fixture(scope="module")
def sc():
    return standard_carpet()


@pytest.fixture(scope="module")
def series(sc, audit_solves):
    t0 = time.perf_counter()
    s = resistance_series(sc, 5, 2, node_cap=BIG)
    s.wall = time.perf_counter() - t0
    return s


@pytest.fixture(scope="module")
def studies(sc, series):
    return {m: trace_study(sc, m, m + 2, series.rho_hat, n_max=3, seed=SEED, node_cap=BIG)
            for m in (3, 4, 5)}


def test_criterion_01_full_cube(verdict):
    sq = full_cube(2, 3)
    t0 = time.perf_counter()
    worst = 0.0
    for n in (1, 2, 3):
        for mp in range(n, n + 4):
            sol = resistance_solution(sq, n, mp, node_cap=BIG)
            worst = max(worst, abs(sol.energy - 1.0))
    secs = time.perf_counter() - t0
    verdict(1, worst < 1e-8 and secs < 10,
            f"full square max |D_n - 1| = {worst:.2e} over 12 solves in {secs:.1f} s")


def test_criterion_02_series_parallel(sc, verdict):
    t0 = time.perf_counter()
    sol = resistance_solution(sc, 1, 1, clamp=True)
    secs = time.perf_counter() - t0
    verdict(2, abs(sol.energy - 1.0) < 1e-10 and secs < 1,
            f"SC n=1 m'=1 clamped-layer D = {sol.energy!r} in {secs:.2f} s")


def test_criterion_03_scaling_bounds(series, verdict):
    rho = series.rho_hat
    ok = series.complete and 1.125 - 0.05 <= rho <= 1.5 + 0.05 and series.wall < 600
    verdict(3, ok, f"rho_hat = {rho:.5f} (rhobar_hat = {series.rhobar_hat:.5f}), "
                   f"n_max=5 extra=2 in {series.wall:.0f} s")


def test_criterion_04_resistance_band(series, verdict):
    R = series.R_hat
    ratios = series.ratios
    diffs = np.abs(np.diff(ratios))[-3:]
    band = R.max() / R.min()
    ok = len(R) == 5 and band <= 4 and bool(np.all(np.diff(diffs) < 0))
    verdict(4, ok, f"R_hat band factor {band:.3f}; last ratio steps "
                   + ", ".join(f"{x:.4f}" for x in diffs))


def test_criterion_06_besov_invariants(sc, series, studies, verdict):
    dom = build_lattice(sc, 3, 5)
    const = gres.solve_dirichlet(dom, (np.arange(dom.n_nodes), np.full(dom.n_nodes, 3.7)))
    zero = all(discrete_energy_I(const, k) == 0.0 for k in range(1, 6))
    f = studies[3]
    sol = resistance_solution(sc, 3, 5)
    doubled_ghosts = dataclasses.replace(sol.ghosts, values=2 * sol.ghosts.values)
    twice = gres.solve_dirichlet(dom, (np.arange(dom.n_nodes), 2 * sol.values), ghosts=doubled_ghosts)
    scale_gap = max(abs(discrete_energy_I(twice, k) - 4 * discrete_energy_I(sol, k))
                    / discrete_energy_I(sol, k) for k in range(1, 6))
    mono = True
    for rows in studies.values():
        by_fn = {}
        for r in rows:
            by_fn.setdefault(r.function, []).append(r.Lambda_n)
        mono &= all(np.all(np.diff(v) <= 0) for v in by_fn.values())
    prof = besov_profile(sol, series.rho_hat, (1, 2, 3, 4, 5))
    mono &= bool(np.all(np.diff([prof.lam[n] for n in sorted(prof.lam)]) <= 0))
    ok = zero and scale_gap < 1e-10 and mono and len(f) > 0
    verdict(6, ok, f"I_k[const]=0: {zero}; max |I_k[2f]/4I_k[f] - 1| = {scale_gap:.1e}; "
                   f"Lambda_n non-increasing on all profiles: {mono}")


def _max_ratio(rows):
    return max(r.trace_ratio for r in rows if math.isfinite(r.trace_ratio))


def test_criterion_07_trace_uniformity(studies, verdict):
    mx = {m: _max_ratio(rows) for m, rows in studies.items()}
    finite = all(math.isfinite(r.trace_ratio) for rows in studies.values() for r in rows)
    growth = mx[5] / mx[3] - 1
    verdict(7, finite and growth < 0.5,
            "max trace ratio " + ", ".join(f"m={m}: {v:.3f}" for m, v in mx.items())
            + f"; growth m=3 to 5 = {growth:+.1%}")


def test_criterion_08_extension_uniformity(studies, verdict):
    per_fn = {}
    for m, rows in studies.items():
        for r in rows:
            per_fn.setdefault(r.function, {})[m] = r.extension_ratio
    bands = {fn: max(v.values()) / min(v.values()) for fn, v in per_fn.items()}
    finite = all(math.isfinite(x) and x > 0 for v in per_fn.values() for x in v.values())
    worst = max(bands, key=bands.get)
    verdict(8, finite and bands[worst] <= 2,
            f"{len(bands)} functions, widest band {bands[worst]:.3f} ({worst})")


def test_criterion_09_boundary_decay(sc, verdict):
    t0 = time.perf_counter()
    cell = CellIndex(1, (0, 0))
    dom = build_lattice(sc, 5, 5)
    nb = neighbourhood_mask(dom, cell)
    outside = np.flatnonzero(~nb)
    sol = gres.solve_dirichlet(dom, (outside, default_data(dom.centers[outside])))
    prof = decay_profile(sol, cell, 4)
    secs = time.perf_counter() - t0
    cum = np.array(prof.cumulative)
    mono = bool(np.all(np.diff(cum) <= 0))
    ok = prof.rate > 0.1 and mono and not prof.truncated and secs < 900
    verdict(9, ok, f"fitted rate c = {prof.rate:.3f}, cumulative shells monotone: {mono}, {secs:.1f} s")


def _ghost_face_means(fill, k):
    """Face means recomputed from the solution's own boundary links."""
    g = fill.solution.ghosts
    L = fill.solution.domain.pattern.L
    index = {f: i for i, f in enumerate(fill.faces)}
    sums = np.zeros(len(fill.faces))
    counts = np.zeros(len(fill.faces))
    for axis in range(fill.solution.domain.d):
        # a ghost sits on a face normal to ``axis`` iff that coordinate is a grid line
        x = g.points[:, axis] * L**k
        sel = np.isclose(x, np.rint(x))
        pos, others, _ = _locate(g.points[sel], axis, k, L)
        for p, o, v in zip(pos, others, g.values[sel]):
            i = index[CellFace(axis, int(p), tuple(int(t) for t in o))]
            sums[i] += v
            counts[i] += 1
    return sums / counts


def test_criterion_10_average_prescription(sc, verdict):
    faces = cell_faces(sc, 1, 1)
    targets = stream(SEED, 1000).standard_normal(len(faces))
    errs, within = [], True
    for mp in (2, 3, 4):
        fill = prescribe_averages(sc, 1, 1, targets, mp)
        measured = _ghost_face_means(fill, 2)
        within &= bool(np.max(np.abs(measured - targets)) <= fill.quadrature_error * (1 + 1e-9) + 1e-14)
        errs.append(fill.quadrature_error)
    shrink = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    verdict(10, within and min(shrink) >= 2,
            "quadrature error " + ", ".join(f"{e:.3g}" for e in errs)
            + f" at m'=2..4 (shrink factors {', '.join(f'{s:.1f}' for s in shrink)}); "
              f"recomputed means within it: {within}")


def test_criterion_11_exit_time(sc, series, verdict):
    rho = series.rho_hat
    main_run = exit_series(sc, 4, rho, 2, node_cap=BIG)
    control = exit_series(sc, 4, 1.2 * rho, 2, node_cap=BIG)
    gap, ctrl = main_run.final_gap, control.final_gap
    verdict(11, gap < 0.15 and ctrl >= 2 * gap,
            f"|a_4 - a_3|/a_3 = {gap:.4f}, c0_hat = {main_run.c0_hat:.5f}; control (rho x1.2) gap = {ctrl:.4f}")


def test_criterion_12_dimension_inequality(sc, series, verdict):
    rep = dims(sc)
    dw = walk_dimension(sc, series.rho_hat)
    margin = rep.d_I - (rep.d_f - dw)
    verdict(12, margin > 0.5, f"d_I - (d_f - dw_hat) = {margin:.4f} (dw_hat = {dw:.4f})")


def test_criterion_13_determinism(tmp_path, pattern_dir, verdict):
    cfg = json.loads((pattern_dir.parent / "configs" / "standard_sc.json").read_text())
    cfg["pattern"] = str(pattern_dir / "standard_sc.cfg")
    cfg["output_dir"] = str(tmp_path / "out")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    runs = []
    for _ in range(2):
        assert main(["--config", str(path), "pipeline"]) == 0
        out = tmp_path / "out"
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        shutil.rmtree(out)
    csvs = sorted(n for n in runs[0] if n.endswith(".csv"))
    same = runs[0] == runs[1]
    verdict(13, same and len(csvs) >= 6,
            f"two pipeline runs: {len(csvs)} CSVs and manifest byte-identical: {same}")


def test_criterion_05_energy_additivity(verdict, series, studies):
    # runs last in this module so every solve above has been checked
    worst, count = ADDITIVITY["worst"], ADDITIVITY["count"]
    verdict(5, count > 0 and worst < 1e-12,
            f"worst relative gap {worst:.1e} over {count} solutions")
