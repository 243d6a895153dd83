"""Command-line entry point: ``gsclab <subcommand> ...``.

Exit status: 0 success, 2 invalid pattern or configuration, 3 solver failure,
4 size limit exceeded, 1 anything else.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, ResultCache, parse_bool, parse_cell

EXIT_OK, EXIT_ERROR, EXIT_INVALID, EXIT_SOLVER, EXIT_SIZE = 0, 1, 2, 3, 4
STAGES = ("validate", "dims", "resist", "trace", "decay", "extend", "exit")


class InvalidPattern(Exception):
    def __init__(self, failed):
        super().__init__("pattern fails axiom(s): " + ", ".join(failed))
        self.failed = failed


class StageFailure(Exception):
    pass


def fmt(x) -> str:
    """Shortest round-trip text for floats; integers and strings unchanged."""
    if isinstance(x, bool):
        return str(x).lower()
    if hasattr(x, "dtype"):
        x = x.item()
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class StageResult:
    name: str
    csv: str
    estimates: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seconds: float = 0.0
    cached: bool = False


# ---------------------------------------------------------------------------
# stages

def _solver_kw(cfg):
    return {"method": cfg.resist.method, "tol": cfg.resist.tol}


def stage_validate(pattern):
    from .geometry import nondiagonality_bruteforce, validate_pattern

    report = validate_pattern(pattern)
    rows = [(r.name, "pass" if r.passed else "fail", r.witness) for r in report.results]
    if report.valid:
        spot = all(nondiagonality_bruteforce(pattern, n) for n in (2,))
        rows.append(("Non-diagonality (level-2 brute force)", "pass" if spot else "fail", ""))
    return report, rows


def stage_dims(pattern, rho=None):
    from .geometry import dims

    rep = dims(pattern)
    header = ["m_F", "m_I", "d_f", "d_I", "rho_hat", "rhobar_hat", "dw_hat", "ds_hat", "dimension_gap"]
    if rho is None:
        row = [rep.m_F, rep.m_I, rep.d_f, rep.d_I, "", "", "", "", ""]
        est = {"d_f": rep.d_f, "d_I": rep.d_I, "m_F": rep.m_F, "m_I": rep.m_I}
    else:
        r = rep.with_rho(rho, pattern.L)
        gap = r.d_I - (r.d_f - r.dw_hat)
        row = [r.m_F, r.m_I, r.d_f, r.d_I, r.rho_hat, r.rhobar_hat, r.dw_hat, r.ds_hat, gap]
        est = {"d_f": r.d_f, "d_I": r.d_I, "dimension_gap": gap}
    return StageResult("dims", to_csv(header, [row]), est)


def stage_resist(pattern, cfg, progress=None):
    from .resistance import resistance_series

    p = cfg.resist
    s = resistance_series(pattern, p.nmax, p.extra, half_factor=p.half_factor,
                          node_cap=cfg.node_cap, progress=progress, **_solver_kw(cfg))
    if not s.complete:
        raise StageFailure(f"resistance series stopped: {s.error}")
    header = ["n", "m_prime", "D_n", "ratio", "rho_hat", "rhobar_hat", "dw_hat", "ds_hat",
              "R_hat_n", "residual", "iters", "seconds"]
    rows = [[r.n, r.m_prime, r.D, r.ratio, s.rho_hat, s.rhobar_hat, s.dw_hat, s.ds_hat, r.R_hat,
             r.residual, r.iterations, "" if cfg.deterministic else r.seconds] for r in s.rows]
    est = {"rho_hat": s.rho_hat, "rho_regression": s.rho_regression, "rhobar_hat": s.rhobar_hat,
           "dw_hat": s.dw_hat, "ds_hat": s.ds_hat, "D_0": s.D0}
    return StageResult("resist", to_csv(header, rows), est)


def stage_trace(pattern, cfg, rho):
    from .studies import trace_study

    p = cfg.trace
    mp = p.mprime if p.mprime is not None else p.m + 2
    rows = trace_study(pattern, p.m, mp, rho, p.nmax, cfg.seed, p.n_random, cfg.node_cap, **_solver_kw(cfg))
    header = ["function", "m", "m_prime", "n", "k_max", "rho_hat", "Lambda_n", "shell_energy",
              "trace_ratio", "extension_ratio", "tail"]
    out = [[r.function, r.m, r.m_prime, r.n, r.k_max, rho, r.Lambda_n, r.shell_energy,
            r.trace_ratio, r.extension_ratio, r.tail] for r in rows]
    est = {"max_trace_ratio": max(r.trace_ratio for r in rows),
           "min_extension_ratio": min(r.extension_ratio for r in rows),
           "max_extension_ratio": max(r.extension_ratio for r in rows)}
    return StageResult("trace", to_csv(header, out), est)


def stage_decay(pattern, cfg):
    from .geometry import CellIndex, contains_cell
    from .lattice import build_lattice
    from .trace import decay_experiment

    p = cfg.decay
    level, coords = parse_cell(p.cell)
    if len(coords) != pattern.d:
        raise ConfigError(f"cell {p.cell!r} needs {pattern.d} coordinates")
    cell = CellIndex(level, coords)
    if not contains_cell(pattern, cell, p.m):
        raise ConfigError(f"cell {p.cell!r} is not a cell of F_{p.m}")
    mp = p.mprime if p.mprime is not None else p.m
    dom = build_lattice(pattern, p.m, mp, node_cap=cfg.node_cap)
    prof = decay_experiment(dom, cell, p.depth, **_solver_kw(cfg))
    rows = [[n, c, s, c / prof.total] for n, c, s in zip(prof.levels, prof.cumulative, prof.shell)]
    mono = all(prof.cumulative[i + 1] <= prof.cumulative[i] for i in range(len(prof.cumulative) - 1))
    est = {"c_hat": prof.rate, "prefactor": prof.prefactor, "neighbourhood_energy": prof.total,
           "monotone": mono, "truncated": prof.truncated}
    return StageResult("decay", to_csv(["n", "cumulative", "shell", "normalized"], rows), est)


def read_targets(path, n_faces: int):
    vals = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#") or row[0].strip() == "face_id":
                continue
            vals[int(row[0])] = float(row[1])
    missing = sorted(set(range(n_faces)) - set(vals))
    if missing:
        raise ConfigError(f"targets file lacks face ids {missing[:5]}{'...' if len(missing) > 5 else ''}")
    extra = sorted(set(vals) - set(range(n_faces)))
    if extra:
        raise ConfigError(f"targets file has unknown face ids {extra[:5]}")
    return [vals[i] for i in range(n_faces)]


def stage_extend(pattern, cfg):
    import numpy as np

    from .extension import cell_faces, prescribe_averages
    from .studies import stream

    p = cfg.extend
    faces = cell_faces(pattern, p.n, p.m)
    if p.targets:
        targets = np.array(read_targets(p.targets, len(faces)))
    else:
        targets = stream(cfg.seed, 1000).standard_normal(len(faces))
    mp = p.mprime if p.mprime is not None else p.n + p.m + 2
    fill = prescribe_averages(pattern, p.n, p.m, targets, mp, node_cap=cfg.node_cap, **_solver_kw(cfg))
    rows = [[i, t, a, a - t] for i, (t, a) in enumerate(zip(targets, fill.averages))]
    est = {"quadrature_error": fill.quadrature_error, "energy": fill.solution.energy,
           "n_faces": len(faces), "m_prime": mp}
    return StageResult("extend", to_csv(["face_id", "target", "average", "error"], rows), est)


def stage_exit(pattern, cfg, rho):
    from .exit_time import exit_series

    p = cfg.exit
    s = exit_series(pattern, p.nmax, rho, p.extra, lazy=p.lazy, node_cap=cfg.node_cap,
                    method=cfg.resist.method, tol=cfg.resist.tol)
    rows = [[r.n, r.m_prime, r.steps, r.t_n, r.a_n, r.alpha_n, r.rel_change] for r in s.rows]
    est = {"c0_hat": s.c0_hat, "final_gap": s.final_gap, "rhobar_hat": s.rhobar_hat}
    return StageResult("exit", to_csv(["n", "m_prime", "steps", "t_n", "a_n", "alpha_n", "rel_change"], rows), est)


# ---------------------------------------------------------------------------
# orchestration

class Runner:
    def __init__(self, cfg: ExperimentConfig, log=None):
        from .geometry import load_pattern

        if not cfg.pattern:
            raise ConfigError("no pattern file given (--pattern or config 'pattern')")
        self.cfg = cfg
        self.pattern = load_pattern(cfg.pattern)
        self.cache = ResultCache.resolve(cfg.cache)
        self.log = log or (lambda msg: print(msg, file=sys.stderr))

    def check_valid(self):
        report, _ = stage_validate(self.pattern)
        if not report.valid:
            raise InvalidPattern(report.failed)

    def stage_params(self, name: str, rho=None) -> dict:
        cfg = self.cfg
        base = {"node_cap": cfg.node_cap, "method": cfg.resist.method, "tol": cfg.resist.tol}
        block = {"resist": cfg.resist, "trace": cfg.trace, "decay": cfg.decay,
                 "extend": cfg.extend, "exit": cfg.exit}.get(name)
        params = dict(base)
        if block is not None:
            params.update({k: v for k, v in vars(block).items() if k != "out"})
        if name in ("trace", "extend"):
            params["seed"] = cfg.seed
        if name == "extend" and cfg.extend.targets:
            params["targets_sha256"] = sha256(Path(cfg.extend.targets).read_bytes())
        if name == "resist":
            params["deterministic"] = cfg.deterministic
        if rho is not None:
            params["rho_hat"] = rho
        return params

    def run_stage(self, name: str, rho=None) -> StageResult:
        params = self.stage_params(name, rho)
        key = None
        if self.cache is not None:
            key = ResultCache.key(self.pattern.digest(), name, params)
            hit = self.cache.get(key)
            if hit is not None:
                files, meta = hit
                self.log(f"[{name}] cache hit {key}")
                return StageResult(name, files["output.csv"].decode(), meta["estimates"], params,
                                   meta.get("seconds", 0.0), cached=True)
        t0 = time.perf_counter()
        if name == "dims":
            res = stage_dims(self.pattern, rho)
        elif name == "resist":
            res = stage_resist(self.pattern, self.cfg,
                               progress=lambda r: self.log(f"[resist] n={r.n} m'={r.m_prime} D={r.D:.10g}"))
        elif name == "trace":
            res = stage_trace(self.pattern, self.cfg, rho)
        elif name == "decay":
            res = stage_decay(self.pattern, self.cfg)
        elif name == "extend":
            res = stage_extend(self.pattern, self.cfg)
        elif name == "exit":
            res = stage_exit(self.pattern, self.cfg, rho)
        else:
            raise ValueError(name)
        res.seconds = time.perf_counter() - t0
        res.params = params
        if self.cache is not None:
            meta = {"estimates": res.estimates, "seconds": res.seconds, "version": __version__,
                    "stage": name, "parameters": params}
            self.cache.put(key, {"output.csv": res.csv.encode()}, meta)
        return res

    def manifest(self, subcommand, results, outputs, complete=True, error=None, rho=None) -> dict:
        cfg = self.cfg
        est = {}
        for r in results:
            est.update({f"{r.name}.{k}": v for k, v in r.estimates.items()})
        m = {
            "artifact": "gsclab",
            "version": __version__,
            "subcommand": subcommand,
            "complete": complete,
            "pattern": {"path": str(cfg.pattern), "digest": self.pattern.digest(),
                        "d": self.pattern.d, "L_F": self.pattern.L},
            "seed": cfg.seed,
            "deterministic": cfg.deterministic,
            "config": cfg.to_dict(),
            "rho_hat": rho,
            "estimates": est,
            "stages": [],
        }
        for r in results:
            entry = {"name": r.name, "output": outputs.get(r.name), "sha256": sha256(r.csv.encode()),
                     "parameters": r.params}
            if not cfg.deterministic:
                entry["seconds"] = r.seconds
                entry["cached"] = r.cached
            m["stages"].append(entry)
        if error is not None:
            m["error"] = error
        return m


def write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def manifest_path(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True, default=str) + "\n"


def run_pipeline(runner: Runner) -> int:
    cfg = runner.cfg
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    results, outputs = [], {}
    rho = None
    overrides = {"trace": cfg.trace.rho, "exit": cfg.exit.rho}
    error = None
    status = EXIT_OK
    try:
        runner.check_valid()
        for name in STAGES[1:]:
            used = None
            if name in overrides:
                used = overrides[name] if overrides[name] is not None else rho
            res = runner.run_stage(name, used)
            results.append(res)
            path = outdir / f"{name}.csv"
            write_text(path, res.csv)
            outputs[name] = path.name
            if name == "resist":
                rho = res.estimates["rho_hat"]
            runner.log(f"[{name}] done")
        # dimension gap with the fitted exponent
        gap = stage_dims(runner.pattern, rho)
        results.append(StageResult("dims_fitted", gap.csv, gap.estimates,
                                   {"rho_hat": rho}))
        write_text(outdir / "dims_fitted.csv", gap.csv)
        outputs["dims_fitted"] = "dims_fitted.csv"
    except InvalidPattern as exc:
        error, status = str(exc), EXIT_INVALID
    except Exception as exc:  # halt with a partial manifest
        error, status = f"{type(exc).__name__}: {exc}", _status_for(exc)
    man = runner.manifest("pipeline", results, outputs, complete=error is None, error=error, rho=rho)
    man["rho_used"] = {r.name: r.params.get("rho_hat") for r in results if "rho_hat" in r.params}
    write_text(outdir / "manifest.json", dump_json(man))
    if error:
        print(f"pipeline halted: {error}", file=sys.stderr)
    return status


def _status_for(exc) -> int:
    from .lattice import DomainSizeError
    from .solvers import SolverError

    if isinstance(exc, SolverError):
        return EXIT_SOLVER
    if isinstance(exc, DomainSizeError):
        return EXIT_SIZE
    if isinstance(exc, (ConfigError, ValueError)):
        return EXIT_INVALID
    return EXIT_ERROR


# ---------------------------------------------------------------------------
# argument parsing

def _global_flags(parser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="JSON experiment config")
    parser.add_argument("--deterministic", default=d, type=parse_bool, metavar="BOOL")
    parser.add_argument("--cache", default=d, metavar="DIR", help="result cache directory")
    parser.add_argument("--threads", default=d, type=int, metavar="N")
    parser.add_argument("--seed", default=d, type=int)
    parser.add_argument("--node-cap", default=d, type=int, dest="node_cap")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gsclab", description="Generalized Sierpinski carpet laboratory")
    ap.add_argument("--version", action="version", version=f"gsclab {__version__}")
    _global_flags(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    common.add_argument("--pattern", default=argparse.SUPPRESS, metavar="FILE")

    sub.add_parser("validate", parents=[common], help="check the axioms")
    p = sub.add_parser("dims", parents=[common], help="counts and dimensions")
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--out", default=None)
    p = sub.add_parser("faces", parents=[common], help="faces of level-n cells")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--list", action="store_true")
    p.add_argument("--out", default=None)

    p = sub.add_parser("resist", parents=[common], help="resistance series")
    p.add_argument("--nmax", type=int)
    p.add_argument("--extra", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--half-factor", type=parse_bool, dest="half_factor", metavar="BOOL")
    p.add_argument("--method", choices=("direct", "cg", "dense"))
    p.add_argument("--out")

    p = sub.add_parser("trace", parents=[common], help="trace and extension ratios")
    p.add_argument("--m", type=int)
    p.add_argument("--mprime", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--nmax", type=int)
    p.add_argument("--out")

    p = sub.add_parser("decay", parents=[common], help="energy decay near a cell boundary")
    p.add_argument("--cell", metavar="LEVEL:COORDS")
    p.add_argument("--depth", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--mprime", type=int)
    p.add_argument("--out")

    p = sub.add_parser("extend", parents=[common], help="fill with prescribed face averages")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--mprime", type=int)
    p.add_argument("--targets", metavar="FILE")
    p.add_argument("--out")

    p = sub.add_parser("exit", parents=[common], help="mean exit-time series")
    p.add_argument("--nmax", type=int)
    p.add_argument("--extra", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--lazy", type=parse_bool, metavar="BOOL")
    p.add_argument("--out")

    p = sub.add_parser("pipeline", parents=[common], help="all stages, threading rho_hat forward")
    p.add_argument("--output-dir", dest="output_dir")
    return ap


def make_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    for key in ("pattern", "deterministic", "cache", "threads", "seed", "node_cap", "output_dir"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    block = getattr(cfg, args.command, None) if args.command in ("resist", "trace", "decay", "extend", "exit") else None
    if block is not None:
        for key in vars(block):
            val = getattr(args, key, None)
            if val is not None:
                setattr(block, key, val)
    cfg.validate()
    return cfg


def _limit_threads(n: int):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = make_config(args)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    _limit_threads(cfg.threads)
    try:
        return _dispatch(args, cfg)
    except InvalidPattern as exc:
        print(f"invalid pattern: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        from .geometry import PatternError
        from .solvers import SolverError

        if isinstance(exc, SolverError):
            print(f"solver failure: {exc} (residual={exc.residual:.3e}, iterations={exc.iterations})",
                  file=sys.stderr)
        elif isinstance(exc, (PatternError, ConfigError)):
            print(f"invalid input: {exc}", file=sys.stderr)
        else:
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _status_for(exc)


def _dispatch(args, cfg) -> int:
    runner = Runner(cfg)
    cmd = args.command
    if cmd == "validate":
        report, rows = stage_validate(runner.pattern)
        for name, status, witness in rows:
            print(f"{name}: {status}" + (f" ({witness})" if witness else ""))
        if not report.valid:
            raise InvalidPattern(report.failed)
        print("all axioms pass")
        return EXIT_OK
    runner.check_valid()
    if cmd == "pipeline":
        return run_pipeline(runner)
    if cmd == "dims":
        res = stage_dims(runner.pattern, args.rho)
        _emit(res.csv, args.out)
        return EXIT_OK
    if cmd == "faces":
        from .extension import cell_faces

        faces = cell_faces(runner.pattern, args.n, args.m)
        if args.list:
            d = runner.pattern.d
            header = ["face_id", "axis", "pos"] + [f"c{i}" for i in range(d - 1)]
            text = to_csv(header, [[i, f.axis, f.pos, *f.others] for i, f in enumerate(faces)])
            _emit(text, args.out)
        else:
            print(len(faces))
        return EXIT_OK
    rho = None
    if cmd in ("trace", "exit"):
        rho = getattr(cfg, cmd).rho
        if rho is None:
            raise ConfigError(f"{cmd} needs --rho (or run the pipeline to thread it from resist)")
    res = runner.run_stage(cmd, rho)
    out = Path(getattr(cfg, cmd).out or Path(cfg.output_dir) / f"{cmd}.csv")
    write_text(out, res.csv)
    man = runner.manifest(cmd, [res], {cmd: out.name}, rho=rho if rho is not None else res.estimates.get("rho_hat"))
    write_text(manifest_path(out), dump_json(man))
    print(f"wrote {out} and {manifest_path(out)}", file=sys.stderr)
    return EXIT_OK


def _emit(text: str, out):
    if out:
        write_text(Path(out), text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    sys.exit(main())
