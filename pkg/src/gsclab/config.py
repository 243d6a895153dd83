"""Experiment configuration (JSON) and the on-disk result cache."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_NODE_CAP = 2_000_000


class ConfigError(ValueError):
    pass


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


@dataclass
class ResistParams:
    nmax: int = 3
    extra: int = 2
    tol: float = 1e-10
    half_factor: bool = False
    method: str = "direct"
    out: str | None = None

    def validate(self):
        _check(2 <= self.nmax <= 8, "resist.nmax must lie in [2, 8]")
        _check(0 <= self.extra <= 4, "resist.extra must lie in [0, 4]")
        _check(0 < self.tol <= 1e-4, "resist.tol must lie in (0, 1e-4]")
        _check(self.method in ("direct", "cg", "dense"), "resist.method must be direct, cg or dense")


@dataclass
class TraceParams:
    m: int = 3
    mprime: int | None = None
    rho: float | None = None
    nmax: int = 3
    n_random: int = 3
    out: str | None = None

    def validate(self):
        _check(1 <= self.m <= 7, "trace.m must lie in [1, 7]")
        _check(self.mprime is None or self.mprime >= self.m, "trace.mprime must be >= trace.m")
        _check(self.rho is None or self.rho > 0, "trace.rho must be positive")
        _check(1 <= self.nmax <= self.m, "trace.nmax must lie in [1, m]")
        _check(0 <= self.n_random <= 16, "trace.n_random must lie in [0, 16]")


@dataclass
class DecayParams:
    m: int = 5
    mprime: int | None = None
    cell: str = "1:0,0"
    depth: int = 4
    out: str | None = None

    def validate(self):
        _check(1 <= self.m <= 7, "decay.m must lie in [1, 7]")
        _check(self.mprime is None or self.mprime >= self.m, "decay.mprime must be >= decay.m")
        _check(self.depth >= 1, "decay.depth must be >= 1")
        parse_cell(self.cell)


@dataclass
class ExtendParams:
    n: int = 1
    m: int = 1
    mprime: int | None = None
    targets: str | None = None
    out: str | None = None

    def validate(self):
        _check(self.n >= 0 and self.m >= 0, "extend.n and extend.m must be >= 0")
        _check(self.mprime is None or self.mprime >= self.n + self.m, "extend.mprime must be >= n + m")


@dataclass
class ExitParams:
    nmax: int = 3
    extra: int = 2
    rho: float | None = None
    lazy: bool = True
    out: str | None = None

    def validate(self):
        _check(1 <= self.nmax <= 8, "exit.nmax must lie in [1, 8]")
        _check(0 <= self.extra <= 4, "exit.extra must lie in [0, 4]")
        _check(self.rho is None or self.rho > 0, "exit.rho must be positive")


_BLOCKS = {"resist": ResistParams, "trace": TraceParams, "decay": DecayParams,
           "extend": ExtendParams, "exit": ExitParams}


@dataclass
class ExperimentConfig:
    pattern: str | None = None
    seed: int = 0
    deterministic: bool = True
    cache: str | None = None
    threads: int = 1
    node_cap: int = DEFAULT_NODE_CAP
    output_dir: str = "gsc_out"
    resist: ResistParams = field(default_factory=ResistParams)
    trace: TraceParams = field(default_factory=TraceParams)
    decay: DecayParams = field(default_factory=DecayParams)
    extend: ExtendParams = field(default_factory=ExtendParams)
    exit: ExitParams = field(default_factory=ExitParams)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for key, val in raw.items():
            if key in _BLOCKS:
                if not isinstance(val, dict):
                    raise ConfigError(f"config block {key!r} must be an object")
                sub = _BLOCKS[key]
                names = {f.name for f in dataclasses.fields(sub)}
                bad = set(val) - names
                if bad:
                    raise ConfigError(f"unknown keys in {key!r}: {sorted(bad)}")
                kw[key] = sub(**val)
            else:
                kw[key] = val
        cfg = cls(**kw)
        if base_dir is not None and cfg.pattern and not Path(cfg.pattern).is_absolute():
            cfg.pattern = str(base_dir / cfg.pattern)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw, path.parent)

    def validate(self):
        _check(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        _check(isinstance(self.threads, int) and self.threads >= 1, "threads must be >= 1")
        _check(self.node_cap >= 1, "node_cap must be positive")
        for name in _BLOCKS:
            getattr(self, name).validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def parse_cell(text: str):
    """``"LEVEL:C0,C1,..."`` to ``(level, (c0, c1, ...))``."""
    try:
        level, coords = text.split(":")
        return int(level), tuple(int(c) for c in coords.split(","))
    except ValueError:
        raise ConfigError(f"bad cell {text!r}; expected LEVEL:C0,C1,...") from None


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def param_digest(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


class ResultCache:
    """Directory of finished stage outputs keyed by pattern, stage and parameters.

    Each entry is a directory holding the output files verbatim plus
    ``meta.json``.  Entries are published by an atomic rename, so a reader never
    sees a partial entry; one writer at a time is assumed.
    """

    def __init__(self, root):
        self.root = Path(root)

    @classmethod
    def resolve(cls, configured: str | None) -> "ResultCache | None":
        root = os.environ.get("GSC_CACHE") or configured
        return cls(root) if root else None

    @staticmethod
    def key(pattern_digest: str, subcommand: str, params: dict) -> str:
        return hashlib.sha256(f"{pattern_digest}:{subcommand}:{param_digest(params)}".encode()).hexdigest()[:32]

    def get(self, key: str):
        entry = self.root / key
        meta_path = entry / "meta.json"
        if not meta_path.is_file():
            return None
        meta = json.loads(meta_path.read_text())
        files = {name: (entry / name).read_bytes() for name in meta["files"]}
        return files, meta

    def put(self, key: str, files: dict[str, bytes], meta: dict) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        entry = self.root / key
        if entry.exists():
            return
        tmp = Path(tempfile.mkdtemp(dir=self.root, prefix=".tmp-"))
        try:
            for name, data in files.items():
                (tmp / name).write_bytes(data)
            meta = dict(meta, files=sorted(files))
            (tmp / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
            os.replace(tmp, entry)
        finally:
            if tmp.exists():
                shutil.rmtree(tmp)
