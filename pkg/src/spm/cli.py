"""Command-line experiment runner.

``spm run --config <file>`` executes one named experiment and writes CSV
artifacts plus a manifest into the output directory; ``spm list-experiments``
prints the available experiment names.  Config files are flat ``key = value``
text; command-line flags override file values.

Wall-clock timings go to a separate ``timing.csv`` so that every other
artifact is byte-identical across runs with the same seed and worker count.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, diagnostics as diag, experiments as exp
from .evolution import run

_INT_KEYS = {"n", "seed", "workers", "d"}
_FLOAT_KEYS = {"h", "tau", "T", "c", "alpha", "epsilon", "b", "x0"}
_STR_KEYS = {"experiment", "strategy", "output_dir"}
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS

_DEFAULTS = {
    "benchmark_1d": dict(n=1_000_000, h=0.01, tau=0.01, T=1.0, strategy="A", d=1),
    "vug_static": dict(n=1_000_000, h=0.0625, d=4),
    "allen_cahn_6d": dict(
        n=1_000_000, h=0.4, tau=0.1, T=2.0, strategy="B", c=1.0, d=6
    ),
    "allen_cahn_nonlocal_6d": dict(
        n=1_000_000, h=0.1, tau=0.01, T=1.0, strategy="A",
        alpha=1.5, epsilon=0.005, d=6,
    ),
    "hjb_7d": dict(n=1_000_000, h=0.4, tau=0.1, T=2.0, strategy="B", c=0.5, d=7),
    "nonlocal_linear_hd": dict(
        n=100_000, tau=0.1, T=4.0, c=0.2, alpha=1.5, epsilon=0.005,
        b=1.0, d=1000, x0=0.0,
    ),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Validated description of one experiment run."""

    experiment: str
    n: int
    seed: int = 0
    workers: int = 1
    output_dir: str = "out"
    h: Optional[float] = None
    tau: Optional[float] = None
    T: Optional[float] = None
    strategy: Optional[str] = None
    c: Optional[float] = None
    alpha: Optional[float] = None
    epsilon: Optional[float] = None
    b: Optional[float] = None
    d: Optional[int] = None
    x0: Optional[float] = None

    def __post_init__(self):
        if self.experiment not in exp.EXPERIMENT_NAMES:
            raise ConfigError(
                f"unknown experiment {self.experiment!r}; "
                f"choose one of {', '.join(exp.EXPERIMENT_NAMES)}"
            )
        defaults = _DEFAULTS[self.experiment]
        for key, val in defaults.items():
            if getattr(self, key) is None:
                setattr(self, key, val)
        if self.n < 1:
            raise ConfigError("n must be a positive integer")
        if self.workers < 1:
            raise ConfigError("workers must be a positive integer")
        if self.experiment == "hjb_7d" and self.strategy != "B":
            raise ConfigError(
                "hjb_7d requires strategy=B: the squared-gradient term does "
                "not vanish with the solution, so weight reweighting is invalid"
            )
        if self.tau is not None and self.T is not None:
            steps = self.T / self.tau
            if self.tau <= 0 or abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ConfigError("T must be a positive integer multiple of tau")
        if self.h is not None and self.h <= 0:
            raise ConfigError("h must be positive")

    def as_items(self):
        # output_dir is where artifacts land, not part of what was computed,
        # so it is excluded to keep manifests byte-identical across locations
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and f.name != "output_dir":
                out.append((f.name, v))
        return out


def _coerce(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for key {key!r}: {raw!r}") from exc


def parse_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Flat ``key = value`` file plus flag overrides -> validated RunConfig."""
    values = {}
    if path is not None:
        for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in _ALL_KEYS:
                raise ConfigError(f"{path}:{ln}: unknown key {key!r}")
            values[key] = _coerce(key, raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = val if not isinstance(val, str) else _coerce(key, val)
    if "experiment" not in values:
        raise ConfigError("missing required key 'experiment'")
    if "n" not in values:
        values["n"] = _DEFAULTS[values["experiment"]].get("n", 1_000_000) \
            if values["experiment"] in _DEFAULTS else None
        if values["n"] is None:
            raise ConfigError("missing required key 'n'")
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_manifest(outdir: Path, cfg: RunConfig):
    items = cfg.as_items()
    canon = "\n".join(f"{k}={_fmt(v)}" for k, v in items)
    digest = hashlib.sha256(canon.encode()).hexdigest()
    lines = [
        f"version={__version__}",
        f"config_hash={digest}",
        canon,
    ]
    (outdir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _write_steps(outdir: Path, records):
    rows = [
        (r["step"], r["t"], r["mass"], r["z"], r["stored_cells"])
        for r in records
    ]
    _write_csv(outdir / "steps.csv", ("step", "t", "mass", "z", "stored_cells"), rows)
    _write_csv(
        outdir / "timing.csv", ("step", "wall_s"),
        [(r["step"], r["wall_s"]) for r in records],
    )


def _write_projection_1d(outdir: Path, num: diag.GriddedFunction1D, ref_fn=None,
                         name="projection_1d.csv"):
    centers = num.centers()
    if ref_fn is None:
        rows = zip(centers, num.values)
        header = ("x1", "num")
    else:
        rows = zip(centers, num.values, ref_fn(centers))
        header = ("x1", "num", "ref")
    _write_csv(outdir / name, header, rows)


def _write_projection_2d(outdir: Path, num: diag.GriddedFunction2D, ref_fn=None,
                         name="projection_2d.csv"):
    c1, c2 = num.centers()
    rows = []
    for i, a in enumerate(c1):
        for j, b in enumerate(c2):
            row = [a, b, num.values[i, j]]
            if ref_fn is not None:
                row.append(float(ref_fn(np.array([a]), np.array([b]))[0]))
            rows.append(row)
    header = ("x1", "x2", "num") + (("ref",) if ref_fn is not None else ())
    _write_csv(outdir / name, header, rows)


def run_experiment(cfg: RunConfig) -> dict:
    """Execute the configured experiment; returns the summary row."""
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    name = cfg.experiment

    if name == "benchmark_1d":
        spec, grid = exp.benchmark_problem(cfg.tau, cfg.h, cfg.T, cfg.strategy)
        res = run(spec, cfg.n, grid, cfg.seed, workers=cfg.workers)
        _write_steps(outdir, res.records)
        err = exp.benchmark_error(res.final.ensemble, grid, cfg.T)
        num = diag.project_1d(res.final.ensemble, grid)
        x, u = exp._benchmark_reference(cfg.T)
        ref = diag.cell_average_1d(x, u, grid)
        _write_projection_1d(
            outdir, num,
            ref_fn=lambda cs: np.interp(cs, ref.centers(), ref.values),
        )
        summary = dict(
            experiment=name, N=cfg.n, h=cfg.h, tau=cfg.tau, T=cfg.T,
            strategy=cfg.strategy, error_u=err, peak_cells=res.peak_cells,
        )
    elif name == "vug_static":
        res = exp.vug_static_study(cfg.d, cfg.n, cfg.h, cfg.seed, cfg.workers)
        summary = dict(
            experiment=name, N=cfg.n, d=cfg.d, h=cfg.h, error_p=res.error,
            stored_cells=res.stored_cells, full_cells=res.full_cells,
            alpha_occ=res.alpha_occ,
        )
    elif name in ("allen_cahn_6d", "hjb_7d"):
        if name == "allen_cahn_6d":
            spec, grid = exp.allen_cahn_problem(
                cfg.c, cfg.tau, cfg.T, cfg.h, cfg.strategy, cfg.d
            )
            err_fn = exp.allen_cahn_projection_errors
            p_fn = lambda x1: diag.allen_cahn_proj_p(x1, cfg.T, cfg.c)
            m_fn = lambda a, b: diag.allen_cahn_proj_m(a, b, cfg.T, cfg.c)
        else:
            spec, grid = exp.hjb_problem(cfg.c, cfg.tau, cfg.T, cfg.h, cfg.d)
            err_fn = exp.hjb_projection_errors
            p_fn = lambda x1: diag.hjb_proj_p(x1, cfg.T, cfg.c)
            m_fn = lambda a, b: diag.hjb_proj_m(a, b, cfg.T, cfg.c)
        res = run(spec, cfg.n, grid, cfg.seed, workers=cfg.workers)
        _write_steps(outdir, res.records)
        e_p, e_m = err_fn(res.final.ensemble, grid, cfg.c, cfg.T)
        _write_projection_1d(outdir, diag.project_1d(res.final.ensemble, grid), p_fn)
        _write_projection_2d(outdir, diag.project_2d(res.final.ensemble, grid), m_fn)
        summary = dict(
            experiment=name, N=cfg.n, h=cfg.h, tau=cfg.tau, T=cfg.T,
            strategy=spec.strategy, error_P=e_p, error_M=e_m,
            peak_cells=res.peak_cells,
        )
    elif name == "allen_cahn_nonlocal_6d":
        spec, grid = exp.nonlocal_ac_problem(
            cfg.tau, cfg.T, cfg.h, cfg.alpha, cfg.epsilon, cfg.d, cfg.strategy
        )
        res = run(spec, cfg.n, grid, cfg.seed, workers=cfg.workers)
        _write_steps(outdir, res.records)
        _write_projection_1d(outdir, diag.project_1d(res.final.ensemble, grid))
        summary = dict(
            experiment=name, N=cfg.n, h=cfg.h, tau=cfg.tau, T=cfg.T,
            strategy=cfg.strategy, alpha=cfg.alpha, epsilon=cfg.epsilon,
            peak_cells=res.peak_cells,
        )
    elif name == "nonlocal_linear_hd":
        res = exp.run_nonlocal_linear(
            cfg.d, cfg.n, cfg.tau, cfg.T, b=cfg.b, c=cfg.c, alpha=cfg.alpha,
            eps=cfg.epsilon, seed=cfg.seed, x0=cfg.x0, workers=cfg.workers,
        )
        _write_csv(
            outdir / "observables.csv", ("step", "t", "o1", "o2"),
            [
                (s, res.times[s], res.o1[s], res.o2[s])
                for s in range(res.times.size)
            ],
        )
        o1_exact = cfg.x0 - cfg.b * cfg.T
        rel = abs(res.o1[-1] - o1_exact) / abs(o1_exact) if o1_exact else float("nan")
        summary = dict(
            experiment=name, N=cfg.n, d=cfg.d, tau=cfg.tau, T=cfg.T,
            o1=res.o1[-1], o1_exact=o1_exact, o1_rel_error=rel, o2=res.o2[-1],
        )
    else:  # pragma: no cover - guarded by RunConfig
        raise ConfigError(f"unknown experiment {name!r}")

    _write_csv(outdir / "summary.csv", list(summary), [list(summary.values())])
    _write_csv(
        outdir / "run_timing.csv", ("experiment", "wall_s"),
        [(name, time.perf_counter() - t0)],
    )
    _write_manifest(outdir, cfg)
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spm", description="particle solver experiment runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", help="flat key = value config file")
    p_run.add_argument("--experiment", help="experiment name")
    p_run.add_argument("--n", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--workers", type=int)
    p_run.add_argument("--output-dir", dest="output_dir")
    p_run.add_argument("--h", type=float)
    p_run.add_argument("--tau", type=float)
    p_run.add_argument("--T", type=float)
    p_run.add_argument("--strategy")
    p_run.add_argument("--c", type=float)
    p_run.add_argument("--alpha", type=float)
    p_run.add_argument("--epsilon", type=float)
    p_run.add_argument("--b", type=float)
    p_run.add_argument("--d", type=int)
    p_run.add_argument("--x0", type=float)
    sub.add_parser("list-experiments", help="print experiment names")
    args = parser.parse_args(argv)

    if args.command == "list-experiments":
        for name in exp.EXPERIMENT_NAMES:
            print(name)
        return 0

    overrides = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command", "config") and v is not None
    }
    try:
        cfg = parse_config(args.config, overrides)
        summary = run_experiment(cfg)
    except (ConfigError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for key, val in summary.items():
        print(f"{key}={_fmt(val)}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
