"""Ensemble orchestration, manifests and summary reports.

An ensemble run writes one CSV per path (two when ``scheme = both``) and a
``manifest.json`` that ties every file to the configuration text, its hash
and the per-path seed.  :func:`report` only reads the manifest and the CSVs,
so every number it prints can be recomputed offline.
"""
from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .config import RunConfig, config_hash, parse_config, serialize_config
from .observables import (
    Trajectory,
    ensemble_mass_trend,
    extinction_time,
    fit_decay_rate,
    integrated_noncritical,
)
from .solver import NumericalError, build_problem, run_path

__all__ = [
    "PathEntry",
    "RunManifest",
    "ReportError",
    "Report",
    "path_seed",
    "worker_count",
    "run_ensemble",
    "load_manifest",
    "report",
    "fit_window_rate",
]

MANIFEST_NAME = "manifest.json"
WORKERS_ENV = "SOCPME_WORKERS"
BOUND_SLACK = 1.05
EXTINCTION_DELTA = 1e-3


def path_seed(master: int, index: int) -> int:
    """Seed of path ``index``; a pure function of the master seed."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    if raw.strip():
        n = int(raw)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


@dataclass
class PathEntry:
    index: int
    seed: int
    status: str  # "ok" or "failed"
    files: dict[str, str] = field(default_factory=dict)  # scheme -> file name
    error: str = ""
    wall_clock_s: float = 0.0
    meta: dict = field(default_factory=dict)


@dataclass
class RunManifest:
    config_text: str
    config_hash: str
    master_seed: int
    version: str
    wall_clock_s: float
    entries: list[PathEntry]
    out_dir: str = ""

    @property
    def failed(self) -> list[PathEntry]:
        return [e for e in self.entries if e.status != "ok"]

    @property
    def config(self) -> RunConfig:
        return parse_config(self.config_text, check_fields=False)

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("out_dir")
        return json.dumps(d, indent=2, sort_keys=True)

    def save(self, out_dir: str | Path) -> Path:
        p = Path(out_dir) / MANIFEST_NAME
        p.write_text(self.to_json() + "\n")
        return p

    def trajectories(self, scheme: str | None = None) -> dict[str, list[Trajectory]]:
        """Load the CSVs of all successful paths, grouped by scheme."""
        out: dict[str, list[Trajectory]] = {}
        for e in self.entries:
            if e.status != "ok":
                continue
            for sch, name in sorted(e.files.items()):
                if scheme is not None and sch != scheme:
                    continue
                tr = Trajectory.from_csv(Path(self.out_dir) / name)
                tr.meta.update(e.meta, scheme=sch, seed=e.seed, index=e.index)
                out.setdefault(sch, []).append(tr)
        return out


def load_manifest(path: str | Path) -> RunManifest:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    d = json.loads(p.read_text())
    entries = [PathEntry(**e) for e in d.pop("entries")]
    return RunManifest(entries=entries, out_dir=str(p.parent), **d)


def _file_name(index: int, scheme: str, both: bool) -> str:
    return f"path_{index:04d}_{scheme}.csv" if both else f"path_{index:04d}.csv"


def _run_one(config: RunConfig, index: int, seed: int, out_dir: str, inject_nan: bool) -> PathEntry:
    both = config.scheme == "both"
    schemes = ("direct", "transformed") if both else (config.scheme,)
    t0 = time.perf_counter()
    entry = PathEntry(index=index, seed=seed, status="ok")
    try:
        problem = build_problem(config)
        for sch in schemes:
            traj = run_path(config, seed, scheme=sch, problem=problem, inject_nan=inject_nan)
            name = _file_name(index, sch, both)
            traj.to_csv(Path(out_dir) / name)
            entry.files[sch] = name
        entry.meta = {k: traj.meta[k] for k in ("x_l2", "x_inf", "C_K")}
    except (NumericalError, ArithmeticError) as exc:
        entry.status = "failed"
        entry.error = f"{type(exc).__name__}: {exc}"
    entry.wall_clock_s = time.perf_counter() - t0
    return entry


def run_ensemble(
    config: RunConfig,
    out_dir: str | Path | None = None,
    *,
    seeds: Sequence[int] | None = None,
    workers: int | None = None,
    inject_nan: Iterable[int] = (),
) -> RunManifest:
    """Run ``config.paths`` independent paths and write CSVs plus a manifest.

    Path ``i`` uses :func:`path_seed` of ``(config.seed, i)`` unless explicit
    ``seeds`` are given.  A path that fails numerically is marked ``failed``
    in the manifest and the rest carry on.  ``inject_nan`` lists path indices
    whose initial datum is poisoned (test hook).
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if seeds is None:
        seeds = [path_seed(config.seed, i) for i in range(config.paths)]
    seeds = [int(s) for s in seeds]
    poisoned = set(inject_nan)
    workers = worker_count() if workers is None else workers
    jobs = [(config, i, s, str(out), i in poisoned) for i, s in enumerate(seeds)]

    t0 = time.perf_counter()
    if workers <= 1 or len(jobs) <= 1:
        entries = [_run_one(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            entries = list(pool.map(_run_one, *zip(*jobs)))
    manifest = RunManifest(
        config_text=serialize_config(config),
        config_hash=config_hash(config),
        master_seed=int(config.seed),
        version=__version__,
        wall_clock_s=time.perf_counter() - t0,
        entries=entries,
        out_dir=str(out),
    )
    manifest.save(out)
    return manifest


class ReportError(ValueError):
    pass


def fit_window_rate(traj: Trajectory, compact: int, floor: float = 1e-10) -> float:
    """Fitted decay rate of ``mass_K`` over the records where it is still resolved.

    The window runs from ``t = 0`` to the last record with
    ``mass_K > floor * mass_K(0)``.  A path whose mass drops below the floor
    before ten records exist decayed faster than any fit can express and
    gets ``inf``.
    """
    m = traj.mass_K[:, compact]
    if not m[0] > 0:
        return math.nan
    alive = np.flatnonzero(m > floor * m[0])
    last = int(alive[-1]) if alive.size else 0
    if last + 1 < 10:
        return math.inf
    return fit_decay_rate(traj, compact, (traj.t[0], traj.t[last]))


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class Report:
    rows: list[dict]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows)

    def table(self) -> str:
        lines = []
        for r in self.rows:
            lines.append(f"scheme {r['scheme']}: {r['n_ok']}/{r['n_paths']} paths ok")
            q = r["Z_end_quantiles"]
            lines.append("  Z(t_end) quantiles  " + "  ".join(f"{k}={_fmt(v)}" for k, v in q.items()))
            lines.append(f"  extinction fraction {r['extinction_fraction']:.3f}   "
                         f"ell estimate {_fmt(r['ell_estimate'])} (relative {_fmt(r['ell_relative'])})")
            for c in r["compacts"]:
                lines.append(
                    f"  K{c['index']}: median rho {_fmt(c['median_rho'])} vs C_K/2 {_fmt(c['rate_floor'])}"
                    f"   bound violations {c['bound_violations']}"
                )
            lines.append(f"  saturation ratio {_fmt(r['saturation_ratio'])}   "
                         f"m_noncrit(t_end)/m(O) {_fmt(r['noncrit_fraction_end'])}")
            lines.append(f"  mean Z non-increasing (2 SE) {r['mass_trend_ok']}   "
                         f"min X / |x|_inf {_fmt(r['min_x_relative'])}   max |Y|/|x| {_fmt(r['max_Y_ratio'])}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4g}"


def _summarize(scheme: str, trajs: list[Trajectory], n_paths: int, measure: float) -> dict:
    z_end = np.array([tr.Z[-1] for tr in trajs])
    z0 = float(np.mean([tr.Z[0] for tr in trajs]))
    qs = {"min": 0.0, "q05": 0.05, "q25": 0.25, "median": 0.5, "q75": 0.75, "q95": 0.95, "max": 1.0}
    ext = [extinction_time(tr, EXTINCTION_DELTA) for tr in trajs]
    compacts = []
    for k in range(trajs[0].n_compacts):
        rhos = np.array([fit_window_rate(tr, k) for tr in trajs])
        rhos = rhos[~np.isnan(rhos)]
        viol = sum(bool(np.any(tr.mass_K[:, k] > BOUND_SLACK * tr.bound_rhs[:, k])) for tr in trajs)
        c_k = trajs[0].meta.get("C_K", [math.nan] * (k + 1))[k]
        compacts.append({
            "index": k,
            "median_rho": _finite(np.median(rhos)) if rhos.size else None,
            "rate_floor": _finite(0.5 * c_k),
            "bound_violations": int(viol),
        })
    t_end = trajs[0].t[-1]
    sat = []
    for tr in trajs:
        full, half = integrated_noncritical(tr), integrated_noncritical(tr, 0.5 * t_end)
        sat.append(1.0 if full == half else (full / half if half > 0 else math.inf))
    _, _, trend_ok = ensemble_mass_trend(trajs) if len(trajs) > 1 else (None, None, True)
    x_inf = np.array([tr.meta.get("x_inf", math.nan) for tr in trajs])
    x_l2 = np.array([tr.meta.get("x_l2", math.nan) for tr in trajs])
    return {
        "scheme": scheme,
        "n_paths": n_paths,
        "n_ok": len(trajs),
        "t_end": float(t_end),
        "Z0": z0,
        "Z_end_quantiles": {k: float(np.quantile(z_end, q)) for k, q in qs.items()},
        "extinction_fraction": sum(e is not None for e in ext) / len(trajs),
        "ell_estimate": float(z_end.mean()),
        "ell_relative": _finite(z_end.mean() / z0) if z0 > 0 else None,
        "compacts": compacts,
        "saturation_ratio": _finite(np.median(sat)),
        "noncrit_fraction_end": float(np.median([tr.m_noncrit[-1] for tr in trajs]) / measure),
        "mass_trend_ok": bool(trend_ok),
        "min_x_relative": _finite(min(float(tr.x_min.min()) for tr in trajs) / float(np.max(x_inf))),
        "max_Y_ratio": _finite(max(float(tr.l2Y.max() / l2) for tr, l2 in zip(trajs, x_l2))),
    }


def report(manifest: RunManifest | str | Path) -> Report:
    """Summarize a completed ensemble, one row per scheme."""
    if not isinstance(manifest, RunManifest):
        manifest = load_manifest(manifest)
    if not manifest.entries:
        raise ReportError("manifest lists no paths")
    groups = manifest.trajectories()
    if not groups:
        raise ReportError("every path in the manifest failed")
    measure = manifest.config.grid().measure
    rows = [_summarize(s, trs, len(manifest.entries), measure) for s, trs in sorted(groups.items())]
    return Report(rows)
