"""Path observables: masses, critical-region measure, local decay bound, fits.

A :class:`Trajectory` is a column store of :class:`ObservableRecord` rows and
is what gets written to CSV.  The column order is fixed::

    t, Z, l2, l2Y, m_noncrit, mass_K0..., bound_rhs0..., beta_sumsq, x_min, clamped_mass
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import Grid
from .noise import NoiseModel, tilde_mu

__all__ = [
    "CompactSpec",
    "ObservableRecord",
    "Trajectory",
    "build_compact",
    "mass",
    "critical_measure",
    "decay_bound_rhs",
    "observe",
    "extinction_time",
    "fit_decay_rate",
    "integrated_noncritical",
    "ensemble_mass_trend",
]


@dataclass(frozen=True)
class CompactSpec:
    """Inner set ``K`` and neighbourhood ``Kprime`` as boolean grid masks."""

    K: np.ndarray
    Kprime: np.ndarray
    C_K: float
    sup_root_mu: float
    m_K: float

    @property
    def rate_floor(self) -> float:
        """The guaranteed asymptotic decay rate ``C_K / 2``."""
        return 0.5 * self.C_K


def _inset_mask(grid: Grid, inset: float) -> np.ndarray:
    if inset == 0.0:
        return np.ones(grid.shape, dtype=bool)
    mask = np.ones(grid.shape, dtype=bool)
    for axis, (x, L, n) in enumerate(zip(grid.axes(), grid.extent, grid.n)):
        keep = (x >= inset * L - 1e-12 * L) & (x <= (1.0 - inset) * L + 1e-12 * L)
        keep[0] = keep[-1] = False  # never touch boundary-adjacent nodes
        shape = [1] * grid.dim
        shape[axis] = n
        mask &= keep.reshape(shape)
    return mask


def build_compact(grid: Grid, model: NoiseModel, inset: float, inset_prime: float) -> CompactSpec:
    """Index boxes inset from the boundary by the given fractions of each side.

    ``inset = inset_prime = 0`` selects the whole domain (global-decay mode).
    """
    if not (0.0 <= inset_prime <= inset < 0.5):
        raise ValueError(f"need 0 <= inset_prime <= inset < 0.5, got {inset_prime}, {inset}")
    if inset > 0.0 and not inset_prime < inset:
        raise ValueError("K must lie in the interior of K': need inset_prime < inset")
    K = _inset_mask(grid, inset)
    Kp = _inset_mask(grid, inset_prime)
    if not K.any():
        raise ValueError(f"inset {inset} leaves no grid points in K")
    tm = tilde_mu(model)
    return CompactSpec(
        K=K,
        Kprime=Kp,
        C_K=float(tm[Kp].min()),
        sup_root_mu=float(np.sqrt(tm[K].max())),
        m_K=float(K.sum() * grid.cell_volume),
    )


def mass(field: np.ndarray, grid: Grid, region: np.ndarray | None = None) -> float:
    if region is None:
        return float(grid.cell_volume * np.sum(field))
    return float(grid.cell_volume * np.sum(field[region]))


def critical_measure(field: np.ndarray, grid: Grid, delta_crit: float) -> float:
    """Measure of the non-critical set ``{|X| > delta_crit}``."""
    if not delta_crit > 0.0:
        raise ValueError("delta_crit must be positive")
    return float(grid.cell_volume * np.count_nonzero(np.abs(field) > delta_crit))


def decay_bound_rhs(compact: CompactSpec, x_l2: float, beta_sumsq: float, t: float) -> float:
    """Right-hand side of the local exponential decay bound at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return (
        x_l2
        * math.sqrt(compact.m_K)
        * math.exp(compact.sup_root_mu * math.sqrt(beta_sumsq) - 0.5 * compact.C_K * t)
    )


@dataclass(frozen=True)
class ObservableRecord:
    t: float
    Z: float
    l2: float
    l2Y: float
    m_noncrit: float
    mass_K: tuple[float, ...]
    bound_rhs: tuple[float, ...]
    beta_sumsq: float
    x_min: float = 0.0
    clamped_mass: float = 0.0


def observe(
    grid: Grid,
    X: np.ndarray,
    mu_now: np.ndarray,
    beta: np.ndarray,
    t: float,
    compacts: Sequence[CompactSpec],
    x_l2: float,
    delta_abs: float,
    x_min: float = 0.0,
    clamped_mass: float = 0.0,
) -> ObservableRecord:
    vol = grid.cell_volume
    bs = float(np.sum(np.asarray(beta) ** 2))
    Y = np.exp(mu_now) * X
    return ObservableRecord(
        t=float(t),
        Z=mass(X, grid),
        l2=math.sqrt(vol * float(np.vdot(X, X))),
        l2Y=math.sqrt(vol * float(np.vdot(Y, Y))),
        m_noncrit=critical_measure(X, grid, delta_abs),
        mass_K=tuple(mass(X, grid, c.K) for c in compacts),
        bound_rhs=tuple(decay_bound_rhs(c, x_l2, bs, t) for c in compacts),
        beta_sumsq=bs,
        x_min=float(x_min),
        clamped_mass=float(clamped_mass),
    )


class Trajectory:
    """Time series of observable records for one path."""

    def __init__(self, records: Sequence[ObservableRecord] = (), meta: dict | None = None):
        self.meta = dict(meta or {})
        recs = list(records)
        nK = len(recs[0].mass_K) if recs else 0
        self.t = np.array([r.t for r in recs], dtype=float)
        self.Z = np.array([r.Z for r in recs], dtype=float)
        self.l2 = np.array([r.l2 for r in recs], dtype=float)
        self.l2Y = np.array([r.l2Y for r in recs], dtype=float)
        self.m_noncrit = np.array([r.m_noncrit for r in recs], dtype=float)
        self.mass_K = np.array([r.mass_K for r in recs], dtype=float).reshape(len(recs), nK)
        self.bound_rhs = np.array([r.bound_rhs for r in recs], dtype=float).reshape(len(recs), nK)
        self.beta_sumsq = np.array([r.beta_sumsq for r in recs], dtype=float)
        self.x_min = np.array([r.x_min for r in recs], dtype=float)
        self.clamped_mass = np.array([r.clamped_mass for r in recs], dtype=float)

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def n_compacts(self) -> int:
        return int(self.mass_K.shape[1])

    def columns(self) -> list[str]:
        k = range(self.n_compacts)
        return (
            ["t", "Z", "l2", "l2Y", "m_noncrit"]
            + [f"mass_K{i}" for i in k]
            + [f"bound_rhs{i}" for i in k]
            + ["beta_sumsq", "x_min", "clamped_mass"]
        )

    def as_array(self) -> np.ndarray:
        return np.column_stack(
            [self.t, self.Z, self.l2, self.l2Y, self.m_noncrit, self.mass_K, self.bound_rhs,
             self.beta_sumsq, self.x_min, self.clamped_mass]
        ) if len(self) else np.zeros((0, len(self.columns())))

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns()) + "\n")
        for row in self.as_array():
            buf.write(",".join(format(v, ".17g") for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "Trajectory":
        return cls.parse_csv(Path(path).read_text())

    @classmethod
    def parse_csv(cls, text: str) -> "Trajectory":
        lines = text.strip().splitlines()
        header = lines[0].split(",")
        nK = sum(1 for c in header if c.startswith("mass_K"))
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
        data = data.reshape(-1, len(header))
        recs = [
            ObservableRecord(
                t=row[0], Z=row[1], l2=row[2], l2Y=row[3], m_noncrit=row[4],
                mass_K=tuple(row[5:5 + nK]), bound_rhs=tuple(row[5 + nK:5 + 2 * nK]),
                beta_sumsq=row[5 + 2 * nK], x_min=row[6 + 2 * nK], clamped_mass=row[7 + 2 * nK],
            )
            for row in data
        ]
        traj = cls(recs)
        if not recs:
            traj.mass_K = np.zeros((0, nK))
            traj.bound_rhs = np.zeros((0, nK))
        return traj


def extinction_time(trajectory: Trajectory, delta: float) -> float | None:
    """First recorded time after which ``Z < delta * Z(0)`` holds for every later record."""
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    if not delta > 0:
        raise ValueError("delta must be positive")
    below = trajectory.Z < delta * trajectory.Z[0]
    if not below[-1]:
        return None
    # last index that is not below, then the record after it
    above = np.flatnonzero(~below)
    first = 0 if above.size == 0 else int(above[-1]) + 1
    return float(trajectory.t[first])


def fit_decay_rate(trajectory: Trajectory, compact: int, t_window: tuple[float, float]) -> float:
    """Least-squares slope of ``-log mass_K`` against ``t`` over ``t_window``."""
    t0, t1 = t_window
    sel = (trajectory.t >= t0) & (trajectory.t <= t1)
    m = trajectory.mass_K[sel, compact]
    t = trajectory.t[sel]
    if m.size < 10:
        raise ValueError(f"need at least 10 records in window, got {m.size}")
    if np.any(~(m > 0.0)):
        raise ValueError("mass_K must be positive throughout the fit window")
    slope = np.polyfit(t, -np.log(m), 1)[0]
    return float(slope)


def integrated_noncritical(trajectory: Trajectory, t_upto: float | None = None) -> float:
    """Trapezoidal integral of ``m_noncrit`` over ``[0, t_upto]`` (default: all records)."""
    t, m = trajectory.t, trajectory.m_noncrit
    if t_upto is not None:
        sel = t <= t_upto + 1e-12 * max(1.0, abs(t_upto))
        t, m = t[sel], m[sel]
    if t.size < 2:
        return 0.0
    return float(np.sum(0.5 * (m[1:] + m[:-1]) * np.diff(t)))


def ensemble_mass_trend(trajectories: Sequence[Trajectory], n_se: float = 2.0):
    """Ensemble mean of ``Z`` and whether it is non-increasing within ``n_se`` standard errors.

    Consecutive records are compared through the paired differences
    ``Z(t_{j+1}) - Z(t_j)``, which is the discrete counterpart of the
    nondecreasing compensator in the mass decomposition.  Returns
    ``(mean, se, ok)``.
    """
    Zs = np.array([tr.Z for tr in trajectories])
    mean = Zs.mean(axis=0)
    se = Zs.std(axis=0, ddof=1) / math.sqrt(Zs.shape[0]) if Zs.shape[0] > 1 else np.zeros_like(mean)
    d = np.diff(Zs, axis=1)
    if Zs.shape[0] > 1:
        d_se = d.std(axis=0, ddof=1) / math.sqrt(Zs.shape[0])
    else:
        d_se = np.zeros(d.shape[1])
    ok = bool(np.all(d.mean(axis=0) <= n_se * d_se + 1e-14 * max(1.0, float(mean[0]))))
    return mean, se, ok
