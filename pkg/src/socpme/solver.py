"""Time stepping for the regularised stochastic porous-media equation.

Two discretisations of the same law are provided.

``step_direct``
    Backward Euler in the drift ``Lap(psi_lambda(X) + lam X)`` with the Ito
    noise ``sum_k mu_k X e_k dbeta_k`` evaluated at the left end point.

``step_transformed``
    Works with ``Y = exp(mu(t)) X`` where ``mu(t) = -sum_k mu_k e_k beta_k(t)``.
    The random PDE for ``Y`` is advanced by backward Euler with the weights
    ``exp(±mu)`` frozen at the left end point and the damping
    ``-tilde_mu Y / 2`` treated implicitly.

Both reduce, per step, to the monotone problem

    c * X - dt * Lap(g(X)) = b,      g = psi_lambda + lam * id,

which is solved by Newton's method in the flux variable ``w = g(X)``:
``g`` is piecewise linear and strictly increasing, so in ``w`` the Jacobian
is ``diag(c / g'(X)) - dt * Lap``, symmetric positive definite, and the
iteration is globalised by a line search on the convex potential whose
gradient is the residual.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .domain import Grid, laplacian_apply, solve_shifted
from .nonlinearity import (
    Regularization,
    g_lambda,
    g_lambda_inverse,
    g_lambda_inverse_antiderivative,
    g_lambda_inverse_prime,
)
from .noise import BrownianPath, NoiseModel, make_noise_model, mu_field, sample_path, tilde_mu
from .observables import CompactSpec, Trajectory, build_compact, observe

logger = logging.getLogger(__name__)

__all__ = [
    "NumericalError",
    "ConvergenceError",
    "PathFailure",
    "PreconditionError",
    "Model",
    "PathState",
    "Problem",
    "implicit_solve",
    "step_direct",
    "step_transformed",
    "shift_to_origin",
    "build_problem",
    "initial_state",
    "run_path",
]

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
POSITIVITY_FLOOR = 1e-12


class NumericalError(RuntimeError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class PathFailure(NumericalError):
    def __init__(self, t: float, cause: Exception):
        super().__init__(f"path failed at t={t:.6g}: {cause}")
        self.t = t
        self.cause = cause


class PreconditionError(ValueError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class Model:
    grid: Grid
    reg: Regularization
    noise: NoiseModel
    linear_solver: str = "direct"

    @cached_property
    def tilde_mu(self) -> np.ndarray:
        return tilde_mu(self.noise)


@dataclass(frozen=True)
class PathState:
    """Solution at one instant; ``field`` is ``X`` (direct) or ``Y`` (transformed)."""

    t: float
    field: np.ndarray
    beta: np.ndarray
    model: Model
    scheme: str = "direct"
    x_scale: float = 0.0
    positivity: bool = True
    x_min: float = math.inf
    clamped_mass: float = 0.0

    def mu(self) -> np.ndarray:
        return mu_field(self.model.noise, self.beta)

    @property
    def X(self) -> np.ndarray:
        if self.scheme == "transformed":
            return np.exp(-self.mu()) * self.field
        return self.field


# ------------------------------------------------------------ Newton kernel


def _potential(grid, reg, dt, b, c, w):
    return float(
        np.sum(c * g_lambda_inverse_antiderivative(w, reg))
        - 0.5 * dt * np.vdot(w, laplacian_apply(grid, w))
        - np.vdot(b, w)
    )


def implicit_solve(
    model: Model,
    dt: float,
    b: np.ndarray,
    c=1.0,
    w0: np.ndarray | None = None,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> tuple[np.ndarray, int]:
    """Solve ``c X - dt Lap(g(X)) = b`` for ``X``; returns ``(X, newton_iterations)``.

    Converged when the residual 2-norm is at most ``tol * |b|_2``.
    """
    grid, reg = model.grid, model.reg
    c = np.broadcast_to(np.asarray(c, dtype=float), grid.shape)
    scale = float(np.linalg.norm(b))
    if scale == 0.0:
        return np.zeros(grid.shape), 0
    w = g_lambda(b / c, reg) if w0 is None else np.array(w0, dtype=float)
    target = tol * scale
    phi = None
    for it in range(max_iter + 1):
        X = g_lambda_inverse(w, reg)
        F = c * X - dt * laplacian_apply(grid, w) - b
        res = float(np.linalg.norm(F))
        if not math.isfinite(res):
            raise NumericalError("non-finite residual in Newton iteration")
        if res <= target:
            return X, it
        if it == max_iter:
            break
        D = c * g_lambda_inverse_prime(w, reg)
        delta = solve_shifted(grid, dt, D, -F, method=model.linear_solver)
        # Armijo backtracking on the convex potential; full steps almost always pass
        if phi is None:
            phi = _potential(grid, reg, dt, b, c, w)
        slope = float(np.vdot(F, delta))
        step = 1.0
        while True:
            w_try = w + step * delta
            phi_try = _potential(grid, reg, dt, b, c, w_try)
            if phi_try <= phi + 1e-4 * step * slope or abs(phi_try - phi) <= 1e-13 * (abs(phi) + 1e-300):
                break
            step *= 0.5
            if step < 1e-10:
                break
        w, phi = w_try, phi_try
    raise ConvergenceError(
        f"Newton did not converge in {max_iter} iterations (residual {res:.3e}, target {target:.3e})",
        residual=res,
        iterations=max_iter,
    )


# ------------------------------------------------------------ steppers


def _finish(state: PathState, new_field: np.ndarray, X_new: np.ndarray, dt: float, beta_new) -> PathState:
    if not np.all(np.isfinite(new_field)):
        raise NumericalError("non-finite values in solution")
    x_min = min(state.x_min, float(X_new.min()))
    clamped = state.clamped_mass
    if state.positivity:
        neg = new_field < 0.0
        if neg.any():
            lost = float(-X_new[neg].sum()) * state.model.grid.cell_volume
            clamped += lost
            if X_new.min() < -POSITIVITY_FLOOR * state.x_scale:
                logger.warning("undershoot %.3e below positivity floor at t=%.6g", X_new.min(), state.t + dt)
            new_field = np.where(neg, 0.0, new_field)
    return replace(state, t=state.t + dt, field=new_field, beta=np.asarray(beta_new, dtype=float),
                   x_min=x_min, clamped_mass=clamped)


def step_direct(state: PathState, dt: float, increments) -> PathState:
    """One drift-implicit Euler-Maruyama step of the regularised equation."""
    model = state.model
    inc = np.asarray(increments, dtype=float).reshape(-1)
    if inc.shape[0] != model.noise.N:
        raise ValueError(f"expected {model.noise.N} increments, got {inc.shape[0]}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    X = state.field
    b = X * (1.0 - mu_field(model.noise, inc)) if model.noise.N else X
    X_new, _ = implicit_solve(model, dt, b, 1.0, w0=g_lambda(X, model.reg))
    return _finish(state, X_new, X_new, dt, state.beta + inc)


def step_transformed(state: PathState, dt: float, beta_next, *, diffusion: bool = True) -> PathState:
    """One step of the transformed random PDE; ``diffusion=False`` keeps only the damping."""
    model = state.model
    beta_next = np.asarray(beta_next, dtype=float).reshape(-1)
    if beta_next.shape[0] != model.noise.N:
        raise ValueError(f"expected {model.noise.N} Brownian values, got {beta_next.shape[0]}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    Y = state.field
    c = 1.0 + 0.5 * dt * model.tilde_mu
    if diffusion:
        E = np.exp(mu_field(model.noise, state.beta))
        b = Y / E
        Xt, _ = implicit_solve(model, dt, b, c, w0=g_lambda(b, model.reg))
        Y_new = E * Xt
    else:
        Y_new = Y / c
    X_new = np.exp(-mu_field(model.noise, beta_next)) * Y_new
    return _finish(state, Y_new, X_new, dt, beta_next)


# ------------------------------------------------------------ set-up


def shift_to_origin(x_raw: np.ndarray, Xc: np.ndarray, grid: Grid | None = None) -> np.ndarray:
    """Return ``x_raw - Xc``; the critical state becomes zero."""
    x_raw = np.asarray(x_raw, dtype=float)
    Xc = np.asarray(Xc, dtype=float)
    if x_raw.shape != Xc.shape:
        raise ValueError(f"shape mismatch {x_raw.shape} vs {Xc.shape}")
    x = x_raw - Xc
    bad = np.argwhere(x < 0.0)
    if bad.size:
        idx = tuple(int(v) for v in bad[0])
        where = f" (x = {grid.point(idx)})" if grid is not None else ""
        raise PreconditionError(
            f"initial datum below critical state at grid point {idx}{where}: "
            f"x0 - Xc = {x[idx]:.6g} ({bad.shape[0]} point(s) in violation)",
            index=idx,
        )
    return x


@dataclass(frozen=True)
class Problem:
    model: Model
    x: np.ndarray
    compacts: tuple[CompactSpec, ...]
    delta_abs: float

    @property
    def x_l2(self) -> float:
        g = self.model.grid
        return math.sqrt(g.cell_volume * float(np.vdot(self.x, self.x)))


def build_problem(config) -> Problem:
    from .config import build_profile

    grid = config.grid()
    noise = make_noise_model(grid, config.noise_mu, config.noise_modes, config.noise_shape)
    model = Model(grid=grid, reg=Regularization(config.lam), noise=noise, linear_solver=config.linear_solver)
    x = shift_to_origin(build_profile(grid, config.x0), build_profile(grid, config.xc), grid)
    compacts = tuple(build_compact(grid, noise, a, b) for a, b in zip(config.inset, config.inset_prime))
    scale = float(np.abs(x).max()) if x.size else 0.0
    delta_abs = config.delta_crit * scale if scale > 0 else config.delta_crit
    return Problem(model=model, x=x, compacts=compacts, delta_abs=delta_abs)


def initial_state(problem: Problem, scheme: str) -> PathState:
    return PathState(
        t=0.0,
        field=problem.x.copy(),
        beta=np.zeros(problem.model.noise.N),
        model=problem.model,
        scheme=scheme,
        x_scale=float(np.abs(problem.x).max()),
        x_min=float(problem.x.min()),
    )


def run_path(config, seed: int, *, scheme: str | None = None, path: BrownianPath | None = None,
             problem: Problem | None = None, inject_nan: bool = False) -> Trajectory:
    """Integrate one path from 0 to ``config.t_end`` and record observables.

    ``path`` supplies the Brownian increments (otherwise sampled from
    ``seed``); it must have ``config.n_steps`` steps of size ``config.dt``.
    ``inject_nan`` poisons the initial datum; it exists to exercise failure
    isolation in ensembles.
    """
    scheme = scheme or config.scheme
    if scheme not in ("direct", "transformed"):
        raise ValueError(f"run_path needs scheme 'direct' or 'transformed', got {scheme!r}")
    problem = problem or build_problem(config)
    model = problem.model
    grid, N = model.grid, model.noise.N
    dt, n_steps, stride = config.dt, config.n_steps, config.record_stride
    if path is None:
        if N and n_steps:
            path = sample_path(seed, N, dt, n_steps)
        else:
            path = BrownianPath.from_increments(dt, np.zeros((n_steps, N)))
    if path.n_steps != n_steps or path.N != N or not math.isclose(path.dt, dt, rel_tol=1e-12):
        raise ValueError("Brownian path does not match the configuration")

    state = initial_state(problem, scheme)
    if inject_nan:
        poisoned = state.field.copy()
        poisoned.flat[poisoned.size // 2] = np.nan
        state = replace(state, field=poisoned)
    x_l2 = problem.x_l2

    def record(st: PathState, x_min: float):
        mu_now = mu_field(model.noise, st.beta)
        X = st.field if scheme == "direct" else np.exp(-mu_now) * st.field
        return observe(grid, X, mu_now, st.beta, st.t, problem.compacts, x_l2, problem.delta_abs,
                       x_min=x_min, clamped_mass=st.clamped_mass)

    records = [record(state, state.x_min)]
    state = replace(state, x_min=math.inf)
    for j in range(n_steps):
        try:
            if scheme == "direct":
                state = step_direct(state, dt, path.increments[j])
            else:
                state = step_transformed(state, dt, path.values[j + 1])
        except (NumericalError, ValueError, ArithmeticError) as exc:
            raise PathFailure((j + 1) * dt, exc) from exc
        state = replace(state, t=(j + 1) * dt)
        if (j + 1) % stride == 0 or j + 1 == n_steps:
            records.append(record(state, state.x_min))
            state = replace(state, x_min=math.inf)
    meta = {
        "scheme": scheme,
        "seed": int(seed),
        "x_l2": x_l2,
        "x_inf": float(np.abs(problem.x).max()),
        "C_K": [c.C_K for c in problem.compacts],
    }
    return Trajectory(records, meta)
