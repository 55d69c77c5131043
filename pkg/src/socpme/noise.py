"""Finite-mode multiplicative Gaussian noise ``sum_k mu_k e_k X dbeta_k``.

Seed derivation
---------------
A path is driven by a single integer seed.  Mode ``k`` (zero-based) draws its
increments from ``PCG64(SeedSequence([seed, k]))``, so each mode has its own
stream and adding modes never perturbs the existing ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import Grid, eigenmode, norm_l2

__all__ = [
    "NoiseModel",
    "BrownianPath",
    "NondegeneracyReport",
    "make_noise_model",
    "sample_path",
    "mode_rng",
    "mu_field",
    "tilde_mu",
    "tilde_mu_inf",
    "check_nondegeneracy",
]


@dataclass(frozen=True)
class NoiseModel:
    """Coefficients ``mu_k`` and spatial shapes ``e_k`` (stacked along axis 0)."""

    mu: np.ndarray
    shapes: np.ndarray
    eigenvalues: np.ndarray
    indices: tuple[tuple[int, ...], ...] = ()
    kind: str = "eigen"

    @property
    def N(self) -> int:
        return int(self.mu.shape[0])

    @property
    def admissibility_sum(self) -> float:
        """Partial sum ``sum mu_k^2 lambda_k^2`` (nan for non-eigen shapes)."""
        if self.N == 0:
            return 0.0
        return float(np.sum(self.mu**2 * self.eigenvalues**2))


def _cosine_shape(grid: Grid, k):
    out = np.ones(grid.shape)
    for axis, (ki, x, L) in enumerate(zip(k, grid.axes(), grid.extent)):
        c = np.cos(ki * math.pi * x / L)
        shape = [1] * grid.dim
        shape[axis] = -1
        out = out * c.reshape(shape)
    return out / norm_l2(grid, out)


def make_noise_model(grid: Grid, mu: Sequence[float], indices, kind: str = "eigen") -> NoiseModel:
    """Build a noise model on ``grid``.

    ``kind="eigen"`` uses the Dirichlet eigenmodes with multi-indices >= 1.
    ``kind="global"`` uses smooth cosine-product shapes (index 0 is the
    constant), which do not vanish on the boundary, so that ``tilde_mu`` can be
    bounded away from zero on the whole domain.
    """
    mu = np.asarray(mu, dtype=float).reshape(-1)
    idx = [tuple(int(v) for v in np.atleast_1d(k)) for k in indices]
    if len(idx) != mu.shape[0]:
        raise ValueError(f"{mu.shape[0]} coefficients but {len(idx)} mode indices")
    if kind == "eigen":
        modes = [eigenmode(grid, k) for k in idx]
        shapes = [m.e_k for m in modes]
        eig = [m.lambda_k for m in modes]
    elif kind == "global":
        for k in idx:
            if len(k) != grid.dim or any(v < 0 for v in k):
                raise ValueError(f"invalid global-mode index {k}")
        shapes = [_cosine_shape(grid, k) for k in idx]
        eig = [math.nan] * len(idx)
    else:
        raise ValueError(f"unknown noise shape kind {kind!r}")
    stacked = np.array(shapes).reshape((len(idx),) + grid.shape)
    return NoiseModel(mu=mu, shapes=stacked, eigenvalues=np.asarray(eig, dtype=float), indices=tuple(idx), kind=kind)


@dataclass(frozen=True)
class BrownianPath:
    dt: float
    increments: np.ndarray  # (n_steps, N)
    values: np.ndarray = field(repr=False)  # (n_steps + 1, N)

    @property
    def n_steps(self) -> int:
        return int(self.increments.shape[0])

    @property
    def N(self) -> int:
        return int(self.increments.shape[1])

    @classmethod
    def from_increments(cls, dt: float, increments: np.ndarray) -> "BrownianPath":
        inc = np.asarray(increments, dtype=float)
        values = np.zeros((inc.shape[0] + 1, inc.shape[1]))
        # cumsum is a sequential running sum: values[j+1] == values[j] + inc[j] bitwise
        np.cumsum(inc, axis=0, out=values[1:])
        return cls(dt=float(dt), increments=inc, values=values)

    def coarsen(self, factor: int) -> "BrownianPath":
        """Same Brownian path observed on a ``factor`` times coarser time grid."""
        if factor < 1 or self.n_steps % factor:
            raise ValueError(f"cannot coarsen {self.n_steps} steps by {factor}")
        inc = self.increments.reshape(self.n_steps // factor, factor, self.N).sum(axis=1)
        return BrownianPath.from_increments(self.dt * factor, inc)


def mode_rng(seed: int, mode: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(mode)])))


def sample_path(seed: int, N: int, dt: float, n_steps: int) -> BrownianPath:
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    sd = math.sqrt(dt)
    inc = np.empty((n_steps, N))
    for k in range(N):
        inc[:, k] = mode_rng(seed, k).normal(0.0, sd, size=n_steps)
    return BrownianPath.from_increments(dt, inc)


def mu_field(model: NoiseModel, beta_values) -> np.ndarray:
    """``-sum_k mu_k e_k beta_k`` at one instant."""
    beta = np.asarray(beta_values, dtype=float).reshape(-1)
    if beta.shape[0] != model.N:
        raise ValueError(f"expected {model.N} Brownian values, got {beta.shape[0]}")
    if model.N == 0:
        return np.zeros(model.shapes.shape[1:])
    return -np.tensordot(model.mu * beta, model.shapes, axes=1)


def tilde_mu(model: NoiseModel) -> np.ndarray:
    """Stationary field ``sum_k mu_k^2 e_k^2``."""
    if model.N == 0:
        return np.zeros(model.shapes.shape[1:])
    return np.tensordot(model.mu**2, model.shapes**2, axes=1)


def tilde_mu_inf(model: NoiseModel, region: np.ndarray) -> float:
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ValueError("region is empty")
    return float(tilde_mu(model)[region].min())


@dataclass(frozen=True)
class NondegeneracyReport:
    inf: float
    ok: bool


def check_nondegeneracy(model: NoiseModel, region: np.ndarray) -> NondegeneracyReport:
    """Infimum of ``tilde_mu`` over a boolean grid mask and whether it is positive."""
    inf = tilde_mu_inf(model, region)
    return NondegeneracyReport(inf=inf, ok=inf > 0.0)
