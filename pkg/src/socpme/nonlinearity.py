"""The sign graph, its Yosida approximation and a C^3 surrogate of ``|r|``.

``psi_lambda`` is the resolvent-based Yosida approximation of ``sign`` and is
the only nonlinearity the time steppers evaluate.  ``phi_lambda`` is a smooth
convex approximation of ``|r|`` whose derivative agrees with ``psi_lambda`` on
``|r| <= lam`` and equals ``±(1 + lam)`` for ``|r| >= 2 lam``.

Construction of ``phi_lambda`` on the transition band: the second derivative
starts at ``1/lam`` (its value on the linear part) and is ramped down to zero
by a cubic smoothstep over a band of width ``2 lam**2``, which is exactly the
width that raises ``phi'`` from 1 to ``1 + lam``.  Hence

* ``phi''`` is C^1, so ``phi`` is C^3;
* ``0 <= phi'' <= C_pp / lam`` with ``C_pp = 1``;
* ``|phi' - psi_lambda| <= C_dev * lam`` with ``C_dev = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Regularization",
    "psi_lambda",
    "psi_lambda_prime",
    "phi_lambda",
    "phi_lambda_prime",
    "phi_lambda_second",
    "sign_selection",
    "g_lambda",
    "g_lambda_inverse",
    "g_lambda_inverse_prime",
    "g_lambda_inverse_antiderivative",
]


@dataclass(frozen=True)
class Regularization:
    lam: float
    # explicit constants of the phi_lambda construction
    C_pp: float = 1.0
    C_dev: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.lam < 1.0):
            raise ValueError(f"lambda out of (0,1): {self.lam!r}")

    @property
    def band(self) -> float:
        """Width of the smoothstep band of ``phi''``."""
        return 2.0 * self.lam**2


def _lam(reg) -> float:
    return reg.lam if isinstance(reg, Regularization) else float(reg)


def sign_selection(r):
    """Minimal section of the sign graph: ``sign(r)`` for ``r != 0`` and 0 at 0.

    The analytic ``sign 0`` is the whole interval ``[-1, 1]``; only the
    single-valued choice is returned here.
    """
    return np.sign(r)


def psi_lambda(r, reg):
    """Yosida approximation of ``sign``: ``r/lam`` on ``|r| <= lam``, ``sign(r)`` beyond."""
    lam = _lam(reg)
    return np.clip(np.asarray(r, dtype=float) / lam, -1.0, 1.0)


def psi_lambda_prime(r, reg):
    """A.e. derivative of :func:`psi_lambda` (``1/lam`` inside the band, 0 outside)."""
    lam = _lam(reg)
    return np.where(np.abs(r) <= lam, 1.0 / lam, 0.0)


def g_lambda(r, reg):
    """Full regularised flux nonlinearity ``psi_lambda(r) + lam * r``."""
    lam = _lam(reg)
    return psi_lambda(r, lam) + lam * np.asarray(r, dtype=float)


def g_lambda_inverse(w, reg):
    """Inverse of :func:`g_lambda` (piecewise linear, strictly increasing)."""
    lam = _lam(reg)
    w = np.asarray(w, dtype=float)
    edge = 1.0 + lam * lam
    aw = np.abs(w)
    inside = aw * (lam / edge)
    outside = (aw - 1.0) / lam
    return np.sign(w) * np.where(aw <= edge, inside, outside)


def g_lambda_inverse_prime(w, reg):
    lam = _lam(reg)
    edge = 1.0 + lam * lam
    return np.where(np.abs(w) <= edge, lam / edge, 1.0 / lam)


def g_lambda_inverse_antiderivative(w, reg):
    """``int_0^w g_lambda_inverse``; convex, used as a Newton merit function."""
    lam = _lam(reg)
    w = np.asarray(w, dtype=float)
    edge = 1.0 + lam * lam
    aw = np.abs(w)
    inside = 0.5 * (lam / edge) * aw * aw
    outside = 0.5 * lam * edge + ((aw - 1.0) ** 2 - lam**4) / (2.0 * lam)
    return np.where(aw <= edge, inside, outside)


def _band_coordinate(a, lam):
    return np.clip((a - lam) / (2.0 * lam * lam), 0.0, 1.0)


def phi_lambda_second(r, reg):
    lam = _lam(reg)
    a = np.abs(np.asarray(r, dtype=float))
    u = _band_coordinate(a, lam)
    ramp = 1.0 - 3.0 * u**2 + 2.0 * u**3
    return np.where(a <= lam, 1.0 / lam, ramp / lam)


def phi_lambda_prime(r, reg):
    lam = _lam(reg)
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    u = _band_coordinate(a, lam)
    band = 1.0 + 2.0 * lam * (u - u**3 + 0.5 * u**4)
    return np.sign(r) * np.where(a <= lam, a / lam, band)


def phi_lambda(r, reg):
    lam = _lam(reg)
    a = np.abs(np.asarray(r, dtype=float))
    delta = 2.0 * lam * lam
    u = _band_coordinate(a, lam)
    in_band = 0.5 * lam + (np.minimum(a, lam + delta) - lam) + 2.0 * lam * delta * (
        0.5 * u**2 - 0.25 * u**4 + 0.1 * u**5
    )
    beyond = np.maximum(a - lam - delta, 0.0) * (1.0 + lam)
    return np.where(a <= lam, 0.5 * a * a / lam, in_band + beyond)
