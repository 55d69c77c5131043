import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socpme.domain import build_grid, eigenmode
from socpme.noise import make_noise_model
from socpme.observables import (
    ObservableRecord,
    Trajectory,
    build_compact,
    critical_measure,
    decay_bound_rhs,
    ensemble_mass_trend,
    extinction_time,
    fit_decay_rate,
    integrated_noncritical,
    mass,
    observe,
)


def _traj(t, Z=None, mass_K=None, m_noncrit=None):
    t = np.asarray(t, float)
    Z = np.ones_like(t) if Z is None else np.asarray(Z, float)
    mK = Z if mass_K is None else np.asarray(mass_K, float)
    mn = np.zeros_like(t) if m_noncrit is None else np.asarray(m_noncrit, float)
    recs = [ObservableRecord(t=a, Z=b, l2=b, l2Y=b, m_noncrit=c, mass_K=(d,), bound_rhs=(1.0,), beta_sumsq=0.0)
            for a, b, c, d in zip(t, Z, mn, mK)]
    return Trajectory(recs)


def test_mass_constant_and_sine():
    g = build_grid(1, 1.0, 99)
    assert mass(np.ones(99), g) == pytest.approx(99 / 100)
    assert mass(np.zeros(99), g) == 0.0
    g = build_grid(1, 1.0, 999)
    assert mass(eigenmode(g, 1).e_k, g) == pytest.approx(2 * math.sqrt(2) / math.pi, abs=1e-3)


def test_critical_measure_examples():
    g = build_grid(1, 1.0, 999)
    assert critical_measure(np.zeros(999), g, 1e-6) == 0.0
    assert critical_measure(np.ones(999), g, 1e-6) == pytest.approx(999 / 1000)
    # sqrt(2) sin(pi xi) > 1 on (1/4, 3/4); nodes sit on both level points, so allow one cell
    e1 = eigenmode(g, 1).e_k
    m = critical_measure(e1, g, math.sqrt(2) * math.sin(math.pi / 4))
    assert abs(m - 0.5) <= g.h[0] * (1 + 1e-9)
    with pytest.raises(ValueError):
        critical_measure(e1, g, 0.0)


def _compact(C_K=2.0, sup_root=1.0, m_K=0.25):
    from socpme.observables import CompactSpec

    return CompactSpec(K=np.ones(3, bool), Kprime=np.ones(3, bool), C_K=C_K, sup_root_mu=sup_root, m_K=m_K)


def test_decay_bound_examples():
    c = _compact()
    assert decay_bound_rhs(c, 3.0, 0.0, 0.0) == pytest.approx(3.0 * 0.5)
    assert decay_bound_rhs(c, 1.0, 0.0, 1.0) / decay_bound_rhs(c, 1.0, 0.0, 0.0) == pytest.approx(math.exp(-1))
    assert decay_bound_rhs(c, 2.0, 0.7, 0.3) == pytest.approx(2 * decay_bound_rhs(c, 1.0, 0.7, 0.3))
    # squared-beta form: beta_sumsq = 4 enters as sqrt(4) = 2
    assert decay_bound_rhs(c, 1.0, 4.0, 0.0) == pytest.approx(0.5 * math.exp(2.0))
    with pytest.raises(ValueError):
        decay_bound_rhs(c, 1.0, 0.0, -1.0)


def test_build_compact_default_benchmark():
    g = build_grid(1, 1.0, 199)
    c = build_compact(g, make_noise_model(g, [1.0], [1]), 0.25, 0.15)
    (x,) = g.axes()
    assert np.all(c.Kprime[c.K])
    assert not c.K[0] and not c.Kprime[0] and not c.Kprime[-1]
    assert c.C_K == pytest.approx(2 * math.sin(0.15 * math.pi) ** 2, rel=1e-12)
    assert c.sup_root_mu == pytest.approx(math.sqrt(2.0))
    assert c.m_K == pytest.approx(0.5 + g.h[0])  # closed box [0.25, 0.75] holds 101 nodes
    assert c.rate_floor == pytest.approx(0.5 * c.C_K)


def test_build_compact_rejects_bad_insets():
    g = build_grid(1, 1.0, 50)
    m = make_noise_model(g, [1.0], [1])
    with pytest.raises(ValueError):
        build_compact(g, m, 0.2, 0.2)
    with pytest.raises(ValueError):
        build_compact(g, m, 0.6, 0.1)


def test_extinction_examples():
    t = np.linspace(0, 1, 11)
    assert extinction_time(_traj(t, Z=[1.0] + [0.0] * 10), 1e-3) == pytest.approx(0.1)
    assert extinction_time(_traj(t, Z=np.ones(11)), 1e-3) is None
    # dips below and comes back: extinction only once it stays below
    Z = [1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0]
    assert extinction_time(_traj(t, Z=Z), 1e-3) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        extinction_time(Trajectory([]), 1e-3)


def test_fit_decay_rate_exact():
    t = np.linspace(0, 2, 41)
    assert fit_decay_rate(_traj(t, mass_K=np.exp(-3 * t)), 0, (0, 2)) == pytest.approx(3.0, abs=1e-6)
    assert fit_decay_rate(_traj(t, mass_K=np.full(41, 0.4)), 0, (0, 2)) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        fit_decay_rate(_traj(t, mass_K=np.exp(-t)), 0, (0, 0.2))
    with pytest.raises(ValueError):
        fit_decay_rate(_traj(t, mass_K=np.zeros(41)), 0, (0, 2))


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.floats(1e-3, 10), st.floats(0.1, 5))
def test_fit_decay_rate_recovers_any_rate(rate, amp, T):
    t = np.linspace(0, T, 25)
    assert fit_decay_rate(_traj(t, mass_K=amp * np.exp(-rate * t)), 0, (0, T)) == pytest.approx(rate, abs=1e-6)


def test_integrated_noncritical_examples():
    t = np.linspace(0, 2, 21)
    assert integrated_noncritical(_traj(t)) == 0.0
    assert integrated_noncritical(_traj(t, m_noncrit=np.full(21, 0.7))) == pytest.approx(1.4)
    assert integrated_noncritical(_traj(t, m_noncrit=np.full(21, 0.7)), 1.0) == pytest.approx(0.7)


def test_ensemble_trend():
    t = np.linspace(0, 1, 6)
    down = [_traj(t, Z=np.exp(-t) * s) for s in (1.0, 1.1, 0.9)]
    assert ensemble_mass_trend(down)[2]
    up = [_traj(t, Z=np.exp(t) * s) for s in (1.0, 1.1, 0.9)]
    assert not ensemble_mass_trend(up)[2]
    mean, se, _ = ensemble_mass_trend([_traj(t)] * 4)
    assert np.all(se == 0) and np.all(mean == 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_observe_invariants(seed):
    rng = np.random.default_rng(seed)
    g = build_grid(1, 1.0, 60)
    model = make_noise_model(g, [1.0, 0.5], [1, 3])
    comp = build_compact(g, model, 0.25, 0.15)
    X = np.abs(rng.normal(size=g.shape)) * (rng.uniform(size=g.shape) > 0.3)
    rec = observe(g, X, np.zeros(g.shape), rng.normal(size=2), 0.5, [comp], 1.0, 1e-6)
    assert rec.Z >= 0
    assert 0 <= rec.m_noncrit <= g.measure + 1e-15
    assert rec.mass_K[0] <= rec.Z + 1e-15
    assert rec.l2 == pytest.approx(rec.l2Y)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-1e300, 1e300, allow_nan=False)] * 9), min_size=0, max_size=8))
def test_csv_roundtrip_lossless(rows):
    recs = [ObservableRecord(t=r[0], Z=r[1], l2=r[2], l2Y=r[3], m_noncrit=r[4], mass_K=(r[5],), bound_rhs=(r[6],),
                             beta_sumsq=r[7], x_min=r[8], clamped_mass=0.0) for r in rows]
    tr = Trajectory(recs)
    if not recs:
        tr.mass_K = np.zeros((0, 1))
        tr.bound_rhs = np.zeros((0, 1))
    back = Trajectory.parse_csv(tr.to_csv())
    assert back.as_array().tobytes() == tr.as_array().tobytes()
    assert back.columns() == tr.columns()


def test_csv_column_order():
    tr = _traj([0.0, 1.0])
    assert tr.columns() == ["t", "Z", "l2", "l2Y", "m_noncrit", "mass_K0", "bound_rhs0", "beta_sumsq",
                            "x_min", "clamped_mass"]
