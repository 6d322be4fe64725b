import math

import numpy as np
import pytest
from scipy.special import ellipk

from torusmech.dynamics import (
    BelowMinimum,
    SeparatrixEnergy,
    check_confinement,
    collinearity_check,
    energy_drift,
    factor_period,
    frequency_vector,
    harmonic_period,
    integral_drift,
    integrate,
    winding_period,
)
from torusmech.model import TWO_PI, PhasePoint, System, TorusModel, TrigPotential, example3
from torusmech.strata import FactorPortrait


def elliptic_period(k, a, G, c):
    """Pendulum period from the complete elliptic integral (independent closed form)."""
    a = abs(a)
    m = 0.5 * (1 + c / a)
    w0 = k * math.sqrt(a / G)
    if m < 1:
        return 4 * ellipk(m) / w0
    return k * 2 * ellipk(1 / m) / (math.sqrt(m) * w0)


FREE = System(TorusModel(np.array([[2.0, 0.5], [0.5, 1.0]])), TrigPotential.zero(2))


def test_free_motion_exact():
    p0 = PhasePoint([0.3, 5.0], [1.0, -0.7])
    traj = integrate(FREE, p0, 0.01, 1000, stride=100)
    v = FREE.model.inverse @ p0.y
    expect = p0.x[None, :] + traj.times[:, None] * v[None, :]
    assert np.max(np.abs(traj.lift - expect)) < 1e-11
    assert integral_drift(traj, "H") == 0.0
    rep = check_confinement(traj, FREE, traj.H[0])
    assert rep.passed and rep.max_excursion == -traj.H[0]


def test_equilibrium_stays():
    s = System(TorusModel.identity(1), TrigPotential.cosine_sum(1))
    traj = integrate(s, PhasePoint([math.pi], [0.0]), 1e-2, 10000, stride=1000)
    assert np.max(np.abs(traj.lift - math.pi)) < 1e-12
    assert np.max(np.abs(traj.y)) < 1e-12


@pytest.mark.parametrize("method", ["verlet-bab2", "stormer-verlet-kdk"])
def test_time_reversible(method):
    s = example3(2, (1, 2))
    p0 = PhasePoint([0.4, 2.0], [1.3, -0.2])
    fwd = integrate(s, p0, 1e-3, 20000, stride=20000, method=method)
    back = integrate(s, PhasePoint(fwd.lift[-1], fwd.y[-1]), -1e-3, 20000, stride=20000, method=method)
    dx = np.remainder(back.lift[-1] - p0.x + math.pi, TWO_PI) - math.pi
    assert np.max(np.abs(dx)) < 1e-10
    assert np.max(np.abs(back.y[-1] - p0.y)) < 1e-10


def test_oscillation_turning_point():
    s = example3(2)
    c = 0.3
    x1 = math.acos(c)  # turning points of cos x at level c on the well around pi
    p0 = PhasePoint([math.pi, math.pi], [math.sqrt(2 * (c + 1)), 0.0])
    traj = integrate(s, p0, 1e-3, 20000, stride=1)
    x = traj.lift[:, 0]
    assert x.min() >= x1 - 1e-6 and x.max() <= TWO_PI - x1 + 1e-6
    assert check_confinement(traj, s, traj.H[0]).passed


@pytest.mark.parametrize("method", ["verlet-bab2", "stormer-verlet-kdk"])
def test_second_order(method):
    s = example3(2)
    p0 = PhasePoint([math.pi / 2, math.pi], [0.1, 0.0])
    drifts = []
    for dt in (4e-3, 2e-3, 1e-3):
        traj = integrate(s, p0, dt, int(20.0 / dt), method=method)
        drifts.append(max(energy_drift(traj), integral_drift(traj)))
    r1, r2 = drifts[0] / drifts[1], drifts[1] / drifts[2]
    assert 3.2 < r1 < 4.8 and 3.2 < r2 < 4.8


@pytest.mark.parametrize("k,a,G", [(1, 1.0, 1.0), (3, 0.5, 2.0), (2, -1.5, 1.0)])
def test_period_against_elliptic_integrals(k, a, G):
    f = FactorPortrait(0, G, ((a, k, "cos"),))
    A = abs(a)
    for rel in (-0.999999, -0.999, -0.5, 0.0, 0.6, 0.999, 1.001, 2.0, 10.0):
        c = rel * A
        ref = elliptic_period(k, a, G, c)
        assert factor_period(f, c) == pytest.approx(ref, rel=1e-9)
        if -0.999 <= rel <= 0.999:
            assert factor_period(f, c, method="generic") == pytest.approx(ref, rel=1e-9)


def test_sine_factor_matches_cosine():
    fc = FactorPortrait(0, 1.0, ((0.8, 2, "cos"),))
    fs = FactorPortrait(0, 1.0, ((0.8, 2, "sin"),))
    for c in (-0.5, 0.2, 1.5):
        assert factor_period(fs, c) == pytest.approx(factor_period(fc, c), rel=1e-10)


def test_harmonic_limits():
    f1 = FactorPortrait.single(1)
    f2 = FactorPortrait.single(2)
    assert abs(factor_period(f1, -0.999) - TWO_PI) < 1e-2
    assert abs(factor_period(f2, -0.999) - math.pi) < 1e-2
    assert harmonic_period(FactorPortrait.single(3, 2.0, 0.5)) == pytest.approx(TWO_PI / (3 * 2.0))


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_period_errors_and_monotonicity():
    f = FactorPortrait.single(1)
    with pytest.raises(SeparatrixEnergy):
        factor_period(f, 1.0)
    with pytest.raises(BelowMinimum):
        factor_period(f, -1.5)
    rot = [factor_period(f, c) for c in np.linspace(1.05, 20, 20)]
    assert all(a > b for a, b in zip(rot, rot[1:]))
    osc = [factor_period(f, c) for c in np.linspace(-0.95, 0.999, 20)]
    assert all(a < b for a, b in zip(osc, osc[1:]))
    assert factor_period(f, 1 - 1e-9) > 4 * TWO_PI and factor_period(f, 1 + 1e-9) > 2 * TWO_PI


def test_large_energy_rotation():
    f = FactorPortrait.single(1)
    c = 10.0
    T = factor_period(f, c)
    assert T == pytest.approx(TWO_PI / math.sqrt(2 * c), rel=5e-3)


def test_winding_matches_quadrature():
    s = example3(2)
    c = 2.5
    y0 = math.sqrt(2 * (c - 1.0))
    traj = integrate(s, PhasePoint([0.0, math.pi], [y0, 0.0]), 1e-3, 60000, stride=1)
    T = factor_period(FactorPortrait.single(1), c)
    assert winding_period(traj, axis=0) == pytest.approx(T, rel=1e-6)


def test_frequency_vector_and_collinearity():
    fv = frequency_vector(example3(2), [2.0, 0.0], signs=[-1, 1])
    assert fv.rotation == (True, False)
    assert fv.omega[0] < 0 < fv.omega[1]
    free = System(TorusModel.identity(2), TrigPotential.zero(2))
    same = collinearity_check(example3(2), ([2.0, 3.0], None), ([2.0, 3.0], None), (1, 1), (1, 1))
    assert same.deviation == 0.0 and same.passed
    ok = collinearity_check(free, ([0.5, 0.5], None), ([2.0, 2.0], None), (1, 1), (1, 1))
    assert ok.collinear and ok.precondition_met
    bad = collinearity_check(free, ([0.5, 0.5], None), ([0.5, 2.0], None), (1, 1), (1, 2))
    assert not bad.collinear and not bad.precondition_met and bad.passed
