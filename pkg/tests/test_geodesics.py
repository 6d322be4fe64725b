import math

import numpy as np
import pytest
from scipy.integrate import quad

from torusmech.geodesics import (
    DegenerateEnergy,
    HomotopyClass,
    LoopFunctional,
    ZeroClass,
    conformal_bounds,
    d_k_scan,
    discrete_jacobi_length,
    flat_minimal_length,
    jacobi_minimal_geodesic,
    loop_gradient,
    potential_range,
)
from torusmech.model import TWO_PI, System, TorusModel, TrigPotential, example3

COUPLED = System(
    TorusModel(np.array([[2.0, 0.5], [0.5, 1.0]])),
    TrigPotential.from_terms(2, [(1.0, (1, 0), "cos"), (0.6, (1, 1), "sin"), (0.4, (0, 2), "cos")]),
)


def exact_example3_length():
    # the loop x2 = pi is a closed geodesic by symmetry; on it E - U = 1.5 - cos x1
    return quad(lambda t: math.sqrt(1.5 - math.cos(t)), 0.0, TWO_PI, epsabs=1e-14, epsrel=1e-13)[0]


def random_loop(fun, rng, amp=0.3):
    q = fun.straight_loop(rng.uniform(0, TWO_PI, fun.n))
    return q + rng.normal(0.0, amp / fun.N**0.5, q.shape)


def test_homotopy_class():
    c = HomotopyClass.parse("2,-4")
    assert c.m == (2, -4) and not c.primitive and str(c) == "2,-4"
    assert (3 * HomotopyClass((1, 0))).m == (3, 0)
    assert HomotopyClass((0, 0)).is_zero


def test_flat_lengths():
    I2 = TorusModel.identity(2)
    assert flat_minimal_length(I2, (1, 0)) == TWO_PI
    assert flat_minimal_length(I2, (1, 1)) == pytest.approx(TWO_PI * math.sqrt(2), rel=1e-15)
    assert flat_minimal_length(TorusModel.diagonal([1, 4]), (0, 1)) == pytest.approx(2 * TWO_PI, rel=1e-15)
    with pytest.raises(ZeroClass):
        flat_minimal_length(I2, (0, 0))
    with pytest.raises(ZeroClass):
        jacobi_minimal_geodesic(example3(2), 2.5, (0, 0))


@pytest.mark.parametrize("m", [(1, 0), (1, 1), (2, -1)])
def test_constant_potential_scaling(m):
    model = TorusModel(np.array([[2.0, 0.5], [0.5, 1.0]]))
    s = System(model, TrigPotential.zero(2))
    E = 4.0
    res = jacobi_minimal_geodesic(s, E, m, N=64, restarts=2)
    assert res.converged
    assert res.length == pytest.approx(math.sqrt(E) * flat_minimal_length(model, m), rel=1e-10)


def test_potential_range():
    assert potential_range(TrigPotential.cosine_sum(2)) == pytest.approx((-2.0, 2.0), abs=1e-12)
    lo, hi = potential_range(COUPLED.potential)
    x = np.linspace(0, TWO_PI, 801)
    X = np.stack(np.meshgrid(x, x, indexing="ij"), -1).reshape(-1, 2)
    vals = COUPLED.potential.evaluate(X)
    assert lo <= vals.min() + 1e-12 and hi >= vals.max() - 1e-12
    assert lo == pytest.approx(vals.min(), abs=1e-4) and hi == pytest.approx(vals.max(), abs=1e-4)


@pytest.mark.parametrize("system,E,m", [(COUPLED, 3.5, (1, 1)), (example3(2, (1, 2)), 2.5, (1, 0)),
                                        (example3(3, (1, 2, 1)), 3.5, (1, 1, 0))])
def test_gradient_against_finite_differences(system, E, m):
    rng = np.random.default_rng(11)
    fun = LoopFunctional(system, E, m, 64)
    h = 1e-6
    for _ in range(3):
        q = random_loop(fun, rng)
        g = loop_gradient(system, E, m, q)
        fd = np.zeros_like(q)
        for idx in np.ndindex(q.shape):
            e = np.zeros_like(q)
            e[idx] = h
            fd[idx] = (discrete_jacobi_length(system, E, m, q + e) - discrete_jacobi_length(system, E, m, q - e)) / (2 * h)
        assert np.max(np.abs(g - fd)) <= 1e-6 * np.max(np.abs(fd))


def test_hessian_against_gradient_differences():
    rng = np.random.default_rng(5)
    fun = LoopFunctional(COUPLED, 3.5, (1, 1), 24)
    q = random_loop(fun, rng)
    H = fun.hessian(q).toarray()
    assert np.allclose(H, H.T)
    h = 1e-6
    fd = np.zeros_like(H)
    for i in range(q.size):
        e = np.zeros(q.size)
        e[i] = h
        e = e.reshape(q.shape)
        fd[:, i] = ((fun.gradient(q + e) - fun.gradient(q - e)) / (2 * h)).ravel()
    assert np.max(np.abs(H - fd)) <= 1e-6 * np.max(np.abs(H))


def test_example3_exact_geodesic():
    L = exact_example3_length()
    for N, tol in ((256, 1e-6), (1024, 1e-8)):
        res = jacobi_minimal_geodesic(example3(2), 2.5, (1, 0), N=N)
        assert res.converged
        assert abs(res.length - L) < tol * L
    res2 = jacobi_minimal_geodesic(example3(2), 2.5, (2, 0), N=512)
    assert res2.length == pytest.approx(2 * L, rel=1e-6)


@pytest.mark.parametrize("m", [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1)])
def test_conformal_bounds_and_class(m):
    s = example3(2)
    lo, hi = conformal_bounds(s, 2.5, m)
    flat = TWO_PI * math.hypot(*m)
    assert lo == pytest.approx(math.sqrt(0.5) * flat) and hi == pytest.approx(math.sqrt(4.5) * flat)
    res = jacobi_minimal_geodesic(s, 2.5, m, N=128)
    assert res.converged
    assert lo <= res.length <= hi
    assert res.lift_class() == m
    assert np.allclose(res.closing_point - res.loop[0], TWO_PI * np.array(m))


def test_refinement_stability():
    s = example3(3, (1, 2, 1))
    a = jacobi_minimal_geodesic(s, 3.5, (1, 1, 0), N=256, restarts=4)
    b = jacobi_minimal_geodesic(s, 3.5, (1, 1, 0), N=512, restarts=4)
    assert a.converged and b.converged
    assert abs(a.length - b.length) < 1e-3 * b.length


def test_flat_limit_is_linear():
    devs = []
    for amp in (0.1, 0.01):
        s = example3(2, 1, amplitude=amp)
        res = jacobi_minimal_geodesic(s, 2.0, (1, 0), N=128, restarts=2)
        devs.append(res.length / (math.sqrt(2.0) * TWO_PI) - 1.0)
    assert abs(devs[1]) < abs(devs[0])
    assert devs[0] / devs[1] == pytest.approx(10.0, rel=0.05)


def test_degenerate_energy():
    with pytest.raises(DegenerateEnergy):
        jacobi_minimal_geodesic(example3(2), 2.0, (1, 0))
    with pytest.raises(DegenerateEnergy):
        jacobi_minimal_geodesic(example3(2), 1.0, (1, 0))


def test_flat_d_k_constant():
    s = System(TorusModel.diagonal([1.0, 3.0]), TrigPotential.zero(2))
    table = d_k_scan(s, 2.0, (1, 1), k_max=3, N_per_k=32, restarts=2)
    d = [r.d_k for r in table.rows]
    assert max(d) - min(d) <= 1e-12 * d[0]
    assert table.subadditivity_violations() == []


def test_d_k_requires_primitive():
    with pytest.raises(ValueError):
        d_k_scan(example3(2), 2.5, (2, 0))
    with pytest.raises(ValueError):
        d_k_scan(example3(2), 2.5, (1, 0), k_max=9)


def test_seeded_restarts_are_reproducible():
    a = jacobi_minimal_geodesic(COUPLED, 3.5, (1, 1), N=64, restarts=3, seed=7)
    b = jacobi_minimal_geodesic(COUPLED, 3.5, (1, 1), N=64, restarts=3, seed=7)
    assert a.restart_lengths == b.restart_lengths and np.array_equal(a.loop, b.loop)
