"""Acceptance criteria, one test each.

Run with ``pytest tests/test_acceptance.py``; the terminal summary prints a
PASS/FAIL line per criterion.  Each test also enforces its runtime limit.
"""

import itertools
import math
import sys
import time
import warnings
from fractions import Fraction

import numpy as np
import pytest

from torusmech.cli import main as cli_main
from torusmech.dynamics import (
    check_confinement,
    energy_drift,
    factor_period,
    integral_drift,
    integrate,
    winding_period,
)
from torusmech.geodesics import (
    LoopFunctional,
    conformal_bounds,
    d_k_scan,
    discrete_jacobi_length,
    flat_minimal_length,
    jacobi_minimal_geodesic,
    loop_gradient,
)
from torusmech.homology import (
    DegenerateLevelWarning,
    betti,
    component_count,
    glue,
    glue_complex,
    rasterize_sublevel,
)
from torusmech.model import TWO_PI, PhasePoint, System, TorusModel, TrigPotential, example3
from torusmech.observables import (
    Observable,
    hamiltonian_observable,
    involution_report,
    poisson_bracket,
    separable_integrals,
)
from torusmech.strata import FactorPortrait, verify_nondegeneracy

pytestmark = pytest.mark.acceptance

# every complex built below, re-checked by the Euler identity criterion
COMPLEXES = []


def raster(U, E, r):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateLevelWarning)
        cx = rasterize_sublevel(U, E, r)
    COMPLEXES.append(cx)
    return cx


class Timer:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.limit, f"took {self.elapsed:.2f} s, limit {self.limit} s"


def morse_euler(n, k, E):
    """Euler characteristic of {sum cos(k_i x_i) <= E} from the product critical points.

    Each factor cos(k x) has k minima (value -1, index 0) and k maxima
    (value +1, index 1); a product point with j maxima has value 2j - n and
    index j.
    """
    ks = [k] * n if np.isscalar(k) else list(k)
    chi = 0
    for pattern in itertools.product((0, 1), repeat=n):
        j = sum(pattern)
        if 2 * j - n < E:
            chi += (-1) ** j * math.prod(ks)
    return chi


def random_observable(rng, n=2, max_terms=3):
    terms = []
    for _ in range(rng.integers(1, max_terms + 1)):
        alpha = tuple(int(v) for v in rng.integers(0, 3, n))
        wave = tuple(int(v) for v in rng.integers(-2, 3, n))
        kind = ("cos", "sin")[rng.integers(2)]
        terms.append(((alpha, wave, kind), Fraction(int(rng.integers(-9, 10)), int(rng.integers(1, 8)))))
    return Observable(n, terms)


# --- integrability -------------------------------------------------------------


def test_integrability_certification():
    """Integrability: exact involution and sum F_i = H for n in {2,3,4}, k_i in {1,2,3}, under 1 s"""
    with Timer(1.0):
        count = 0
        for n in (2, 3, 4):
            for ks in itertools.product((1, 2, 3), repeat=n):
                s = example3(n, list(ks))
                F = separable_integrals(s)
                H = hamiltonian_observable(s)
                rep = involution_report(F, H)
                assert rep.passed, rep.failures()
                assert all(b.is_zero for b in rep.brackets.values())
                total = F[0]
                for f in F[1:]:
                    total = total + f
                assert total == H
                count += 1
    assert count == 9 + 27 + 81


def test_bracket_axioms():
    """Bracket axioms: antisymmetry, Leibniz, Jacobi exact on 120 random rational observables, under 10 s"""
    rng = np.random.default_rng(2024)
    obs = [random_observable(rng) for _ in range(120)]
    assert sum(not o.is_zero for o in obs) >= 100
    with Timer(10.0):
        for i in range(len(obs)):
            f, g, h = obs[i], obs[(i + 1) % len(obs)], obs[(i + 7) % len(obs)]
            assert (poisson_bracket(f, g) + poisson_bracket(g, f)).is_zero
            assert poisson_bracket(f, g * h) == g * poisson_bracket(f, h) + poisson_bracket(f, g) * h
            jac = (poisson_bracket(f, poisson_bracket(g, h)) + poisson_bracket(g, poisson_bracket(h, f))
                   + poisson_bracket(h, poisson_bracket(f, g)))
            assert jac.is_zero


# --- homology ----------------------------------------------------------------


@pytest.mark.parametrize("E,expected", [(-1.0, (1, 0, 0)), (0.5, (1, 2, 0)), (2.5, (1, 2, 1))],
                         ids=["E=-1", "E=0.5", "E=2.5"])
def test_betti_table(E, expected):
    """Betti table n=2, k=1, GF(2) at r=64 and r=128, under 5 s per level"""
    U = TrigPotential.cosine_sum(2)
    with Timer(5.0):
        for r in (64, 128):
            assert betti(raster(U, E, r), 2).betti == expected


def test_beta1_growth():
    """First Betti number growth: n=2 k=1..4 gives 2,5,10,17; n=3 k=1,2 (r=32) gives 3,17; under 2 min"""
    with Timer(120.0):
        got2 = []
        for k in (1, 2, 3, 4):
            cx = raster(TrigPotential.cosine_sum(2, k), 0.5, 64)
            b = betti(cx, 2).betti
            assert b[0] == component_count(cx) == 1 and b[2] == 0
            # with beta_0 = 1 and beta_2 = 0, beta_1 = 1 - chi
            assert b[1] == 1 - morse_euler(2, k, 0.5)
            got2.append(b[1])
        got3 = []
        for k in (1, 2):
            cx = raster(TrigPotential.cosine_sum(3, k), 0.0, 32)
            b = betti(cx, 2).betti
            assert b[0] == component_count(cx) == 1 and b[2] == b[3] == 0
            assert b[1] == 1 - morse_euler(3, k, 0.0)
            got3.append(b[1])
    assert got2 == [2, 5, 10, 17]
    assert got3 == [3, 17]


@pytest.mark.parametrize("n,r", [(2, 64), (3, 48)], ids=["n=2", "n=3"])
def test_bottom_window_components(n, r):
    """Bottom window: beta_0 = k^n (union-find confirmed), beta_1 = 0, for n in {2,3}, k in {1,2,3}"""
    E = -n + 0.5  # between the minimum -n and the first saddle value -n + 2
    for k in (1, 2, 3):
        cx = raster(TrigPotential.cosine_sum(n, k), E, r)
        b = betti(cx, 2).betti
        assert b[0] == k**n == component_count(cx)
        assert b[1] == 0


@pytest.mark.parametrize("m", [(2, 2), (3, 1)], ids=["m=2,2", "m=3,1"])
def test_gluing_cross_oracle(m):
    """Gluing: Betti numbers of rasterize(glue(U, m)) equal those of glue_complex(rasterize(U), m)"""
    U, E, r = TrigPotential.cosine_sum(2), 0.5, 32
    base = raster(U, E, r)
    tiled = glue_complex(base, m)
    direct = raster(glue(U, m), E, tuple(r * c for c in m))
    COMPLEXES.append(tiled)
    for p in (2, 3):
        assert betti(tiled, p).betti == betti(direct, p).betti


def test_euler_identity():
    """Euler identity: alternating cell count equals alternating Betti sum over GF(2) and GF(3) on every complex"""
    if not COMPLEXES:
        for E in (-1.0, 0.5, 2.5):
            raster(TrigPotential.cosine_sum(2), E, 64)
    # plus a generic non-symmetric potential on a range of levels
    U = TrigPotential.from_terms(2, [(1.0, (1, 0), "cos"), (0.6, (1, 1), "sin"), (0.4, (0, 2), "cos")])
    for E in np.linspace(-1.8, 1.8, 7):
        raster(U, float(E), 48)
    for cx in COMPLEXES:
        chi = sum((-1) ** d * c for d, c in enumerate(cx.cell_counts))
        for p in (2, 3):
            assert betti(cx, p).euler_characteristic == chi


# --- strata ------------------------------------------------------------------


@pytest.mark.parametrize("system", [example3(2), example3(2, (2, 3)), example3(3), example3(3, (2, 1, 1))],
                         ids=["n2", "n2-k23", "n3", "n3-k211"])
def test_nondegeneracy(system):
    """Non-degeneracy: rank dF equals stratum dimension on every signature; census constant over 5 samples"""
    rep = verify_nondegeneracy(system, samples_per_cell=5)
    assert rep.passed, rep.failures()
    assert rep.observed_dimensions == set(range(system.n + 1))


# --- dynamics ----------------------------------------------------------------


def test_conservation():
    """Conservation: 10^6 steps at dt=1e-3, H and F_i drift < 1e-7, confinement, drift ratio 4 +- 20%, under 30 s"""
    s = example3(2)
    p0 = PhasePoint([math.pi / 2, math.pi], [0.1, 0.0])
    with Timer(30.0):
        fine = integrate(s, p0, 1e-3, 10**6, stride=1)
        coarse = integrate(s, p0, 2e-3, 5 * 10**5, stride=1)
    dH, dF = energy_drift(fine), integral_drift(fine)
    assert dH < 1e-7 and dF < 1e-7
    assert check_confinement(fine, s, fine.H[0], tol=1e-6).passed
    ratio = max(energy_drift(coarse), integral_drift(coarse)) / max(dH, dF)
    assert 3.2 <= ratio <= 4.8


@pytest.mark.parametrize("k,a,G", [(1, 1.0, 1.0), (2, 1.0, 1.0), (3, 0.5, 2.0)],
                         ids=["k=1", "k=2", "k=3,a=0.5,G=2"])
def test_harmonic_limit(k, a, G):
    """Periods: T(min + 1e-3) within 1e-2 of 2 pi / (k sqrt(a / G))"""
    f = FactorPortrait.single(k, amplitude=a, mass=G)
    assert abs(factor_period(f, -a + 1e-3) - TWO_PI / (k * math.sqrt(a / G))) < 1e-2


def test_winding_against_quadrature():
    """Periods: simulated winding period equals quadrature to 1e-6 relative on 5 rotation orbits"""
    orbits = [(1, 1.0, 1.0, 1.5), (1, 1.0, 1.0, 2.5), (1, 1.0, 1.0, 10.0), (2, 1.0, 1.0, 2.0), (3, 0.5, 2.0, 1.2)]
    for k, a, G, c in orbits:
        s = System(TorusModel.diagonal([G, 1.0]), TrigPotential.from_terms(2, [(a, (k, 0), "cos"), (1.0, (0, 1), "cos")]))
        y0 = math.sqrt(2 * G * (c - a))  # start at the top of the factor potential
        T = factor_period(FactorPortrait.single(k, amplitude=a, mass=G), c)
        traj = integrate(s, PhasePoint([0.0, math.pi], [y0, 0.0]), 1e-3, int(40 * T / 1e-3), stride=1)
        assert winding_period(traj, axis=0) == pytest.approx(T, rel=1e-6)


# --- geodesics ---------------------------------------------------------------


def test_geodesics():
    """Geodesics: flat lengths, constant-potential scaling, FD gradient, conformal bounds, subadditivity, flat d_k, under 2 min"""
    with Timer(120.0):
        # flat minimal lengths
        G = np.array([[2.0, 0.5], [0.5, 1.0]])
        for m in [(1, 0), (0, 1), (1, 1), (2, -3)]:
            v = np.array(m, float)
            assert flat_minimal_length(TorusModel(G), m) == pytest.approx(TWO_PI * math.sqrt(v @ G @ v), rel=1e-15)
            free = System(TorusModel(G), TrigPotential.zero(2))
            res = jacobi_minimal_geodesic(free, 1.0, m, N=64)
            assert res.length == pytest.approx(TWO_PI * math.sqrt(v @ G @ v), rel=1e-12)

        # constant potential c: lengths scale by sqrt(E - c)
        const = System(TorusModel(G), TrigPotential.from_terms(2, [(0.7, (0, 0), "cos")]))
        for m in [(1, 0), (1, 1)]:
            res = jacobi_minimal_geodesic(const, 2.0, m, N=64)
            assert abs(res.length / (math.sqrt(2.0 - 0.7) * flat_minimal_length(const.model, m)) - 1) < 1e-10

        # analytic gradient vs central differences on random loops, N = 64
        rng = np.random.default_rng(3)
        h = 1e-6
        for system, E, m in [(example3(2), 2.5, (1, 1)),
                             (System(TorusModel(G), TrigPotential.from_terms(
                                 2, [(1.0, (1, 0), "cos"), (0.6, (1, 1), "sin")])), 3.0, (1, 0))]:
            fun = LoopFunctional(system, E, m, 64)
            q = fun.straight_loop(rng.uniform(0, TWO_PI, 2)) + rng.normal(0, 0.04, (64, 2))
            g = loop_gradient(system, E, m, q)
            fd = np.zeros_like(q)
            for idx in np.ndindex(q.shape):
                e = np.zeros_like(q)
                e[idx] = h
                fd[idx] = (discrete_jacobi_length(system, E, m, q + e)
                           - discrete_jacobi_length(system, E, m, q - e)) / (2 * h)
            assert np.max(np.abs(g - fd)) <= 1e-6 * np.max(np.abs(fd))

        # cosine sum at E = 2.5: conformal bounds and subadditivity of L_{k alpha}
        s = example3(2)
        for alpha in [(1, 0), (0, 1), (1, 1), (1, -1)]:
            table = d_k_scan(s, 2.5, alpha, k_max=4, N_per_k=128, restarts=8)
            assert all(r.converged for r in table.rows)
            for r in table.rows:
                lo, hi = conformal_bounds(s, 2.5, tuple(r.k * a for a in alpha))
                assert lo <= r.length <= hi
            assert table.subadditivity_violations(tol=1e-6) == []

        # flat d_k constancy
        free = System(TorusModel.diagonal([1.0, 3.0]), TrigPotential.zero(2))
        table = d_k_scan(free, 2.0, (1, 1), k_max=4, N_per_k=32, restarts=8)
        d = [r.d_k for r in table.rows]
        assert max(d) - min(d) <= 4 * np.finfo(float).eps * d[0]


# --- determinism -------------------------------------------------------------


def test_determinism(tmp_path):
    """Determinism: verify-example3 twice with the same seed gives byte-identical reports (timing excluded)"""
    def snapshot(root):
        (d,) = root.glob("verify-example3-*")
        out = {}
        for p in sorted(d.iterdir()):
            if p.name == "timing.json":
                continue
            lines = p.read_text().splitlines()
            if p.suffix == ".csv" and lines[0].endswith(",wall_ms"):
                lines = [line.rsplit(",", 1)[0] for line in lines]
            out[p.name] = lines
        return out

    argv = ["verify-example3", "--seed", "7", "--plots"]
    assert cli_main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert cli_main(argv + ["--out", str(tmp_path / "b")]) == 0
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    assert set(a) >= {"report.json", "table.csv", "config.json", "scan-k1.csv", "betti-k1.svg"}
    assert a == b


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
