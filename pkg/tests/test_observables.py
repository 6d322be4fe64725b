import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torusmech.model import PhasePoint, System, TorusModel, TrigPotential, example3
from torusmech.observables import (
    NonDiagonalMetric,
    NonSeparable,
    Observable,
    hamiltonian_observable,
    involution_report,
    momentum_map_eval,
    poisson_bracket,
    rank_dF,
    rank_dF_exact,
    separable_integrals,
)

N = 2


@st.composite
def observables(draw, n=N, max_terms=3):
    k = draw(st.integers(0, max_terms))
    terms = []
    for _ in range(k):
        alpha = tuple(draw(st.integers(0, 2)) for _ in range(n))
        wave = tuple(draw(st.integers(-2, 2)) for _ in range(n))
        kind = draw(st.sampled_from(["cos", "sin"]))
        c = Fraction(draw(st.integers(-9, 9)), draw(st.integers(1, 7)))
        terms.append(((alpha, wave, kind), c))
    return Observable(n, terms)


def _numeric_bracket(f, g, x, y, h=1e-5):
    out = 0.0
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        dyf = (f(x, y + e) - f(x, y - e)) / (2 * h)
        dxg = (g(x + e, y) - g(x - e, y)) / (2 * h)
        dyg = (g(x, y + e) - g(x, y - e)) / (2 * h)
        dxf = (f(x + e, y) - f(x - e, y)) / (2 * h)
        out += dyf * dxg - dyg * dxf
    return out


def test_bracket_examples():
    y1 = Observable.momentum(1, 0)
    c1 = Observable.trig((1,), "cos")
    assert poisson_bracket(y1, c1) == Observable.trig((1,), "sin", -1)
    H = hamiltonian_observable(example3(2))
    assert poisson_bracket(H, H).is_zero
    F = separable_integrals(example3(2))
    assert poisson_bracket(F[0], F[1]).is_zero


@settings(max_examples=120, deadline=None)
@given(observables(), observables(), observables())
def test_bracket_axioms_exact(f, g, h):
    assert (poisson_bracket(f, g) + poisson_bracket(g, f)).is_zero
    assert poisson_bracket(f, g * h) == g * poisson_bracket(f, h) + poisson_bracket(f, g) * h
    jac = (poisson_bracket(f, poisson_bracket(g, h)) + poisson_bracket(g, poisson_bracket(h, f))
           + poisson_bracket(h, poisson_bracket(f, g)))
    assert jac.is_zero


@settings(max_examples=60, deadline=None)
@given(observables(), observables(), st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_algebra_matches_pointwise_numerics(f, g, pt):
    x, y = np.array(pt[:2]), np.array(pt[2:])
    assert (f * g)(x, y) == pytest.approx(f(x, y) * g(x, y), abs=1e-9)
    assert (f + g)(x, y) == pytest.approx(f(x, y) + g(x, y), abs=1e-12)
    assert poisson_bracket(f, g)(x, y) == pytest.approx(_numeric_bracket(f, g, x, y), abs=1e-5)


@settings(max_examples=40, deadline=None)
@given(observables())
def test_canonical_idempotent(f):
    assert f.canonical() == f
    assert f.canonical().terms == f.canonical().canonical().terms


@settings(max_examples=40, deadline=None)
@given(observables())
def test_json_roundtrip(f):
    assert Observable.from_json(N, f.to_json()) == f


def test_separable_integrals_examples():
    F = separable_integrals(example3(2))
    half = Fraction(1, 2)
    assert F[0] == Observable.momentum(2, 0, 2) * half + Observable.trig((1, 0))
    assert F[1] == Observable.momentum(2, 1, 2) * half + Observable.trig((0, 1))
    one = System(TorusModel.diagonal([2.0]), TrigPotential.from_terms(1, [(1.0, (3,), "cos")]))
    (F1,) = separable_integrals(one)
    assert F1 == Observable.momentum(1, 0, 2) * Fraction(1, 4) + Observable.trig((3,))
    with pytest.raises(NonSeparable):
        separable_integrals(System(TorusModel.identity(2), TrigPotential.from_terms(2, [(1.0, (1, 1), "cos")])))
    with pytest.raises(NonDiagonalMetric):
        separable_integrals(System(TorusModel(np.array([[1.0, 0.2], [0.2, 1.0]])), TrigPotential.zero(2)))


def test_sum_of_integrals_is_hamiltonian_with_constant():
    s = System(TorusModel.diagonal([1.0, 3.0]),
               TrigPotential.from_terms(2, [(0.5, (0, 0), "cos"), (1.0, (2, 0), "sin"), (2.0, (0, 1), "cos")]))
    F = separable_integrals(s)
    assert F[0] + F[1] == hamiltonian_observable(s)


def test_momentum_map_values():
    F = separable_integrals(example3(2))
    assert momentum_map_eval(F, PhasePoint([math.pi, math.pi], [0, 0])).c.tolist() == [-1.0, -1.0]
    assert momentum_map_eval(F, PhasePoint([0, 0], [0, 0])).c.tolist() == [1.0, 1.0]
    c = momentum_map_eval(F, PhasePoint([math.pi / 2, math.pi / 2], [2, 0])).c
    assert c[0] == pytest.approx(2.0, abs=1e-15) and abs(c[1]) < 1e-15


def test_rank_examples():
    F = separable_integrals(example3(2))
    assert rank_dF(F, PhasePoint([1.0, 2.0], [0.3, -0.4])) == 2
    assert rank_dF(F, PhasePoint([0, math.pi], [0, 0])) == 0
    assert rank_dF(F, PhasePoint([0, math.pi / 2], [0, 1])) == 1
    assert rank_dF_exact(F, (0, 2), (0, 0)) == 0
    assert rank_dF_exact(F, (0, 1), (0, 1)) == 1
    assert rank_dF_exact(F, (1, 1), (1, 1)) == 2


def test_involution_report_failure():
    F = [Observable.momentum(1, 0), Observable.trig((1,), "cos")]
    rep = involution_report(F)
    assert not rep.passed
    assert rep.brackets[(0, 1)] == Observable.trig((1,), "sin", -1)
    assert involution_report(F[:1]).passed


@pytest.mark.parametrize("n", [2, 3, 4])
def test_integrals_commute_with_hamiltonian(n):
    s = example3(n, list(range(1, n + 1)))
    rep = involution_report(separable_integrals(s), hamiltonian_observable(s))
    assert rep.passed and all(b.is_zero for b in rep.hamiltonian_brackets.values())
