"""Exact phase-space observables, Poisson brackets and momentum maps.

An :class:`Observable` is a finite sum of terms ``c * y^alpha * trig(k.x)``
with rational ``c``.  Products are normalized with the product-to-sum
identities, so the algebra stays closed and "symbolically zero" is simply
an empty term list.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import mpmath
import numpy as np

from .model import (
    DimensionError,
    PhasePoint,
    System,
    TorusModel,
    TrigPotential,
    canonical_wave,
    reduce_angles,
)


class NonSeparable(ValueError):
    """A potential term couples two coordinates."""


class NonDiagonalMetric(ValueError):
    """Separable integrals need a diagonal metric."""


def _frac(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, float):
        if not math.isfinite(c):
            raise ValueError(f"coefficient must be finite, got {c}")
        return Fraction(c)
    return Fraction(c)


def _canonical(n, items) -> tuple:
    """Merge ``((alpha, wave, kind), coeff)`` items into canonical sorted form."""
    acc: dict[tuple, Fraction] = {}
    for (alpha, wave, kind), c in items:
        if len(alpha) != n or len(wave) != n:
            raise DimensionError(f"term ({alpha}, {wave}) does not have dimension {n}")
        if any(a < 0 for a in alpha):
            raise ValueError(f"negative momentum power {alpha}")
        wave, sign = canonical_wave(wave)
        if kind == "sin":
            if not any(wave):
                continue
            c = c * sign
        elif kind != "cos":
            raise ValueError(f"unknown term kind {kind!r}")
        key = (tuple(alpha), wave, kind)
        acc[key] = acc.get(key, 0) + c
    return tuple((k, v) for k, v in sorted(acc.items()) if v != 0)


def _trig_product(w1, k1, w2, k2):
    """Product-to-sum: ``k1(w1.x) * k2(w2.x)`` as a list of ``(half-coeff sign, wave, kind)``."""
    plus = tuple(a + b for a, b in zip(w1, w2))
    minus = tuple(a - b for a, b in zip(w1, w2))
    if k1 == "cos" and k2 == "cos":
        return [(1, minus, "cos"), (1, plus, "cos")]
    if k1 == "sin" and k2 == "sin":
        return [(1, minus, "cos"), (-1, plus, "cos")]
    if k1 == "sin" and k2 == "cos":
        return [(1, plus, "sin"), (1, minus, "sin")]
    # cos a sin b
    return [(1, plus, "sin"), (-1, minus, "sin")]


class Observable:
    """Exact polynomial-in-momenta, trigonometric-in-angles phase-space function.

    Instances are immutable and always canonical: terms sorted by
    ``(alpha, wave, kind)``, one term per key, no zero coefficients.
    """

    __slots__ = ("n", "terms", "_hash")

    def __init__(self, n: int, terms: Iterable = ()):
        self.n = int(n)
        self.terms = _canonical(self.n, ((key, _frac(c)) for key, c in terms))
        self._hash = None

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, n: int) -> "Observable":
        return cls(n)

    @classmethod
    def constant(cls, n: int, c) -> "Observable":
        return cls(n, [(((0,) * n, (0,) * n, "cos"), c)])

    @classmethod
    def momentum(cls, n: int, i: int, power: int = 1) -> "Observable":
        alpha = [0] * n
        alpha[i] = power
        return cls(n, [((tuple(alpha), (0,) * n, "cos"), 1)])

    @classmethod
    def trig(cls, wave: Sequence[int], kind: str = "cos", coeff=1) -> "Observable":
        n = len(wave)
        return cls(n, [(((0,) * n, tuple(wave), kind), coeff)])

    @classmethod
    def from_potential(cls, U: TrigPotential) -> "Observable":
        zero = (0,) * U.n
        return cls(U.n, [((zero, t.wave, t.kind), Fraction(t.amplitude)) for t in U.terms])

    # -- algebra -------------------------------------------------------------

    def _check(self, other: "Observable"):
        if not isinstance(other, Observable):
            raise TypeError(f"expected Observable, got {type(other).__name__}")
        if other.n != self.n:
            raise DimensionError(f"observable dimensions differ: {self.n} vs {other.n}")

    def __add__(self, other):
        if not isinstance(other, Observable):
            other = Observable.constant(self.n, other)
        self._check(other)
        return Observable(self.n, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return Observable(self.n, ((k, -c) for k, c in self.terms))

    def __sub__(self, other):
        if not isinstance(other, Observable):
            other = Observable.constant(self.n, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Observable):
            s = _frac(other)
            return Observable(self.n, ((k, c * s) for k, c in self.terms))
        self._check(other)
        out = []
        half = Fraction(1, 2)
        for (a1, w1, k1), c1 in self.terms:
            for (a2, w2, k2), c2 in other.terms:
                alpha = tuple(p + q for p, q in zip(a1, a2))
                if not any(w1):
                    out.append(((alpha, w2, k2), c1 * c2))
                elif not any(w2):
                    out.append(((alpha, w1, k1), c1 * c2))
                else:
                    for sign, w, k in _trig_product(w1, k1, w2, k2):
                        out.append(((alpha, w, k), sign * half * c1 * c2))
        return Observable(self.n, out)

    __rmul__ = __mul__

    def dx(self, i: int) -> "Observable":
        """Partial derivative with respect to the angle ``x_i``."""
        out = []
        for (alpha, wave, kind), c in self.terms:
            ki = wave[i]
            if ki == 0:
                continue
            if kind == "cos":
                out.append(((alpha, wave, "sin"), -ki * c))
            else:
                out.append(((alpha, wave, "cos"), ki * c))
        return Observable(self.n, out)

    def dy(self, i: int) -> "Observable":
        """Partial derivative with respect to the momentum ``y_i``."""
        out = []
        for (alpha, wave, kind), c in self.terms:
            p = alpha[i]
            if p == 0:
                continue
            lowered = alpha[:i] + (p - 1,) + alpha[i + 1 :]
            out.append(((lowered, wave, kind), p * c))
        return Observable(self.n, out)

    def canonical(self) -> "Observable":
        return Observable(self.n, self.terms)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, other):
        return isinstance(other, Observable) and self.n == other.n and self.terms == other.terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.n, self.terms))
        return self._hash

    def __len__(self):
        return len(self.terms)

    def __repr__(self):
        if not self.terms:
            return f"Observable(n={self.n}, 0)"
        parts = []
        for (alpha, wave, kind), c in self.terms:
            mono = "".join(f"*y{i + 1}^{p}" if p > 1 else f"*y{i + 1}" for i, p in enumerate(alpha) if p)
            trig = "" if not any(wave) else f"*{kind}({list(wave)}.x)"
            parts.append(f"{c}{mono}{trig}")
        return f"Observable(n={self.n}, " + " + ".join(parts) + ")"

    # -- evaluation ----------------------------------------------------------

    def __call__(self, x, y) -> float:
        x = reduce_angles(np.asarray(x, dtype=float).reshape(-1))
        y = np.asarray(y, dtype=float).reshape(-1)
        if x.shape[0] != self.n or y.shape[0] != self.n:
            raise DimensionError(f"point dimension does not match observable dimension {self.n}")
        vals = []
        for (alpha, wave, kind), c in self.terms:
            v = float(c)
            for yi, p in zip(y, alpha):
                if p:
                    v *= yi**p
            if any(wave):
                phase = float(x @ np.asarray(wave, dtype=float))
                v *= math.cos(phase) if kind == "cos" else math.sin(phase)
            vals.append(v)
        return math.fsum(vals)

    def evaluate_exact(self, x, y, dps: int = 50) -> float:
        """Evaluate in extended precision and round once to a float."""
        x = reduce_angles(np.asarray(x, dtype=float).reshape(-1))
        y = np.asarray(y, dtype=float).reshape(-1)
        if x.shape[0] != self.n or y.shape[0] != self.n:
            raise DimensionError(f"point dimension does not match observable dimension {self.n}")
        with mpmath.workdps(dps):
            xs = [mpmath.mpf(float(v)) for v in x]
            ys = [mpmath.mpf(float(v)) for v in y]
            total = mpmath.mpf(0)
            for (alpha, wave, kind), c in self.terms:
                v = mpmath.mpf(c.numerator) / c.denominator
                for yi, p in zip(ys, alpha):
                    if p:
                        v *= yi**p
                if any(wave):
                    phase = mpmath.fsum(w * xi for w, xi in zip(wave, xs))
                    v *= mpmath.cos(phase) if kind == "cos" else mpmath.sin(phase)
                total += v
            return float(total)

    def evaluate_many(self, x, y) -> np.ndarray:
        """Vectorized float evaluation over arrays of shape ``(..., n)``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast_shapes(x.shape, y.shape)[:-1])
        for (alpha, wave, kind), c in self.terms:
            v = np.full(out.shape, float(c))
            for i, p in enumerate(alpha):
                if p:
                    v = v * y[..., i] ** p
            if any(wave):
                phase = x @ np.asarray(wave, dtype=float)
                v = v * (np.cos(phase) if kind == "cos" else np.sin(phase))
            out = out + v
        return out

    def evaluate_quarter_turns(self, q: Sequence[int], y: Sequence) -> Fraction:
        """Exact value at ``x = q * pi/2`` (integer ``q``) and rational ``y``."""
        ys = [_frac(v) for v in y]
        total = Fraction(0)
        for (alpha, wave, kind), c in self.terms:
            v = c
            for yi, p in zip(ys, alpha):
                if p:
                    v *= yi**p
            s = sum(w * qi for w, qi in zip(wave, q)) % 4
            trig = (1, 0, -1, 0)[s] if kind == "cos" else (0, 1, 0, -1)[s]
            total += v * trig
        return total

    # -- serialization -------------------------------------------------------

    def to_json(self) -> list[dict]:
        return [
            {"coeff": str(c), "ypow": list(alpha), "wave": list(wave), "kind": kind}
            for (alpha, wave, kind), c in self.terms
        ]

    @classmethod
    def from_json(cls, n: int, data: list[dict]) -> "Observable":
        terms = []
        for i, t in enumerate(data):
            unknown = set(t) - {"coeff", "amplitude", "ypow", "wave", "kind"}
            if unknown:
                raise ValueError(f"unknown keys in observable term {i}: {sorted(unknown)}")
            c = t.get("coeff", t.get("amplitude"))
            c = Fraction(c) if isinstance(c, str) else _frac(c)
            alpha = tuple(t.get("ypow", (0,) * n))
            terms.append(((alpha, tuple(t["wave"]), t["kind"]), c))
        return cls(n, terms)


def poisson_bracket(f: Observable, g: Observable) -> Observable:
    """``{f, g} = sum_i df/dy_i dg/dx_i - dg/dy_i df/dx_i`` (exact)."""
    f._check(g)
    result = Observable.zero(f.n)
    for i in range(f.n):
        result = result + f.dy(i) * g.dx(i) - g.dy(i) * f.dx(i)
    return result


def _exact_inverse(G: np.ndarray) -> list[list[Fraction]]:
    n = G.shape[0]
    A = [[Fraction(float(G[i, j])) for j in range(n)] + [Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if A[r][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        p = A[col][col]
        A[col] = [v / p for v in A[col]]
        for r in range(n):
            if r != col and A[r][col] != 0:
                f = A[r][col]
                A[r] = [a - f * b for a, b in zip(A[r], A[col])]
    return [row[n:] for row in A]


def kinetic_observable(model: TorusModel) -> Observable:
    """``1/2 y^T G^{-1} y`` with the inverse computed exactly over the rationals."""
    n = model.n
    inv = _exact_inverse(model.metric)
    terms = []
    for i in range(n):
        for j in range(n):
            if inv[i][j] == 0:
                continue
            alpha = [0] * n
            alpha[i] += 1
            alpha[j] += 1
            terms.append(((tuple(alpha), (0,) * n, "cos"), inv[i][j] / 2))
    return Observable(n, terms)


def hamiltonian_observable(system: System) -> Observable:
    return kinetic_observable(system.model) + Observable.from_potential(system.potential)


def factor_terms(system: System) -> list[list]:
    """Split potential terms by the single coordinate they depend on.

    Constant terms are assigned to coordinate 0.  Raises :class:`NonSeparable`
    for a term whose wave vector touches two coordinates, and
    :class:`NonDiagonalMetric` if the metric couples coordinates.
    """
    if not system.model.is_diagonal:
        raise NonDiagonalMetric("separable integrals need a diagonal metric")
    n = system.n
    groups: list[list] = [[] for _ in range(n)]
    for t in system.potential.terms:
        support = [i for i, w in enumerate(t.wave) if w]
        if len(support) > 1:
            raise NonSeparable(f"term {t.kind}({list(t.wave)}.x) couples coordinates {support}")
        groups[support[0] if support else 0].append(t)
    return groups


def separable_integrals(system: System) -> list[Observable]:
    """``F_i = y_i^2 / (2 G_ii) + (terms of U depending on x_i only)``."""
    groups = factor_terms(system)
    n = system.n
    out = []
    for i in range(n):
        alpha = [0] * n
        alpha[i] = 2
        terms = [((tuple(alpha), (0,) * n, "cos"), Fraction(1, 2) / Fraction(float(system.model.metric[i, i])))]
        terms += [(((0,) * n, t.wave, t.kind), Fraction(t.amplitude)) for t in groups[i]]
        out.append(Observable(n, terms))
    return out


@dataclass(frozen=True, eq=False)
class MomentumValue:
    c: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=float).reshape(-1)
        if not np.all(np.isfinite(c)):
            raise ValueError("momentum value has non-finite entries")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    def __eq__(self, other):
        return isinstance(other, MomentumValue) and np.array_equal(self.c, other.c)

    def __repr__(self):
        return f"MomentumValue({self.c.tolist()})"


def momentum_map_eval(F: Sequence[Observable], p: PhasePoint) -> MomentumValue:
    for f in F:
        if f.n != p.n:
            raise DimensionError(f"observable dimension {f.n} does not match phase point dimension {p.n}")
    return MomentumValue([f.evaluate_exact(p.x, p.y) for f in F])


def differential(F: Sequence[Observable]) -> list[list[Observable]]:
    """Symbolic rows ``[dF_i/dx_1..dF_i/dx_n, dF_i/dy_1..dF_i/dy_n]``."""
    return [[f.dx(j) for j in range(f.n)] + [f.dy(j) for j in range(f.n)] for f in F]


def rank_dF(F: Sequence[Observable], p: PhasePoint, tol: float = 1e-9) -> int:
    """Numerical rank of dF at ``p``; singular values below ``tol * sigma_max`` count as zero."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not F:
        return 0
    J = np.array([[d(p.x, p.y) for d in row] for row in differential(F)], dtype=float)
    s = np.linalg.svd(J, compute_uv=False)
    # floor: roundoff such as sin(float(pi)) must not count at exact equilibria
    scale = max(s[0], gradient_scale(F, p.y))
    if scale == 0.0:
        return 0
    return int(np.sum(s > tol * scale))


def gradient_scale(F: Sequence[Observable], y) -> float:
    """Size of dF's entries at momenta ``y``: ``sum |c| (|k|_1 + |alpha|_1) max(1, |y|)^deg``."""
    ymax = max(1.0, float(np.max(np.abs(y)))) if len(y) else 1.0
    total = 0.0
    for f in F:
        for (alpha, wave, _), c in f.terms:
            deg = sum(alpha)
            total = max(total, abs(float(c)) * (sum(map(abs, wave)) + deg) * ymax**deg)
    return total


def rank_dF_exact(F: Sequence[Observable], q: Sequence[int], y: Sequence) -> int:
    """Exact rank of dF over the rationals at ``x = q * pi/2``."""
    rows = [[d.evaluate_quarter_turns(q, y) for d in row] for row in differential(F)]
    return _rational_rank(rows)


def _rational_rank(rows: list[list[Fraction]]) -> int:
    rows = [list(r) for r in rows]
    rank = 0
    ncols = len(rows[0]) if rows else 0
    for col in range(ncols):
        piv = next((r for r in range(rank, len(rows)) if rows[r][col] != 0), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        for r in range(rank + 1, len(rows)):
            if rows[r][col] != 0:
                f = rows[r][col] / rows[rank][col]
                rows[r] = [a - f * b for a, b in zip(rows[r], rows[rank])]
        rank += 1
    return rank


@dataclass
class InvolutionReport:
    """Pairwise brackets of a list of integrals (and optionally with H)."""

    passed: bool
    brackets: dict = field(default_factory=dict)
    hamiltonian_brackets: dict = field(default_factory=dict)

    def failures(self) -> list[str]:
        out = [f"{{F{i + 1},F{j + 1}}} = {b!r}" for (i, j), b in self.brackets.items() if b]
        out += [f"{{H,F{i + 1}}} = {b!r}" for i, b in self.hamiltonian_brackets.items() if b]
        return out

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "brackets": {f"{i},{j}": b.to_json() for (i, j), b in self.brackets.items()},
            "hamiltonian_brackets": {str(i): b.to_json() for i, b in self.hamiltonian_brackets.items()},
        }


def involution_report(F: Sequence[Observable], H: Observable | None = None) -> InvolutionReport:
    brackets = {(i, j): poisson_bracket(F[i], F[j]) for i, j in itertools.combinations(range(len(F)), 2)}
    hb = {} if H is None else {i: poisson_bracket(H, f) for i, f in enumerate(F)}
    passed = all(b.is_zero for b in brackets.values()) and all(b.is_zero for b in hb.values())
    return InvolutionReport(passed, brackets, hb)
