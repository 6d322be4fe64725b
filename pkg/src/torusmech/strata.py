"""Momentum-map stratification of separable systems.

A separable system splits into one-degree-of-freedom factors
``F_i = y_i^2 / (2 G_ii) + V_i(x_i)`` on the cylinder.  Each factor level set
is a union of equilibria (points), open separatrix branches (lines) and
closed orbits (circles); layers of the full momentum map are products of
these, so strata are ``T^a x R^b`` with ``a`` circles and ``b`` lines.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .model import TWO_PI, PhasePoint, System
from .observables import factor_terms, rank_dF, separable_integrals

ON_LEVEL_RTOL = 1e-12
ROOT_XTOL = 1e-15
KIND_ORDER = ("point", "line", "circle")


class SampleFailure(RuntimeError):
    """No point could be placed on a requested stratum."""


class NotRegularCell(ValueError):
    """Torus triviality needs an n-dimensional cell."""


# ---------------------------------------------------------------------------
# one-degree-of-freedom factors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriticalPoint:
    x: float
    value: float


@dataclass(frozen=True, eq=False)
class FactorPortrait:
    """Phase portrait data for ``y^2 / (2 mass) + V(x)``.

    ``terms`` are ``(amplitude, wave_number, kind)`` with ``V(x) = offset +
    sum a * kind(k x)``.  A single cosine or sine term gets closed-form
    critical points; anything else is handled by sign-change bisection on
    ``V'``.
    """

    index: int
    mass: float
    terms: tuple = ()
    offset: float = 0.0
    critical_points: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        terms = tuple((float(a), int(k), kind) for a, k, kind in self.terms if a != 0.0 and k != 0)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "critical_points", tuple(self._find_critical_points()))

    @classmethod
    def single(cls, k: int = 1, amplitude: float = 1.0, mass: float = 1.0, index: int = 0) -> "FactorPortrait":
        return cls(index, mass, ((amplitude, k, "cos"),))

    # V and derivatives
    def V(self, x):
        x = np.asarray(x, dtype=float)
        acc = np.full(x.shape, self.offset)
        for a, k, kind in self.terms:
            acc = acc + a * (np.cos(k * x) if kind == "cos" else np.sin(k * x))
        return acc if acc.ndim else float(acc)

    def dV(self, x):
        x = np.asarray(x, dtype=float)
        acc = np.zeros(x.shape)
        for a, k, kind in self.terms:
            acc = acc + a * k * (-np.sin(k * x) if kind == "cos" else np.cos(k * x))
        return acc if acc.ndim else float(acc)

    @property
    def is_degenerate(self) -> bool:
        """A free factor (constant V) has a whole circle of equilibria."""
        return not self.terms

    @property
    def closed_form(self) -> bool:
        return len(self.terms) == 1

    @property
    def wave_number(self) -> int:
        if not self.closed_form:
            raise ValueError("wave number is defined for single-term factors only")
        return self.terms[0][1]

    @property
    def amplitude(self) -> float:
        if not self.closed_form:
            raise ValueError("amplitude is defined for single-term factors only")
        return self.terms[0][0]

    def _find_critical_points(self) -> list[CriticalPoint]:
        if not self.terms:
            return []
        if self.closed_form:
            a, k, kind = self.terms[0]
            kk = abs(k)
            shift = 0.0 if kind == "cos" else math.pi / 2
            xs = [((shift + j * math.pi) / kk) % TWO_PI for j in range(2 * kk)]
            pts = []
            for j, x in enumerate(xs):
                sign = 1 if j % 2 == 0 else -1
                if kind == "sin" and k < 0:
                    sign = -sign
                pts.append(CriticalPoint(x, self.offset + sign * a))
            return sorted(pts, key=lambda c: c.x)
        kmax = max(abs(k) for _, k, _ in self.terms)
        grid = np.linspace(0.0, TWO_PI, 512 * kmax + 1)
        d = self.dV(grid)
        roots = []
        for x0, x1, d0, d1 in zip(grid[:-1], grid[1:], d[:-1], d[1:]):
            if d0 == 0.0:
                roots.append(float(x0))
            elif d0 * d1 < 0:
                roots.append(brentq(self.dV, x0, x1, xtol=ROOT_XTOL))
        return [CriticalPoint(x % TWO_PI, self.V(x)) for x in sorted(set(roots))]

    @property
    def critical_values(self) -> list[float]:
        vals = sorted(c.value for c in self.critical_points)
        out: list[float] = []
        for v in vals:
            if not out or not _same(v, out[-1]):
                out.append(v)
        return out

    @property
    def minimum(self) -> float:
        return self.critical_values[0] if self.terms else self.offset

    @property
    def maximum(self) -> float:
        return self.critical_values[-1] if self.terms else self.offset


def _same(a: float, b: float) -> bool:
    return abs(a - b) <= ON_LEVEL_RTOL * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class LayerComponent:
    kind: str
    multiplicity: int

    def __post_init__(self):
        if self.kind not in KIND_ORDER:
            raise ValueError(f"unknown component kind {self.kind!r}")
        if self.multiplicity < 1:
            raise ValueError("multiplicity must be positive")


@dataclass(frozen=True)
class Arc:
    """Maximal open arc of ``{V < c}``; endpoints are turning points or equilibria."""

    left: float
    right: float  # may exceed 2π (unwrapped)
    left_turning: bool
    right_turning: bool


@dataclass(frozen=True)
class LevelStructure:
    """Geometry of one factor level: equilibria on the level and arcs below it."""

    equilibria: tuple[float, ...]
    arcs: tuple[Arc, ...]
    rotation: bool  # the whole circle lies below the level
    equilibrium_circle: bool = False  # free factor at its constant level

    def census(self) -> list[LayerComponent]:
        counts = {"point": len(self.equilibria), "line": 0, "circle": 0}
        if self.equilibrium_circle:
            counts["circle"] += 1
        if self.rotation:
            counts["circle"] += 2
        for arc in self.arcs:
            if arc.left_turning and arc.right_turning:
                counts["circle"] += 1
            elif arc.left_turning or arc.right_turning:
                counts["line"] += 1
            else:
                counts["line"] += 2
        return [LayerComponent(k, counts[k]) for k in KIND_ORDER if counts[k]]


def level_structure(f: FactorPortrait, c: float) -> LevelStructure:
    """Locate equilibria, turning points and arcs of ``{V < c}`` on the circle."""
    if f.is_degenerate:
        return LevelStructure((), (), c > f.offset and not _same(c, f.offset), _same(c, f.offset))
    crit = list(f.critical_points)
    status = []
    for cp in crit:
        if _same(cp.value, c):
            status.append(0)
        else:
            status.append(-1 if cp.value < c else 1)
    if all(s < 0 for s in status):
        return LevelStructure((), (), True)
    # refine the circular node list with turning points on monotone stretches
    m = len(crit)
    nodes = []  # (x unwrapped, state) with state -1 below, 0 on-critical, 2 turning, 1 above
    for j in range(m):
        a, b = crit[j], crit[(j + 1) % m]
        xa = a.x
        xb = b.x if j + 1 < m else b.x + TWO_PI
        nodes.append((xa, status[j] if status[j] != 0 else 0))
        if status[j] * status[(j + 1) % m] < 0:
            g = lambda t: f.V(t) - c
            xt = brentq(g, xa, xb, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps)
            nodes.append((xt, 2))
    equilibria = tuple(x for x, s in nodes if s == 0)
    # every boundary node (on-critical or turning) starts/ends an arc or separates "above" stretches
    bounds = [i for i, (_, s) in enumerate(nodes) if s in (0, 2)]
    arcs = []
    k = len(nodes)
    for bi, i in enumerate(bounds):
        j = bounds[(bi + 1) % len(bounds)]
        span = [(i + t) % k for t in range(1, ((j - i) % k) or k)]
        if span:
            below = nodes[span[0]][1] == -1
        else:
            # adjacent boundary nodes: below iff V drops between them
            xl = nodes[i][0]
            xr = nodes[j][0] + (TWO_PI if j <= i else 0.0)
            below = f.V(0.5 * (xl + xr)) < c
        if not below:
            continue
        xl = nodes[i][0]
        xr = nodes[j][0] + (TWO_PI if j <= i else 0.0)
        arcs.append(Arc(xl, xr, nodes[i][1] == 2, nodes[j][1] == 2))
    return LevelStructure(equilibria, tuple(arcs), False)


def classify_factor_level(f: FactorPortrait, c: float) -> list[LayerComponent]:
    """Stratum census of ``{y^2/(2 mass) + V(x) = c}`` on the cylinder."""
    return level_structure(f, c).census()


def factor_portraits(system: System) -> list[FactorPortrait]:
    groups = factor_terms(system)
    out = []
    for i, group in enumerate(groups):
        offset = sum(t.amplitude for t in group if not any(t.wave))
        terms = tuple((t.amplitude, t.wave[i], t.kind) for t in group if any(t.wave))
        out.append(FactorPortrait(i, float(system.model.metric[i, i]), terms, offset))
    return out


# ---------------------------------------------------------------------------
# the cell complex of momentum values
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class StratumSignature:
    """``count`` strata diffeomorphic to ``T^a x R^b``."""

    a: int
    b: int
    count: int

    @property
    def dimension(self) -> int:
        return self.a + self.b


@dataclass(frozen=True)
class Piece:
    """One-dimensional cell of a factor: a critical value or an open interval."""

    lo: float
    hi: float

    @property
    def is_point(self) -> bool:
        return self.lo == self.hi

    def representative(self) -> float:
        if self.is_point:
            return self.lo
        if math.isinf(self.hi):
            return self.lo + 1.0
        if math.isinf(self.lo):
            return self.hi - 1.0
        return 0.5 * (self.lo + self.hi)

    def sample(self, rng: np.random.Generator) -> float:
        if self.is_point:
            return self.lo
        lo = self.lo if math.isfinite(self.lo) else self.hi - 2.0
        hi = self.hi if math.isfinite(self.hi) else self.lo + 2.0
        return float(rng.uniform(lo, hi)) if lo < hi else lo

    def to_json(self):
        """Strict JSON: an unbounded end is written as the string ``"inf"``."""
        if self.is_point:
            return self.lo
        return [self.lo if math.isfinite(self.lo) else "-inf", self.hi if math.isfinite(self.hi) else "inf"]

    def label(self) -> str:
        return f"{self.lo!r}" if self.is_point else f"({self.lo!r}, {self.hi!r})"


def layer_signatures(censuses: Sequence[Sequence[LayerComponent]]) -> list[StratumSignature]:
    """Product of factor censuses, aggregated by ``(a, b)``."""
    acc: dict[tuple[int, int], int] = {}
    for combo in itertools.product(*censuses):
        a = sum(1 for comp in combo if comp.kind == "circle")
        b = sum(1 for comp in combo if comp.kind == "line")
        acc[(a, b)] = acc.get((a, b), 0) + math.prod(comp.multiplicity for comp in combo)
    return sorted(StratumSignature(a, b, cnt) for (a, b), cnt in acc.items())


@dataclass(frozen=True)
class Cell:
    pieces: tuple[Piece, ...]
    layer: tuple[StratumSignature, ...]

    @property
    def dimension(self) -> int:
        return sum(1 for p in self.pieces if not p.is_point)

    def representative(self) -> np.ndarray:
        return np.array([p.representative() for p in self.pieces])

    def contains(self, c: Sequence[float]) -> bool:
        for p, v in zip(self.pieces, c):
            if p.is_point:
                if not _same(v, p.lo):
                    return False
            elif not (p.lo < v < p.hi) or _same(v, p.lo) or (math.isfinite(p.hi) and _same(v, p.hi)):
                return False
        return True

    def to_json(self) -> dict:
        return {
            "dimension": self.dimension,
            "pieces": [p.to_json() for p in self.pieces],
            "layer": [{"a": s.a, "b": s.b, "count": s.count} for s in self.layer],
        }


@dataclass
class MomentumCellComplex:
    factors: list[FactorPortrait]
    cells: list[Cell]

    @property
    def n(self) -> int:
        return len(self.factors)

    def counts_by_dimension(self) -> dict[int, int]:
        out = {d: 0 for d in range(self.n + 1)}
        for cell in self.cells:
            out[cell.dimension] += 1
        return out

    def locate(self, c: Sequence[float]) -> Cell | None:
        hits = [cell for cell in self.cells if cell.contains(c)]
        if len(hits) > 1:
            raise AssertionError(f"momentum value {list(c)} lies in {len(hits)} cells")
        return hits[0] if hits else None

    def to_json(self) -> dict:
        return {
            "dimension": self.n,
            "critical_values": [f.critical_values for f in self.factors],
            "counts_by_dimension": {str(d): k for d, k in self.counts_by_dimension().items()},
            "cells": [cell.to_json() for cell in self.cells],
        }


def factor_pieces(f: FactorPortrait, restrict_to_image: bool = True) -> list[Piece]:
    vals = f.critical_values if not f.is_degenerate else [f.offset]
    pieces = [] if restrict_to_image else [Piece(-math.inf, vals[0])]
    for j, v in enumerate(vals):
        pieces.append(Piece(v, v))
        pieces.append(Piece(v, vals[j + 1] if j + 1 < len(vals) else math.inf))
    return pieces


def build_cell_complex(system: System, restrict_to_image: bool = True) -> MomentumCellComplex:
    """Cells are products of per-factor critical values and open intervals between them.

    With ``restrict_to_image=False`` the intervals below each factor minimum
    are kept too (their layers are empty).
    """
    factors = factor_portraits(system)
    per_factor = [factor_pieces(f, restrict_to_image) for f in factors]
    cells = []
    for combo in itertools.product(*per_factor):
        censuses = [classify_factor_level(f, p.representative()) for f, p in zip(factors, combo)]
        layer = tuple(layer_signatures(censuses)) if all(censuses) else ()
        cells.append(Cell(tuple(combo), layer))
    return MomentumCellComplex(factors, cells)


# ---------------------------------------------------------------------------
# sampling and non-degeneracy
# ---------------------------------------------------------------------------


def component_sample(f: FactorPortrait, c: float, kind: str) -> tuple[float, float]:
    """An analytic point ``(x, y)`` on a component of the given kind at level ``c``."""
    ls = level_structure(f, c)
    if kind == "point":
        if ls.equilibria:
            return ls.equilibria[0] % TWO_PI, 0.0
    elif kind == "circle":
        if ls.equilibrium_circle:
            return 0.0, 0.0
        if ls.rotation:
            x = 0.0
            return x, math.sqrt(2.0 * f.mass * max(c - f.V(x), 0.0))
        for arc in ls.arcs:
            if arc.left_turning and arc.right_turning:
                return arc.left % TWO_PI, 0.0
    elif kind == "line":
        for arc in ls.arcs:
            if not (arc.left_turning and arc.right_turning):
                x = 0.5 * (arc.left + arc.right)
                return x % TWO_PI, math.sqrt(2.0 * f.mass * max(c - f.V(x), 0.0))
    raise SampleFailure(f"factor {f.index} has no {kind} component at level {c}")


@dataclass
class NondegeneracyReport:
    passed: bool
    finite: bool
    rank_checks: list = field(default_factory=list)  # (cell index, kinds, expected, observed)
    census_checks: list = field(default_factory=list)  # (cell index, constant?)
    degenerate_factors: list = field(default_factory=list)
    observed_dimensions: set = field(default_factory=set)

    def failures(self) -> list[str]:
        out = [f"factor {i} is degenerate (constant potential)" for i in self.degenerate_factors]
        out += [
            f"cell {ci}: rank {obs} on stratum {kinds} (expected {exp})"
            for ci, kinds, exp, obs in self.rank_checks
            if exp != obs
        ]
        out += [f"cell {ci}: layer census varies inside the cell" for ci, ok in self.census_checks if not ok]
        return out

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "finite": self.finite,
            "degenerate_factors": self.degenerate_factors,
            "observed_dimensions": sorted(self.observed_dimensions),
            "rank_checks": [
                {"cell": ci, "strata": list(kinds), "expected": exp, "observed": obs}
                for ci, kinds, exp, obs in self.rank_checks
            ],
            "census_checks": [{"cell": ci, "constant": ok} for ci, ok in self.census_checks],
        }


def verify_nondegeneracy(system: System, samples_per_cell: int = 5, seed: int = 0, tol: float = 1e-9) -> NondegeneracyReport:
    """Check finiteness, rank = stratum dimension, and census constancy per cell."""
    cx = build_cell_complex(system)
    F = separable_integrals(system)
    degenerate = [f.index for f in cx.factors if f.is_degenerate]
    report = NondegeneracyReport(passed=False, finite=True, degenerate_factors=degenerate)
    rng = np.random.default_rng(seed)
    for ci, cell in enumerate(cx.cells):
        if not cell.layer:
            continue
        c = cell.representative()
        censuses = [classify_factor_level(f, v) for f, v in zip(cx.factors, c)]
        for combo in itertools.product(*censuses):
            kinds = tuple(comp.kind for comp in combo)
            xs, ys = zip(*(component_sample(f, v, k) for f, v, k in zip(cx.factors, c, kinds)))
            expected = sum(1 for k in kinds if k != "point")
            observed = rank_dF(F, PhasePoint(xs, ys), tol)
            report.rank_checks.append((ci, kinds, expected, observed))
            report.observed_dimensions.add(observed)
        constant = True
        for _ in range(samples_per_cell):
            cs = [p.sample(rng) for p in cell.pieces]
            sample_layer = tuple(layer_signatures([classify_factor_level(f, v) for f, v in zip(cx.factors, cs)]))
            if sample_layer != cell.layer:
                constant = False
        report.census_checks.append((ci, constant))
    report.passed = (
        report.finite
        and not degenerate
        and all(exp == obs for _, _, exp, obs in report.rank_checks)
        and all(ok for _, ok in report.census_checks)
    )
    return report


# ---------------------------------------------------------------------------
# trivial and non-trivial tori
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TorusTriviality:
    nontrivial: bool
    classes: tuple[tuple[int, ...], ...]  # projected class of each factor cycle


def torus_triviality(cx: MomentumCellComplex, cell: Cell) -> TorusTriviality:
    """Project the factor cycles of a regular torus to ``pi_1(T^n) = Z^n``.

    A rotation factor's cycle (positive-momentum branch) winds once around
    its coordinate; an oscillation cycle is contractible.  The torus is
    non-trivial iff every factor cycle projects non-trivially.
    """
    if cell.dimension != cx.n:
        raise NotRegularCell(f"cell has dimension {cell.dimension}, expected {cx.n}")
    classes = []
    for i, (f, piece) in enumerate(zip(cx.factors, cell.pieces)):
        e = [0] * cx.n
        if level_structure(f, piece.representative()).rotation:
            e[i] = 1
        classes.append(tuple(e))
    return TorusTriviality(all(any(cl) for cl in classes), tuple(classes))
