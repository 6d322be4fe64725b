"""Symplectic simulation and period/frequency computation.

Integration uses symmetric kick/drift splittings of ``H = 1/2 y.G^{-1}y + U(x)``:
with constant ``G`` the drift is exact and each kick is an exact force
evaluation, so every step is symplectic and time-reversible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit
from scipy.integrate import quad

from .model import TWO_PI, PhasePoint, System, reduce_angles
from .observables import Observable, hamiltonian_observable, separable_integrals
from .strata import FactorPortrait, _same, factor_portraits, level_structure

CONFINEMENT_TOL = 1e-6


class SeparatrixEnergy(ValueError):
    """The period diverges at a separatrix level."""


class BelowMinimum(ValueError):
    """The level is at or below the factor minimum: no orbit to time."""


@njit(cache=True)
def _force(x, waves, amps, kinds, out):
    n = x.shape[0]
    for j in range(n):
        out[j] = 0.0
    for t in range(waves.shape[0]):
        phase = 0.0
        for j in range(n):
            phase += waves[t, j] * x[j]
        # force = -grad U
        if kinds[t] == 0:
            d = amps[t] * math.sin(phase)
        else:
            d = -amps[t] * math.cos(phase)
        for j in range(n):
            out[j] += d * waves[t, j]


@njit(cache=True)
def _splitting(x0, y0, ginv, waves, amps, kinds, kicks, drifts, dt, steps, stride, lift_out, y_out):
    # one step: kick kicks[0], drift drifts[0], kick kicks[1], ..., kick kicks[-1]
    n = x0.shape[0]
    x = x0.copy()
    y = y0.copy()
    f = np.empty(n)
    v = np.empty(n)
    _force(x, waves, amps, kinds, f)
    lift_out[0, :] = x
    y_out[0, :] = y
    k = 1
    for s in range(1, steps + 1):
        for stage in range(drifts.shape[0]):
            a = kicks[stage] * dt
            for j in range(n):
                y[j] += a * f[j]
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += ginv[i, j] * y[j]
                v[i] = acc
            b = drifts[stage] * dt
            for j in range(n):
                x[j] += b * v[j]
            _force(x, waves, amps, kinds, f)
        a = kicks[drifts.shape[0]] * dt
        for j in range(n):
            y[j] += a * f[j]
        if s % stride == 0:
            lift_out[k, :] = x
            y_out[k, :] = y
            k += 1


# McLachlan's minimum-error two-stage coefficient (SIAM J. Sci. Comput. 16, 1995)
_LAMBDA = 0.1931833275037836

METHODS = {
    # name: (kick coefficients, drift coefficients)
    "stormer-verlet-kdk": ((0.5, 0.5), (1.0,)),
    "verlet-bab2": ((_LAMBDA, 1.0 - 2.0 * _LAMBDA, _LAMBDA), (0.5, 0.5)),
}
DEFAULT_METHOD = "verlet-bab2"


@dataclass(frozen=True, eq=False)
class PhaseTrajectory:
    """Uniformly sampled orbit.  ``lift`` keeps unreduced angles; ``x`` is reduced."""

    times: np.ndarray
    lift: np.ndarray
    y: np.ndarray
    H: np.ndarray
    F: np.ndarray  # (samples, k) first-integral values, possibly empty
    inverse_metric: np.ndarray
    method: str = DEFAULT_METHOD

    @property
    def velocity(self) -> np.ndarray:
        return self.y @ self.inverse_metric.T

    @property
    def x(self) -> np.ndarray:
        return reduce_angles(self.lift)

    def __len__(self):
        return self.times.shape[0]

    def point(self, i: int) -> PhasePoint:
        return PhasePoint(self.lift[i], self.y[i])


def integrate(
    system: System,
    p0: PhasePoint,
    dt: float,
    steps: int,
    stride: int = 1,
    integrals: Sequence[Observable] | None = None,
    method: str = DEFAULT_METHOD,
) -> PhaseTrajectory:
    """Integrate Hamilton's equations with a symmetric kick/drift splitting.

    ``method`` is ``"verlet-bab2"`` (default: two Verlet-type stages with
    McLachlan's error-minimizing coefficient, still second order) or
    ``"stormer-verlet-kdk"``.  Both use exact drifts and exact kicks.
    A negative ``dt`` runs the flow backwards.  Every ``stride``-th state is
    recorded.  ``integrals`` default to the separable integrals when the
    system is separable and to none otherwise; ``H`` is always recorded.
    """
    if dt == 0 or not math.isfinite(dt):
        raise ValueError(f"dt must be finite and nonzero, got {dt}")
    if steps < 1 or stride < 1:
        raise ValueError("steps and stride must be positive")
    if p0.n != system.n:
        raise ValueError("phase point dimension does not match the system")
    U = system.potential
    samples = steps // stride + 1
    lift = np.empty((samples, system.n))
    ys = np.empty((samples, system.n))
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    kicks, drifts = (np.array(c, dtype=float) for c in METHODS[method])
    _splitting(
        p0.x.astype(float), p0.y.astype(float), np.ascontiguousarray(system.model.inverse),
        U.waves.astype(float), U.amplitudes, U.kind_codes, kicks, drifts,
        float(dt), int(steps), int(stride), lift, ys,
    )
    if integrals is None:
        try:
            integrals = separable_integrals(system)
        except ValueError:
            integrals = []
    H = hamiltonian_observable(system).evaluate_many(lift, ys)
    F = np.stack([f.evaluate_many(lift, ys) for f in integrals], axis=1) if integrals else np.empty((samples, 0))
    times = np.arange(samples) * (dt * stride)
    return PhaseTrajectory(times, lift, ys, H, F, system.model.inverse, method)


@dataclass
class ConfinementReport:
    passed: bool
    max_excursion: float  # max over samples of U(x) - E
    tol: float

    def to_json(self):
        return {"passed": self.passed, "max_excursion": self.max_excursion, "tol": self.tol}


def check_confinement(traj: PhaseTrajectory, system: System, E: float, tol: float = CONFINEMENT_TOL) -> ConfinementReport:
    """Assert ``U(x(t)) <= E + tol`` along the trajectory."""
    excursion = float(np.max(system.potential.evaluate(traj.lift) - E))
    return ConfinementReport(excursion <= tol, excursion, tol)


def integral_drift(traj: PhaseTrajectory, which: str = "F") -> float:
    """``max_{i,t} |F_i(t) - F_i(0)|`` (``which="H"`` for the energy)."""
    vals = traj.H[:, None] if which == "H" else traj.F
    if vals.size == 0:
        return 0.0
    return float(np.max(np.abs(vals - vals[0])))


def energy_drift(traj: PhaseTrajectory) -> float:
    return integral_drift(traj, "H")


# ---------------------------------------------------------------------------
# periods of one-degree-of-freedom factors
# ---------------------------------------------------------------------------


def _check_level(f: FactorPortrait, c: float):
    if f.is_degenerate:
        if c < f.offset or _same(c, f.offset):
            raise BelowMinimum(f"level {c} is not above the constant potential {f.offset}")
        return
    vals = f.critical_values
    if c < vals[0] or _same(c, vals[0]):
        raise BelowMinimum(f"level {c} is at or below the minimum {vals[0]}")
    for v in vals[1:]:
        if _same(c, v):
            raise SeparatrixEnergy(f"level {c} is a critical value; the period diverges")


def factor_period(
    f: FactorPortrait,
    c: float,
    well: int = 0,
    method: str = "auto",
    epsabs: float = 1e-13,
    epsrel: float = 1e-10,
) -> float:
    """Period of the factor orbit at level ``c``.

    Rotation: time for ``x`` to advance by 2π.  Oscillation: twice the
    transit time between the turning points of the ``well``-th libration arc.

    ``method="generic"`` integrates in ``x`` after the substitution
    ``x = mid - h cos(theta)``, which removes the inverse-square-root
    endpoint singularities.  For a single-term factor ``method="auto"``
    instead uses ``sin(phi/2) = sqrt(m) sin(theta)`` (``phi`` the angle from
    the well bottom, ``m = (1 + c/|a|)/2``), whose integrand
    ``1/sqrt(1 - m sin^2 theta)`` is smooth and free of cancellation near
    the well bottom.
    """
    if method not in ("auto", "generic"):
        raise ValueError(f"unknown method {method!r}")
    _check_level(f, c)
    ls = level_structure(f, c)
    if ls.rotation:
        speed = lambda x: math.sqrt(2.0 * (c - f.V(x)) / f.mass)
        val, _ = quad(lambda x: 1.0 / speed(x), 0.0, TWO_PI, epsabs=epsabs, epsrel=epsrel, limit=500)
        return val
    circles = [arc for arc in ls.arcs if arc.left_turning and arc.right_turning]
    if not circles:
        raise SeparatrixEnergy(f"no closed orbit at level {c}")
    if method == "auto" and f.closed_form:
        amp = abs(f.amplitude)
        m = 0.5 * (1.0 + (c - f.offset) / amp)
        omega0 = abs(f.wave_number) * math.sqrt(amp / f.mass)
        val, _ = quad(
            lambda t: 1.0 / math.sqrt(1.0 - m * math.sin(t) ** 2),
            0.0, 0.5 * math.pi, epsabs=epsabs, epsrel=epsrel, limit=500,
        )
        return 4.0 * val / omega0
    arc = circles[well]
    mid = 0.5 * (arc.left + arc.right)
    h = 0.5 * (arc.right - arc.left)

    def integrand(theta):
        x = mid - h * math.cos(theta)
        s2 = 2.0 * (c - f.V(x)) / f.mass
        if s2 <= 0.0:
            # only reachable at the endpoints in floating point; use the limit
            s2 = 2.0 * abs(f.dV(x)) * h * (1.0 - abs(math.cos(theta))) / f.mass
            if s2 <= 0.0:
                return 0.0
        return h * math.sin(theta) / math.sqrt(s2)

    val, _ = quad(integrand, 0.0, math.pi, epsabs=epsabs, epsrel=epsrel, limit=500)
    return 2.0 * val


def harmonic_period(f: FactorPortrait) -> float:
    """Small-oscillation limit ``2 pi / (k sqrt(|a| / mass))`` of a single-term factor."""
    return TWO_PI / (abs(f.wave_number) * math.sqrt(abs(f.amplitude) / f.mass))


@dataclass(frozen=True)
class FrequencyVector:
    omega: np.ndarray
    rotation: tuple[bool, ...]  # False: libration frequency

    def to_json(self):
        return {"omega": self.omega.tolist(), "rotation": list(self.rotation)}


def frequency_vector(system: System, c: Sequence[float], signs: Sequence[int] | None = None) -> FrequencyVector:
    """Per-factor frequencies ``2 pi / T_i``; rotation factors carry the momentum sign."""
    factors = factor_portraits(system)
    signs = [1] * len(factors) if signs is None else list(signs)
    omega, rot = [], []
    for f, ci, s in zip(factors, c, signs):
        w = TWO_PI / factor_period(f, ci)
        is_rot = level_structure(f, ci).rotation
        omega.append(math.copysign(w, s) if is_rot else w)
        rot.append(is_rot)
    return FrequencyVector(np.array(omega), tuple(rot))


def winding_period(traj: PhaseTrajectory, axis: int = 0, discard: float = 0.2) -> float:
    """Mean time for the lifted angle to advance by 2π, measured on the trajectory.

    Crossing times of ``x0 + 2 pi j`` are located by cubic Hermite
    interpolation with the sampled velocities, then a least-squares line
    through (j, crossing time) over the final ``1 - discard`` fraction of
    the run gives the period.
    """
    start = int(discard * len(traj.times))
    x = traj.lift[start:, axis]
    t = traj.times[start:]
    vel = traj.velocity[start:, axis]
    direction = 1.0 if x[-1] > x[0] else -1.0
    u = direction * (x - x[0])
    if u[-1] < 2 * TWO_PI:
        raise ValueError("trajectory does not wind at least twice along this axis")
    slope = direction * vel
    levels = np.arange(1, int(u[-1] // TWO_PI) + 1) * TWO_PI
    idx = np.searchsorted(u, levels) - 1
    cross = []
    for lev, i in zip(levels, idx):
        if i < 0 or i + 1 >= len(u):
            continue
        h = t[i + 1] - t[i]
        p0, p1, m0, m1 = u[i], u[i + 1], slope[i] * h, slope[i + 1] * h
        # Newton on the Hermite cubic, starting from the linear guess
        s = (lev - p0) / (p1 - p0)
        for _ in range(8):
            h00 = 2 * s**3 - 3 * s**2 + 1
            h10 = s**3 - 2 * s**2 + s
            h01 = -2 * s**3 + 3 * s**2
            h11 = s**3 - s**2
            val = h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1 - lev
            der = (6 * s**2 - 6 * s) * p0 + (3 * s**2 - 4 * s + 1) * m0 + (-6 * s**2 + 6 * s) * p1 + (3 * s**2 - 2 * s) * m1
            s -= val / der
        cross.append(t[i] + s * h)
    j = np.arange(len(cross), dtype=float)
    period, _ = np.polyfit(j, np.array(cross), 1)
    return float(period)


# ---------------------------------------------------------------------------
# frequency collinearity on pairs of tori
# ---------------------------------------------------------------------------


def _primitive(v: Sequence[int]) -> tuple[tuple[int, ...], int]:
    g = 0
    for a in v:
        g = math.gcd(g, abs(int(a)))
    if g == 0:
        raise ValueError("zero class has no primitive root")
    return tuple(int(a) // g for a in v), g


@dataclass
class CollinearityReport:
    omega1: np.ndarray
    omega2: np.ndarray
    deviation: float  # |w1 ^ w2| / (|w1| |w2|)
    collinear: bool
    precondition_met: bool  # classes are multiples of one primitive class
    common_class: tuple | None

    @property
    def passed(self) -> bool:
        return self.collinear or not self.precondition_met

    def to_json(self):
        return {
            "omega1": self.omega1.tolist(),
            "omega2": self.omega2.tolist(),
            "deviation": self.deviation,
            "collinear": self.collinear,
            "precondition_met": self.precondition_met,
            "common_class": list(self.common_class) if self.common_class else None,
            "passed": self.passed,
        }


def sine_deviation(w1: np.ndarray, w2: np.ndarray) -> float:
    """``|w1 ^ w2| / (|w1| |w2|)`` from the wedge components (no cancellation)."""
    w1, w2 = np.asarray(w1, dtype=float), np.asarray(w2, dtype=float)
    wedge = np.outer(w1, w2) - np.outer(w2, w1)
    return float(np.linalg.norm(wedge) / math.sqrt(2.0) / (np.linalg.norm(w1) * np.linalg.norm(w2)))


def collinearity_check(
    system: System,
    torus1: tuple,
    torus2: tuple,
    class1: Sequence[int],
    class2: Sequence[int],
    tol: float = 1e-9,
) -> CollinearityReport:
    """Compare frequency vectors of two tori given as ``(c, signs)`` pairs."""
    f1 = frequency_vector(system, *torus1)
    f2 = frequency_vector(system, *torus2)
    p1, _ = _primitive(class1)
    p2, _ = _primitive(class2)
    pre = p1 == p2
    dev = sine_deviation(f1.omega, f2.omega)
    return CollinearityReport(f1.omega, f2.omega, dev, dev < tol, pre, p1 if pre else None)
