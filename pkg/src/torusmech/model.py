"""Configuration tori, constant metrics, trigonometric potentials and phase points.

Angles are 2π-periodic coordinates on T^n.  Everything in this module is an
immutable value; operations are pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
MAX_DIMENSION = 6
KINDS = ("cos", "sin")


class DimensionError(ValueError):
    """Raised when vector or term dimensions disagree."""


class SpecError(ValueError):
    """Raised for malformed system specification files."""


def reduce_angles(x) -> np.ndarray:
    """Reduce angles to [0, 2π) using the exact floating remainder."""
    x = np.asarray(x, dtype=float)
    r = np.fmod(x, TWO_PI)
    r = np.where(r < 0.0, r + TWO_PI, r)
    # r + 2π can round up to exactly 2π for tiny negative inputs
    return np.where(r >= TWO_PI, 0.0, r)


def canonical_wave(wave: Sequence[int]) -> tuple[tuple[int, ...], int]:
    """Return ``(wave', sign)`` with the first nonzero entry of ``wave'`` positive.

    ``sign`` is -1 when the wave was negated, so that ``sin(w.x) = sign*sin(w'.x)``.
    """
    w = tuple(int(v) for v in wave)
    for v in w:
        if v > 0:
            return w, 1
        if v < 0:
            return tuple(-u for u in w), -1
    return w, 1


# ---------------------------------------------------------------------------
# torus and metric
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TorusModel:
    """Flat torus T^n with a constant symmetric positive-definite metric."""

    metric: np.ndarray

    def __post_init__(self):
        G = np.array(self.metric, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError(f"metric must be square, got shape {G.shape}")
        n = G.shape[0]
        if not 1 <= n <= MAX_DIMENSION:
            raise DimensionError(f"dimension must lie in [1, {MAX_DIMENSION}], got {n}")
        if not np.array_equal(G, G.T):
            raise ValueError("metric is not exactly symmetric")
        if not np.all(np.isfinite(G)):
            raise ValueError("metric has non-finite entries")
        try:
            np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            raise ValueError("metric is not positive definite") from None
        G.setflags(write=False)
        inv = np.linalg.inv(G)
        inv = 0.5 * (inv + inv.T)
        inv.setflags(write=False)
        object.__setattr__(self, "metric", G)
        object.__setattr__(self, "_inverse", inv)

    @classmethod
    def identity(cls, n: int) -> "TorusModel":
        return cls(np.eye(n))

    @classmethod
    def diagonal(cls, diag: Sequence[float]) -> "TorusModel":
        return cls(np.diag(np.asarray(diag, dtype=float)))

    @property
    def n(self) -> int:
        return self.metric.shape[0]

    @property
    def inverse(self) -> np.ndarray:
        return self._inverse

    @property
    def is_diagonal(self) -> bool:
        G = self.metric
        return bool(np.all(G[~np.eye(self.n, dtype=bool)] == 0.0))

    def norm(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(math.sqrt(v @ self.metric @ v))

    def __eq__(self, other):
        return isinstance(other, TorusModel) and np.array_equal(self.metric, other.metric)

    def __hash__(self):
        return hash(self.metric.tobytes())

    def __repr__(self):
        return f"TorusModel(metric={self.metric.tolist()!r})"


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class TrigTerm:
    """One wave ``amplitude * kind(wave . x)`` with a canonical integer wave vector."""

    wave: tuple[int, ...]
    kind: str
    amplitude: float = field(compare=False)

    @property
    def key(self):
        return (self.wave, self.kind)


class TrigPotential:
    """Finite sum of cosine/sine waves with integer wave vectors on T^n.

    Terms are canonicalized on construction: the first nonzero wave entry is
    positive (a sine term absorbs the sign into its amplitude), duplicate
    ``(wave, kind)`` pairs are merged, and terms are kept sorted by that key.
    Evaluation accumulates left to right in this canonical order, so the
    result does not depend on the order terms were supplied in.

    Examples
    --------
    >>> U = TrigPotential.from_terms(2, [(1.0, (1, 0), "cos"), (1.0, (0, 1), "cos")])
    >>> U([0.0, 0.0])
    2.0
    """

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: Iterable[TrigTerm] = ()):
        merged: dict[tuple, float] = {}
        for t in terms:
            if len(t.wave) != n:
                raise DimensionError(f"wave {t.wave} has length {len(t.wave)}, expected {n}")
            if t.kind not in KINDS:
                raise ValueError(f"unknown term kind {t.kind!r}")
            wave, sign = canonical_wave(t.wave)
            amp = float(t.amplitude)
            if t.kind == "sin":
                if not any(wave):
                    raise ValueError("a zero wave vector is only allowed with kind 'cos'")
                amp *= sign
            merged[(wave, t.kind)] = merged.get((wave, t.kind), 0.0) + amp
        self.n = int(n)
        self.terms = tuple(
            TrigTerm(w, k, a) for (w, k), a in sorted(merged.items()) if a != 0.0
        )

    @classmethod
    def from_terms(cls, n: int, terms) -> "TrigPotential":
        """Build from ``(amplitude, wave, kind)`` triples."""
        return cls(n, [TrigTerm(tuple(w), kind, amp) for amp, w, kind in terms])

    @classmethod
    def zero(cls, n: int) -> "TrigPotential":
        return cls(n, ())

    @classmethod
    def cosine_sum(cls, n: int, k=1, amplitude: float = 1.0) -> "TrigPotential":
        """``amplitude * sum_i cos(k_i x_i)``; ``k`` may be an int or a sequence."""
        ks = [int(k)] * n if np.isscalar(k) else [int(v) for v in k]
        if len(ks) != n:
            raise DimensionError(f"expected {n} wave numbers, got {len(ks)}")
        terms = []
        for i, ki in enumerate(ks):
            w = [0] * n
            w[i] = ki
            terms.append((amplitude, tuple(w), "cos"))
        return cls.from_terms(n, terms)

    @property
    def waves(self) -> np.ndarray:
        return np.array([t.wave for t in self.terms], dtype=np.int64).reshape(-1, self.n)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([t.amplitude for t in self.terms], dtype=float)

    @property
    def kind_codes(self) -> np.ndarray:
        """0 for cosine, 1 for sine (used by compiled kernels)."""
        return np.array([KINDS.index(t.kind) for t in self.terms], dtype=np.int64)

    def bounds(self) -> tuple[float, float]:
        """Crude bounds ``(-sum|a|, sum|a|)`` plus the constant term."""
        const = sum(t.amplitude for t in self.terms if not any(t.wave))
        spread = sum(abs(t.amplitude) for t in self.terms if any(t.wave))
        return const - spread, const + spread

    def scaled_waves(self, m: Sequence[int]) -> "TrigPotential":
        """Multiply every wave vector componentwise by ``m``."""
        m = [int(v) for v in m]
        if len(m) != self.n:
            raise DimensionError(f"scale vector has length {len(m)}, expected {self.n}")
        return TrigPotential(
            self.n,
            [TrigTerm(tuple(w * s for w, s in zip(t.wave, m)), t.kind, t.amplitude) for t in self.terms],
        )

    def __call__(self, x) -> float:
        return eval_potential(self, x)

    def evaluate(self, points) -> np.ndarray:
        """Evaluate at an array of points with trailing axis of length n."""
        pts = reduce_angles(points)
        if pts.shape[-1] != self.n:
            raise DimensionError(f"points have trailing size {pts.shape[-1]}, expected {self.n}")
        acc = np.zeros(pts.shape[:-1])
        for t in self.terms:
            phase = pts @ np.asarray(t.wave, dtype=float)
            acc = acc + t.amplitude * (np.cos(phase) if t.kind == "cos" else np.sin(phase))
        return acc

    def gradient(self, x) -> np.ndarray:
        x = _vector(x, self.n, "x")
        g = np.zeros(self.n)
        for t in self.terms:
            w = np.asarray(t.wave, dtype=float)
            phase = x @ w
            d = -math.sin(phase) if t.kind == "cos" else math.cos(phase)
            g += t.amplitude * d * w
        return g

    def hessian(self, x) -> np.ndarray:
        x = _vector(x, self.n, "x")
        h = np.zeros((self.n, self.n))
        for t in self.terms:
            w = np.asarray(t.wave, dtype=float)
            phase = x @ w
            d = -math.cos(phase) if t.kind == "cos" else -math.sin(phase)
            h += t.amplitude * d * np.outer(w, w)
        return h

    def to_json(self) -> list[dict]:
        return [
            {"amplitude": t.amplitude, "wave": list(t.wave), "kind": t.kind} for t in self.terms
        ]

    def __eq__(self, other):
        return isinstance(other, TrigPotential) and self.n == other.n and self.terms == other.terms and all(
            a.amplitude == b.amplitude for a, b in zip(self.terms, other.terms)
        )

    def __hash__(self):
        return hash((self.n, tuple((t.wave, t.kind, t.amplitude) for t in self.terms)))

    def __repr__(self):
        return f"TrigPotential(n={self.n}, terms={self.to_json()!r})"


def _vector(v, n: int, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape[0] != n:
        raise DimensionError(f"{name} has length {arr.shape[0]}, expected {n}")
    return arr


def eval_potential(U: TrigPotential, x) -> float:
    """Evaluate the potential at one configuration, with exact periodic reduction."""
    x = reduce_angles(_vector(x, U.n, "x"))
    acc = 0.0
    for t in U.terms:
        phase = float(x @ np.asarray(t.wave, dtype=float))
        acc += t.amplitude * (math.cos(phase) if t.kind == "cos" else math.sin(phase))
    return acc


# ---------------------------------------------------------------------------
# phase space
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhasePoint:
    """Point of T*T^n: reduced angles ``x`` and momenta ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = reduce_angles(np.asarray(self.x, dtype=float).reshape(-1))
        y = np.array(self.y, dtype=float).reshape(-1)
        if x.shape != y.shape:
            raise DimensionError(f"x has length {x.shape[0]} but y has length {y.shape[0]}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def __eq__(self, other):
        return isinstance(other, PhasePoint) and np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)

    def __hash__(self):
        return hash((self.x.tobytes(), self.y.tobytes()))

    def __repr__(self):
        return f"PhasePoint(x={self.x.tolist()}, y={self.y.tolist()})"


@dataclass(frozen=True)
class EnergyLevel:
    E: float

    def __post_init__(self):
        if not math.isfinite(self.E):
            raise ValueError(f"energy must be finite, got {self.E}")

    def __float__(self):
        return float(self.E)


def _energy(E) -> float:
    E = float(E)
    if not math.isfinite(E):
        raise ValueError(f"energy must be finite, got {E}")
    return E


def hamiltonian(model: TorusModel, U: TrigPotential, p: PhasePoint) -> float:
    """``1/2 y^T G^{-1} y + U(x)``; with the zero potential this is the geodesic Hamiltonian."""
    if p.n != model.n or U.n != model.n:
        raise DimensionError("model, potential and phase point dimensions disagree")
    y = p.y
    return 0.5 * float(y @ model.inverse @ y) + eval_potential(U, p.x)


def legendre(model: TorusModel, x, xdot) -> PhasePoint:
    """Velocity to momentum: ``y = G xdot``."""
    x = _vector(x, model.n, "x")
    xdot = _vector(xdot, model.n, "xdot")
    return PhasePoint(x, model.metric @ xdot)


def inverse_legendre(model: TorusModel, p: PhasePoint) -> np.ndarray:
    """Momentum to velocity: ``xdot = G^{-1} y``."""
    if p.n != model.n:
        raise DimensionError("model and phase point dimensions disagree")
    return np.linalg.solve(model.metric, p.y)


def jacobi_factor(U: TrigPotential, E, x) -> float:
    """Conformal factor ``E - U(x)`` of the Jacobi metric; negative outside the domain."""
    return _energy(E) - eval_potential(U, x)


def in_domain(U: TrigPotential, E, x) -> bool:
    """Whether ``x`` lies in the domain of possible motions ``{U <= E}``."""
    return eval_potential(U, x) <= _energy(E)


# ---------------------------------------------------------------------------
# systems and spec files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class System:
    """A natural system: metric plus potential on the same torus."""

    model: TorusModel
    potential: TrigPotential

    def __post_init__(self):
        if self.model.n != self.potential.n:
            raise DimensionError(
                f"metric has dimension {self.model.n} but potential has {self.potential.n}"
            )

    @property
    def n(self) -> int:
        return self.model.n

    def hamiltonian(self, p: PhasePoint) -> float:
        return hamiltonian(self.model, self.potential, p)

    def to_json(self) -> dict:
        G = self.model.metric
        metric = {"diag": np.diag(G).tolist()} if self.model.is_diagonal else {"full": G.tolist()}
        return {"dimension": self.n, "metric": metric, "potential": self.potential.to_json()}


def example3(n: int, k=1, amplitude: float = 1.0) -> System:
    """Unit metric with ``U = amplitude * sum_i cos(k_i x_i)``."""
    return System(TorusModel.identity(n), TrigPotential.cosine_sum(n, k, amplitude))


_TOP_KEYS = {"dimension", "metric", "potential"}
_TERM_KEYS = {"amplitude", "wave", "kind"}


def system_from_dict(data: dict) -> System:
    if not isinstance(data, dict):
        raise SpecError("system spec must be a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise SpecError(f"unknown keys in system spec: {sorted(unknown)}")
    missing = _TOP_KEYS - set(data) - {"potential"}
    if missing:
        raise SpecError(f"missing keys in system spec: {sorted(missing)}")
    n = data["dimension"]
    if not isinstance(n, int) or isinstance(n, bool):
        raise SpecError("dimension must be an integer")
    metric = data["metric"]
    if not isinstance(metric, dict) or len(metric) != 1 or set(metric) - {"diag", "full"}:
        raise SpecError("metric must be {'diag': [...]} or {'full': [[...]]}")
    try:
        if "diag" in metric:
            diag = [float(v) for v in metric["diag"]]
            if len(diag) != n:
                raise SpecError(f"metric diag has length {len(diag)}, expected {n}")
            model = TorusModel.diagonal(diag)
        else:
            G = np.array(metric["full"], dtype=float)
            if G.shape != (n, n):
                raise SpecError(f"metric has shape {G.shape}, expected {(n, n)}")
            model = TorusModel(G)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"invalid metric: {exc}") from exc
    terms = []
    for i, term in enumerate(data.get("potential", [])):
        if not isinstance(term, dict):
            raise SpecError(f"potential term {i} must be an object")
        unknown = set(term) - _TERM_KEYS
        if unknown:
            raise SpecError(f"unknown keys in potential term {i}: {sorted(unknown)}")
        if set(term) != _TERM_KEYS:
            raise SpecError(f"potential term {i} needs amplitude, wave and kind")
        wave = term["wave"]
        if len(wave) != n or not all(isinstance(v, int) and not isinstance(v, bool) for v in wave):
            raise SpecError(f"potential term {i}: wave must be {n} integers")
        terms.append(TrigTerm(tuple(wave), term["kind"], float(term["amplitude"])))
    try:
        potential = TrigPotential(n, terms)
    except ValueError as exc:
        raise SpecError(str(exc)) from exc
    return System(model, potential)


def load_system(path) -> System:
    """Load a system specification JSON file (UTF-8)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON: {exc}") from exc
    return system_from_dict(data)


BUNDLED_SPECS = Path(__file__).with_name("specs")


def bundled_spec(name: str) -> Path:
    """Path of a bundled spec file, e.g. ``bundled_spec("example3_n2")``."""
    path = BUNDLED_SPECS / f"{name}.json"
    if not path.exists():
        available = sorted(p.stem for p in BUNDLED_SPECS.glob("*.json"))
        raise FileNotFoundError(f"no bundled spec {name!r}; available: {available}")
    return path
