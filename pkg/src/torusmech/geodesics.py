"""Minimal closed geodesics in a free homotopy class of the torus.

A loop is stored as ``N`` lifted points ``q_0..q_{N-1}``; the closing point is
``q_N = q_0 + 2*pi*m``, so the class is fixed by construction.  The Jacobi
length is discretized with the midpoint rule

    L(q) = sum_j sqrt(E - U((q_j + q_{j+1}) / 2)) * |q_{j+1} - q_j|_G

and minimized by a damped Newton iteration (analytic gradient and sparse
Hessian, backtracking line search) from several starting loops.  Each start
is first solved on a coarse loop, then refined by repeatedly inserting
midpoints and re-solving until ``N`` points are reached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded
from scipy.optimize import minimize

from .model import TWO_PI, DimensionError, System, TorusModel, TrigPotential, reduce_angles

SPACING_WEIGHT = 1e-3
DEFAULT_MARGIN = 1e-6
DEFAULT_RESTARTS = 8
DEFAULT_SEED = 0
MAX_K = 8
COARSE_N = 32


class DegenerateEnergy(ValueError):
    """The Jacobi metric is degenerate: ``E <= max U + margin``."""


class ZeroClass(ValueError):
    pass


@dataclass(frozen=True)
class HomotopyClass:
    """Free homotopy class ``m`` in ``pi_1(T^n) = Z^n``."""

    m: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "m", tuple(int(v) for v in self.m))

    @classmethod
    def parse(cls, text: str) -> "HomotopyClass":
        return cls(tuple(int(v) for v in text.split(",")))

    @property
    def n(self) -> int:
        return len(self.m)

    @property
    def is_zero(self) -> bool:
        return not any(self.m)

    @property
    def primitive(self) -> bool:
        return not self.is_zero and reduce(math.gcd, (abs(v) for v in self.m)) == 1

    def __mul__(self, k: int) -> "HomotopyClass":
        return HomotopyClass(tuple(int(k) * v for v in self.m))

    __rmul__ = __mul__

    def vector(self) -> np.ndarray:
        return np.array(self.m, dtype=float)

    def __str__(self):
        return ",".join(str(v) for v in self.m)


def _as_class(m) -> HomotopyClass:
    return m if isinstance(m, HomotopyClass) else HomotopyClass(tuple(m))


@dataclass
class GeodesicSearchResult:
    """Best loop found for one class.

    ``loop`` holds the ``N`` lifted points; ``closing_point`` is
    ``loop[0] + 2*pi*m``.  ``length`` is the Jacobi length without the
    spacing term.
    """

    cls: HomotopyClass
    energy: float
    loop: np.ndarray
    length: float
    converged: bool
    restarts: int
    best_restart: int
    seed: int
    gradient_norm: float
    iterations: int
    restart_lengths: list[float] = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.loop.shape[0]

    @property
    def closing_point(self) -> np.ndarray:
        return self.loop[0] + TWO_PI * self.cls.vector()

    def lift_class(self) -> tuple[int, ...]:
        disp = self.closing_point - self.loop[0]
        return tuple(int(v) for v in np.rint(disp / TWO_PI))

    def to_json(self) -> dict:
        return {
            "class": list(self.cls.m),
            "energy": self.energy,
            "N": self.N,
            "length": self.length,
            "converged": self.converged,
            "restarts": self.restarts,
            "best_restart": self.best_restart,
            "seed": self.seed,
            "gradient_norm": self.gradient_norm,
            "iterations": self.iterations,
            "restart_lengths": list(self.restart_lengths),
        }


def flat_minimal_length(model: TorusModel, m) -> float:
    """Length ``2*pi*sqrt(m^T G m)`` of the straight closed geodesic in class ``m``."""
    cls = _as_class(m)
    if cls.n != model.n:
        raise DimensionError(f"class has length {cls.n}, expected {model.n}")
    if cls.is_zero:
        raise ZeroClass("the zero class has no closed geodesic of positive length")
    v = cls.vector()
    return TWO_PI * math.sqrt(float(v @ model.metric @ v))


def potential_range(U: TrigPotential, resolution: int | None = None) -> tuple[float, float]:
    """Numerical ``(min U, max U)`` from a grid followed by local refinement.

    The result never leaves the crude bounds ``U.bounds()``.
    """
    lo_b, hi_b = U.bounds()
    if not any(any(t.wave) for t in U.terms):
        return lo_b, hi_b
    n = U.n
    r = resolution or max(8, int(round(2 ** (20 / n))))
    axes = np.arange(r) * (TWO_PI / r)
    grid = np.stack(np.meshgrid(*([axes] * n), indexing="ij"), axis=-1).reshape(-1, n)
    vals = U.evaluate(grid)
    out = []
    for sign in (1.0, -1.0):
        order = np.argsort(sign * vals)[:4]
        best = sign * vals[order[0]]
        for i in order:
            res = minimize(lambda x: sign * U(x), grid[i], jac=lambda x: sign * U.gradient(x), method="BFGS",
                           options={"gtol": 1e-13})
            best = min(best, float(res.fun))
        out.append(sign * best)
    return max(out[0], lo_b), min(out[1], hi_b)


def conformal_bounds(system: System, E: float, m) -> tuple[float, float]:
    """Two-sided bounds ``[sqrt(E - max U), sqrt(E - min U)] * flat length``."""
    lo, hi = potential_range(system.potential)
    flat = flat_minimal_length(system.model, m)
    return math.sqrt(max(E - hi, 0.0)) * flat, math.sqrt(E - lo) * flat


# ---------------------------------------------------------------------------
# discrete functional
# ---------------------------------------------------------------------------


class LoopFunctional:
    """Midpoint-rule Jacobi length of closed loops in a fixed class.

    ``spacing`` is the weight ``w`` of the term ``w * N / (2 L0) * sum |dq_j|_G^2``
    (``L0`` the flat length), which only acts along the loop.  On coarse
    loops the midpoint rule rewards uneven spacing wherever ``sqrt(E - U)``
    is convex, so the weight is raised to ``kappa * L0**2 / (2 N**2)`` when
    that is larger, ``kappa`` being a bound on the second derivative of
    ``sqrt(E - U)`` along unit directions.
    """

    def __init__(self, system: System, E: float, m, N: int, spacing: float = SPACING_WEIGHT):
        self.system = system
        self.E = float(E)
        self.cls = _as_class(m)
        if N < 3:
            raise ValueError("need at least 3 loop points")
        self.N = int(N)
        self.n = system.n
        self.G = system.model.metric
        self.shift = TWO_PI * self.cls.vector()
        self.flat = flat_minimal_length(system.model, self.cls)
        self.spacing = max(float(spacing), self._curvature_bound(system, self.E) * self.flat**2 / (2.0 * self.N**2))
        self._c = self.spacing * self.N / (2.0 * self.flat)
        pot = system.potential
        self._w = pot.waves.astype(float)
        self._a = pot.amplitudes
        self._sin = pot.kind_codes == 1

    @staticmethod
    def _curvature_bound(system: System, E: float) -> float:
        pot = system.potential
        if not len(pot.terms):
            return 0.0
        Ginv = system.model.inverse
        w = pot.waves.astype(float)
        wn = np.sqrt(np.einsum("ta,ab,tb->t", w, Ginv, w))
        a = np.abs(pot.amplitudes)
        s1, s2 = float(a @ wn), float(a @ wn**2)
        top = pot.bounds()[1]
        if E <= top:
            top = potential_range(pot)[1]
        phi = math.sqrt(max(E - top, 1e-300))
        return s2 / (2.0 * phi) + s1**2 / (4.0 * phi**3)

    # pieces ---------------------------------------------------------------

    def _segments(self, q):
        nxt = np.roll(q, -1, axis=0)
        nxt[-1] += self.shift
        return nxt - q, 0.5 * (q + nxt)

    def _potential(self, mid, order):
        phase = reduce_angles(mid) @ self._w.T
        c, s = np.cos(phase), np.sin(phase)
        val_b = np.where(self._sin, s, c)
        d1_b = np.where(self._sin, c, -s)
        U = val_b @ self._a
        if order == 0:
            return U
        dU = (d1_b * self._a) @ self._w
        if order == 1:
            return U, dU
        d2_b = -val_b * self._a
        ddU = np.einsum("jt,ta,tb->jab", d2_b, self._w, self._w)
        return U, dU, ddU

    def _factor(self, U):
        f2 = self.E - U
        if np.any(f2 <= 0.0):
            raise DegenerateEnergy("loop left the region where E > U")
        return np.sqrt(f2)

    # public ---------------------------------------------------------------

    def length(self, q) -> float:
        """Jacobi length of the loop (no spacing term)."""
        d, mid = self._segments(np.asarray(q, dtype=float))
        ell = np.sqrt(np.einsum("ja,ab,jb->j", d, self.G, d))
        return float(math.fsum(self._factor(self._potential(mid, 0)) * ell))

    def value(self, q) -> float:
        q = np.asarray(q, dtype=float)
        d, mid = self._segments(q)
        sq = np.einsum("ja,ab,jb->j", d, self.G, d)
        if not np.all(sq > 0.0):
            return math.inf
        L = math.fsum(self._factor(self._potential(mid, 0)) * np.sqrt(sq))
        return float(L + self._c * math.fsum(sq))

    def gradient(self, q, include_spacing: bool = True) -> np.ndarray:
        """Gradient with respect to the ``(N, n)`` loop points."""
        q = np.asarray(q, dtype=float)
        d, mid = self._segments(q)
        Gd = d @ self.G
        ell = np.sqrt(np.einsum("ja,ja->j", d, Gd))
        U, dU = self._potential(mid, 1)
        phi = self._factor(U)
        dphi = -dU / (2.0 * phi)[:, None]
        u = Gd / ell[:, None]
        half = 0.5 * dphi * ell[:, None]
        tang = phi[:, None] * u
        if include_spacing:
            tang = tang + 2.0 * self._c * Gd
        # segment j has left end q_j and right end q_{j+1}
        g = (half - tang) + np.roll(half + tang, 1, axis=0)
        return g

    def hessian(self, q) -> sp.csc_matrix:
        """Sparse Hessian (spacing term included) in the flattened point order."""
        q = np.asarray(q, dtype=float)
        N, n = self.N, self.n
        d, mid = self._segments(q)
        Gd = d @ self.G
        ell = np.sqrt(np.einsum("ja,ja->j", d, Gd))
        U, dU, ddU = self._potential(mid, 2)
        phi = self._factor(U)
        dphi = -dU / (2.0 * phi)[:, None]
        ddphi = -ddU / (2.0 * phi)[:, None, None] - np.einsum("ja,jb->jab", dU, dU) / (4.0 * phi**3)[:, None, None]
        u = Gd / ell[:, None]
        Hmm = ell[:, None, None] * ddphi
        Hmd = np.einsum("ja,jb->jab", dphi, u)
        Hdd = (phi / ell)[:, None, None] * (self.G[None] - np.einsum("ja,jb->jab", u, u))
        Hdd = Hdd + 2.0 * self._c * self.G[None]
        # (m, d) -> (a, b) with m = (a + b)/2, d = b - a
        Haa = 0.25 * Hmm - 0.5 * (Hmd + Hmd.transpose(0, 2, 1)) + Hdd
        Hbb = 0.25 * Hmm + 0.5 * (Hmd + Hmd.transpose(0, 2, 1)) + Hdd
        Hab = 0.25 * Hmm + 0.5 * Hmd - 0.5 * Hmd.transpose(0, 2, 1) - Hdd
        left = np.arange(N)
        right = (left + 1) % N
        rows, cols, vals = [], [], []
        ia, ib = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        for blocks, r_pt, c_pt in ((Haa, left, left), (Hbb, right, right), (Hab, left, right)):
            rr = r_pt[:, None, None] * n + ia[None]
            cc = c_pt[:, None, None] * n + ib[None]
            rows += [rr.ravel(), cc.ravel()] if blocks is Hab else [rr.ravel()]
            cols += [cc.ravel(), rr.ravel()] if blocks is Hab else [cc.ravel()]
            vals += [blocks.ravel(), blocks.ravel()] if blocks is Hab else [blocks.ravel()]
        H = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N * n, N * n)
        )
        return H.tocsc()

    def straight_loop(self, offset=None) -> np.ndarray:
        x0 = np.zeros(self.n) if offset is None else np.asarray(offset, dtype=float)
        t = np.arange(self.N)[:, None] / self.N
        return x0[None, :] + t * self.shift[None, :]


def loop_gradient(system: System, E: float, m, q, include_spacing: bool = False) -> np.ndarray:
    """Analytic gradient of the discrete Jacobi length at loop points ``q``."""
    q = np.asarray(q, dtype=float)
    return LoopFunctional(system, E, m, q.shape[0]).gradient(q, include_spacing=include_spacing)


def discrete_jacobi_length(system: System, E: float, m, q) -> float:
    q = np.asarray(q, dtype=float)
    return LoopFunctional(system, E, m, q.shape[0]).length(q)


# ---------------------------------------------------------------------------
# minimization
# ---------------------------------------------------------------------------


def _interleave(N: int) -> np.ndarray:
    """Point order 0, N-1, 1, N-2, ... which keeps cyclic neighbours within 3 slots."""
    order = np.empty(N, dtype=np.int64)
    order[0::2] = np.arange((N + 1) // 2)
    order[1::2] = N - 1 - np.arange(N // 2)
    return order


class _BandedSolver:
    """Cholesky solves of ``H + mu I`` in an interleaved, banded point order."""

    def __init__(self, N: int, n: int):
        pts = _interleave(N)
        self.perm = (pts[:, None] * n + np.arange(n)[None, :]).ravel()
        self.inv = np.empty_like(self.perm)
        self.inv[self.perm] = np.arange(self.perm.size)
        self.width = 4 * n - 1

    def factor(self, H: sp.spmatrix, mu: float):
        A = H.tocoo()
        i, j = self.inv[A.row], self.inv[A.col]
        keep = i >= j
        ab = np.zeros((self.width + 1, H.shape[0]))
        np.add.at(ab, (i[keep] - j[keep], j[keep]), A.data[keep])
        ab[0] += mu
        return cholesky_banded(ab, lower=True)

    def solve(self, c, rhs):
        out = np.empty_like(rhs)
        out[self.perm] = cho_solve_banded((c, True), rhs[self.perm])
        return out


def _newton(fun: LoopFunctional, q, tol_scale: float, max_iter: int):
    """Levenberg-damped Newton with Armijo backtracking.  Returns (q, converged, gnorm, iters).

    The damping is raised until ``H + mu I`` is positive definite, so every
    step is a descent direction of a convex model.
    """
    shape = q.shape
    solver = _BandedSolver(fun.N, fun.n)
    J = fun.value(q)
    if not math.isfinite(J):
        return q, False, math.inf, 0
    g = fun.gradient(q)
    mu = 1e-3
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm < 1e-8 * tol_scale:
            return q, True, gnorm, it - 1
        H = fun.hessian(q)
        while True:
            try:
                c = solver.factor(H, mu)
                break
            except LinAlgError:
                mu = max(mu * 10.0, 1e-8)
        step = -solver.solve(c, g.ravel()).reshape(shape)
        slope = float(step.ravel() @ g.ravel())
        t = 1.0
        accepted = False
        for _ in range(60):
            trial = q + t * step
            try:
                Jt = fun.value(trial)
            except DegenerateEnergy:
                t *= 0.5
                continue
            if Jt <= J + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no decrease representable in floating point
            return q, False, gnorm, it
        q, J = trial, Jt
        g = fun.gradient(q)
        mu = max(mu * (0.3 if t == 1.0 else 3.0), 1e-12)
    gnorm = float(np.max(np.abs(g)))
    return q, gnorm < 1e-8 * tol_scale, gnorm, max_iter


def _ladder(N: int) -> list[int]:
    """Point counts ``N / 2**s, ..., N / 2, N`` stopping at or above ``COARSE_N``."""
    levels = [N]
    while levels[-1] % 2 == 0 and levels[-1] // 2 >= COARSE_N:
        levels.append(levels[-1] // 2)
    return levels[::-1]


def _prolong(q, shift):
    """Double the point count by inserting segment midpoints."""
    nxt = np.roll(q, -1, axis=0)
    nxt[-1] += shift
    out = np.empty((2 * q.shape[0], q.shape[1]))
    out[0::2] = q
    out[1::2] = 0.5 * (q + nxt)
    return out


def _solve_start(funs, q, max_iter):
    """Coarse-to-fine Newton solves; a failed level skips the remaining solves."""
    ok, gnorm, total = True, math.inf, 0
    for j, fun in enumerate(funs):
        if j:
            q = _prolong(q, fun.shift)
        if ok:
            q, ok, gnorm, iters = _newton(fun, q, fun.length(q) / fun.N, max_iter)
            total += iters
    return q, ok, gnorm, total


def _start_loop(fun: LoopFunctional, rng: np.random.Generator, index: int) -> np.ndarray:
    if index == 0:
        return fun.straight_loop()
    q = fun.straight_loop(rng.uniform(0.0, TWO_PI, fun.n))
    t = TWO_PI * np.arange(fun.N) / fun.N
    for h in (1, 2, 3):
        a, b = rng.normal(0.0, 0.3 / h, (2, fun.n))
        q = q + np.outer(np.sin(h * t), a) + np.outer(np.cos(h * t), b)
    return q


def jacobi_minimal_geodesic(
    system: System,
    E: float,
    m,
    N: int = 256,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = DEFAULT_SEED,
    margin: float = DEFAULT_MARGIN,
    max_iter: int = 200,
    spacing: float = SPACING_WEIGHT,
) -> GeodesicSearchResult:
    """Shortest closed loop in class ``m`` for the Jacobi metric ``(E - U) G``.

    Restart 0 starts from the straight loop through the origin; the others
    start from shifted straight loops with random low-frequency
    perturbations drawn from ``seed``.  Starts are built and solved on the
    coarsest loop of the halving ladder ``N, N/2, ...`` (down to
    ``COARSE_N`` points) and refined level by level.  The shortest converged loop wins,
    ties going to the lowest restart index; if none converged the shortest
    loop is returned with ``converged=False``.
    """
    cls = _as_class(m)
    if cls.is_zero:
        raise ZeroClass("the zero class has no closed geodesic of positive length")
    if cls.n != system.n:
        raise DimensionError(f"class has length {cls.n}, expected {system.n}")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    E = float(E)
    _, top = potential_range(system.potential)
    if E <= top + margin:
        raise DegenerateEnergy(f"E = {E} does not exceed max U + margin = {top + margin}")
    funs = [LoopFunctional(system, E, cls, level, spacing=spacing) for level in _ladder(N)]
    rng = np.random.default_rng(seed)
    runs = []
    for i in range(restarts):
        q, ok, gnorm, iters = _solve_start(funs, _start_loop(funs[0], rng, i), max_iter)
        try:
            L = funs[-1].length(q)
        except DegenerateEnergy:
            L, ok = math.inf, False
        runs.append((L, ok, gnorm, iters, q))
    lengths = [r[0] for r in runs]
    pool = [i for i, r in enumerate(runs) if r[1]] or list(range(restarts))
    best = min(pool, key=lambda i: (lengths[i], i))
    L, ok, gnorm, iters, q = runs[best]
    return GeodesicSearchResult(
        cls=cls,
        energy=E,
        loop=q,
        length=L,
        converged=ok,
        restarts=restarts,
        best_restart=best,
        seed=seed,
        gradient_norm=gnorm,
        iterations=iters,
        restart_lengths=lengths,
    )


@dataclass(frozen=True)
class DkRow:
    k: int
    N: int
    length: float
    d_k: float
    converged: bool


@dataclass
class DkTable:
    cls: HomotopyClass
    energy: float
    rows: list[DkRow]

    @property
    def argmin(self) -> int:
        return min(self.rows, key=lambda r: (r.d_k, r.k)).k

    def lengths(self) -> dict[int, float]:
        return {r.k: r.length for r in self.rows}

    def subadditivity_violations(self, tol: float = 1e-6) -> list[tuple[int, int, float]]:
        """Pairs ``(j, k)`` with ``L_{(j+k)a} > L_{ja} + L_{ka} + tol``."""
        Ls = self.lengths()
        bad = []
        for j in Ls:
            for k in Ls:
                if j <= k and j + k in Ls and Ls[j + k] > Ls[j] + Ls[k] + tol:
                    bad.append((j, k, Ls[j + k] - Ls[j] - Ls[k]))
        return bad

    def to_json(self) -> dict:
        return {
            "class": list(self.cls.m),
            "energy": self.energy,
            "argmin": self.argmin,
            "rows": [r.__dict__ for r in self.rows],
        }


def d_k_scan(
    system: System,
    E: float,
    alpha,
    k_max: int = 4,
    N_per_k: int = 128,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = DEFAULT_SEED,
) -> DkTable:
    """``L_{k alpha}`` and ``d_k = L_{k alpha} / k`` for ``k = 1..k_max`` with ``N = k * N_per_k``."""
    cls = _as_class(alpha)
    if not cls.primitive:
        raise ValueError(f"class {cls} is not primitive")
    if not 1 <= k_max <= MAX_K:
        raise ValueError(f"k_max must be in 1..{MAX_K}")
    rows = []
    for k in range(1, k_max + 1):
        res = jacobi_minimal_geodesic(system, E, k * cls, N=k * N_per_k, restarts=restarts, seed=seed)
        rows.append(DkRow(k, k * N_per_k, res.length, res.length / k, res.converged))
    return DkTable(cls, float(E), rows)
