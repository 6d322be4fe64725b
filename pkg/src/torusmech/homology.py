"""Betti numbers of domains of possible motions ``{U <= E}`` on T^n.

The torus is cut into the canonical periodic cubical grid with ``r_i``
vertices along axis ``i``.  A sublevel set is approximated from inside by
the full subcomplex on the grid vertices where ``U <= E``, and homology is
computed by sparse elimination over GF(2) or GF(p).

A d-cell is addressed by ``(S, v)``: ``S`` a sorted tuple of ``d`` axis
directions and ``v`` the base vertex.  It spans ``v + sum_{i in S} t_i e_i``
with ``t`` in ``[0, 1]^d`` and its boundary is

    sum_j (-1)^j [ (S - s_j, v + e_{s_j}) - (S - s_j, v) ].
"""

from __future__ import annotations

import itertools
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .linalg import gf2_pack, is_prime, reduce_gf2, reduce_gfp
from .model import TWO_PI, TrigPotential, TrigTerm

DEFAULT_CELL_BUDGET = 2**27
BUDGET_ENV = "TORUSMECH_CELL_BUDGET"
MIN_RESOLUTION = 8
DEGENERATE_GAP = 1e-12


class BudgetExceeded(ValueError):
    """The requested grid has more top cells than the configured budget."""


class ClosureViolation(ValueError):
    """A cell is included while one of its faces is not."""


class DegenerateLevelWarning(UserWarning):
    """The energy level coincides (to 1e-12) with the potential at a grid vertex."""


def cell_budget() -> int:
    raw = os.environ.get(BUDGET_ENV)
    if raw is None:
        return DEFAULT_CELL_BUDGET
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{BUDGET_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"{BUDGET_ENV} must be positive, got {value}")
    return value


def _check_budget(shape: Sequence[int]):
    top = math.prod(shape)
    budget = cell_budget()
    if top > budget:
        raise BudgetExceeded(f"grid {tuple(shape)} has {top} top cells, budget is {budget}")


def _subsets(n: int, d: int) -> list[tuple[int, ...]]:
    return list(itertools.combinations(range(n), d))


class PeriodicCubicalComplex:
    """Subcomplex of the periodic cubical grid on T^n.

    ``occupancy[d]`` is a boolean array of shape ``(C(n, d), *shape)``; entry
    ``[s, v]`` marks the d-cell with direction subset ``subsets(d)[s]`` based
    at vertex ``v``.  The closure property is validated on construction.
    """

    def __init__(self, shape: Sequence[int], occupancy: Sequence[np.ndarray], validate: bool = True):
        self.shape = tuple(int(r) for r in shape)
        self.n = len(self.shape)
        if any(r < 3 for r in self.shape):
            raise ValueError(f"resolution must be at least 3 per axis, got {self.shape}")
        if len(occupancy) != self.n + 1:
            raise ValueError(f"expected {self.n + 1} occupancy arrays, got {len(occupancy)}")
        occ = []
        for d, arr in enumerate(occupancy):
            arr = np.asarray(arr, dtype=bool)
            want = (math.comb(self.n, d),) + self.shape
            if arr.shape != want:
                raise ValueError(f"occupancy[{d}] has shape {arr.shape}, expected {want}")
            arr = arr.copy()
            arr.setflags(write=False)
            occ.append(arr)
        self.occupancy = tuple(occ)
        if validate:
            self.validate()

    # -- constructors --------------------------------------------------------

    @classmethod
    def from_vertices(cls, active: np.ndarray) -> "PeriodicCubicalComplex":
        """Full subcomplex on the active vertices (a cell is in iff all its vertices are)."""
        active = np.asarray(active, dtype=bool)
        n = active.ndim
        levels = {(): active}
        occ = [active[None, ...]]
        for d in range(1, n + 1):
            arrs = []
            for S in _subsets(n, d):
                base = levels[S[:-1]]
                arrs.append(base & np.roll(base, -1, axis=S[-1]))
                levels[S] = arrs[-1]
            occ.append(np.stack(arrs))
        return cls(active.shape, occ, validate=False)

    @classmethod
    def full(cls, shape: Sequence[int]) -> "PeriodicCubicalComplex":
        return cls.from_vertices(np.ones(tuple(shape), dtype=bool))

    @classmethod
    def empty(cls, shape: Sequence[int]) -> "PeriodicCubicalComplex":
        return cls.from_vertices(np.zeros(tuple(shape), dtype=bool))

    # -- structure -----------------------------------------------------------

    def subsets(self, d: int) -> list[tuple[int, ...]]:
        return _subsets(self.n, d)

    @property
    def cell_counts(self) -> tuple[int, ...]:
        return tuple(int(a.sum()) for a in self.occupancy)

    @property
    def euler_characteristic(self) -> int:
        return sum((-1) ** d * c for d, c in enumerate(self.cell_counts))

    @property
    def vertices(self) -> np.ndarray:
        return self.occupancy[0][0]

    def validate(self):
        for d in range(1, self.n + 1):
            lower = {S: k for k, S in enumerate(self.subsets(d - 1))}
            for s, S in enumerate(self.subsets(d)):
                cells = self.occupancy[d][s]
                for i in S:
                    face = self.occupancy[d - 1][lower[tuple(a for a in S if a != i)]]
                    ok = face & np.roll(face, -1, axis=i)
                    if np.any(cells & ~ok):
                        bad = np.argwhere(cells & ~ok)[0]
                        raise ClosureViolation(
                            f"{d}-cell {S} at vertex {tuple(bad)} has a missing face in direction {i}"
                        )

    def issubset(self, other: "PeriodicCubicalComplex") -> bool:
        if self.shape != other.shape:
            raise ValueError("complexes live on different grids")
        return all(not np.any(a & ~b) for a, b in zip(self.occupancy, other.occupancy))

    def __eq__(self, other):
        return (
            isinstance(other, PeriodicCubicalComplex)
            and self.shape == other.shape
            and all(np.array_equal(a, b) for a, b in zip(self.occupancy, other.occupancy))
        )

    def __repr__(self):
        return f"PeriodicCubicalComplex(shape={self.shape}, cells={self.cell_counts})"

    # -- chain complex -------------------------------------------------------

    def _compact_ids(self, d: int) -> np.ndarray:
        """Map ``(subset, flat vertex)`` to a compact d-cell index, -1 if absent.

        Cells are numbered vertex-major: by flat base vertex, then subset.
        """
        occ = self.occupancy[d].reshape(len(self.subsets(d)), -1)
        order = occ.T.reshape(-1)
        ids = np.full(order.shape, -1, dtype=np.int64)
        ids[order] = np.arange(int(order.sum()))
        return ids.reshape(occ.shape[1], occ.shape[0]).T

    def boundary(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        """Boundary of the included d-cells as ``(rows, signs)`` of shape ``(count_d, 2d)``.

        Row ``j`` lists the compact (d-1)-cell indices of the faces of the
        d-cell with compact index ``j`` and the matching orientation signs.
        """
        if not 1 <= d <= self.n:
            raise ValueError(f"boundary dimension must lie in [1, {self.n}]")
        nverts = math.prod(self.shape)
        grid = np.arange(nverts).reshape(self.shape)
        shifted = [np.roll(grid, -1, axis=i).reshape(-1) for i in range(self.n)]
        lower_ids = self._compact_ids(d - 1)
        lower = {S: k for k, S in enumerate(self.subsets(d - 1))}
        subsets = self.subsets(d)
        occ = self.occupancy[d].reshape(len(subsets), -1)
        # cells in compact (vertex-major) order
        verts, subs = np.nonzero(occ.T)
        rows = np.empty((verts.size, 2 * d), dtype=np.int64)
        signs = np.empty((verts.size, 2 * d), dtype=np.int64)
        for s, S in enumerate(subsets):
            sel = subs == s
            v = verts[sel]
            for j, i in enumerate(S):
                t = lower[tuple(a for a in S if a != i)]
                sgn = 1 if j % 2 == 0 else -1
                rows[sel, 2 * j] = lower_ids[t, shifted[i][v]]
                signs[sel, 2 * j] = sgn
                rows[sel, 2 * j + 1] = lower_ids[t, v]
                signs[sel, 2 * j + 1] = -sgn
        if rows.size and rows.min() < 0:
            raise ClosureViolation(f"a {d}-cell has a face missing from the complex")
        return rows, signs


@dataclass(frozen=True)
class BettiVector:
    betti: tuple[int, ...]
    field: int

    @property
    def euler_characteristic(self) -> int:
        return sum((-1) ** d * b for d, b in enumerate(self.betti))

    def __getitem__(self, d):
        return self.betti[d]

    def __iter__(self):
        return iter(self.betti)

    def __len__(self):
        return len(self.betti)


def _parse_field(field) -> int:
    if isinstance(field, str):
        name = field.strip().upper().replace(" ", "")
        if name.startswith("GF(") and name.endswith(")"):
            name = name[3:-1]
        elif name.startswith("GF"):
            name = name[2:]
        field = int(name)
    p = int(field)
    if not is_prime(p):
        raise ValueError(f"field characteristic must be prime, got {p}")
    return p


def _column_ranks(boundaries, p: int) -> list[int]:
    """Ranks of boundary maps given as ``[(rows, signs)]`` for ``d = 1..top``.

    Dimensions are processed top-down; a (d)-cell that is the pivot of a
    reduced (d+1)-column is known to reduce to zero in ``d_d`` and skipped.
    """
    ranks = [0] * (len(boundaries) + 1)
    cleared: set = set()
    for d in range(len(boundaries), 0, -1):
        rows, signs = boundaries[d - 1]
        if p == 2:
            owner = reduce_gf2([gf2_pack(r) for r in rows], cleared)
        else:
            cols = []
            for r, sg in zip(rows, signs):
                col: dict[int, int] = {}
                for a, b in zip(r, sg):
                    col[a] = col.get(a, 0) + b
                cols.append(col)
            owner = reduce_gfp(cols, p, cleared)
        ranks[d] = len(owner)
        cleared = set(owner)
    return ranks


def direct_boundary_ranks(complex_: PeriodicCubicalComplex, field=2) -> list[int]:
    """Ranks of ``d_1 .. d_n`` by column reduction of the full boundary matrices.

    Memory grows quickly with the grid; :func:`betti` reduces the complex
    first and is the one to use beyond small examples.
    """
    p = _parse_field(field)
    bds = [tuple(a.tolist() for a in complex_.boundary(d)) for d in range(1, complex_.n + 1)]
    return _column_ranks(bds, p)


@njit(cache=True)
def _shave(face_ptr, face_idx, cof_ptr, cof_idx, comp, alive):
    """Delete cell pairs that carry a unit incidence and no fill-in.

    A pair is a cell with a single live face (coreduction) or a single live
    coface (collapse) together with that face or coface.  When no pair is
    left, one live vertex of a component without a base point is removed as
    that base point (``comp`` labels the vertices by component).  A second
    base in the same component would not be a homology class, so such
    vertices stay in the core.  Returns the number of base points;
    ``alive`` marks the remaining core.
    """
    m = alive.shape[0]
    nf = np.empty(m, np.int64)
    nc = np.empty(m, np.int64)
    # FIFO ring; breadth-first order keeps the coreduction front compact
    ring = np.empty(m, np.int64)
    queued = np.zeros(m, np.bool_)
    head = 0
    size = 0
    for c in range(m):
        nf[c] = face_ptr[c + 1] - face_ptr[c]
        nc[c] = cof_ptr[c + 1] - cof_ptr[c]
        if nf[c] == 1 or nc[c] == 1:
            ring[size] = c
            queued[c] = True
            size += 1
    nverts = comp.shape[0]
    based = np.zeros(nverts, np.bool_)
    bases = 0
    vpos = 0
    while True:
        while size > 0:
            c = ring[head]
            head = (head + 1) % m
            size -= 1
            queued[c] = False
            if not alive[c]:
                continue
            other = -1
            if nf[c] == 1:
                for k in range(face_ptr[c], face_ptr[c + 1]):
                    if alive[face_idx[k]]:
                        other = face_idx[k]
            elif nc[c] == 1:
                for k in range(cof_ptr[c], cof_ptr[c + 1]):
                    if alive[cof_idx[k]]:
                        other = cof_idx[k]
            if other < 0:
                continue
            for x in (c, other):
                alive[x] = False
                for k in range(face_ptr[x], face_ptr[x + 1]):
                    f = face_idx[k]
                    if alive[f]:
                        nc[f] -= 1
                        if not queued[f]:
                            ring[(head + size) % m] = f
                            queued[f] = True
                            size += 1
                for k in range(cof_ptr[x], cof_ptr[x + 1]):
                    g = cof_idx[k]
                    if alive[g]:
                        nf[g] -= 1
                        if not queued[g]:
                            ring[(head + size) % m] = g
                            queued[g] = True
                            size += 1
        while vpos < nverts and (not alive[vpos] or based[comp[vpos]]):
            vpos += 1
        if vpos == nverts:
            break
        based[comp[vpos]] = True
        bases += 1
        alive[vpos] = False
        for k in range(cof_ptr[vpos], cof_ptr[vpos + 1]):
            g = cof_idx[k]
            if alive[g]:
                nf[g] -= 1
                if not queued[g]:
                    ring[(head + size) % m] = g
                    queued[g] = True
                    size += 1
    return bases


def _reduced_betti(complex_: PeriodicCubicalComplex, p: int) -> tuple[int, ...]:
    n = complex_.n
    counts = complex_.cell_counts
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    bds = [complex_.boundary(d) for d in range(1, n + 1)]
    # global face lists: cells of dimension d hold 2d faces of dimension d - 1
    owner = [np.repeat(np.arange(counts[d], dtype=np.int64) + offsets[d], 2 * d) for d in range(1, n + 1)]
    faces = [rows.reshape(-1) + offsets[d - 1] for d, (rows, _) in enumerate(bds, start=1)]
    owner = np.concatenate(owner) if owner else np.empty(0, np.int64)
    faces = np.concatenate(faces) if faces else np.empty(0, np.int64)
    m = int(offsets[-1])
    face_ptr = np.zeros(m + 1, np.int64)
    face_ptr[1:] = np.cumsum(np.bincount(owner, minlength=m))
    face_idx = faces  # already grouped by owner in increasing order
    order = np.argsort(faces, kind="stable")
    cof_ptr = np.zeros(m + 1, np.int64)
    cof_ptr[1:] = np.cumsum(np.bincount(faces, minlength=m))
    cof_idx = owner[order]
    alive = np.ones(m, np.bool_)
    edges = bds[0][0] if n else np.empty((0, 2), np.int64)
    graph = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(counts[0], counts[0]))
    comp = connected_components(graph, directed=False)[1].astype(np.int64)
    bases = int(_shave(face_ptr, face_idx, cof_ptr, cof_idx, comp, alive))
    # exact reduction of whatever core is left
    core = []
    live = [alive[offsets[d]:offsets[d + 1]] for d in range(n + 1)]
    remap = [np.cumsum(a) - 1 for a in live]
    for d in range(1, n + 1):
        rows, signs = bds[d - 1]
        keep = live[d]
        r, sg = rows[keep], signs[keep]
        mask = live[d - 1][r]
        core.append((
            [remap[d - 1][row[mk]].tolist() for row, mk in zip(r, mask)],
            [s_[mk].tolist() for s_, mk in zip(sg, mask)],
        ))
    ranks = _column_ranks(core, p) + [0]
    sizes = [int(a.sum()) for a in live]
    betti = [sizes[d] - ranks[d] - ranks[d + 1] for d in range(n + 1)]
    betti[0] += bases
    return tuple(betti)


def boundary_ranks(complex_: PeriodicCubicalComplex, field=2) -> list[int]:
    """Ranks of the boundary maps ``d_1 .. d_n`` (index 0 is ``d_0 = 0``), from the Betti numbers."""
    b = betti(complex_, field).betti
    counts = complex_.cell_counts
    ranks = [0] * (complex_.n + 2)
    for d in range(complex_.n, 0, -1):
        ranks[d] = counts[d] - b[d] - ranks[d + 1]
    return ranks[: complex_.n + 1]


def betti(complex_: PeriodicCubicalComplex, field=2) -> BettiVector:
    """Betti numbers over GF(field).

    The complex is first shaved by unit-incidence pair deletions (which keep
    homology over every field), one base vertex per component is removed,
    and the remaining core is column-reduced exactly.
    """
    p = _parse_field(field)
    complex_.validate()
    return BettiVector(_reduced_betti(complex_, p), p)


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------


def _shape(r, n: int) -> tuple[int, ...]:
    shape = (int(r),) * n if np.isscalar(r) else tuple(int(v) for v in r)
    if len(shape) != n:
        raise ValueError(f"resolution {r!r} does not match dimension {n}")
    if any(v < MIN_RESOLUTION for v in shape):
        raise ValueError(f"resolution must be at least {MIN_RESOLUTION} per axis, got {shape}")
    return shape


def grid_values(U: TrigPotential, shape: Sequence[int]) -> np.ndarray:
    """Potential at the vertices ``x_j = 2 pi j / r`` of the grid."""
    axes = [TWO_PI * np.arange(r) / r for r in shape]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return U.evaluate(pts)


def rasterize_sublevel(U: TrigPotential, E: float, r) -> PeriodicCubicalComplex:
    """Full cubical subcomplex on grid vertices with ``U(x) <= E``."""
    shape = _shape(r, U.n)
    _check_budget(shape)
    values = grid_values(U, shape)
    gap = np.abs(values - E)
    if np.any(gap < DEGENERATE_GAP):
        warnings.warn(
            f"energy {E!r} lies within {DEGENERATE_GAP} of the potential at "
            f"{int(np.sum(gap < DEGENERATE_GAP))} grid vertices; ties count as inside. "
            "Consider perturbing the energy by 1e-6.",
            DegenerateLevelWarning,
            stacklevel=2,
        )
    return PeriodicCubicalComplex.from_vertices(values <= E)


def negate(U: TrigPotential) -> TrigPotential:
    return TrigPotential(U.n, [TrigTerm(t.wave, t.kind, -t.amplitude) for t in U.terms])


def rasterize_superlevel(U: TrigPotential, E: float, r) -> PeriodicCubicalComplex:
    """``{U >= E}``, i.e. the sublevel set of ``-U`` at ``-E``."""
    return rasterize_sublevel(negate(U), -E, r)


# ---------------------------------------------------------------------------
# gluing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GluingSpec:
    """Number of copies of the fundamental block along each axis."""

    copies: tuple[int, ...]

    def __post_init__(self):
        copies = tuple(int(m) for m in self.copies)
        if any(m < 1 for m in copies):
            raise ValueError(f"copies per axis must be >= 1, got {copies}")
        object.__setattr__(self, "copies", copies)

    @property
    def blocks(self) -> int:
        return math.prod(self.copies)


def _copies(spec) -> tuple[int, ...]:
    return spec.copies if isinstance(spec, GluingSpec) else GluingSpec(tuple(spec)).copies


def glue(U: TrigPotential, spec) -> TrigPotential:
    """Potential of the building made of ``m_i`` blocks per axis, rescaled to the standard torus."""
    return U.scaled_waves(_copies(spec))


def glue_complex(complex_: PeriodicCubicalComplex, spec) -> PeriodicCubicalComplex:
    """Tile the occupancy ``m_i`` times along axis ``i`` and re-identify opposite faces."""
    m = _copies(spec)
    if len(m) != complex_.n:
        raise ValueError(f"gluing spec has length {len(m)}, expected {complex_.n}")
    shape = tuple(r * k for r, k in zip(complex_.shape, m))
    _check_budget(shape)
    occ = [np.tile(a, (1,) + m) for a in complex_.occupancy]
    return PeriodicCubicalComplex(shape, occ, validate=False)


# ---------------------------------------------------------------------------
# independent checks
# ---------------------------------------------------------------------------


class UnionFind:
    """Disjoint sets with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, i: int) -> int:
        parent = self.parent
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(self, i: int, j: int) -> bool:
        a, b = self.find(i), self.find(j)
        if a == b:
            return False
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        return True


def component_count(complex_: PeriodicCubicalComplex) -> int:
    """Connected components of the 1-skeleton, by union-find on vertices and edges."""
    verts = complex_.vertices.reshape(-1)
    grid = np.arange(verts.size).reshape(complex_.shape)
    uf = UnionFind(verts.size)
    for s, (i,) in enumerate(complex_.subsets(1)):
        edges = complex_.occupancy[1][s].reshape(-1)
        nbr = np.roll(grid, -1, axis=i).reshape(-1)
        for a, b in zip(np.flatnonzero(edges).tolist(), nbr[edges].tolist()):
            uf.union(a, b)
    return len({uf.find(int(v)) for v in np.flatnonzero(verts)})


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScanRow:
    E: float
    betti: BettiVector
    cells: tuple[int, ...]
    resolution: tuple[int, ...]
    wall_ms: float

    @property
    def field(self) -> int:
        return self.betti.field


def _scan_one(args) -> ScanRow:
    U, E, shape, p = args
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateLevelWarning)
        cx = rasterize_sublevel(U, E, shape)
    b = betti(cx, p)
    return ScanRow(float(E), b, cx.cell_counts, shape, 1000.0 * (time.perf_counter() - t0))


def betti_scan(U: TrigPotential, energies: Sequence[float], r, field=2, workers: int = 1) -> list[ScanRow]:
    """Betti vectors of ``{U <= E}`` for a sorted list of energies.

    Raises ``ValueError`` if the energies are unsorted or if the rasterized
    complexes fail to be nested.
    """
    energies = [float(E) for E in energies]
    if any(a > b for a, b in zip(energies, energies[1:])):
        raise ValueError("energies must be sorted ascending")
    shape = _shape(r, U.n)
    _check_budget(shape)
    p = _parse_field(field)
    values = grid_values(U, shape)
    for E in energies:
        if np.any(np.abs(values - E) < DEGENERATE_GAP):
            warnings.warn(f"energy {E!r} collides with a grid value", DegenerateLevelWarning, stacklevel=2)
    prev = None
    for E in energies:
        active = values <= E
        if prev is not None and np.any(prev & ~active):
            raise ValueError(f"sublevel complexes are not nested at E={E}")
        prev = active
    jobs = [(U, E, shape, p) for E in energies]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_scan_one, jobs))
    return [_scan_one(job) for job in jobs]
