"""Verification battery for the cosine-sum potential ``U = sum_i cos(k x_i)``.

Checks, for each wave number ``k``:

* the separable integrals Poisson-commute with each other and with ``H``,
  and sum to ``H``;
* the momentum map is non-degenerate;
* below the first saddle level the domain ``{U <= E}`` is ``k^n`` contractible
  pieces (Betti numbers and an independent union-find count);
* between the first and second saddle levels ``beta_1 = (n-1) k^n + 1``;
* the Euler characteristic identity holds on every complex.

Across the ``k`` list ``beta_1`` in the second window must grow strictly.
Energy windows come from the critical values of the factors, so they adapt
to ``k`` and ``n``.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

from .homology import (
    DegenerateLevelWarning,
    ScanRow,
    betti,
    betti_scan,
    component_count,
    rasterize_sublevel,
    rasterize_superlevel,
)
from .model import System, example3
from .observables import hamiltonian_observable, involution_report, separable_integrals
from .strata import factor_portraits, verify_nondegeneracy

PASS, FAIL, INFO, EMPTY = "PASS", "FAIL", "INFO", "EMPTY"


def critical_levels(system: System) -> list[float]:
    """Critical values of a separable potential: sums of factor critical values."""
    per_factor = [sorted({round(v, 12) for v in f.critical_values}) for f in factor_portraits(system)]
    return sorted({round(sum(c), 12) for c in itertools.product(*per_factor)})


def morse_windows(system: System) -> list[tuple[float, float]]:
    levels = critical_levels(system)
    return list(zip(levels, levels[1:]))


def window_energy(window: tuple[float, float], fraction: float) -> float:
    lo, hi = window
    return lo + fraction * (hi - lo)


@dataclass
class Check:
    name: str
    k: int | None
    expected: object
    observed: object
    status: str

    def to_json(self):
        return {"name": self.name, "k": self.k, "expected": self.expected, "observed": self.observed,
                "status": self.status}


@dataclass
class BatteryReport:
    n: int
    ks: list[int]
    resolution: int
    field: int
    fraction: float
    seed: int
    checks: list[Check] = field(default_factory=list)
    info: list[Check] = field(default_factory=list)
    scans: dict = field(default_factory=dict)  # k -> list[ScanRow]

    @property
    def passed(self) -> bool:
        return all(c.status == PASS for c in self.checks)

    def table(self) -> list[Check]:
        return self.checks + self.info

    def to_json(self) -> dict:
        """Everything except timings."""
        return {
            "n": self.n,
            "k": self.ks,
            "resolution": self.resolution,
            "field": self.field,
            "fraction": self.fraction,
            "seed": self.seed,
            "passed": self.passed,
            "checks": [c.to_json() for c in self.checks],
            "info": [c.to_json() for c in self.info],
            "scans": {
                str(k): [
                    {"E": r.E, "betti": list(r.betti.betti), "cells": list(r.cells)} for r in rows
                ]
                for k, rows in self.scans.items()
            },
        }


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


def _quiet_sublevel(U, E, r):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateLevelWarning)
        return rasterize_sublevel(U, E, r)


def verify_example3(
    n: int,
    ks: Sequence[int],
    r: int,
    field: int = 2,
    fraction: float = 0.25,
    seed: int = 0,
    samples: int = 5,
    extra_energies: Sequence[float] = (),
    workers: int = 1,
) -> BatteryReport:
    if n not in (2, 3):
        raise ValueError(f"the battery supports n = 2 or 3, got {n}")
    ks = [int(k) for k in ks]
    if not ks or min(ks) < 1:
        raise ValueError("k list must contain positive integers")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly inside (0, 1)")
    rep = BatteryReport(n, ks, int(r), int(field), float(fraction), int(seed))
    second_b1 = []
    for k in ks:
        system = example3(n, k)
        U = system.potential

        F = separable_integrals(system)
        H = hamiltonian_observable(system)
        inv = involution_report(F, H)
        rep.checks.append(Check("involution", k, "all brackets zero", "zero" if inv.passed else inv.failures(),
                                _status(inv.passed)))
        total = F[0]
        for f in F[1:]:
            total = total + f
        rep.checks.append(Check("sum_of_integrals", k, "sum F_i = H", "equal" if total == H else "differ",
                                _status(total == H)))

        nd = verify_nondegeneracy(system, samples_per_cell=samples, seed=seed)
        rep.checks.append(Check("nondegeneracy", k, "PASS", "PASS" if nd.passed else nd.failures(),
                                _status(nd.passed)))

        windows = morse_windows(system)
        energies = [window_energy(w, fraction) for w in windows]
        rows = betti_scan(U, energies, r, field=field, workers=workers)
        rep.scans[k] = rows

        bottom = rows[0]
        want = [k**n] + [0] * n
        rep.checks.append(Check("bottom_window_betti", k, want, list(bottom.betti.betti),
                                _status(list(bottom.betti.betti) == want)))
        uf = component_count(_quiet_sublevel(U, bottom.E, r))
        rep.checks.append(Check("bottom_window_union_find", k, k**n, uf, _status(uf == k**n)))

        second = rows[1]
        b1 = second.betti.betti[1]
        second_b1.append(b1)
        want_b1 = (n - 1) * k**n + 1
        rep.checks.append(Check("second_window_beta_1", k, want_b1, b1, _status(b1 == want_b1)))

        for row in rows:
            chi_cells = sum((-1) ** d * c for d, c in enumerate(row.cells))
            chi_betti = row.betti.euler_characteristic
            rep.checks.append(Check(f"euler_identity_E={row.E!r}", k, chi_cells, chi_betti,
                                    _status(chi_cells == chi_betti)))

        # thresholds n-2 and n-3 as literally stated, in both orientations
        lo_U = min(windows[0])
        for E in (n - 2, n - 3):
            if any(abs(E - c) < 1e-12 for c in critical_levels(system)):
                rep.info.append(Check(f"threshold_E={E}", k, "-", "critical level, not sampled", INFO))
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateLevelWarning)
                sub = betti(rasterize_sublevel(U, E, r), field).betti
                sup = betti(rasterize_superlevel(U, E, r), field).betti
            rep.info.append(Check(f"threshold_sublevel_E={E}", k, "-", list(sub), INFO))
            rep.info.append(Check(f"threshold_superlevel_E={E}", k, "-", list(sup), INFO))

        for E in extra_energies:
            b = betti(_quiet_sublevel(U, float(E), r), field).betti
            status = EMPTY if float(E) < lo_U else INFO
            rep.info.append(Check(f"extra_E={float(E)!r}", k, "-", list(b), status))

    if len(ks) > 1:
        grows = all(a < b for a, b in zip(second_b1, second_b1[1:]))
        rep.checks.append(Check("beta_1_strict_growth", None, "strictly increasing", second_b1, _status(grows)))
    return rep
