"""Command-line entry point.

Exit codes: 0 pass, 1 a scientific check failed, 2 usage, configuration or
output error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import battery, geodesics, homology, plotting, report
from .dynamics import DEFAULT_METHOD, METHODS, check_confinement, energy_drift, integral_drift, integrate
from .model import BUNDLED_SPECS, DimensionError, PhasePoint, SpecError, System, load_system
from .observables import NonSeparable, hamiltonian_observable, involution_report, separable_integrals
from .strata import build_cell_complex, verify_nondegeneracy

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _energy_range(text: str) -> list[float]:
    """``lo:hi:count`` -> evenly spaced energies."""
    try:
        lo, hi, count = text.split(":")
        return [float(v) for v in np.linspace(float(lo), float(hi), int(count))]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:count, got {text!r}")


def resolve_spec(spec: str) -> tuple[System, str]:
    """A spec file path, or the stem of a bundled spec."""
    path = Path(spec)
    if not path.exists():
        bundled = BUNDLED_SPECS / f"{spec}.json"
        if not bundled.exists():
            names = sorted(p.stem for p in BUNDLED_SPECS.glob("*.json"))
            raise ConfigError(f"spec {spec!r} is neither a file nor a bundled spec ({', '.join(names)})")
        path = bundled
    return load_system(path), str(spec)


def _common(p: argparse.ArgumentParser, spec_default: str | None = "example3_n2"):
    if spec_default is not None:
        p.add_argument("--spec", default=spec_default, help="spec file or bundled spec name")
    p.add_argument("--out", default="torusmech-out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--threads", type=int, default=1, help="worker count hint")
    p.add_argument("--plots", action="store_true", help="also write SVG figures")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="torusmech",
        description="Integrable natural systems on flat tori: brackets, strata, Betti numbers, orbits, geodesics.",
        formatter_class=fmt,
        epilog=f"Cell budget override: environment variable {homology.BUDGET_ENV}.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("betti", help="Betti numbers of {U <= E}", formatter_class=fmt)
    _common(p)
    p.add_argument("--energy", type=float, required=True, help="energy level E")
    p.add_argument("--resolution", type=int, default=64, help="grid points per axis")
    p.add_argument("--field", default="2", help="coefficient field GF(p)")
    p.add_argument("--superlevel", action="store_true", help="use {U >= E} instead")

    p = sub.add_parser("scan", help="Betti numbers along a list of energies", formatter_class=fmt)
    _common(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--energies", type=_floats, help="comma-separated energies")
    g.add_argument("--range", dest="energy_range", type=_energy_range, help="lo:hi:count")
    p.add_argument("--resolution", type=int, default=64, help="grid points per axis")
    p.add_argument("--field", default="2", help="coefficient field GF(p)")

    p = sub.add_parser("strata", help="momentum-map cell complex and non-degeneracy checks", formatter_class=fmt)
    _common(p)
    p.add_argument("--samples", type=int, default=5, help="samples per cell for census constancy")
    p.add_argument("--unrestricted", action="store_true", help="keep cells outside the image of F")

    p = sub.add_parser("simulate", help="symplectic integration with conservation checks", formatter_class=fmt)
    _common(p)
    p.add_argument("--p0", type=_floats, help="initial phase point x_1..x_n,y_1..y_n (alternative to --x0/--y0)")
    p.add_argument("--x0", type=_floats, help="initial angles")
    p.add_argument("--y0", type=_floats, help="initial momenta")
    p.add_argument("--dt", type=float, default=1e-3, help="time step")
    p.add_argument("--steps", type=int, default=10000, help="number of steps")
    p.add_argument("--stride", type=int, default=100, help="record every stride-th state")
    p.add_argument("--method", choices=sorted(METHODS), default=DEFAULT_METHOD, help="splitting scheme")
    p.add_argument("--drift-tol", type=float, default=1e-7, help="allowed drift of H and F_i")

    p = sub.add_parser("geodesic", help="minimal closed Jacobi geodesic in a homotopy class", formatter_class=fmt)
    _common(p)
    p.add_argument("--class", dest="cls", type=_ints, required=True, help="homotopy class m, e.g. 1,0")
    p.add_argument("--energy", type=float, required=True, help="energy E > max U")
    p.add_argument("--N", type=int, default=1024, help="loop points")
    p.add_argument("--restarts", type=int, default=geodesics.DEFAULT_RESTARTS, help="multi-start count")
    p.add_argument("--k-max", type=int, default=0, help="if positive, also scan d_k for k = 1..k_max")

    p = sub.add_parser("glue", help="compare gluing of potentials and of complexes", formatter_class=fmt)
    _common(p)
    p.add_argument("--copies", type=_ints, required=True, help="copies per axis, e.g. 2,2")
    p.add_argument("--energy", type=float, required=True, help="energy level E")
    p.add_argument("--resolution", type=int, default=32, help="grid points per axis of one block")
    p.add_argument("--field", default="2", help="coefficient field GF(p)")

    p = sub.add_parser("verify-example3", help="Betti-number battery for sum_i cos(k x_i)", formatter_class=fmt)
    _common(p, spec_default=None)
    p.add_argument("--n", type=int, choices=(2, 3), default=2, help="torus dimension")
    p.add_argument("--k", type=_ints, default=[1, 2, 3], help="wave numbers")
    p.add_argument("--resolution", type=int, default=64, help="grid points per axis")
    p.add_argument("--field", default="2", help="coefficient field GF(p)")
    p.add_argument("--fraction", type=float, default=0.25, help="sample position inside each energy window")
    p.add_argument("--samples", type=int, default=5, help="samples per cell for census constancy")
    p.add_argument("--extra-energies", type=_floats, default=[], help="additional informational energies")
    return parser


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _config(args, **extra) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("out", "threads", "plots", "func")}
    cfg.update(extra)
    return cfg


def _validate_field(text: str) -> int:
    try:
        return homology._parse_field(text)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _print_files(writer: report.ReportWriter):
    for p in sorted(writer.directory.iterdir()):
        print(f"  wrote {p}")


def cmd_betti(args) -> int:
    system, _ = resolve_spec(args.spec)
    p = _validate_field(args.field)
    writer = report.ReportWriter(args.out, "betti", _config(args, system=system.to_json()))
    raster = homology.rasterize_superlevel if args.superlevel else homology.rasterize_sublevel
    t0 = time.perf_counter()
    cx = raster(system.potential, args.energy, args.resolution)
    b = homology.betti(cx, p)
    wall = 1000.0 * (time.perf_counter() - t0)
    chi_cells = cx.euler_characteristic
    ok = chi_cells == b.euler_characteristic
    writer.write_json("betti.json", {
        "E": args.energy, "betti": list(b.betti), "cells": list(cx.cell_counts), "field": p,
        "resolution": args.resolution, "superlevel": args.superlevel,
        "euler_cells": chi_cells, "euler_betti": b.euler_characteristic, "euler_identity": ok,
    })
    writer.write_json("timing.json", {"wall_ms": wall})
    if args.plots and system.n == 2 and not args.superlevel:
        plotting.domain_raster_plot(system.potential, args.energy, args.resolution, writer.path("domain.svg"))
    print(f"betti = {b.betti}  cells = {cx.cell_counts}  euler identity {'PASS' if ok else 'FAIL'}")
    _print_files(writer)
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_scan(args) -> int:
    system, _ = resolve_spec(args.spec)
    p = _validate_field(args.field)
    energies = sorted(args.energies if args.energies is not None else args.energy_range)
    writer = report.ReportWriter(args.out, "scan", _config(args, system=system.to_json()))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", homology.DegenerateLevelWarning)
        rows = homology.betti_scan(system.potential, energies, args.resolution, field=p, workers=max(1, args.threads))
    writer.write_csv("scan.csv", report.scan_header(system.n), report.scan_rows(rows))
    writer.write_json("scan.json", report.scan_json(rows))
    ok = all(sum((-1) ** d * c for d, c in enumerate(r.cells)) == r.betti.euler_characteristic for r in rows)
    if args.plots:
        plotting.betti_step_plot(rows, writer.path("betti.svg"))
        if system.n == 2:
            plotting.domain_raster_plot(system.potential, energies[-1], args.resolution, writer.path("domain.svg"))
    for r in rows:
        print(f"E = {r.E!r:>24}  betti = {r.betti.betti}")
    _print_files(writer)
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_strata(args) -> int:
    system, _ = resolve_spec(args.spec)
    writer = report.ReportWriter(args.out, "strata", _config(args, system=system.to_json()))
    F = separable_integrals(system)
    inv = involution_report(F, hamiltonian_observable(system))
    cx = build_cell_complex(system, restrict_to_image=not args.unrestricted)
    nd = verify_nondegeneracy(system, samples_per_cell=args.samples, seed=args.seed)
    writer.write_json("integrals.json", {
        "integrals": [f.to_json() for f in F], "involution": inv.to_json(),
    })
    writer.write_json("cells.json", cx.to_json())
    writer.write_csv(
        "strata.csv",
        ["cell", "dimension"] + [f"piece_{i}" for i in range(system.n)] + ["strata"],
        [
            [ci, cell.dimension, *(p.label() for p in cell.pieces),
             " + ".join(f"{s.count} x T^{s.a} x R^{s.b}" for s in cell.layer) or "empty"]
            for ci, cell in enumerate(cx.cells)
        ],
    )
    writer.write_json("nondegeneracy.json", nd.to_json())
    counts = cx.counts_by_dimension()
    print(f"cells by dimension: {dict(sorted(counts.items()))}")
    print(f"involution {'PASS' if inv.passed else 'FAIL'}; non-degeneracy {'PASS' if nd.passed else 'FAIL'}")
    for line in inv.failures() + nd.failures():
        print(f"  {line}")
    _print_files(writer)
    return EXIT_PASS if inv.passed and nd.passed else EXIT_FAIL


def cmd_simulate(args) -> int:
    system, _ = resolve_spec(args.spec)
    n = system.n
    if args.p0 is not None:
        if args.x0 is not None or args.y0 is not None:
            raise ConfigError("give either --p0 or --x0/--y0, not both")
        if len(args.p0) != 2 * n:
            raise ConfigError(f"--p0 needs {2 * n} entries")
        args.x0, args.y0 = args.p0[:n], args.p0[n:]
        args.p0 = None
    if args.x0 is None or args.y0 is None or len(args.x0) != n or len(args.y0) != n:
        raise ConfigError(f"--x0 and --y0 need {n} entries each")
    if args.dt <= 0 or args.steps < 1 or args.stride < 1:
        raise ConfigError("dt, steps and stride must be positive")
    writer = report.ReportWriter(args.out, "simulate", _config(args, system=system.to_json()))
    p0 = PhasePoint(np.array(args.x0), np.array(args.y0))
    t0 = time.perf_counter()
    traj = integrate(system, p0, args.dt, args.steps, stride=args.stride, method=args.method)
    wall = 1000.0 * (time.perf_counter() - t0)
    E = float(traj.H[0])
    conf = check_confinement(traj, system, E)
    dH, dF = energy_drift(traj), integral_drift(traj)
    ok = conf.passed and dH < args.drift_tol and dF < args.drift_tol
    header = ["t"] + [f"x_{i}" for i in range(n)] + [f"y_{i}" for i in range(n)] + ["H"]
    header += [f"F_{i}" for i in range(traj.F.shape[1])]
    rows = np.column_stack([traj.times, traj.x, traj.y, traj.H, traj.F])
    writer.write_csv("trajectory.csv", header, rows.tolist())
    writer.write_json("summary.json", {
        "E": E, "energy_drift": dH, "integral_drift": dF, "drift_tol": args.drift_tol,
        "confinement": conf.to_json(), "method": args.method, "passed": ok,
    })
    writer.write_json("timing.json", {"wall_ms": wall})
    print(f"E = {E!r}  max |dH| = {dH:.3e}  max |dF| = {dF:.3e}  confinement {'PASS' if conf.passed else 'FAIL'}")
    _print_files(writer)
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_geodesic(args) -> int:
    system, _ = resolve_spec(args.spec)
    if len(args.cls) != system.n:
        raise ConfigError(f"--class needs {system.n} entries")
    if args.N < 3 or args.restarts < 1:
        raise ConfigError("--N must be at least 3 and --restarts at least 1")
    writer = report.ReportWriter(args.out, "geodesic", _config(args, system=system.to_json()))
    try:
        res = geodesics.jacobi_minimal_geodesic(
            system, args.energy, args.cls, N=args.N, restarts=args.restarts, seed=args.seed
        )
    except (geodesics.DegenerateEnergy, geodesics.ZeroClass) as exc:
        raise ConfigError(str(exc))
    lo, hi = geodesics.conformal_bounds(system, args.energy, args.cls)
    summary = res.to_json()
    summary.update({
        "flat_length": geodesics.flat_minimal_length(system.model, args.cls),
        "conformal_bounds": [lo, hi],
        "within_bounds": bool(lo <= res.length <= hi),
    })
    ok = res.converged and summary["within_bounds"]
    if args.k_max > 0:
        cls = geodesics.HomotopyClass(tuple(args.cls))
        if not cls.primitive:
            raise ConfigError("--k-max needs a primitive class")
        per_k = max(3, args.N // args.k_max)
        tab = geodesics.d_k_scan(system, args.energy, cls, args.k_max, N_per_k=per_k,
                                 restarts=args.restarts, seed=args.seed)
        summary["d_k"] = tab.to_json()
        summary["subadditivity_violations"] = tab.subadditivity_violations()
        ok = ok and not summary["subadditivity_violations"]
    n = system.n
    pts = np.vstack([res.loop, res.closing_point[None, :]])
    writer.write_csv("loop.csv", ["j"] + [f"q_{i}" for i in range(n)],
                     [[j, *row] for j, row in enumerate(pts.tolist())])
    writer.write_json("summary.json", summary)
    if args.plots and n == 2:
        plotting.geodesic_overlay_plot(system, res.loop, writer.path("geodesic.svg"),
                                       closing=res.closing_point, E=args.energy)
    print(f"L = {res.length!r}  converged = {res.converged}  bounds = [{lo:.6f}, {hi:.6f}]")
    _print_files(writer)
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_glue(args) -> int:
    system, _ = resolve_spec(args.spec)
    if len(args.copies) != system.n or min(args.copies) < 1:
        raise ConfigError(f"--copies needs {system.n} positive entries")
    p = _validate_field(args.field)
    writer = report.ReportWriter(args.out, "glue", _config(args, system=system.to_json()))
    U, r, m = system.potential, args.resolution, tuple(args.copies)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", homology.DegenerateLevelWarning)
        glued_potential = homology.rasterize_sublevel(homology.glue(U, m), args.energy, tuple(r * c for c in m))
        glued_complex = homology.glue_complex(homology.rasterize_sublevel(U, args.energy, r), m)
    b1, b2 = homology.betti(glued_potential, p), homology.betti(glued_complex, p)
    ok = b1.betti == b2.betti
    writer.write_json("glue.json", {
        "copies": list(m), "E": args.energy, "resolution": r, "field": p,
        "betti_glued_potential": list(b1.betti), "betti_glued_complex": list(b2.betti),
        "same_complex": glued_potential == glued_complex, "agree": ok,
    })
    print(f"glue(U) -> {b1.betti}   glue(complex) -> {b2.betti}   {'PASS' if ok else 'FAIL'}")
    _print_files(writer)
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_verify_example3(args) -> int:
    p = _validate_field(args.field)
    if not args.k or min(args.k) < 1:
        raise ConfigError("--k needs positive integers")
    writer = report.ReportWriter(args.out, "verify-example3", _config(args))
    t0 = time.perf_counter()
    rep = battery.verify_example3(
        args.n, args.k, args.resolution, field=p, fraction=args.fraction, seed=args.seed,
        samples=args.samples, extra_energies=args.extra_energies, workers=max(1, args.threads),
    )
    wall = 1000.0 * (time.perf_counter() - t0)
    writer.write_json("report.json", rep.to_json())
    writer.write_csv("table.csv", ["check", "k", "expected", "observed", "status"],
                     [[c.name, "" if c.k is None else c.k, json.dumps(c.expected), json.dumps(c.observed), c.status]
                      for c in rep.table()])
    for k, rows in rep.scans.items():
        writer.write_csv(f"scan-k{k}.csv", report.scan_header(args.n), report.scan_rows(rows))
        if args.plots:
            plotting.betti_step_plot(rows, writer.path(f"betti-k{k}.svg"), title=f"n = {args.n}, k = {k}")
    writer.write_json("timing.json", {"wall_ms": wall})
    width = max(len(c.name) for c in rep.table())
    for c in rep.table():
        k = "" if c.k is None else f"k={c.k}"
        print(f"{c.status:5} {c.name:<{width}} {k:>5}  expected {json.dumps(c.expected)}  observed {json.dumps(c.observed)}")
    print("PASS" if rep.passed else "FAIL")
    _print_files(writer)
    return EXIT_PASS if rep.passed else EXIT_FAIL


COMMANDS = {
    "betti": cmd_betti,
    "scan": cmd_scan,
    "strata": cmd_strata,
    "simulate": cmd_simulate,
    "geodesic": cmd_geodesic,
    "glue": cmd_glue,
    "verify-example3": cmd_verify_example3,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except report.ReportIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, SpecError, DimensionError, NonSeparable, homology.BudgetExceeded, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
