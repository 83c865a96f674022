"""Command-line entry point.

Three subcommands:

  run      solve one benchmark case and write the result artifacts
  verify   run the built-in analytic self-checks
  compare  build percentile-spread reports across runs

`run` writes, into --out: one head CSV per subdomain, `dol_<probe>.csv`
files (columns fraction, arclength_m, value) for every line probe,
`dot_<series>.csv` files (columns time_s, value) for every region probe and
outlet tracer flux, `cost.json`, `flux.json` and `manifest.json` (schema
"dfmbench/1").  Data CSVs contain no timestamps and all numbers use
round-trip decimal formatting, so reruns are byte-identical; wall-clock
timings live only in the manifest.

Exit codes: 0 success, 1 solver failure, 2 bad input.
"""
from __future__ import annotations

import argparse
import glob
import json
import os
import re
import sys
import time

import numpy as np

from dfmbench import metrics, mshio, sparsela
from dfmbench.cases import CaseError, load_case
from dfmbench.flow import FlowError, check_conservation, solve_flow
from dfmbench.metrics import MetricsError
from dfmbench.transport import TransportError, assemble_transport, run_transport

MANIFEST_SCHEMA = "dfmbench/1"


def _fmt(x: float) -> str:
    """Round-trip decimal formatting for CSV cells."""
    return "%.17g" % float(x)


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "-", name)


def _write_csv(path: str, header: list, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# run

def cmd_run(args) -> int:
    t0 = time.perf_counter()
    timings, files = {}, []
    out = args.out
    os.makedirs(out, exist_ok=True)

    setup = load_case(args.case, args.refinement, mesh=args.mesh,
                      tagmap=args.tagmap, case_file=args.case_file)
    grid = setup.grid
    timings["load_s"] = time.perf_counter() - t0
    for w in setup.warnings:
        print(f"warning: {w}", file=sys.stderr)

    t1 = time.perf_counter()
    sol = solve_flow(grid, setup.flow_params, tol=args.tol, solver=args.solver)
    timings["flow_s"] = time.perf_counter() - t1
    if not sol.report.converged:
        raise sparsela.SolverError(
            f"flow solver stopped at relative residual {sol.report.residual:.3e}")

    # per-subdomain head tables
    for pos, sd in enumerate(grid.subdomains):
        name = f"head_{_safe_name(sd.id)}.csv"
        h = sol.head_of(pos)
        _write_csv(os.path.join(out, name), ["cell", "x", "y", "z", "value"],
                   ((i, *sd.centers[i], h[i]) for i in range(sd.n_cells)))
        files.append(name)

    # time series: region integrals and outlet tracer fluxes
    series = {rp.id: [] for rp in setup.region_probes}
    for pid in setup.outlet_flux_patches:
        series[f"outlet_{pid}"] = []
    porosity = setup.transport_params.porosity

    def observer(state):
        for rp in setup.region_probes:
            series[rp.id].append(
                (state.time,
                 metrics.integrate_concentration(grid, state, rp, porosity)))
        for pid in setup.outlet_flux_patches:
            series[f"outlet_{pid}"].append(
                (state.time,
                 metrics.outlet_concentration_flux(grid, sol, state, pid)))

    t2 = time.perf_counter()
    need_transport = bool(series) or any(f == "conc"
                                         for _, f in setup.line_probes)
    state = None
    if need_transport:
        state = run_transport(grid, sol, setup.transport_params,
                              observer=observer if series else None,
                              solver=args.solver, tol=args.tol)
    timings["transport_s"] = time.perf_counter() - t2

    # line probes (head from the flow solution, conc from the final state)
    for probe, fieldname in setup.line_probes:
        pos = grid.sd_index(probe.sd_id)
        vals = sol.head_of(pos) if fieldname == "head" else state.conc_of(pos)
        curve = metrics.sample_over_line(grid, vals, probe)
        name = f"dol_{_safe_name(probe.id)}.csv"
        _write_csv(os.path.join(out, name), ["fraction", "arclength_m", "value"],
                   zip(curve.x, curve.x * curve.arclength, curve.y))
        files.append(name)

    for sid, samples in series.items():
        name = f"dot_{_safe_name(sid)}.csv"
        _write_csv(os.path.join(out, name), ["time_s", "value"], samples)
        files.append(name)

    # cost and flux summaries
    from dfmbench.flow import assemble_flow
    A_flow, _, _ = assemble_flow(grid, setup.flow_params)
    tr_matrix = None
    if need_transport:
        tr_matrix = assemble_transport(grid, sol, setup.transport_params).A
    cost = metrics.cost_report(grid, A_flow, tr_matrix)
    cost["flow_iterations"] = sol.report.iterations
    cost["flow_residual"] = sol.report.residual
    cost["max_conservation_residual"] = max(
        check_conservation(grid, sol).values())
    _write_json(os.path.join(out, "cost.json"), cost)
    files.append("cost.json")

    rep = metrics.boundary_flux_report(grid, sol)
    _write_json(os.path.join(out, "flux.json"),
                {"patches": rep.totals, "total_out": rep.total_out,
                 "total_in": rep.total_in})
    files.append("flux.json")

    timings["total_s"] = time.perf_counter() - t0
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "case": setup.case_id,
        "refinement": setup.refinement,
        "mesh": args.mesh,
        "tagmap": args.tagmap,
        "solver": args.solver,
        "tol": args.tol,
        "timings": timings,
        "cost": cost,
        "files": sorted(files),
        "warnings": setup.warnings,
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    missing = [f for f in files if not os.path.exists(os.path.join(out, f))]
    if missing:
        raise OSError(f"missing output files: {missing}")
    print(f"case {setup.case_id} refinement {setup.refinement}: "
          f"{len(files) + 1} files in {out}")
    return 0


# ---------------------------------------------------------------------------
# verify

def _check_series_resistance():
    """Unit cube, conductive mid-plane fracture: the discrete flux equals the
    series-resistance value 1 / (L + 2/kappa) exactly."""
    from dfmbench.grid import FractureRect, PatchSpec, build_cartesian_grid
    from dfmbench.flow import FlowParams
    fr = FractureRect(0, 0.5, ((0.0, 1.0), (0.0, 1.0)))
    patches = [
        PatchSpec("in", "dirichlet", 1.0, ((-.001, .001), (0, 1), (0, 1))),
        PatchSpec("out", "dirichlet", 0.0, ((.999, 1.001), (0, 1), (0, 1))),
    ]
    grid = build_cartesian_grid(((0, 1), (0, 1), (0, 1)), (4, 4, 4),
                                fractures=[fr], eps=(1e-2, 1, 1),
                                patch_specs=patches)
    params = FlowParams(matrix_k={"matrix": 1.0},
                        tangential_k={"fracture_0": 1e-2},
                        normal_k={"fracture_0": 2.0})
    sol = solve_flow(grid, params, solver="lu")
    rep = metrics.boundary_flux_report(grid, sol)
    expect = 1.0 / (1.0 + 2.0 / 2.0)
    err = abs(rep.totals["out"] - expect) / expect
    return err < 1e-12, f"flux error {err:.2e}"


def _check_blocking_jump():
    """Blocking fracture (kappa = 1e-3): flux and the head jump across the
    fracture both match the series-resistance solution."""
    from dfmbench.grid import FractureRect, PatchSpec, build_cartesian_grid
    from dfmbench.flow import FlowParams
    fr = FractureRect(0, 0.5, ((0.0, 1.0), (0.0, 1.0)))
    patches = [
        PatchSpec("in", "dirichlet", 1.0, ((-.001, .001), (0, 1), (0, 1))),
        PatchSpec("out", "dirichlet", 0.0, ((.999, 1.001), (0, 1), (0, 1))),
    ]
    grid = build_cartesian_grid(((0, 1), (0, 1), (0, 1)), (4, 4, 4),
                                fractures=[fr], eps=(1e-2, 1, 1),
                                patch_specs=patches)
    params = FlowParams(matrix_k={"matrix": 1.0},
                        tangential_k={"fracture_0": 1e-5},
                        normal_k={"fracture_0": 1e-3})
    sol = solve_flow(grid, params, solver="lu")
    rep = metrics.boundary_flux_report(grid, sol)
    expect = 1.0 / (1.0 + 2.0 / 1e-3)
    err = abs(rep.totals["out"] - expect) / expect
    return err < 1e-12, f"flux error {err:.2e}"


def _check_solver_equivalence():
    """Iterative and dense solutions of one flow system agree to 1e-9."""
    setup = load_case("2.1", 0)
    sol_lu = solve_flow(setup.grid, setup.flow_params, solver="lu")
    sol_cg = solve_flow(setup.grid, setup.flow_params, solver="cg", tol=1e-14)
    err = float(np.max(np.abs(sol_lu.head - sol_cg.head)))
    return err < 1e-9, f"max head difference {err:.2e}"


def _check_conservation():
    """Per-cell mass balance residual below 1e-10 of the total inflow."""
    setup = load_case("2.1", 0)
    sol = solve_flow(setup.grid, setup.flow_params, solver="lu")
    res = max(check_conservation(setup.grid, sol).values())
    rep = metrics.boundary_flux_report(setup.grid, sol)
    rel = res / abs(rep.total_in)
    return rel < 1e-10, f"relative residual {rel:.2e}"


def _check_bounds():
    """Tracer concentrations stay within [0, c_in] up to roundoff."""
    setup = load_case("2.1", 0)
    sol = solve_flow(setup.grid, setup.flow_params, solver="lu")
    state = run_transport(setup.grid, sol, setup.transport_params, solver="lu")
    lo, hi = float(state.conc.min()), float(state.conc.max())
    ok = lo >= -1e-12 and hi <= 1.0 + 1e-12
    return ok, f"range [{lo:.2e}, {1.0 - hi:+.2e} from c_in]"


def _check_symmetry():
    """With a uniform matrix conductivity, the nine-fracture geometry and its
    boundary conditions are invariant under cyclic permutation of the axes;
    so is the discrete head field."""
    import tempfile
    from dfmbench.cases import load_case_data
    data = load_case_data("2.1")
    data["flow"]["matrix_k"] = {"omega0": 1.0, "omega1": 1.0}
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(data, fh)
        path = fh.name
    try:
        setup = load_case("2.1", 0, case_file=path)
        sol = solve_flow(setup.grid, setup.flow_params, solver="lu")
        sd = setup.grid.matrix
        h = sol.head_of("matrix")
        perm = _cyclic_permutation(sd.centers)
        err = float(np.max(np.abs(h - h[perm])))
    finally:
        os.unlink(path)
    return err < 1e-9, f"max asymmetry {err:.2e}"


def _cyclic_permutation(centers: np.ndarray) -> np.ndarray:
    """Index map sending each cell to the cell at (z, x, y)."""
    rolled = centers[:, [2, 0, 1]]
    order = np.lexsort(centers.T[::-1])
    order_r = np.lexsort(rolled.T[::-1])
    perm = np.empty(len(centers), dtype=np.intp)
    perm[order] = order_r
    return perm


VERIFY_CHECKS = [
    ("series-resistance", _check_series_resistance),
    ("blocking-fracture", _check_blocking_jump),
    ("solver-equivalence", _check_solver_equivalence),
    ("conservation", _check_conservation),
    ("transport-bounds", _check_bounds),
    ("symmetry", _check_symmetry),
]


def cmd_verify(args) -> int:
    checks = [(n, f) for n, f in VERIFY_CHECKS
              if args.filter is None or args.filter in n]
    if not checks:
        print(f"no checks match filter {args.filter!r}", file=sys.stderr)
        return 2
    width = max(len(n) for n, _ in checks)
    failures = 0
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        status = "PASS" if ok else "FAIL"
        failures += not ok
        print(f"{name:<{width}}  {status}  {detail}")
    print(f"{len(checks) - failures}/{len(checks)} checks passed")
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# compare

def _read_curve_csv(path: str):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    base = os.path.basename(path)
    if base.startswith("dol_"):
        kind, xcol = "dol", "fraction"
    elif base.startswith("dot_"):
        kind, xcol = "dot", "time_s"
    else:
        raise MetricsError(f"{path}: not a dol_/dot_ CSV")
    if header[0] != xcol or header[-1] != "value":
        raise MetricsError(f"{path}: unexpected columns {header}")
    return kind, metrics.Curve(data[:, 0], data[:, -1], label=path)


def _expand_inputs(inputs):
    """Map compare arguments (files, dirs, globs) to groups of CSV paths.

    Directories and glob patterns are grouped by file basename; a plain list
    of files forms a single group."""
    paths, explicit = [], True
    for item in inputs:
        if os.path.isdir(item):
            explicit = False
            paths.extend(sorted(glob.glob(os.path.join(item, "do[lt]_*.csv"))))
        elif any(ch in item for ch in "*?["):
            explicit = False
            hits = sorted(glob.glob(item))
            if not hits:
                raise MetricsError(f"glob {item!r} matches nothing")
            paths.extend(hits)
        else:
            if not os.path.exists(item):
                raise MetricsError(f"no such file: {item}")
            paths.append(item)
    if explicit:
        return {"inputs": paths}
    groups = {}
    for p in paths:
        groups.setdefault(os.path.basename(p)[:-len(".csv")], []).append(p)
    return groups


def cmd_compare(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    groups = _expand_inputs(args.inputs)
    wrote = 0
    for gname, paths in sorted(groups.items()):
        if len(paths) < 2:
            print(f"skipping {gname}: only one file", file=sys.stderr)
            continue
        parsed = [_read_curve_csv(p) for p in paths]
        kinds = {k for k, _ in parsed}
        if len(kinds) > 1:
            raise MetricsError(
                f"{gname}: cannot mix over-line and over-time files")
        xcol = "fraction" if kinds == {"dol"} else "time_s"
        rep = metrics.percentile_spread([c for _, c in parsed])
        name = _safe_name(gname)
        _write_csv(os.path.join(args.out, f"spread_{name}.csv"),
                   [xcol, "p10", "mean", "p90"],
                   zip(rep.x, rep.p10, rep.mean, rep.p90))
        _write_json(os.path.join(args.out, f"spread_{name}.json"),
                    {"curves": paths, "spread_area": rep.spread_area,
                     "area_ratio": rep.area_ratio})
        wrote += 1
        print(f"spread_{name}: area {rep.spread_area:.6e} "
              f"ratio {rep.area_ratio:.6e}")
    if wrote == 0:
        raise MetricsError("no comparable groups (need >= 2 files per probe)")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dfmbench",
        description="Mixed-dimensional flow and transport benchmark harness.")
    sub = ap.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="solve one case and write artifacts")
    runp.add_argument("--case", required=True,
                      help="case id: 1, 2.1, 2.2, 3 or 4")
    runp.add_argument("--refinement", type=int, default=0)
    runp.add_argument("--mesh", help="MSH 2.2 mesh (required for cases 3, 4)")
    runp.add_argument("--tagmap", help="JSON tag-map sidecar for --mesh")
    runp.add_argument("--out", required=True, help="output directory")
    runp.add_argument("--tol", type=float, default=1e-10,
                      help="iterative solver tolerance (default 1e-10)")
    runp.add_argument("--solver", default="auto",
                      choices=["auto", "lu", "cg"],
                      help="flow solver (transport maps cg to bicgstab)")
    runp.add_argument("--case-file", help="override the bundled case JSON")
    runp.set_defaults(func=cmd_run)

    verp = sub.add_parser("verify", help="run the analytic self-checks")
    verp.add_argument("--filter", help="only run checks whose name contains this")
    verp.set_defaults(func=cmd_verify)

    cmpp = sub.add_parser("compare",
                          help="percentile spreads across runs")
    cmpp.add_argument("inputs", nargs="+",
                      help="run directories, dol/dot CSV files or globs")
    cmpp.add_argument("--out", required=True, help="output directory")
    cmpp.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (sparsela.SolverError, FlowError) as exc:
        print(f"error (solve): {exc}", file=sys.stderr)
        return 1
    except (CaseError, MetricsError, TransportError, mshio.MshParseError,
            sparsela.AssemblyError) as exc:
        print(f"error (input): {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
