"""Command-line entry point.

Binds TOML config files to sweep plans.  Subcommands: ``validate``,
``homogenise``, ``spectrum``, ``verify-ansatz``, ``verify-theorem``,
``korn``.  Exit codes: 0 when every declared assertion passes, 2 on an
assertion failure, 1 on usage or config errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

import numpy as np

from .material import field_from_config, load_config
from . import sweep_io


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="platehomog",
        description="Homogenisation and dimension-reduction laboratory "
                    "for thin periodic elastic plates.")
    sub = parser.add_subparsers(dest="command")
    for name, help_text in (
            ("validate", "check the material config and print its "
                         "coercivity bounds"),
            ("homogenise", "compute the effective plate tensors"),
            ("spectrum", "fibre eigenvalue scaling sweep"),
            ("verify-ansatz", "ansatz error-rate sweep"),
            ("verify-theorem", "operator-norm resolvent-rate sweep"),
            ("korn", "Korn-constant probe with mesh-stability check")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML config path")
        p.add_argument("--out", default=None,
                       help="output directory for CSV/JSON artifacts")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--mesh", default=None,
                       help="override mesh as n1,n2,n3")
        p.add_argument("--seed", type=int, default=None)
    return parser


def _mesh_from(args, doc) -> tuple:
    if args.mesh:
        parts = [int(x) for x in args.mesh.split(",")]
        if len(parts) != 3:
            raise ValueError("--mesh expects n1,n2,n3")
        return tuple(parts)
    mesh = doc.get("mesh", {})
    return (int(mesh.get("n1", 8)), int(mesh.get("n2", 8)),
            int(mesh.get("n3", 8)))


def _threads_from(args) -> Optional[int]:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("PLATEHOMOG_THREADS")
    return int(env) if env else None


def _tolerances_from(doc) -> dict:
    return {key: (float(val[0]), float(val[1]))
            for key, val in doc.get("tolerances", {}).items()}


def _make_plan(kind: str, args, doc) -> sweep_io.SweepPlan:
    material = field_from_config(doc)
    plan_doc = doc.get("plan", {})
    grid = plan_doc.get("magnitudes")
    if grid is None and "magnitude_range" in plan_doc:
        lo, hi, n = plan_doc["magnitude_range"]
        grid = np.geomspace(float(lo), float(hi), int(n)).tolist()
    plan = sweep_io.SweepPlan(
        kind=kind,
        material=material,
        mesh=_mesh_from(args, doc),
        name=plan_doc.get("name", kind),
        direction=tuple(plan_doc.get("direction", (1.0, 0.6))),
        magnitudes=grid or (),
        k_eigs=int(plan_doc.get("k_eigs", 5)),
        mode=plan_doc.get("mode"),
        depths=tuple(plan_doc.get("depths", (0, 1))),
        force=plan_doc.get("force"),
        theorem=plan_doc.get("theorem"),
        gamma=float(plan_doc.get("gamma", 0.0)),
        delta=float(plan_doc.get("delta", 0.0)),
        eps=[float(e) for e in plan_doc.get("eps", ())],
        korn_samples=int(plan_doc.get("korn_samples", 6)),
        threads=_threads_from(args),
        tolerances=_tolerances_from(doc),
    )
    if args.seed is not None:
        plan.seed = args.seed
    if args.out:
        plan.out_csv = os.path.join(args.out, f"{plan.name}.csv")
        plan.out_json = os.path.join(args.out, f"{plan.name}.json")
    return plan


def _cmd_validate(args, doc) -> int:
    material = field_from_config(doc)
    print(f"phases: {len(material.phases)}  "
          f"raster: {material.raster.shape[0]}x{material.raster.shape[1]}")
    for i, phase in enumerate(material.phases):
        lo, hi = phase.nu_bounds
        print(f"phase {i}: nu bounds {{{lo:g}, {hi:g}}}")
    print(f"planar_symmetric: {material.planar_symmetric}")
    return 0


def _run(plan: sweep_io.SweepPlan) -> int:
    summary = sweep_io.run_plan(plan)
    print(f"plan {plan.name} ({plan.kind}) on mesh "
          f"{plan.mesh[0]}x{plan.mesh[1]}x{plan.mesh[2]}")
    for key, val in summary["slopes"].items():
        print(f"  slope {key}: {val:.3f}")
    for key, val in summary["constants"].items():
        print(f"  {key}: {val:.12g}")
    for key, (target, tol) in summary["tolerances"].items():
        value = summary["slopes"].get(key,
                                      summary["constants"].get(key))
        shown = "missing" if value is None else f"{value:.6g}"
        print(f"  assert {key} = {target:g} +- {tol:g}: {shown}")
    print(f"pass: {summary['pass']}")
    return 0 if summary["pass"] else 2


def _cmd_korn(args, doc) -> int:
    plan = _make_plan("korn", args, doc)
    summary = sweep_io.run_plan(plan)
    drift_tol = float(doc.get("plan", {}).get("drift_tolerance", 0.10))
    refine = doc.get("plan", {}).get("refine_mesh")
    print(f"korn probe on mesh {plan.mesh}")
    for key, val in summary["constants"].items():
        print(f"  {key}: {val:.6g}")
    if not refine:
        print("pass: True (no refinement mesh configured)")
        return 0
    fine_plan = _make_plan("korn", args, doc)
    fine_plan.mesh = tuple(int(x) for x in refine)
    fine_plan.out_csv = fine_plan.out_json = None
    fine = sweep_io.run_plan(fine_plan)
    ok = True
    for key, coarse_val in summary["constants"].items():
        fine_val = fine["constants"].get(key)
        if fine_val is None or coarse_val == 0.0:
            continue
        drift = abs(fine_val - coarse_val) / abs(coarse_val)
        status = "ok" if drift < drift_tol else "FAIL"
        if drift >= drift_tol:
            ok = False
        print(f"  {key}: {coarse_val:.6g} -> {fine_val:.6g} "
              f"(drift {100 * drift:.2f}%) {status}")
    print(f"pass: {ok}")
    return 0 if ok else 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if not args.command:
        parser.print_usage()
        return 1
    try:
        doc = load_config(args.config)
        if args.command == "validate":
            return _cmd_validate(args, doc)
        if args.command == "korn":
            return _cmd_korn(args, doc)
        kind = {"homogenise": "homogenise", "spectrum": "spectrum",
                "verify-ansatz": "ansatz-rates",
                "verify-theorem": "theorem"}[args.command]
        return _run(_make_plan(kind, args, doc))
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
