"""Sweep orchestration and artifact persistence.

A :class:`SweepPlan` describes one batch computation (eigenvalue scaling,
ansatz error rates, operator-norm theorem rates, homogenised tensors, or
Korn-constant probing); :func:`run_plan` executes it on a worker pool,
writes one fixed-schema CSV per plan plus a JSON summary with fitted
slopes, empirical constants and pass/fail against the declared tolerances.
All numeric CSV fields are serialised with 17 significant digits so the
round trip is bitwise exact, and row order is fixed by the input grid, so
repeated runs produce identical bytes regardless of the worker count.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .material import MaterialField
from .mesh import CellMesh, build_mesh
from .cell_problems import FiberForce, preset_force, run_cascade
from . import fiber_spectrum as fs
from . import homogenised
from . import resolvent_lab as rl

__all__ = [
    "SCHEMA_VERSION", "PLAN_KINDS", "SweepPlan", "validate_plan",
    "write_records", "read_records", "run_plan",
]

SCHEMA_VERSION = "platehomog-csv/1"

PLAN_KINDS = ("spectrum", "ansatz-rates", "theorem", "homogenise", "korn")

#: Korn ratio CSV columns, in the order the ratios are defined; they map
#: one-to-one onto the keys of fiber_spectrum.korn_ratios.
_KORN_COLUMNS = ("ratio_prva", "ratio_druga", "ratio_treca",
                 "ratio_cetvrta", "ratio_peta", "ratio_sesta")
_KORN_KEYS = ("inplane_1", "inplane_2", "vertical",
              "plane_constants", "vertical_constant", "compatibility")

_HOMOG_COLUMNS = tuple(
    [f"L_{i + 1}{j + 1}" for i in range(6) for j in range(i, 6)]
    + [f"L1_{i + 1}{j + 1}" for i in range(3) for j in range(i, 3)]
    + [f"L2_{i + 1}{j + 1}" for i in range(3) for j in range(i, 3)])


@dataclass(eq=False)
class SweepPlan:
    """One batch computation and its output destinations.

    ``material`` is the resolved material field; ``force`` may be a preset
    name or a :class:`FiberForce`.  Grids: ``magnitudes`` along
    ``direction`` for the quasimomentum plans, ``eps`` for the theorem
    plans.  ``tolerances`` maps summary keys to ``(target, tol)`` pairs
    that the summary asserts; defaults per kind are filled in by
    :func:`run_plan`.
    """

    kind: str
    material: MaterialField
    mesh: Tuple[int, int, int] = (8, 8, 8)
    name: str = "plan"
    direction: Tuple[float, float] = (1.0, 0.6)
    magnitudes: Sequence[float] = ()
    k_eigs: int = 5
    mode: Optional[str] = None
    depths: Sequence[int] = (0, 1)
    force: object = None
    theorem: Optional[str] = None
    gamma: float = 0.0
    delta: float = 0.0
    eps: Sequence[float] = ()
    korn_samples: int = 6
    seed: int = 2024
    threads: Optional[int] = None
    out_csv: Optional[str] = None
    out_json: Optional[str] = None
    tolerances: Dict[str, Tuple[float, float]] = dc_field(
        default_factory=dict)


def validate_plan(plan: SweepPlan) -> None:
    """Raise ValueError on structurally invalid plans."""
    if plan.kind not in PLAN_KINDS:
        raise ValueError(f"unknown plan kind {plan.kind!r}; choose from "
                         f"{PLAN_KINDS}")
    if any(n < 2 for n in plan.mesh) or plan.mesh[2] % 2:
        raise ValueError("mesh spec needs n1, n2 >= 2 and even n3")
    if plan.kind in ("spectrum", "ansatz-rates", "korn"):
        if len(plan.magnitudes) == 0:
            raise ValueError("empty quasimomentum grid")
    if plan.kind == "ansatz-rates":
        if plan.mode is None or plan.force is None:
            raise ValueError("ansatz-rates plans need a mode and a force")
    if plan.kind == "theorem":
        if len(plan.eps) == 0:
            raise ValueError("empty eps grid")
        if plan.theorem not in rl.THEOREMS:
            raise ValueError(f"unknown theorem selector {plan.theorem!r}")
        if plan.gamma <= -2.0:
            raise ValueError("theorem scalings require gamma > -2")
        if plan.theorem == "first" and plan.delta > (plan.gamma + 2.0) / 4.0:
            raise ValueError("the first estimate requires "
                             "delta <= (gamma + 2) / 4")


def _resolve_force(force) -> FiberForce:
    if isinstance(force, FiberForce):
        return force
    return preset_force(str(force))


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_records(path: str, fieldnames: Sequence[str],
                  rows: Sequence[dict], kind: str = "generic") -> None:
    """Write rows under the versioned schema; numeric fields keep 17
    significant digits so reading them back is bitwise exact."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {SCHEMA_VERSION} kind={kind}\n")
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames),
                                lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in fieldnames})


def read_records(path: str,
                 required: Optional[Sequence[str]] = None) -> List[dict]:
    """Read a schema-versioned CSV; floats are parsed, unknown columns are
    preserved.  Raises on a missing required column, naming it."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith(f"# {SCHEMA_VERSION}"):
            raise ValueError(f"{path}: unrecognised schema header "
                             f"{first.strip()!r}")
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        for col in required or ():
            if col not in names:
                raise ValueError(f"{path}: missing required column "
                                 f"{col!r}")
        rows = []
        for raw in reader:
            row = {}
            for key, val in raw.items():
                try:
                    row[key] = float(val)
                except (TypeError, ValueError):
                    row[key] = val
            rows.append(row)
    return rows


def _pool_map(fn: Callable, items: Sequence, threads: Optional[int]):
    """Order-preserving parallel map; one worker by default."""
    n = threads or int(os.environ.get("PLATEHOMOG_THREADS", "1"))
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Plan runners
# ---------------------------------------------------------------------------

def _run_spectrum(plan: SweepPlan, mesh: CellMesh):
    d = np.asarray(plan.direction, dtype=float)
    d = d / np.hypot(d[0], d[1])
    mags = np.asarray(sorted(plan.magnitudes, reverse=True), dtype=float)
    k = plan.k_eigs

    def one(t):
        chi = t * d
        try:
            rec = fs.fiber_spectrum(mesh, plan.material, chi, k=k,
                                    with_vectors=False)
            return rec.eigenvalues, "ok"
        except Exception as exc:  # recorded, the sweep continues
            return np.full(k, np.nan), f"error:{type(exc).__name__}"

    results = _pool_map(one, list(mags), plan.threads)
    rows = []
    for t, (lam, status) in zip(mags, results):
        row = {"chi1": t * d[0], "chi2": t * d[1], "chi_mag": t,
               "status": status}
        for j in range(k):
            row[f"lam{j + 1}"] = lam[j]
        rows.append(row)
    fieldnames = ["chi1", "chi2", "chi_mag"] + \
        [f"lam{j + 1}" for j in range(k)] + ["status"]

    ok = [r for r in rows if r["status"] == "ok"]
    slopes = {}
    if len(ok) >= 5:
        t_ok = np.array([r["chi_mag"] for r in ok])
        slopes["lambda1"] = rl.rate_fit(
            t_ok, np.array([r["lam1"] for r in ok])).slope
        slopes["pair23"] = rl.rate_fit(
            t_ok, np.array([r["lam2"] + r["lam3"] for r in ok])).slope
        if k >= 4:
            lam4 = np.array([r["lam4"] for r in ok])
            lx = np.log(t_ok)
            slopes["lambda4"] = float(np.polyfit(lx, np.log(lam4), 1)[0])
    defaults = {"lambda1": (4.0, 0.15), "pair23": (2.0, 0.15),
                "lambda4": (0.0, 0.2)}
    return rows, fieldnames, slopes, {}, defaults


def _run_rates(plan: SweepPlan, mesh: CellMesh):
    force = _resolve_force(plan.force)
    d = np.asarray(plan.direction, dtype=float)
    d = d / np.hypot(d[0], d[1])
    mags = np.asarray(sorted(plan.magnitudes, reverse=True), dtype=float)
    depths = tuple(plan.depths)
    max_depth = max(depths)

    def one(t):
        chi = t * d
        try:
            solve = rl.solve_fiber_resolvent(mesh, plan.material, chi,
                                             force, plan.mode)
            bundle = run_cascade(mesh, plan.material, chi, force, plan.mode,
                                 depth=max_depth)
            recs = {}
            for depth in depths:
                U = rl.build_ansatz(mesh, bundle, depth)
                recs[depth] = rl.error_report(mesh, plan.material,
                                              solve.u, U)
            return recs, "ok"
        except Exception as exc:
            return {}, f"error:{type(exc).__name__}"

    results = _pool_map(one, list(mags), plan.threads)
    rows = []
    series: Dict[tuple, list] = {}
    for t, (recs, status) in zip(mags, results):
        for depth in depths:
            rec = recs.get(depth)
            row = {"mode": plan.mode, "depth": depth, "chi_mag": t,
                   "status": status}
            if rec is None:
                for col in ("err_L2_inplane", "err_L2_vert",
                            "err_H1_inplane", "err_H1_vert"):
                    row[col] = np.nan
            else:
                row["err_L2_inplane"] = rec.l2_inplane
                row["err_L2_vert"] = rec.l2_vertical
                row["err_H1_inplane"] = rec.h1_inplane
                row["err_H1_vert"] = rec.h1_vertical
                series.setdefault((depth, "inplane"), []).append(
                    (t, rec.l2_inplane))
                series.setdefault((depth, "vertical"), []).append(
                    (t, rec.l2_vertical))
                series.setdefault((depth, "total"), []).append(
                    (t, rec.l2_total))
            rows.append(row)
    fieldnames = ["mode", "depth", "chi_mag", "err_L2_inplane",
                  "err_L2_vert", "err_H1_inplane", "err_H1_vert", "status"]
    slopes = {}
    for (depth, comp), pts in series.items():
        ts, es = zip(*pts)
        try:
            slopes[f"depth{depth}_{comp}"] = rl.rate_fit(ts, es).slope
        except ValueError:
            pass
    return rows, fieldnames, slopes, {}, {}


def _run_theorem(plan: SweepPlan, mesh: CellMesh):
    sweep = rl.theorem_sweep(mesh, plan.material, list(plan.eps),
                             plan.theorem, plan.gamma, plan.delta,
                             seed=plan.seed)
    rows = []
    comps = sorted(sweep.gaps)
    for i, eps in enumerate(sweep.eps):
        for comp in comps:
            label = (plan.theorem if len(comps) == 1
                     else f"{plan.theorem}:{comp}")
            rows.append({"theorem": label, "gamma": plan.gamma,
                         "delta": plan.delta, "eps": eps,
                         "sup_gap": sweep.gaps[comp][i],
                         "argmax_chi_mag": sweep.maximisers[comp][i],
                         "status": "ok"})
    fieldnames = ["theorem", "gamma", "delta", "eps", "sup_gap",
                  "argmax_chi_mag", "status"]
    slopes = {c: sweep.slopes[c].slope for c in comps}
    defaults = {"second": {"total": (1.0, 0.3)},
                "first": {"inplane": (2.0, 0.4), "vertical": (1.0, 0.3)},
                "general": {"vertical": (0.25, 0.2)}}[plan.theorem]
    return rows, fieldnames, slopes, {}, defaults


def _run_homogenise(plan: SweepPlan, mesh: CellMesh):
    tensors = homogenised.compute_L(mesh, plan.material)
    row = {}
    vals = {}
    for mat, prefix in ((tensors.L, "L"), (tensors.L1, "L1"),
                        (tensors.L2, "L2")):
        m = mat.shape[0]
        for i in range(m):
            for j in range(i, m):
                key = f"{prefix}_{i + 1}{j + 1}"
                row[key] = mat[i, j]
                vals[key] = float(mat[i, j])
    return [row], list(_HOMOG_COLUMNS), {}, vals, {}


def _run_korn(plan: SweepPlan, mesh: CellMesh):
    d = np.asarray(plan.direction, dtype=float)
    d = d / np.hypot(d[0], d[1])
    mags = np.asarray(sorted(plan.magnitudes, reverse=True), dtype=float)

    def one(t):
        try:
            rep = fs.korn_probe(mesh, t * d, samples=plan.korn_samples,
                                seed=plan.seed)
            return rep.max_ratios, "ok"
        except Exception as exc:
            return {}, f"error:{type(exc).__name__}"

    results = _pool_map(one, list(mags), plan.threads)
    rows = []
    worst: Dict[str, float] = {}
    for t, (ratios, status) in zip(mags, results):
        row = {"chi_mag": t, "status": status}
        for col, key in zip(_KORN_COLUMNS, _KORN_KEYS):
            val = ratios.get(key, np.nan)
            row[col] = val
            if np.isfinite(val):
                worst[col] = max(worst.get(col, 0.0), float(val))
        rows.append(row)
    fieldnames = ["chi_mag"] + list(_KORN_COLUMNS) + ["status"]
    return rows, fieldnames, {}, worst, {}


_RUNNERS = {
    "spectrum": _run_spectrum,
    "ansatz-rates": _run_rates,
    "theorem": _run_theorem,
    "homogenise": _run_homogenise,
    "korn": _run_korn,
}


def run_plan(plan: SweepPlan) -> dict:
    """Execute a plan, write its CSV and JSON artifacts, return the summary.

    The summary is ``{"plan": ..., "slopes": ..., "constants": ...,
    "pass": bool, "tolerances": ...}``; a slope passes when it lies within
    ``tol`` of its target.  Row-level solver failures are recorded in the
    CSV status column and excluded from fits, and do not abort the plan.
    """
    validate_plan(plan)
    mesh = build_mesh(*plan.mesh)
    rows, fieldnames, slopes, constants, defaults = \
        _RUNNERS[plan.kind](plan, mesh)

    tolerances = dict(defaults)
    tolerances.update(plan.tolerances)
    passed = True
    for key, (target, tol) in tolerances.items():
        value = slopes.get(key, constants.get(key))
        if value is None or not np.isfinite(value) or \
                abs(value - target) > tol:
            passed = False

    summary = {
        "plan": {"kind": plan.kind, "name": plan.name,
                 "mesh": list(plan.mesh), "seed": plan.seed,
                 "mode": plan.mode, "theorem": plan.theorem,
                 "gamma": plan.gamma, "delta": plan.delta},
        "slopes": {k: float(v) for k, v in sorted(slopes.items())},
        "constants": {k: float(v) for k, v in sorted(constants.items())},
        "pass": bool(passed),
        "tolerances": {k: [float(t), float(w)]
                       for k, (t, w) in sorted(tolerances.items())},
    }
    if plan.out_csv:
        write_records(plan.out_csv, fieldnames, rows, kind=plan.kind)
    if plan.out_json:
        os.makedirs(os.path.dirname(os.path.abspath(plan.out_json)),
                    exist_ok=True)
        with open(plan.out_json, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return summary
