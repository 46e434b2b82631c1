"""``hamflex`` command line.

Every subcommand reads GF1/TF1/FM1/JSON inputs and writes a JSON report
(to ``--report`` or stdout).  Exit codes: 0 all bounds hold, 2 bound
violation, 3 I/O error, 4 precondition failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import cover as cov
from . import cube_grid as cg
from . import flow2d, l1_split, norm_lab, step_approx, time_avg, transport
from .field_core import (FormatError, GridField, TimeField, dilate, mask_volume, read_gf1, read_tf1,
                         region_mask, write_gf1)
from .pipeline import (EXIT_BOUND, EXIT_IO, EXIT_OK, EXIT_PRECONDITION, SCHEMA_VERSION, PipelineConfig,
                       StageError, TamperDetected, _nearest_ball_supports, run_pipeline, verify_bundle)

BOUND_ERRORS = (l1_split.BudgetExceeded, time_avg.BoundViolation, flow2d.IdentityMismatch,
                norm_lab.InequalityViolated, TamperDetected)


def apply_thread_cap():
    """Honor HAMFLEX_THREADS for numba and BLAS-backed numpy."""
    n = os.environ.get("HAMFLEX_THREADS")
    if not n:
        return
    n = max(1, int(n))
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    try:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:   # numba is a hard dependency; tolerate odd installs
        pass


def _region(text: str):
    if text.startswith("@"):
        text = Path(text[1:]).read_text()
    return json.loads(text)


def _emit(report: dict, path: str | None):
    report = dict(report)
    report["schema_version"] = SCHEMA_VERSION
    text = json.dumps(report, sort_keys=True, indent=1) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _load_json(path: str) -> dict:
    return json.loads(Path(path).read_text())


def _code(ok: bool) -> int:
    return EXIT_OK if ok else EXIT_BOUND


# --------------------------------------------------------------- commands

def cmd_split(a) -> int:
    f = read_gf1(a.f)
    cert = l1_split.split(f, region_mask(f.spec, _region(a.h_region)), a.eta)
    if a.pieces_dir:
        d = Path(a.pieces_dir)
        d.mkdir(parents=True, exist_ok=True)
        for k, p in enumerate(cert.pieces):
            write_gf1(p, d / f"piece_{k:03d}.gf1")
    rep = cert.to_dict()
    rep["ok"] = bool(cert.budget <= l1_split.BUDGET_ALWAYS and cert.residual <= 1e-9)
    _emit(rep, a.report)
    return _code(rep["ok"])


def _build_cover(f: GridField, omega, u, eps) -> cov.BallCover:
    bc = cov.build_net(f.spec, omega, u, eps)
    cov.color_distance2(bc)
    return cov.spanning_tree(bc)


def cmd_cover(a) -> int:
    f = read_gf1(a.f)
    supp = f.values != 0
    omega = region_mask(f.spec, _region(a.omega)) if a.omega else dilate(supp, 2)
    u = region_mask(f.spec, _region(a.u))
    bc = _build_cover(f, omega | supp, u, a.eps)
    rep = bc.to_dict()
    rep["coloring_valid"] = cov.coloring_is_valid(bc)
    rep["coverage_gap"] = cov.coverage_gap(f.spec, bc, omega | supp, u)
    rep["ok"] = bool(rep["coloring_valid"] and bc.max_degree() <= bc.degree_bound and rep["n_colors"] <= 100)
    _emit(rep, a.report)
    return _code(rep["ok"])


def cmd_cubes(a) -> int:
    f = read_gf1(a.f)
    bc = cov.BallCover.from_dict(_load_json(a.cover))
    supp = f.values != 0
    supports = _nearest_ball_supports(f.spec, bc, supp)
    colors = {b: bc.colors[b] for b in supports} if bc.colors else None
    fams = cg.build_cube_cover(f.spec, supports, a.a, a.delta, 1, colors)
    ratios = cg.verify_volume_bound(fams, mask_volume(f.spec, supp))
    uncovered = int(np.count_nonzero(supp & ~cg.coverage_mask(f.spec, fams)))
    rep = {"delta": a.delta, "families": [x.to_dict() for x in fams.values()],
           "ratios": [{"color": k[0], "shift": list(k[1]), **v} for k, v in ratios.items()],
           "uncovered_cells": uncovered,
           "ok": bool(uncovered == 0 and all(cg.families_disjoint(x) for x in fams.values()))}
    _emit(rep, a.report)
    return _code(rep["ok"])


def cmd_schedule(a) -> int:
    f = read_gf1(a.f)
    bc = cov.BallCover.from_dict(_load_json(a.cover))
    fams = [cg.CubeFamily.from_dict(d) for d in _load_json(a.cubes)["families"]]
    center = tuple(float(v) for v in a.target.split(","))
    target = transport.TargetSquare(center, a.L)
    supp_vol = mask_volume(f.spec, f.values != 0)
    classes, ok = [], True
    for fam in fams:
        if not fam.cubes:
            continue
        ordered = transport.order_cubes(fam.cubes, bc, center)
        tp = transport.schedule(f.spec, ordered, bc, target, supp_vol, None, 1, False)
        status = "not requested"
        if a.routes:
            try:
                tp.routes = [transport.plan_routes(f.spec, x, bc, target) for x in tp.families]
                status = "planned"
            except (transport.NoFreeSlot, transport.BlockedRoute) as e:
                status = f"not planned: {e}"
        d = tp.to_dict()
        d.update({"color": fam.color, "shift": list(fam.shift), "routes_status": status,
                  "n_families": len(tp.families)})
        ok &= len(tp.families) <= tp.N_L
        classes.append(d)
    _emit({"L": a.L, "supp_vol": supp_vol, "N_L": transport.N_L_bound(supp_vol, a.L),
           "classes": classes, "ok": bool(ok)}, a.report)
    return _code(ok)


def _read_hamiltonian(path: str) -> TimeField:
    head = Path(path).read_text(errors="replace")[:3]
    if head == "GF1":
        return TimeField.autonomous(read_gf1(path))
    if head == "TF1":
        return read_tf1(path)
    raise FormatError(f"{path}: expected a GF1 or TF1 file")


def cmd_flow(a) -> int:
    H = _read_hamiltonian(a.H)
    speed = max(float(np.max(np.hypot(*flow2d.velocity(H.spec, f.values)))) for f in H.fields)
    steps = a.steps or max(8, flow2d.min_steps(H.spec, speed))
    fm = flow2d.integrate(H, steps)
    if a.out:
        flow2d.write_fm1(fm, a.out)
    rep = {"steps": steps, "area_distortion": fm.area_distortion,
           "max_displacement": fm.max_displacement(), "roundtrip_error": fm.roundtrip_error(),
           "ok": bool(fm.area_distortion <= a.max_distortion)}
    _emit(rep, a.report)
    return _code(rep["ok"])


def cmd_discretize(a) -> int:
    G = read_tf1(a.G)
    cert = time_avg.discretize(G, a.N, compute_K=not a.no_K, assert_bounds=False)
    rep = cert.to_dict()
    if a.no_K:
        rep["ok"] = bool(cert.g_sum <= cert.g_sum_bound * (1 + cert.slack))
    _emit(rep, a.report)
    return _code(bool(rep["ok"]))


def cmd_approx(a) -> int:
    H = read_gf1(a.H)
    if a.cubes:
        d = _load_json(a.cubes)
        raw = d if isinstance(d, list) else d["cubes"]
        cubes = [cg.Cube.from_dict(c) for c in raw]
    else:
        cubes = step_approx.tile_cubes(H.spec, H.values != 0, a.delta)
    cert = step_approx.build_step_approx(H, cubes, a.delta, a.eps)
    if a.K:
        write_gf1(cert.K, a.K)
    rep = cert.to_dict()
    rep["cubes"] = [c.to_dict() for c in cubes]
    _emit(rep, a.report)
    return _code(cert.ok)


def cmd_classify(a) -> int:
    spec = norm_lab.NormSpec.parse(a.alpha, a.betas)
    rep = norm_lab.classify_regime(spec, a.kmax).to_dict()
    rep["ok"] = bool(rep["b_estimate"]["consistent"])
    _emit(rep, a.report)
    return _code(rep["ok"])


def cmd_cal(a) -> int:
    H = _read_hamiltonian(a.H)
    _emit({"calabi": norm_lab.calabi(H), "ok": True}, a.report)
    return EXIT_OK


def cmd_pipeline(a) -> int:
    cfg = PipelineConfig.from_dict(_load_json(a.config)) if a.config else PipelineConfig()
    if a.f:
        cfg.f = a.f
    if a.seed is not None:
        cfg.seed = a.seed
    if a.out:
        cfg.report_dir = a.out
    code, rep = run_pipeline(cfg)
    sys.stdout.write(json.dumps(rep["stages"], sort_keys=True) + "\n")
    return code


def cmd_verify(a) -> int:
    res = verify_bundle(a.bundle)
    for name, r in res.items():
        line = f"{name}: {'pass' if r['ok'] else 'FAIL'}"
        if r["problems"]:
            line += " (" + "; ".join(r["problems"]) + ")"
        sys.stdout.write(line + "\n")
    ok = all(r["ok"] for r in res.values())
    if a.report:
        _emit({"results": res, "ok": ok}, a.report)
    return _code(ok)


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hamflex", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("split", help="split a zero-mean field into budgeted pieces")
    s.add_argument("--f", required=True)
    s.add_argument("--h-region", required=True, help="region JSON (or @file) hosting the compensator h")
    s.add_argument("--eta", type=float, default=1e-6)
    s.add_argument("--pieces-dir")
    s.set_defaults(run=cmd_split)

    s = sub.add_parser("cover", help="eps-net, distance-2 coloring and BFS tree")
    s.add_argument("--f", required=True)
    s.add_argument("--u", required=True, help="region JSON (or @file) of U")
    s.add_argument("--omega", help="region JSON (or @file); default: supp f dilated by 2 cells")
    s.add_argument("--eps", type=float, required=True)
    s.set_defaults(run=cmd_cover)

    s = sub.add_parser("cubes", help="shifted-lattice cube cover of supp f")
    s.add_argument("--f", required=True)
    s.add_argument("--cover", required=True)
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--a", type=float)
    s.set_defaults(run=cmd_cubes)

    s = sub.add_parser("schedule", help="order and bin cubes, optionally plan routes")
    s.add_argument("--f", required=True)
    s.add_argument("--cover", required=True)
    s.add_argument("--cubes", required=True)
    s.add_argument("--L", type=float, required=True)
    s.add_argument("--target", required=True, help="center of Q_L as x,y")
    s.add_argument("--routes", action="store_true")
    s.set_defaults(run=cmd_schedule)

    s = sub.add_parser("flow", help="time-1 map of a GF1 (autonomous) or TF1 Hamiltonian")
    s.add_argument("--H", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--out", help="FM1 output path")
    s.add_argument("--max-distortion", type=float, default=1e-3)
    s.set_defaults(run=cmd_flow)

    s = sub.add_parser("discretize", help="N autonomous pieces of a zero-mean TF1 field")
    s.add_argument("--G", required=True)
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--no-K", action="store_true", help="skip the error-generator measurement")
    s.set_defaults(run=cmd_discretize)

    s = sub.add_parser("approx", help="step approximation by cube averages")
    s.add_argument("--H", required=True)
    s.add_argument("--cubes", help="JSON list of cubes (or an object with a 'cubes' list); default: tile supp H")
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--eps", type=float)
    s.add_argument("--K", help="GF1 output path for K")
    s.set_defaults(run=cmd_approx)

    s = sub.add_parser("classify", help="regime of alpha*sup + sum beta_p L^p")
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--betas", default="", help='e.g. "1:1,2:0.5"')
    s.add_argument("--kmax", type=int, default=50)
    s.set_defaults(run=cmd_classify)

    s = sub.add_parser("cal", help="space-time integral of a Hamiltonian")
    s.add_argument("--H", required=True)
    s.set_defaults(run=cmd_cal)

    s = sub.add_parser("pipeline", help="run every stage and write a report bundle")
    s.add_argument("--config", help="PipelineConfig JSON")
    s.add_argument("--f", help="GF1 path or zero|window|random")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="bundle directory")
    s.set_defaults(run=cmd_pipeline)

    s = sub.add_parser("verify", help="recompute every certificate of a bundle")
    s.add_argument("--bundle", required=True)
    s.set_defaults(run=cmd_verify)

    for name, sp in sub.choices.items():
        sp.add_argument("--report", help="JSON report path (default: stdout)")
    return p


def main(argv=None) -> int:
    apply_thread_cap()
    args = build_parser().parse_args(argv)
    try:
        return args.run(args)
    except StageError as e:
        sys.stderr.write(f"hamflex: {e}\n")
        return e.code
    except BOUND_ERRORS as e:
        sys.stderr.write(f"hamflex: bound violated: {e}\n")
        return EXIT_BOUND
    except (OSError, FormatError) as e:
        sys.stderr.write(f"hamflex: I/O error: {e}\n")
        return EXIT_IO
    except (ValueError, KeyError, RuntimeError) as e:
        sys.stderr.write(f"hamflex: precondition failed: {type(e).__name__}: {e}\n")
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
