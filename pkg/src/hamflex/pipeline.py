"""End-to-end decomposition run and its independent verifier.

``run_pipeline`` writes a bundle directory: raw fields and flows (GF1,
FM1), one JSON certificate per stage, a summary ``report.json`` and a
``plot.csv`` of (stage, parameter, value) rows.  ``verify_bundle``
recomputes every asserted inequality from the raw files with plain numpy
and reports pass/fail per certificate.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import cover as cov
from . import cube_grid as cg
from . import l1_split, step_approx, transport
from .field_core import (GridField, GridSpec, dilate, mask_volume, read_gf1, region_mask, sup_norm,
                         support_volume, write_gf1)
from .flow2d import OracleUnsupported, WindowDifferenceOracle, read_fm1, smooth_bump, write_fm1

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_BOUND = 2
EXIT_IO = 3
EXIT_PRECONDITION = 4

CERTIFICATES = ("split", "cover", "cubes", "schedule", "approx", "oracle", "budget")


class TamperDetected(RuntimeError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception, code: int):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.code = code


@dataclass
class PipelineConfig:
    """Scale parameters and regions of one run.

    ``f`` is a GF1 path or a built-in instance name: "zero", "window"
    (zero vertical line integrals, solvable by the window oracle) or
    "random" (seeded mix, generally oracle-limited).  Regions use the
    ``field_core.region_mask`` forms.
    """

    f: str = "window"
    u: str = "x1"
    L: float = 1.0
    eps: float = 0.5
    a: float | None = None
    delta: float = 0.5
    N: int = 7
    grid: dict = field(default_factory=lambda: {"x_min": -4.0, "x_max": 4.0, "y_min": -4.0,
                                                "y_max": 4.0, "nx": 64, "ny": 64})
    cover_eps: float = 0.6
    target_center: tuple = (2.0, 0.0)
    omega_region: dict = field(default_factory=lambda: {"type": "box", "x": [-3.5, 3.5], "y": [-2.0, 2.0]})
    u_region: dict = field(default_factory=lambda: {"type": "box", "x": [0.5, 3.5], "y": [-1.5, 1.5]})
    h_region: dict = field(default_factory=lambda: {"type": "box", "x": [-4.0, 4.0], "y": [2.5, 4.0]})
    oracle_tol: float = 1e-3
    report_dir: str = "hamflex_report"
    seed: int = 0

    def validate(self):
        for name in ("L", "eps", "delta", "cover_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.a is not None and not self.a > 0:
            raise ValueError("a must be positive")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.u != "x1":
            raise ValueError("only the built-in u = x1 is supported")
        if self.f not in ("zero", "window", "random") and not os.path.isfile(self.f):
            raise FileNotFoundError(self.f)

    @property
    def spec(self) -> GridSpec:
        return GridSpec.from_dict(self.grid)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_center"] = list(self.target_center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if "target_center" in d:
            d["target_center"] = tuple(d["target_center"])
        return cls(**d)


# ------------------------------------------------------------- instances

def _normalize(spec: GridSpec, v: np.ndarray, total: float = 0.9) -> np.ndarray:
    v = np.where(np.abs(v) > 1e-12 * np.max(np.abs(v), initial=0.0), v, 0.0)
    s = float(np.max(np.abs(v))) + float(np.sum(np.abs(v)) * spec.cell_area)
    return v * (total / s) if s > 0 else v


def _dy_bump(spec: GridSpec, center, axes, angle=0.0) -> np.ndarray:
    """Centered y-difference of a bump: each column sums to zero on both row parities."""
    B = smooth_bump(spec, center, axes, angle)
    out = np.zeros_like(B)
    out[1:-1] = (B[2:] - B[:-2]) / (2 * spec.dy)
    return out


def _dx_bump(spec: GridSpec, center, axes, angle=0.0) -> np.ndarray:
    B = smooth_bump(spec, center, axes, angle)
    out = np.zeros_like(B)
    out[:, 1:-1] = (B[:, 2:] - B[:, :-2]) / (2 * spec.dx)
    return out


def builtin_field(name: str, spec: GridSpec, seed: int = 0) -> GridField:
    if name == "zero":
        return GridField(spec, np.zeros(spec.shape))
    if name == "window":
        v = _dy_bump(spec, (-1.5, 0.0), (0.8, 0.8))
        return GridField(spec, _normalize(spec, v, 0.05))
    if name == "random":
        rng = np.random.default_rng(seed)
        v = np.zeros(spec.shape)
        for _ in range(3):
            c = (-1.5 + 0.6 * (rng.random() - 0.5), 0.6 * (rng.random() - 0.5))
            ax = (0.4 + 0.3 * rng.random(), 0.4 + 0.3 * rng.random())
            fn = _dy_bump if rng.random() < 0.5 else _dx_bump
            v += (rng.random() - 0.5) * fn(spec, c, ax, float(rng.random() * math.pi))
        return GridField(spec, _normalize(spec, v, 0.9))
    raise ValueError(f"unknown built-in field {name!r}")


# ------------------------------------------------------------- bundle io

def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _write_json(path: Path, obj: dict):
    obj = dict(obj)
    obj["schema_version"] = SCHEMA_VERSION
    path.write_text(_dump_json(obj))


def _read_json(path: Path) -> dict:
    d = json.loads(Path(path).read_text())
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema_version {d.get('schema_version')!r}")
    return d


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (l1_split.BudgetExceeded, step_approx.CubeTooLarge, transport.CubeTooLarge) as e:
        raise StageError(name, e, EXIT_BOUND) from e
    except OSError as e:
        raise StageError(name, e, EXIT_IO) from e
    except (ValueError, KeyError, cov.Disconnected) as e:
        raise StageError(name, e, EXIT_PRECONDITION) from e


def _nearest_ball_supports(spec: GridSpec, cover: cov.BallCover, supp: np.ndarray) -> dict:
    X, Y = spec.centers()
    out: dict = {}
    if not cover.size or not supp.any():
        return out
    xs, ys = X[supp], Y[supp]
    d = np.stack([np.hypot(xs - c[0], ys - c[1]) for c in cover.centers])
    owner = np.argmin(d, axis=0)
    rows, cols = np.nonzero(supp)
    for b in sorted(set(owner.tolist())):
        m = np.zeros(spec.shape, bool)
        sel = owner == b
        m[rows[sel], cols[sel]] = True
        out[int(b)] = m
    return out


# --------------------------------------------------------------- pipeline

def run_pipeline(config: PipelineConfig) -> tuple:
    """Run all stages, write the bundle, return (exit_code, report dict)."""
    try:
        config.validate()
    except FileNotFoundError as e:
        raise StageError("config", e, EXIT_IO) from e
    except ValueError as e:
        raise StageError("config", e, EXIT_PRECONDITION) from e
    spec = config.spec
    out = Path(config.report_dir)
    try:
        (out / "pieces").mkdir(parents=True, exist_ok=True)
        (out / "flows").mkdir(exist_ok=True)
        for old in list((out / "pieces").glob("*.gf1")) + list((out / "flows").glob("*.fm1")):
            old.unlink()
    except OSError as e:
        raise StageError("io", e, EXIT_IO) from e

    if config.f in ("zero", "window", "random"):
        f = builtin_field(config.f, spec, config.seed)
    else:
        f = _stage("input", read_gf1, config.f)
        if f.spec != spec:
            raise StageError("input", ValueError("input grid differs from config grid"), EXIT_PRECONDITION)
    write_gf1(f, out / "f.gf1")
    supp = f.values != 0.0
    supp_vol = mask_volume(spec, supp)
    stages: dict = {}

    # split
    hreg = region_mask(spec, config.h_region)
    sc = _stage("split", l1_split.split, f, hreg)
    for k, p in enumerate(sc.pieces):
        write_gf1(p, out / "pieces" / f"piece_{k:03d}.gf1")
    if sc.h is not None:
        write_gf1(sc.h, out / "h.gf1")
    d = sc.to_dict()
    d["n_pieces"] = len(sc.pieces)
    d["ok"] = bool(sc.budget <= l1_split.BUDGET_ALWAYS and sc.residual <= 1e-9)
    stages["split"] = d

    # cover
    omega = region_mask(spec, config.omega_region) | dilate(supp, 1)
    ureg = region_mask(spec, config.u_region)
    if np.any(supp & ureg):
        raise StageError("cover", ValueError("supp f meets U"), EXIT_PRECONDITION)
    if supp.any():
        bc = _stage("cover", cov.build_net, spec, omega, ureg, config.cover_eps)
        cov.color_distance2(bc)
        _stage("cover", cov.spanning_tree, bc)
    else:
        bc = cov.BallCover(np.zeros((0, 2)), config.cover_eps, [], [], 1, [], {}, {})
    d = bc.to_dict()
    d["coloring_valid"] = cov.coloring_is_valid(bc)
    d["ok"] = bool(d["coloring_valid"] and bc.max_degree() <= bc.degree_bound
                   and (d["n_colors"] or 0) <= 100)
    stages["cover"] = d

    # cubes
    supports = _nearest_ball_supports(spec, bc, supp)
    colors = {b: bc.colors[b] for b in supports}
    fams = _stage("cubes", cg.build_cube_cover, spec, supports, config.a, config.delta, 1, colors)
    covered = cg.coverage_mask(spec, fams)
    ratios = cg.verify_volume_bound(fams, supp_vol)
    stages["cubes"] = {
        "delta": config.delta,
        "a": next(iter(fams.values())).a if fams else config.a,
        "families": [fam.to_dict() for fam in fams.values()],
        "ratios": [{"color": k[0], "shift": list(k[1]), **v} for k, v in ratios.items()],
        "uncovered_cells": int(np.count_nonzero(supp & ~covered)),
        "ok": bool(not np.any(supp & ~covered) and all(cg.families_disjoint(x) for x in fams.values())),
    }

    # schedule
    target = transport.TargetSquare(tuple(config.target_center), config.L)
    h_mask = sc.h.values != 0 if sc.h is not None else None
    classes = []
    sched_ok = True
    for (col, lam), fam in fams.items():
        if not fam.cubes:
            continue
        ordered = _stage("schedule", transport.order_cubes, fam.cubes, bc, tuple(config.target_center))
        tp = _stage("schedule", transport.schedule, spec, ordered, bc, target, supp_vol, h_mask, 1, False)
        routes = "planned"
        try:
            tp.routes = [transport.plan_routes(spec, fm, bc, target, h_mask) for fm in tp.families]
        except (transport.NoFreeSlot, transport.BlockedRoute) as e:
            tp.routes = []
            routes = f"not planned: {e}"
        d = tp.to_dict()
        d.update({"color": col, "shift": list(lam), "routes_status": routes,
                  "n_families": len(tp.families)})
        sched_ok &= len(tp.families) <= tp.N_L
        sched_ok &= all(v <= 0.5 * (2 * config.L) ** 2 + 1e-12 for v in d["family_volumes"])
        classes.append(d)
    stages["schedule"] = {"L": config.L, "supp_vol": supp_vol,
                          "N_L": transport.N_L_bound(supp_vol, config.L), "classes": classes,
                          "ok": bool(sched_ok)}

    # step approximation of f viewed as an autonomous zero-mean Hamiltonian
    tiles = step_approx.tile_cubes(spec, supp, config.delta)
    cert = _stage("approx", step_approx.build_step_approx, f, tiles, config.delta)
    write_gf1(cert.K, out / "K.gf1")
    d = cert.to_dict()
    d["cubes"] = [c.to_dict() for c in tiles]
    d["eps_met"] = bool(cert.eps_achieved_sup <= config.eps and cert.eps_achieved_l1 < config.eps)
    stages["approx"] = d

    # local solve on the window around supp f
    oracle = WindowDifferenceOracle()
    window = dilate(supp, 2)
    try:
        terms = oracle(f, window) if supp.any() else []
        recon = oracle.reconstruct(terms, spec) if terms else GridField(spec, np.zeros(spec.shape))
        residual = float(np.max(np.abs(recon.values - f.values)))
        for k, (sign, fm) in enumerate(terms):
            write_fm1(fm, out / "flows" / f"term_{k:02d}.fm1")
        stages["oracle"] = {"status": "solved", "terms": [int(s) for s, _ in terms],
                            "residual": residual, "tol": config.oracle_tol,
                            "ok": bool(residual <= config.oracle_tol)}
    except OracleUnsupported as e:
        stages["oracle"] = {"status": "oracle-limited", "reason": str(e), "terms": [],
                            "residual": None, "tol": config.oracle_tol, "ok": True}

    # decomposition count against the budget formula
    n_fam = sum(c["n_families"] for c in classes)
    achieved = oracle.max_terms * n_fam * len(sc.pieces) if supp.any() else 0
    budget = step_approx.thm1_budget(config.L, config.N, supp_vol)
    stages["budget"] = {"L": config.L, "N_table": config.N, "supp_vol": supp_vol, "budget": budget,
                        "achieved": achieved, "max_terms": oracle.max_terms, "n_pieces": len(sc.pieces),
                        "n_families": n_fam, "ok": bool(achieved <= budget)}

    for name in CERTIFICATES:
        _write_json(out / f"{name}.json", stages[name])
    ok = all(stages[n]["ok"] for n in CERTIFICATES)
    cfg = config.to_dict()
    cfg.pop("report_dir")     # where the bundle lives is not part of its content
    report = {"config": cfg, "grid": spec.to_dict(),
              "stages": {n: bool(stages[n]["ok"]) for n in CERTIFICATES},
              "residual": stages["oracle"]["residual"], "oracle_status": stages["oracle"]["status"],
              "budget": budget, "achieved": achieved, "ok": bool(ok)}
    _write_json(out / "report.json", report)
    (out / "plot.csv").write_text(_plot_csv(stages))
    return (EXIT_OK if ok else EXIT_BOUND), report


def _plot_csv(stages: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "parameter", "value"])
    for name in CERTIFICATES:
        for k, v in sorted(stages[name].items()):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                continue
            w.writerow([name, k, repr(v)])
    return buf.getvalue()


# ----------------------------------------------------------------- verify

def _close(a, b, rtol=1e-9, atol=1e-12) -> bool:
    if a is None or b is None:
        return a is b
    return abs(float(a) - float(b)) <= atol + rtol * max(abs(float(a)), abs(float(b)))


def _check(results: dict, name: str, fn):
    try:
        problems = fn()
    except Exception as e:   # a broken artifact fails its own certificate only
        problems = [f"{type(e).__name__}: {e}"]
    results[name] = {"ok": not problems, "problems": problems}


def _v_split(root: Path, f: GridField) -> list:
    d = _read_json(root / "split.json")
    area = f.spec.cell_area
    files = sorted((root / "pieces").glob("piece_*.gf1"))
    fields = [read_gf1(p) for p in files]
    pieces = [p.values for p in fields]
    probs = []
    if len(pieces) != d["n_pieces"]:
        probs.append("piece count differs")
    budget = sum(sup_norm(p) * (support_volume(p) + 1.0) for p in fields)
    if not _close(budget, d["budget"]):
        probs.append(f"budget {budget} != reported {d['budget']}")
    if budget > 100.0:
        probs.append("budget above 100")
    for p, rec in zip(pieces, d["pieces"]):
        if abs(p.sum() * area) > 1e-9:
            probs.append("piece with nonzero mean")
        if not _close(float(np.max(np.abs(p))), rec["sup"]):
            probs.append("piece sup differs")
    recon = np.sum(pieces, axis=0) if pieces else np.zeros(f.spec.shape)
    if float(np.max(np.abs(recon - f.values))) > 1e-9:
        probs.append("pieces do not sum to f")
    return probs


def _v_cover(root: Path, f: GridField) -> list:
    d = _read_json(root / "cover.json")
    C = np.asarray(d["centers"], float).reshape(-1, 2)
    eps = float(d["radius"])
    probs = []
    if not len(C):
        return probs if not np.any(f.values) else ["empty cover for nonzero f"]
    D = np.hypot(C[:, None, 0] - C[None, :, 0], C[:, None, 1] - C[None, :, 1])
    adj = (D < 2 * eps) & ~np.eye(len(C), dtype=bool)
    deg = int(adj.sum(axis=1).max())
    if deg != d["max_degree"]:
        probs.append(f"max degree {deg} != reported {d['max_degree']}")
    if deg > 24:
        probs.append("degree above 24")
    colors = np.asarray(d["colors"])
    two = adj | ((adj.astype(int) @ adj.astype(int)) > 0)
    np.fill_diagonal(two, False)
    if np.any(two & (colors[:, None] == colors[None, :])):
        probs.append("two balls within distance 2 share a color")
    nc = int(colors.max()) + 1
    if nc != d["n_colors"] or nc > 100:
        probs.append(f"color count {nc} (reported {d['n_colors']})")
    # every support cell lies within eps of a center
    X, Y = f.spec.centers()
    s = f.values != 0
    if s.any():
        best = np.min(np.hypot(X[s][:, None] - C[None, :, 0], Y[s][:, None] - C[None, :, 1]), axis=1)
        if float(best.max()) >= eps:
            probs.append("support cell outside every ball")
    return probs


def _v_cubes(root: Path, f: GridField) -> list:
    d = _read_json(root / "cubes.json")
    X, Y = f.spec.centers()
    covered = np.zeros(f.spec.shape, bool)
    probs = []
    supp = f.values != 0
    vol = float(np.count_nonzero(supp) * f.spec.cell_area)
    for fam, rat in zip(d["families"], d["ratios"]):
        cs = fam["cubes"]
        cen = np.array([c["center"] for c in cs], float).reshape(-1, 2)
        half = np.array([c["half"] for c in cs], float)
        for (cx, cy), h in zip(cen, half):
            covered |= (np.abs(X - cx) < h) & (np.abs(Y - cy) < h)
        if len(cs) > 1:
            dx = np.abs(cen[:, None, 0] - cen[None, :, 0])
            dy = np.abs(cen[:, None, 1] - cen[None, :, 1])
            hh = half[:, None] + half[None, :]
            hit = (dx < hh - 1e-12) & (dy < hh - 1e-12)
            np.fill_diagonal(hit, False)
            if hit.any():
                probs.append(f"class {fam['shift']} has overlapping cubes")
        ratio = float(np.sum((2 * half) ** 2)) / vol if vol > 0 else 0.0
        if not _close(ratio, rat["ratio"]):
            probs.append(f"class {fam['shift']} ratio {ratio} != reported {rat['ratio']}")
    missed = int(np.count_nonzero(supp & ~covered))
    if missed:
        probs.append("support cells not covered")
    if missed != d["uncovered_cells"]:
        probs.append(f"{missed} uncovered cells, reported {d['uncovered_cells']}")
    return probs


def _v_schedule(root: Path, f: GridField) -> list:
    d = _read_json(root / "schedule.json")
    L = float(d["L"])
    vol = float(np.count_nonzero(f.values) * f.spec.cell_area)
    N_L = int(math.ceil(3.0 * vol / (2 * L) ** 2))
    probs = []
    if N_L != d["N_L"] or not _close(vol, d["supp_vol"]):
        probs.append(f"N_L {N_L} != reported {d['N_L']}")
    cap = 0.5 * (2 * L) ** 2
    for c in d["classes"]:
        fams = c["families"]
        if len(fams) > N_L or len(fams) != c["n_families"]:
            probs.append(f"class {c['shift']}: {len(fams)} families vs N_L {N_L}")
        for fam, rv in zip(fams, c["family_volumes"]):
            v = sum((2 * cc["half"]) ** 2 for cc in fam)
            if v > cap + 1e-12 or not _close(v, rv):
                probs.append(f"class {c['shift']}: family volume {v}")
    return probs


def _v_approx(root: Path, f: GridField) -> list:
    d = _read_json(root / "approx.json")
    K = read_gf1(root / "K.gf1").values
    H = f.values
    s = f.spec
    area = s.cell_area
    probs = []
    HK = H - K
    l1 = float(np.abs(HK).sum() * area)
    hk_sup = float(np.max(np.abs(HK)))
    Hs = float(np.max(np.abs(H)))
    gx = np.max(np.abs(np.diff(H, axis=1))) / s.dx
    gy = np.max(np.abs(np.diff(H, axis=0))) / s.dy
    C = math.sqrt(2.0) * max(gx, gy)
    X, Y = s.centers()
    covered = np.zeros(s.shape, bool)
    for c in d["cubes"]:
        covered |= (np.abs(X - c["center"][0]) < c["half"]) & (np.abs(Y - c["center"][1]) < c["half"])
    U = (H != 0) | covered
    V = U & ~covered
    bound = np.count_nonzero(V) * area * Hs + d["delta"] * np.count_nonzero(U) * area * (C + 2 * Hs)
    for name, mine in (("eps_achieved_l1", l1), ("HK_sup", hk_sup), ("H_sup", Hs), ("C", C),
                       ("leakage_bound", bound)):
        if not _close(mine, d[name], rtol=1e-8):
            probs.append(f"{name} {mine} != reported {d[name]}")
    if l1 > bound * (1 + 1e-9):
        probs.append("L1 error above the leakage bound")
    if hk_sup > Hs + max(0.0, hk_sup - Hs) + 1e-12 or not _close(max(0.0, hk_sup - Hs), d["eps_achieved_sup"]):
        probs.append("sup bound not met")
    return probs


def _v_oracle(root: Path, f: GridField) -> list:
    d = _read_json(root / "oracle.json")
    if d["status"] == "oracle-limited":
        return [] if not d["terms"] else ["limited oracle with terms"]
    X, _ = f.spec.centers()
    files = sorted((root / "flows").glob("term_*.fm1"))
    if len(files) != len(d["terms"]):
        return ["flow count differs"]
    acc = np.zeros(f.spec.shape)
    for sign, p in zip(d["terms"], files):
        acc += sign * (read_fm1(p).bwd_x - X)
    res = float(np.max(np.abs(acc - f.values)))
    probs = []
    if not _close(res, d["residual"], rtol=1e-6, atol=1e-12):
        probs.append(f"residual {res} != reported {d['residual']}")
    if res > d["tol"]:
        probs.append("residual above tolerance")
    return probs


def _v_budget(root: Path, f: GridField) -> list:
    d = _read_json(root / "budget.json")
    L = Fraction(d["L"])
    n = d["N_table"]
    vol = Fraction(float(np.count_nonzero(f.values) * f.spec.cell_area))
    val = math.ceil(2 / L) * n + math.ceil(1 / L) * 100 ** 2 * n * 3 * vol / L ** 2
    b = int(math.ceil(val))
    sched = _read_json(root / "schedule.json")
    n_fam = sum(len(c["families"]) for c in sched["classes"])
    n_pieces = len(list((root / "pieces").glob("piece_*.gf1")))
    achieved = d["max_terms"] * n_fam * n_pieces if np.any(f.values) else 0
    probs = []
    if b != d["budget"]:
        probs.append(f"budget {b} != reported {d['budget']}")
    if achieved != d["achieved"]:
        probs.append(f"achieved {achieved} != reported {d['achieved']}")
    if achieved > b:
        probs.append("achieved count above budget")
    return probs


def verify_bundle(root, strict: bool = False) -> dict:
    """Recompute every certificate from the raw bundle files."""
    root = Path(root)
    f = read_gf1(root / "f.gf1")
    results: dict = {}
    for name, fn in (("split", _v_split), ("cover", _v_cover), ("cubes", _v_cubes),
                     ("schedule", _v_schedule), ("approx", _v_approx), ("oracle", _v_oracle),
                     ("budget", _v_budget)):
        _check(results, name, lambda fn=fn: fn(root, f))
    rep = _read_json(root / "report.json")
    for name in CERTIFICATES:
        if not results[name]["ok"] and rep["stages"].get(name):
            results[name]["problems"].append("report claims pass")
    if strict:
        bad = {k: v["problems"] for k, v in results.items() if not v["ok"]}
        if bad:
            raise TamperDetected(f"certificates failed: {bad}")
    return results
