"""Step approximation of an autonomous Hamiltonian by cube averages.

K = sum c_i F_i where c_i is the mean of H over cube Q_i and F_i is a
plateau profile on Q_i with the same integral as the indicator.  Also
includes the linear-window search and the decomposition-count budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from .cube_grid import Cube
from .field_core import GridField, GridSpec, dilate, mask_volume, sup_norm


class CubesOverlap(ValueError):
    pass


class CubeTooLarge(ValueError):
    pass


class NoWindow(ValueError):
    pass


# ------------------------------------------------------------------ profile

def plateau_profile(mask: np.ndarray, delta: float) -> np.ndarray:
    """Profile on a cube's cells: height 1 + delta/2 inside, collar rings
    of a common smaller weight, total equal to the cell count."""
    mask = np.asarray(mask, bool)
    n = int(np.count_nonzero(mask))
    out = np.zeros(mask.shape)
    if n == 0:
        return out
    top = 1.0 + 0.5 * delta
    target = n / top          # cell-weights needed at height `top`
    inner = mask.copy()
    rings = np.zeros(mask.shape, bool)
    while True:
        eroded = inner & ~dilate(~inner, 1)
        ring = inner & ~eroded
        if not ring.any():
            break
        rings |= ring
        inner = eroded
        n_in = int(np.count_nonzero(inner))
        n_ring = int(np.count_nonzero(rings))
        w = (target - n_in) / n_ring
        if 0.0 <= w <= 1.0:
            out[inner] = top
            out[rings] = top * w
            return out
        if not inner.any():
            break
    # cube too small for a plateau: flat profile at height 1
    out[mask] = 1.0
    return out


def lipschitz_bound(H: GridField) -> float:
    """sqrt(2) * max axis difference quotient: bounds |H(x)-H(y)| / |x-y| over cell centers."""
    v = H.values
    s = H.spec
    gx = np.max(np.abs(np.diff(v, axis=1))) / s.dx if v.shape[1] > 1 else 0.0
    gy = np.max(np.abs(np.diff(v, axis=0))) / s.dy if v.shape[0] > 1 else 0.0
    return math.sqrt(2.0) * max(gx, gy)


# ------------------------------------------------------------------- cubes

def tile_cubes(spec: GridSpec, region, delta: float) -> list:
    """Cell-aligned m x m squares (m = floor(delta / (sqrt 2 dx))) meeting ``region``."""
    region = np.asarray(region, bool)
    m = int(math.floor(delta / (math.sqrt(2.0) * max(spec.dx, spec.dy)) + 1e-9))
    if m < 1:
        raise CubeTooLarge(f"delta={delta} is smaller than one cell diagonal")
    if not region.any():
        return []
    rows = np.flatnonzero(region.any(axis=1))
    cols = np.flatnonzero(region.any(axis=0))
    cubes = []
    for r0 in range(rows[0], rows[-1] + 1, m):
        for c0 in range(cols[0], cols[-1] + 1, m):
            r1, c1 = r0 + m, c0 + m
            if r1 > spec.ny or c1 > spec.nx:
                continue
            if not region[r0:r1, c0:c1].any():
                continue
            cx = spec.x_min + (c0 + 0.5 * m) * spec.dx
            cy = spec.y_min + (r0 + 0.5 * m) * spec.dy
            cubes.append(Cube((float(cx), float(cy)), 0.5 * m * spec.dx, len(cubes)))
    return cubes


def check_cubes(spec: GridSpec, cubes: list, delta: float):
    for c in cubes:
        if c.side * math.sqrt(2.0) > delta * (1 + 1e-12):
            raise CubeTooLarge(f"cube at {c.center} has diameter {c.side * math.sqrt(2):.4g} > delta={delta}")
    for i in range(len(cubes)):
        for j in range(i + 1, len(cubes)):
            a, b = cubes[i], cubes[j]
            if (abs(a.center[0] - b.center[0]) < a.half + b.half - 1e-12
                    and abs(a.center[1] - b.center[1]) < a.half + b.half - 1e-12):
                raise CubesOverlap(f"cubes {i} and {j} overlap")


# ------------------------------------------------------------- certificate

@dataclass
class StepApproxCertificate:
    cubes: list
    c: list
    profiles: list          # per-cube profile arrays F_i
    K: GridField
    delta: float
    eps_requested: float | None
    eps_achieved_sup: float
    eps_achieved_l1: float
    cube_term: float
    uncovered_term: float
    leakage_bound: float
    C: float
    C_prime: float
    vol_U: float
    vol_V: float
    H_sup: float
    HK_sup: float
    sandwich_ok: bool
    mean_match_err: float
    masks: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        tol = 1e-9 * max(1.0, self.leakage_bound)
        ok = self.HK_sup <= self.H_sup + self.eps_achieved_sup + 1e-12
        ok &= self.eps_achieved_l1 <= self.leakage_bound + tol
        if self.eps_requested is not None:
            ok &= self.eps_achieved_sup <= self.eps_requested and self.eps_achieved_l1 < self.eps_requested
        return bool(ok and self.sandwich_ok)

    def to_dict(self) -> dict:
        return {"delta": self.delta, "n_cubes": len(self.cubes),
                "eps_requested": self.eps_requested,
                "eps_achieved_sup": self.eps_achieved_sup, "eps_achieved_l1": self.eps_achieved_l1,
                "cube_term": self.cube_term, "uncovered_term": self.uncovered_term,
                "leakage_bound": self.leakage_bound, "C": self.C, "C_prime": self.C_prime,
                "vol_U": self.vol_U, "vol_V": self.vol_V, "H_sup": self.H_sup, "HK_sup": self.HK_sup,
                "sandwich_ok": self.sandwich_ok, "mean_match_err": self.mean_match_err,
                "c": [float(v) for v in self.c], "ok": self.ok}


def build_step_approx(H: GridField, cubes: list, delta: float, eps: float | None = None,
                      U_region=None) -> StepApproxCertificate:
    """K = sum c_i F_i over disjoint cubes of diameter <= delta.

    U_region defaults to supp H together with the cube cells; V is its
    part not covered by cubes.  The L1 error is checked against
    Vol(V) C' + delta Vol(U) (C + 2C').
    """
    spec = H.spec
    check_cubes(spec, cubes, delta)
    hv = H.values
    area = spec.cell_area
    masks = [c.cell_mask(spec) for c in cubes]
    covered = np.zeros(spec.shape, bool)
    for m in masks:
        if np.any(covered & m):
            raise CubesOverlap("cube cell sets overlap")
        covered |= m
    U = (hv != 0.0) | covered if U_region is None else np.asarray(U_region, bool) | covered
    V = U & ~covered
    C = lipschitz_bound(H)
    Cp = sup_norm(H)
    K = np.zeros(spec.shape)
    cs, profs = [], []
    cube_term = 0.0
    sandwich = True
    mm_err = 0.0
    for m in masks:
        if not m.any():
            cs.append(0.0)
            profs.append(np.zeros(spec.shape))
            continue
        ci = float(hv[m].mean())
        F = plateau_profile(m, delta)
        K += ci * F
        cs.append(ci)
        profs.append(F)
        diff = hv[m] - ci * F[m]
        cube_term += float(np.abs(diff).sum() * area)
        mm_err = max(mm_err, abs(float(diff.sum() * area)) / (np.count_nonzero(m) * area))
        # pointwise sandwich, written for either sign of c_i
        a = abs(ci)
        s = 1.0 if ci >= 0 else -1.0
        lo = -(a + C) * delta - 1e-12
        hi = a + delta * C + 1e-12
        d = s * diff
        if d.min() < lo or d.max() > hi:
            sandwich = False
    KF = GridField(spec, K)
    HK = hv - K
    uncovered_term = float(np.abs(hv[V]).sum() * area)
    eps_l1 = float(np.abs(HK).sum() * area)
    HK_sup = float(np.max(np.abs(HK))) if HK.size else 0.0
    vol_U = mask_volume(spec, U)
    vol_V = mask_volume(spec, V)
    bound = vol_V * Cp + delta * vol_U * (C + 2 * Cp)
    return StepApproxCertificate(cubes, cs, profs, KF, delta, eps, max(0.0, HK_sup - Cp), eps_l1,
                                 cube_term, uncovered_term, bound, C, Cp, vol_U, vol_V, Cp, HK_sup,
                                 sandwich, mm_err, masks)


def tilde_K_bound(c: list, volumes: list, F0_sup: float, uncovered_vol: float, H_sup: float,
                  delta: float, slack: float = 1e-9) -> dict:
    """Size of the collected profile term against (1 + delta) H_sup Vol(V).

    The measured value is |sum c_i Vol(Q_i)| * sup F_0, which for a
    zero-mean H equals |integral of H over the uncovered part| * sup F_0.
    """
    weighted = abs(float(sum(ci * vi for ci, vi in zip(c, volumes))))
    measured = weighted * F0_sup
    bound = (1.0 + delta) * H_sup * uncovered_vol
    return {"sum_c": float(sum(c)), "measured": measured, "bound": bound,
            "ok": measured <= bound + slack}


# ------------------------------------------------------------ linear window

@dataclass
class Window:
    box: tuple          # (x0, x1, y0, y1)
    cells: tuple        # (row0, row1, col0, col1), half-open

    def mask(self, spec: GridSpec) -> np.ndarray:
        m = np.zeros(spec.shape, bool)
        r0, r1, c0, c1 = self.cells
        m[r0:r1, c0:c1] = True
        return m

    @property
    def half_side(self) -> float:
        return 0.5 * min(self.box[1] - self.box[0], self.box[3] - self.box[2])

    def to_dict(self) -> dict:
        return {"box": [float(v) for v in self.box], "cells": [int(v) for v in self.cells]}


def find_linear_window(u: GridField, L_min: float, sizes: int = 6):
    """Square window where u - x1 is closest to a constant.

    Scans square windows of several sizes (at least 2 L_min wide); for
    each the residual is half the oscillation of u - x1 and c its
    midrange.  Returns (window, c, residual); ties prefer larger windows.
    """
    spec = u.spec
    v = u.values
    if np.ptp(v) == 0.0:
        raise NoWindow("u is constant")
    X, _ = spec.centers()
    w = v - X
    k_min = max(2, int(math.ceil(2 * L_min / spec.dx)))
    k_max = min(spec.nx, spec.ny)
    if k_min > k_max:
        raise NoWindow("L_min exceeds the grid")
    ks = sorted({int(round(k)) for k in np.geomspace(k_min, k_max, sizes)})
    best = None
    for k in ks:
        hi, lo = _anchored(w, k)
        res = 0.5 * (hi - lo)
        r, c = np.unravel_index(np.argmin(res), res.shape)
        cand = (float(res[r, c]), -k, int(r), int(c), 0.5 * float(hi[r, c] + lo[r, c]))
        if best is None or cand[0] < best[0] - 1e-12 or (abs(cand[0] - best[0]) <= 1e-12 and cand[1] < best[1]):
            best = cand
    res, negk, r, c, cval = best
    k = -negk
    win = Window((spec.x_min + c * spec.dx, spec.x_min + (c + k) * spec.dx,
                  spec.y_min + r * spec.dy, spec.y_min + (r + k) * spec.dy), (r, r + k, c, c + k))
    if res >= 0.5 * win.half_side:
        raise NoWindow(f"best residual {res:.3g} is not small against the window half-side {win.half_side:.3g}")
    return win, cval, res


def _anchored(w: np.ndarray, k: int):
    """Max and min of w over k x k windows, entry (r, c) = window starting at (r, c)."""
    hi = maximum_filter(w, size=k, mode="nearest")
    lo = minimum_filter(w, size=k, mode="nearest")
    # the filter window at p spans p - k//2 .. p - k//2 + k - 1
    o = k // 2
    n_r, n_c = w.shape[0] - k + 1, w.shape[1] - k + 1
    return hi[o:o + n_r, o:o + n_c], lo[o:o + n_r, o:o + n_c]


# ----------------------------------------------------------------- budget

def thm1_budget_exact(L: float, N_table: int, supp_vol: float, n: int = 1) -> Fraction:
    """ceil(2/L) N + ceil(1/L) 100^(2n) N (3 / L^(2n)) Vol(supp f), in exact rationals."""
    if L <= 0 or N_table < 1:
        raise ValueError("need L > 0 and N_table >= 1")
    Lq = Fraction(L)
    vq = Fraction(supp_vol)
    first = math.ceil(Fraction(2) / Lq) * N_table
    second = math.ceil(Fraction(1) / Lq) * Fraction(100) ** (2 * n) * N_table * 3 * vq / Lq ** (2 * n)
    return first + second


def thm1_budget(L: float, N_table: int, supp_vol: float, n: int = 1) -> int:
    return int(math.ceil(thm1_budget_exact(L, N_table, supp_vol, n)))
