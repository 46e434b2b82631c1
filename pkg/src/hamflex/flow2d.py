"""Hamiltonian flows on the planar grid.

Velocity is the symplectic gradient (dH/dy, -dH/dx), taken by centered
finite differences (one-sided at the grid edge) and interpolated
bilinearly between cell centers.  Trajectories of the cell centers are
advanced with classical RK4, forward over [0, 1] for the map and backward
for its inverse.  The map is stored as the images of all cell centers.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt, map_coordinates

from . import _kernels
from .field_core import (FormatError, GridField, GridSpec, TimeField, _fmt, _open_text,
                         dilate, sup_norm)


class CFLViolation(RuntimeError):
    pass


class CorridorBlocked(RuntimeError):
    pass


class IdentityMismatch(RuntimeError):
    pass


class OracleUnsupported(ValueError):
    pass


# ------------------------------------------------------------------ velocity

def velocity(spec: GridSpec, H: np.ndarray):
    """(u, v) = (dH/dy, -dH/dx) on cell centers."""
    dHdy, dHdx = np.gradient(H, spec.dy, spec.dx, edge_order=1)
    return dHdy, -dHdx


def _interp(arr: np.ndarray, rows, cols, order: int = 1, mode: str = "constant"):
    return map_coordinates(arr, [rows, cols], order=order, mode=mode, cval=0.0,
                           prefilter=order > 1)


class _VelocitySampler:
    """Symplectic gradient of the bicubic Catmull-Rom interpolant of H.

    At cell centers the interpolant's gradient is the centered difference,
    and since the velocity is the rotated gradient of one C^1 function it
    is exactly divergence-free between nodes.  H is linear in time between
    slices and zero outside the grid.
    """

    PAD = 2

    def __init__(self, spec: GridSpec, slices, t_grid):
        self.spec = spec
        arrs = [np.asarray(s, float) for s in slices]
        t = np.asarray(t_grid, float)
        if all(np.array_equal(arrs[0], a) for a in arrs[1:]):
            arrs, t = arrs[:1], t[:1]
        self.t = np.ascontiguousarray(t)
        self.A = np.ascontiguousarray(np.stack([np.pad(a, self.PAD) for a in arrs]))
        nz = np.any(self.A != 0.0, axis=0)
        self.live = np.ascontiguousarray(
            np.lib.stride_tricks.sliding_window_view(nz, (4, 4)).any(axis=(2, 3)))
        self.speed = max(float(np.max(np.hypot(*velocity(spec, a)))) for a in arrs)

    def _args(self):
        s = self.spec
        return s.x_min, s.y_min, s.dx, s.dy, self.PAD

    def __call__(self, t, x, y):
        k0, k1, w = _kernels._locate(self.t, float(t))
        shape = np.shape(x)
        u, v = _kernels.velocity_at(self.A, k0, k1, w, np.ravel(np.asarray(x, float)),
                                    np.ravel(np.asarray(y, float)), *self._args())
        return u.reshape(shape), v.reshape(shape)

    def run(self, x, y, t0: float, t1: float, steps: int):
        """Endpoints and det(J) - 1 of trajectories started at (x, y) at time t0."""
        shape = np.shape(x)
        ox, oy, od = _kernels.rk4_tangent(self.A, self.live, self.t, np.ravel(np.asarray(x, float)),
                                          np.ravel(np.asarray(y, float)), float(t0), float(t1),
                                          int(steps), *self._args())
        return ox.reshape(shape), oy.reshape(shape), od.reshape(shape)

    def run_points(self, x, y, t0: float, t1: float, steps: int):
        shape = np.shape(x)
        ox, oy = _kernels.rk4_points(self.A, self.live, self.t, np.ravel(np.asarray(x, float)),
                                     np.ravel(np.asarray(y, float)), float(t0), float(t1),
                                     int(steps), *self._args())
        return ox.reshape(shape), oy.reshape(shape)


def _check_cfl(spec: GridSpec, speed: float, dt: float):
    cell = min(spec.dx, spec.dy)
    if speed * abs(dt) > cell:
        raise CFLViolation(f"displacement per step {speed * abs(dt):.4g} exceeds one cell ({cell:.4g})")


def min_steps(spec: GridSpec, speed: float, duration: float = 1.0, cell_fraction: float = 0.5) -> int:
    """Steps keeping the displacement per step below ``cell_fraction`` cells."""
    return max(1, int(math.ceil(speed * duration / (cell_fraction * min(spec.dx, spec.dy)))))


# ------------------------------------------------------------------- maps

class Translation:
    """Exact rigid translation of the plane (used as a conjugating chart map)."""

    def __init__(self, tx: float, ty: float):
        self.tx, self.ty = float(tx), float(ty)

    def apply(self, x, y):
        return np.asarray(x) + self.tx, np.asarray(y) + self.ty

    def inv(self):
        return Translation(-self.tx, -self.ty)


class Composed:
    """a o b o ... evaluated pointwise from the right."""

    def __init__(self, *maps):
        self.maps = maps

    def apply(self, x, y):
        for m in reversed(self.maps):
            x, y = m.apply(x, y)
        return x, y

    def inv(self):
        return Composed(*[m.inv() for m in reversed(self.maps)])


@dataclass
class FlowMap:
    """Time-1 map stored as the images of all cell centers under the map
    and its inverse.

    ``segments`` lists (sampler, steps, direction) pieces of the generating
    flow, applied first to last; when present, ``apply`` re-integrates the
    trajectories of arbitrary points instead of interpolating the stored
    displacement, which keeps compositions accurate across steep
    displacement gradients.  Maps read from files interpolate (cubic).
    """

    spec: GridSpec
    fwd_x: np.ndarray
    fwd_y: np.ndarray
    bwd_x: np.ndarray
    bwd_y: np.ndarray
    area_distortion: float = 0.0
    generator: object = None
    hofer_cost: float | None = None
    interp_order: int = 3
    segments: list | None = field(default=None, repr=False)

    @classmethod
    def identity(cls, spec: GridSpec) -> "FlowMap":
        X, Y = spec.centers()
        return cls(spec, X.copy(), Y.copy(), X.copy(), Y.copy(), 0.0, None, 0.0, segments=[])

    def _eval(self, mx, my, x, y):
        X, Y = self.spec.centers()
        r, c = self.spec.to_index(x, y)
        dx = _interp(mx - X, r, c, self.interp_order, "nearest")
        dy = _interp(my - Y, r, c, self.interp_order, "nearest")
        # compact support: no displacement outside the box
        out = (np.asarray(x) < self.spec.x_min) | (np.asarray(x) > self.spec.x_max) | \
              (np.asarray(y) < self.spec.y_min) | (np.asarray(y) > self.spec.y_max)
        dx = np.where(out, 0.0, dx)
        dy = np.where(out, 0.0, dy)
        return np.asarray(x) + dx, np.asarray(y) + dy

    @staticmethod
    def _run(segments, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        for smp, steps, direction in segments:
            t0, t1 = (0.0, 1.0) if direction > 0 else (1.0, 0.0)
            x, y = smp.run_points(x, y, t0, t1, steps)
        return x, y

    def _inverse_segments(self):
        return [(smp, st, -d) for smp, st, d in reversed(self.segments)]

    def apply(self, x, y):
        if self.segments is not None:
            return self._run(self.segments, x, y)
        return self._eval(self.fwd_x, self.fwd_y, x, y)

    def apply_inverse(self, x, y):
        if self.segments is not None:
            return self._run(self._inverse_segments(), x, y)
        return self._eval(self.bwd_x, self.bwd_y, x, y)

    def inv(self) -> "FlowMap":
        segs = None if self.segments is None else self._inverse_segments()
        return FlowMap(self.spec, self.bwd_x, self.bwd_y, self.fwd_x, self.fwd_y,
                       self.area_distortion, self.generator, self.hofer_cost, self.interp_order, segs)

    def compose(self, other: "FlowMap") -> "FlowMap":
        """self o other on the cell centers."""
        fx, fy = self.apply(other.fwd_x, other.fwd_y)
        bx, by = other.apply_inverse(self.bwd_x, self.bwd_y)
        cost = None
        if self.hofer_cost is not None and other.hofer_cost is not None:
            cost = self.hofer_cost + other.hofer_cost
        segs = None
        if self.segments is not None and other.segments is not None:
            segs = list(other.segments) + list(self.segments)
        fm = FlowMap(self.spec, fx, fy, bx, by, 0.0, None, cost, self.interp_order, segs)
        fm.area_distortion = measure_distortion(fm)
        return fm

    def max_displacement(self) -> float:
        X, Y = self.spec.centers()
        return float(np.max(np.hypot(self.fwd_x - X, self.fwd_y - Y)))

    def roundtrip_error(self) -> float:
        """sup over cell centers of |phi^{-1}(phi(p)) - p|."""
        X, Y = self.spec.centers()
        x, y = self.apply_inverse(self.fwd_x, self.fwd_y)
        return float(np.max(np.hypot(x - X, y - Y)))


def _det_deviation(spec: GridSpec, mx, my) -> float:
    dxdy, dxdx = np.gradient(mx, spec.dy, spec.dx, edge_order=2)
    dydy, dydx = np.gradient(my, spec.dy, spec.dx, edge_order=2)
    return float(np.max(np.abs(dxdx * dydy - dxdy * dydx - 1.0)))


def measure_distortion(fm: FlowMap) -> float:
    """max |det J - 1| with J by node differences of the stored maps.

    Coarser than the tangent-flow value recorded by ``integrate``: it also
    picks up the node-spacing error of differentiating a sheared map, so it
    serves as a producer-independent upper estimate for stored or composed maps.
    """
    return max(_det_deviation(fm.spec, fm.fwd_x, fm.fwd_y),
               _det_deviation(fm.spec, fm.bwd_x, fm.bwd_y))


def integrate(H: TimeField, steps: int) -> FlowMap:
    """Time-1 map of H and its inverse by RK4 on cell-center trajectories."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    spec = H.spec
    sampler = _VelocitySampler(spec, [f.values for f in H.fields], H.t_grid)
    _check_cfl(spec, sampler.speed, 1.0 / steps)
    X, Y = spec.centers()
    if sampler.speed == 0.0:
        fm = FlowMap.identity(spec)
        fm.generator = H
        return fm
    fx, fy, fdet = sampler.run(X, Y, 0.0, 1.0, steps)
    bx, by, bdet = sampler.run(X, Y, 1.0, 0.0, steps)
    dist = float(max(np.max(np.abs(fdet)), np.max(np.abs(bdet))))
    return FlowMap(spec, fx, fy, bx, by, dist, H, None, segments=[(sampler, steps, 1)])


def integrate_autonomous(F: GridField, steps: int, duration: float = 1.0) -> FlowMap:
    """Time-``duration`` map of an autonomous Hamiltonian."""
    H = TimeField.autonomous(GridField(F.spec, duration * F.values))
    fm = integrate(H, steps)
    fm.hofer_cost = duration * sup_norm(F)
    return fm


def _catmull_rom_weights(t):
    t2, t3 = t * t, t * t * t
    return ((-t3 + 2 * t2 - t) / 2, (3 * t3 - 5 * t2 + 2) / 2, (-3 * t3 + 4 * t2 + t) / 2, (t3 - t2) / 2)


def _catmull_rom(arr: np.ndarray, rows, cols) -> np.ndarray:
    """Bicubic Catmull-Rom interpolation, zero outside the grid.  Local
    4 x 4 stencil, so supports grow by at most two cells."""
    P = 2
    A = np.pad(arr, P)
    r = np.asarray(rows, float) + P
    c = np.asarray(cols, float) + P
    hi_r, hi_c = A.shape[0] - 3, A.shape[1] - 3
    inside = (r >= 1) & (r <= hi_r) & (c >= 1) & (c <= hi_c)
    r = np.clip(r, 1, hi_r)
    c = np.clip(c, 1, hi_c)
    i = np.minimum(np.floor(r).astype(int), hi_r - 1)     # t reaches 1 on the last node
    j = np.minimum(np.floor(c).astype(int), hi_c - 1)
    wr = _catmull_rom_weights(r - i)
    wc = _catmull_rom_weights(c - j)
    out = np.zeros(r.shape)
    for a in range(4):
        for b in range(4):
            out += wr[a] * wc[b] * A[i + a - 1, j + b - 1]
    return np.where(inside, out, 0.0)


def pullback(f: GridField, phi: FlowMap, order: int = 3) -> GridField:
    """f o phi^{-1}, sampled at the backward images of cell centers.

    ``order`` 3 is bicubic Catmull-Rom (exact at nodes, slight undershoot
    near steep edges), 1 is bilinear.
    """
    r, c = f.spec.to_index(phi.bwd_x, phi.bwd_y)
    if order == 3:
        vals = _catmull_rom(f.values, r, c)
    elif order == 1:
        vals = _interp(f.values, r, c, 1, "constant")
    else:
        raise ValueError("order must be 1 or 3")
    return GridField(f.spec, vals)


def composed_flow(outer: FlowMap, inner: FlowMap) -> FlowMap:
    return outer.compose(inner)


# ------------------------------------------------------------- cube transport

def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def corridor_cutoff(spec: GridSpec, plateau: np.ndarray, ramp: float) -> np.ndarray:
    """1 on the plateau cells, smooth decay to 0 over distance ``ramp``."""
    if not plateau.any():
        return np.zeros(spec.shape)
    d = distance_transform_edt(~plateau, sampling=(spec.dy, spec.dx))
    return 1.0 - _smoothstep(d / ramp)


@dataclass
class TranslationResult:
    flow: FlowMap
    hofer_cost: float
    segment_hamiltonians: list
    corridor: np.ndarray

    def as_timefield(self, samples_per_segment: int = 2) -> TimeField:
        """One generator on [0,1]: segment s runs on its subinterval, sped up by S."""
        S = len(self.segment_hamiltonians)
        if S == 0:
            return TimeField.autonomous(GridField(self.flow.spec, np.zeros(self.flow.spec.shape), 0.0))
        arrays = []
        for Hs in self.segment_hamiltonians:
            for _ in range(samples_per_segment):
                arrays.append(S * Hs.values)
        # time samples sit on a uniform grid; the piecewise-constant profile is
        # approximated by repeating each segment's value
        return TimeField.from_array(self.flow.spec, np.array(arrays))


STENCIL_REACH = 2   # cells read on each side by the bicubic velocity stencil


def footprint_cells(clearance: int = 1, ramp_cells: int = 6) -> int:
    """Cells beyond the swept square that a cube translation may move."""
    return clearance + STENCIL_REACH + ramp_cells + STENCIL_REACH


def translate_cube(spec: GridSpec, waypoints, half: float, clearance: int = 1,
                   obstacles=None, ramp_cells: int = 6,
                   cell_fraction: float = 0.125) -> TranslationResult:
    """Flow carrying the square of half-side ``half`` along a polyline.

    Each segment is generated by a linear Hamiltonian v x (p - midpoint),
    cut off smoothly outside the square's swept region.  Inside the plateau
    the flow is an exact translation.
    """
    X, Y = spec.centers()
    cell = max(spec.dx, spec.dy)
    wps = [tuple(map(float, w)) for w in waypoints]
    segs = [(p, q) for p, q in zip(wps[:-1], wps[1:]) if math.hypot(q[0] - p[0], q[1] - p[1]) > 0]
    if not segs:
        fm = FlowMap.identity(spec)
        return TranslationResult(fm, 0.0, [], np.zeros(spec.shape, bool))
    ramp = ramp_cells * cell
    Hs_list = []
    corridor = np.zeros(spec.shape, bool)
    for p, q in segs:
        plateau = np.zeros(spec.shape, bool)
        L = math.hypot(q[0] - p[0], q[1] - p[1])
        n = max(1, int(math.ceil(L / (0.25 * min(spec.dx, spec.dy)))))
        for s in np.linspace(0.0, 1.0, n + 1):
            cx, cy = p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])
            m = half + (clearance + STENCIL_REACH) * cell
            plateau |= (np.abs(X - cx) < m) & (np.abs(Y - cy) < m)
        beta = corridor_cutoff(spec, plateau, ramp)
        vx, vy = q[0] - p[0], q[1] - p[1]
        mx, my = 0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])
        Hs = beta * (vx * (Y - my) - vy * (X - mx))
        Hs_list.append(GridField(spec, Hs, 0.0))
        corridor |= dilate(beta > 0.0, STENCIL_REACH)
    if obstacles is not None and np.any(corridor & np.asarray(obstacles, bool)):
        raise CorridorBlocked("translation corridor meets an obstacle")
    fx, fy = X.copy(), Y.copy()
    bx, by = X.copy(), Y.copy()
    samplers = []
    for Hs in Hs_list:
        smp = _VelocitySampler(spec, [Hs.values, Hs.values], [0.0, 1.0])
        steps = min_steps(spec, smp.speed, cell_fraction=cell_fraction)
        _check_cfl(spec, smp.speed, 1.0 / steps)
        samplers.append((smp, steps))
    fdet = np.ones(spec.shape)
    bdet = np.ones(spec.shape)
    for smp, steps in samplers:
        fx, fy, d = smp.run(fx, fy, 0.0, 1.0, steps)
        fdet = fdet * (1.0 + d)
    for smp, steps in reversed(samplers):
        bx, by, d = smp.run(bx, by, 1.0, 0.0, steps)
        bdet = bdet * (1.0 + d)
    cost = float(sum(sup_norm(h) for h in Hs_list))
    dist = float(max(np.max(np.abs(fdet - 1.0)), np.max(np.abs(bdet - 1.0))))
    fm = FlowMap(spec, fx, fy, bx, by, dist, None, cost,
                 segments=[(smp, steps, 1) for smp, steps in samplers])
    return TranslationResult(fm, cost, Hs_list, corridor)


# ------------------------------------------------------- conjugation identities

def _sup_gap(spec: GridSpec, A, B) -> float:
    X, Y = spec.centers()
    ax, ay = A.apply(X, Y)
    bx, by = B.apply(X, Y)
    return float(np.max(np.hypot(ax - bx, ay - by)))


def _prod(*maps):
    return Composed(*maps)


class _Memo:
    """Caches a map's images of point sets; the identity checks evaluate the
    same sub-compositions on the same points many times."""

    def __init__(self, m, cache: dict, key: tuple):
        self.m = m
        self.cache = cache
        self.key = key

    def apply(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        k = self.key + (hashlib.blake2b(x.tobytes() + y.tobytes(), digest_size=16).digest(),)
        hit = self.cache.get(k)
        if hit is None:
            hit = self.m.apply(x, y)
            self.cache[k] = hit
        return hit

    def inv(self):
        return _Memo(self.m.inv(), self.cache, self.key[:-1] + (not self.key[-1],))


@dataclass
class ConjugationReport:
    N: int
    gaps: dict
    costs: dict
    ledger: float
    delta: float
    tol: float

    @property
    def ok(self) -> bool:
        return all(g <= self.tol for g in self.gaps.values()) and self.ledger <= 6 * self.delta + 1e-12

    def to_dict(self) -> dict:
        return {"N": self.N, "gaps": self.gaps, "costs": self.costs, "ledger": self.ledger,
                "delta": self.delta, "tol": self.tol, "ok": self.ok}


def conjugation_identities(spec: GridSpec, f_maps: list, psi_parts: list, psi_prime_parts: list,
                           charts: list, psi_costs=None, psi_prime_costs=None,
                           tol: float = 5e-3, raise_on_mismatch: bool = True) -> ConjugationReport:
    """Check the three telescoping factorizations numerically.

    f_maps[i] is supported in cube Q_i (i = 0..N); psi_parts[i] carries Q_{2i}
    onto Q_{2i+1}; psi_prime_parts[i-1] carries Q_{2i-1} onto Q_{2i};
    charts[i] is the chart map Q_0 -> Q_i.  Products compose right to left.

    Identities checked at every cell center:
      Phi^{-1} Phi~       = (prod f_odd)^{-1} Psi^{-1} (prod f_odd) Psi
      Phi^^{-1} Phi~      = (prod h_odd)^{-1} Psi^{-1} (prod h_odd) Psi
      Phi^^{-1} Phi'      = (prod h_odd)^{-1} Psi' (prod h_odd) Psi'^{-1}
    plus h_0 = Phi' and the direct per-factor form of the first identity.
    """
    N = len(f_maps) - 1
    L = N // 2
    Lp = (N - 1) // 2
    cache: dict = {}
    f = [_Memo(m, cache, ("f", i, False)) for i, m in enumerate(f_maps)]
    psi_parts = [_Memo(m, cache, ("psi", i, False)) for i, m in enumerate(psi_parts)]
    psi_prime_parts = [_Memo(m, cache, ("psip", i, False)) for i, m in enumerate(psi_prime_parts)]
    phi = charts
    inv = lambda m: m.inv()
    Psi = _prod(*psi_parts) if psi_parts else Composed()
    Psip = _prod(*psi_prime_parts) if psi_prime_parts else Composed()
    Phi = _prod(*f)
    Phip = _prod(f[0], *[_prod(inv(phi[i]), f[i], phi[i]) for i in range(1, N + 1)])
    gaps = {}
    if N == 0:
        gaps["Phi_vs_Phi_prime"] = _sup_gap(spec, Phi, Phip)
        rep = ConjugationReport(N, gaps, {"Psi": 0.0, "Psi_prime": 0.0}, 0.0, 0.0, tol)
        return rep
    g = []
    for i in range(L + 1):
        if N % 2 == 1 or i <= L - 1:
            g.append(_prod(f[2 * i], inv(Psi), f[2 * i + 1], Psi))
        else:
            g.append(f[N])
    Phit = _prod(*g)
    odd_f = [f[2 * i + 1] for i in range(Lp + 1)]
    fo = _prod(*odd_f)
    lhs1 = _prod(inv(Phi), Phit)
    gaps["identity1"] = _sup_gap(spec, lhs1, _prod(inv(fo), inv(Psi), fo, Psi))
    gaps["identity1_factorwise"] = _sup_gap(
        spec, lhs1, _prod(*[_prod(inv(Psi), fk, Psi, inv(fk)) for fk in odd_f]))
    gh = [_prod(inv(phi[2 * i]), g[i], phi[2 * i]) for i in range(L + 1)]
    hh = [_prod(*gh[i:]) for i in range(L + 1)]
    h = {}
    for i in range(L + 1):
        h[2 * i] = _prod(phi[2 * i], hh[i], inv(phi[2 * i]))
    for i in range(1, L + 1):
        h[2 * i - 1] = _prod(phi[2 * i - 1], inv(hh[i]), inv(phi[2 * i - 1]))
    Phih = _prod(*[h[k] for k in range(2 * L + 1)])
    gaps["h0_equals_Phi_prime"] = _sup_gap(spec, h[0], Phip)
    if L >= 1:
        ho = _prod(*[h[2 * i - 1] for i in range(1, L + 1)])
        gaps["identity2"] = _sup_gap(spec, _prod(inv(Phih), Phit), _prod(inv(ho), inv(Psi), ho, Psi))
        gaps["identity3"] = _sup_gap(spec, _prod(inv(Phih), Phip), _prod(inv(ho), Psip, ho, inv(Psip)))
    c_psi = max(psi_costs) if psi_costs else 0.0
    c_psip = max(psi_prime_costs) if psi_prime_costs else 0.0
    ledger = 2 * c_psi + 2 * c_psi + 2 * c_psip
    delta = max(c_psi, c_psip)
    rep = ConjugationReport(N, gaps, {"Psi": c_psi, "Psi_prime": c_psip}, ledger, delta, tol)
    if raise_on_mismatch and not rep.ok:
        raise IdentityMismatch(f"identity gaps {gaps} exceed {tol}")
    return rep


def smooth_bump(spec: GridSpec, center, axes, angle: float = 0.0) -> np.ndarray:
    """exp(1 - 1/(1 - r^2)) on the rotated ellipse r < 1, zero outside."""
    X, Y = spec.centers()
    ca, sa = math.cos(angle), math.sin(angle)
    u = (X - center[0]) * ca + (Y - center[1]) * sa
    v = -(X - center[0]) * sa + (Y - center[1]) * ca
    r2 = (u / axes[0]) ** 2 + (v / axes[1]) ** 2
    out = np.zeros(spec.shape)
    m = r2 < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - r2[m]))
    return out


@dataclass
class ChainInstance:
    spec: GridSpec
    centers: list
    half: float
    f_maps: list
    psi: list
    psi_prime: list
    charts: list

    def check(self, tol: float = 5e-3, raise_on_mismatch: bool = True) -> ConjugationReport:
        return conjugation_identities(self.spec, self.f_maps, [p.flow for p in self.psi],
                                      [p.flow for p in self.psi_prime], self.charts,
                                      [p.hofer_cost for p in self.psi],
                                      [p.hofer_cost for p in self.psi_prime], tol, raise_on_mismatch)


def chain_instance(spec: GridSpec, N: int = 3, half: float = 0.4, spacing: float = 2.0,
                   amplitudes=None, ramp: float = 0.42, cell_fraction: float | None = None,
                   seed: int = 0) -> ChainInstance:
    """Cubes Q_0..Q_N in a row along y = 0 with small autonomous flows f_i
    supported in each, translation charts Q_0 -> Q_i and the two transport
    products Psi (Q_2i -> Q_2i+1) and Psi' (Q_2i-1 -> Q_2i).

    ``ramp`` is the cutoff width in length units; the step rule is scaled
    with the grid so refined grids integrate the same physical flows.
    """
    rng = np.random.default_rng(seed)
    cell = max(spec.dx, spec.dy)
    xs = [(i - N / 2.0) * spacing for i in range(N + 1)]
    if amplitudes is None:
        amplitudes = list(0.03 + 0.03 * rng.random(N + 1))
    f_maps = []
    reach = STENCIL_REACH * cell
    for i, cx in enumerate(xs):
        ax = 0.7 * (half - reach)
        ay = 0.5 * (half - reach)
        off = 0.25 * (half - reach - ax)
        B = amplitudes[i] * smooth_bump(spec, (cx + off, 0.5 * off), (ax, ay), 0.7 * i)
        F = GridField(spec, B)
        speed = float(np.max(np.hypot(*velocity(spec, B))))
        f_maps.append(integrate(TimeField.autonomous(F), max(20, min_steps(spec, speed, cell_fraction=0.125))))
    charts = [Translation(x - xs[0], 0.0) for x in xs]
    ramp_cells = max(3, int(round(ramp / cell)))
    frac = cell_fraction if cell_fraction is not None else 0.125 * (0.0703125 / cell)
    frac = min(frac, 0.5)
    psi = [translate_cube(spec, [(xs[2 * i], 0.0), (xs[2 * i + 1], 0.0)], half,
                          ramp_cells=ramp_cells, cell_fraction=frac)
           for i in range((N - 1) // 2 + 1)]
    psi_prime = [translate_cube(spec, [(xs[2 * i - 1], 0.0), (xs[2 * i], 0.0)], half,
                                ramp_cells=ramp_cells, cell_fraction=frac)
                 for i in range(1, N // 2 + 1)]
    return ChainInstance(spec, xs, half, f_maps, psi, psi_prime, charts)


# ------------------------------------------------------------ oracle interface

class LocalSolverOracle:
    """Contract: (f with zero mean, window) -> list of (sign, FlowMap) with
    f = sum sign * (Phi^* x1) on the window, count <= ``max_terms``."""

    max_terms = 1

    def __call__(self, f: GridField, window) -> list:
        raise NotImplementedError


class WindowDifferenceOracle(LocalSolverOracle):
    """Stub handling only f whose vertical line sums vanish on both row parities.

    H solves the centered-difference equation D_y H = -f/2 on the grid
    (the discretization used by the velocity), so the first-order part of
    x1 o Phi_+^{-1} - x1 o Phi_-^{-1} reproduces f exactly.  For smooth
    flows the second-order terms of the two maps cancel; the grid velocity
    has a gradient kink at the nodes, so a residual second order in H
    remains: its size relative to sup|f| grows linearly with sup|f|.
    """

    max_terms = 2

    def __init__(self, steps: int | None = None, tol: float = 1e-9):
        self.steps = steps
        self.tol = tol

    def hamiltonian(self, f: GridField, window) -> GridField:
        w = np.asarray(window, bool)
        v = f.values
        if np.any((v != 0.0) & ~w):
            raise OracleUnsupported("f is not supported in the window")
        dy = f.spec.dy
        scale = self.tol * max(1.0, sup_norm(f))
        # H[i+1] = H[i-1] - dy f[i]: each parity class of rows is a running sum
        H = np.zeros_like(v)
        odd = np.cumsum(v[1::2], axis=0)
        even = np.cumsum(v[0::2], axis=0)
        if max(np.max(np.abs(odd[-1])), np.max(np.abs(even[-1]))) * dy > scale:
            raise OracleUnsupported("f has nonzero vertical line sums on one row parity")
        H[2::2] = -dy * odd[:len(H[2::2])]
        H[1::2] = -dy * even[:len(H[1::2])]
        return GridField(f.spec, H)

    def __call__(self, f: GridField, window) -> list:
        H = self.hamiltonian(f, window)
        speed = float(np.max(np.hypot(*velocity(f.spec, H.values))))
        steps = self.steps or max(8, min_steps(f.spec, speed))
        plus = integrate(TimeField.autonomous(H), steps)
        minus = integrate(TimeField.autonomous(H.scaled(-1.0)), steps)
        return [(+1, plus), (-1, minus)]

    @staticmethod
    def reconstruct(terms, spec: GridSpec) -> GridField:
        X, Y = spec.centers()
        acc = np.zeros(spec.shape)
        for sign, fm in terms:
            acc = acc + sign * (fm.bwd_x - X)
        return GridField(spec, acc)


# ----------------------------------------------------------------- FM1 format

def dumps_fm1(fm: FlowMap) -> str:
    s = fm.spec
    out = io.StringIO()
    out.write(" ".join(["FM1", str(s.nx), str(s.ny)] +
                       [_fmt(v) for v in (s.x_min, s.x_max, s.y_min, s.y_max, fm.area_distortion,
                                          fm.hofer_cost if fm.hofer_cost is not None else float("nan"))]) + "\n")
    X, Y = s.centers()
    for arr in (fm.fwd_x - X, fm.fwd_y - Y, fm.bwd_x - X, fm.bwd_y - Y):
        out.write("\n".join(" ".join(_fmt(v) for v in row) for row in arr) + "\n")
    return out.getvalue()


def write_fm1(fm: FlowMap, target) -> None:
    fh, close = _open_text(target, "w")
    try:
        fh.write(dumps_fm1(fm))
    finally:
        if close:
            fh.close()


def loads_fm1(text: str) -> FlowMap:
    tok = text.split()
    if not tok or tok[0] != "FM1" or len(tok) < 9:
        raise FormatError("bad FM1 header")
    nx, ny = int(tok[1]), int(tok[2])
    x0, x1, y0, y1, dist, cost = (float(t) for t in tok[3:9])
    spec = GridSpec(x0, x1, y0, y1, nx, ny)
    n = nx * ny
    body = np.array([float(t) for t in tok[9:]])
    if body.size != 4 * n:
        raise FormatError("FM1 body has wrong length")
    X, Y = spec.centers()
    arrs = [body[k * n:(k + 1) * n].reshape(spec.shape) for k in range(4)]
    return FlowMap(spec, X + arrs[0], Y + arrs[1], X + arrs[2], Y + arrs[3], dist, None,
                   None if math.isnan(cost) else cost)


def read_fm1(source) -> FlowMap:
    fh, close = _open_text(source, "r")
    try:
        return loads_fm1(fh.read())
    finally:
        if close:
            fh.close()
