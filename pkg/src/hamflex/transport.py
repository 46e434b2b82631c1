"""Ordering cubes along a BFS tree, binning them into volume-bounded
families and planning polyline routes that carry each cube into a target
square Q_L inside U."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cover import U_VERTEX, BallCover
from .cube_grid import Cube
from .field_core import GridSpec, dilate
from .flow2d import footprint_cells


class UnhostedCube(ValueError):
    pass


class CubeTooLarge(ValueError):
    pass


class NoFreeSlot(RuntimeError):
    pass


class BlockedRoute(RuntimeError):
    pass


@dataclass
class TargetSquare:
    center: tuple
    L: float

    def contains(self, x, y, margin: float = 0.0):
        return (np.abs(np.asarray(x) - self.center[0]) < self.L + margin) & \
               (np.abs(np.asarray(y) - self.center[1]) < self.L + margin)

    @property
    def volume(self) -> float:
        return (2.0 * self.L) ** 2


@dataclass
class Route:
    cube: Cube
    waypoints: list           # list of (x, y); first = cube center, last = slot center
    slot: tuple

    @property
    def displacement(self):
        return (self.slot[0] - self.cube.center[0], self.slot[1] - self.cube.center[1])

    def to_dict(self) -> dict:
        return {"cube": self.cube.to_dict(),
                "waypoints": [[float(x), float(y)] for x, y in self.waypoints],
                "slot": [float(self.slot[0]), float(self.slot[1])]}

    @classmethod
    def from_dict(cls, d) -> "Route":
        return cls(Cube.from_dict(d["cube"]), [tuple(w) for w in d["waypoints"]], tuple(d["slot"]))


@dataclass
class TransportPlan:
    families: list
    routes: list = field(default_factory=list)     # per family, list of Route
    obstacles: dict = field(default_factory=dict)
    N_L: int = 0

    def to_dict(self) -> dict:
        return {"N_L": self.N_L,
                "families": [[c.to_dict() for c in fam] for fam in self.families],
                "family_volumes": [float(sum(c.volume for c in fam)) for fam in self.families],
                "routes": [[r.to_dict() for r in rs] for rs in self.routes],
                "obstacles": self.obstacles}


# --------------------------------------------------------------------- order

def leaf_index(cover: BallCover) -> dict:
    """Ball -> smallest leaf number whose root path passes through it."""
    out: dict = {}
    for k, leaf in enumerate(sorted(cover.leaves()), start=1):
        v = leaf
        while v != U_VERTEX:
            if v not in out:
                out[v] = k
            v = cover.parent[v]
    return out


def order_key(cube: Cube, rank: int, leaves: dict, cover: BallCover):
    return (leaves[cube.ball], cover.depth[cube.ball], rank)


def within_ball_rank(cubes: list, cover: BallCover, u_point) -> dict:
    """Rank cubes inside each ball by distance to the exit point (nearest first)."""
    by_ball: dict = {}
    for i, c in enumerate(cubes):
        by_ball.setdefault(c.ball, []).append(i)
    rank = {}
    for b, idx in by_ball.items():
        p = cover.parent.get(b, U_VERTEX)
        ex = u_point if p == U_VERTEX else tuple(cover.centers[p])
        idx = sorted(idx, key=lambda i: (math.hypot(cubes[i].center[0] - ex[0], cubes[i].center[1] - ex[1]),
                                         cubes[i].center[1], cubes[i].center[0]))
        for r, i in enumerate(idx):
            rank[i] = r
    return rank


def order_cubes(cubes: list, cover: BallCover, u_point=(0.0, 0.0)) -> list:
    """Total order by (leaf index, depth of host ball, within-ball rank)."""
    for c in cubes:
        if c.ball not in cover.depth:
            raise UnhostedCube(f"cube at {c.center} has no host ball in the tree")
    leaves = leaf_index(cover)
    rank = within_ball_rank(cubes, cover, u_point)
    idx = sorted(range(len(cubes)), key=lambda i: order_key(cubes[i], rank[i], leaves, cover))
    return [cubes[i] for i in idx]


# ----------------------------------------------------------------- partition

def N_L_bound(supp_vol: float, L: float, n: int = 1) -> int:
    return int(math.ceil(3.0 * supp_vol / (2.0 * L) ** (2 * n)))


def partition_families(ordered: list, L: float, supp_vol: float, n: int = 1) -> list:
    """Contiguous greedy bins of total cube volume <= (2L)^(2n) / 2."""
    cap = 0.5 * (2.0 * L) ** (2 * n)
    bins: list = []
    cur: list = []
    used = 0.0
    for c in ordered:
        v = c.volume
        if v > cap:
            raise CubeTooLarge(f"cube volume {v:.4g} exceeds half of Q_L ({cap:.4g})")
        if cur and used + v > cap:
            bins.append(cur)
            cur, used = [], 0.0
        cur.append(c)
        used += v
    if cur:
        bins.append(cur)
    return bins


# -------------------------------------------------------------------- routes

def shelf_slots(target: TargetSquare, side: float, count: int, gap: float):
    """Row-major shelf packing of equal squares inside Q_L.

    Slots are returned bottom row first so that later arrivals, which drop
    in from above, never pass over an occupied slot.
    """
    pitch = side + gap
    ncol = int(math.floor((2 * target.L - gap) / pitch))
    nrow = int(math.floor((2 * target.L - gap) / pitch))
    if ncol * nrow < count:
        raise NoFreeSlot(f"{count} cubes of side {side:.4g} do not fit the shelves of Q_L")
    x0 = target.center[0] - target.L + gap + side / 2
    y0 = target.center[1] - target.L + gap + side / 2
    slots = []
    for r in range(nrow):
        for c in range(ncol):
            slots.append((x0 + c * pitch, y0 + r * pitch))
    return slots[:count]


def swept_mask(spec: GridSpec, waypoints, half: float, clearance_cells: int = 1) -> np.ndarray:
    """Cells touched by an axis-aligned square of half-side ``half`` moving along the polyline."""
    X, Y = spec.centers()
    m = np.zeros(spec.shape, bool)
    step = 0.25 * min(spec.dx, spec.dy)
    for (x0, y0), (x1, y1) in zip(waypoints[:-1], waypoints[1:]):
        n = max(1, int(math.ceil(math.hypot(x1 - x0, y1 - y0) / step)))
        for s in np.linspace(0.0, 1.0, n + 1):
            cx, cy = x0 + s * (x1 - x0), y0 + s * (y1 - y0)
            m |= (np.abs(X - cx) < half) & (np.abs(Y - cy) < half)
    if len(waypoints) == 1:
        cx, cy = waypoints[0]
        m |= (np.abs(X - cx) < half) & (np.abs(Y - cy) < half)
    return dilate(m, clearance_cells)


def _segment_hits_box(p, q, center, half, samples=200):
    t = np.linspace(0.0, 1.0, samples)
    xs = p[0] + t * (q[0] - p[0])
    ys = p[1] + t * (q[1] - p[1])
    return bool(np.any((np.abs(xs - center[0]) < half) & (np.abs(ys - center[1]) < half)))


def _approach(p, target: TargetSquare, lane_y: float, margin: float):
    """Waypoints from p around Q_L to the lane above it (corner walk)."""
    cx, cy = target.center
    R = target.L + margin
    gate = (cx, lane_y)
    if not _segment_hits_box(p, gate, target.center, R):
        return [gate]
    corners = {"ll": (cx - R, cy - R), "lr": (cx + R, cy - R), "ul": (cx - R, lane_y), "ur": (cx + R, lane_y)}
    side = "l" if p[0] < cx else "r"
    up = corners["u" + side]
    if not _segment_hits_box(p, up, target.center, R):
        return [up, gate]
    low = corners["l" + side]
    return [low, up, gate]


def plan_routes(spec: GridSpec, family: list, cover: BallCover, target: TargetSquare,
                h_mask=None, clearance_cells: int = 1, u_point=None, ramp_cells: int = 6) -> list:
    """Routes for one ordered family; cube i avoids cubes i+1.. and supp h.

    The avoidance test uses the full footprint of the translating flow
    (see ``flow2d.footprint_cells``), so executing the routes in order with
    ``translate_cube`` leaves later cubes and supp h untouched.

    Waypoints: cube center, the centers of the ancestor balls on its tree path to U,
    a corner walk around Q_L to a lane above it, the slot column, the slot.
    """
    if not family:
        return []
    side = family[0].side
    if any(abs(c.side - side) > 1e-12 for c in family):
        raise NoFreeSlot("shelf packing is only supported for equal cubes")
    foot = footprint_cells(clearance_cells, ramp_cells)
    gap = (foot + 1) * max(spec.dx, spec.dy)
    slots = shelf_slots(target, side, len(family), gap)
    lane_y = target.center[1] + target.L + side / 2 + 2 * gap
    margin = side / 2 + gap
    h_mask = np.zeros(spec.shape, bool) if h_mask is None else np.asarray(h_mask, bool)
    cube_masks = [c.cell_mask(spec) for c in family]
    routes = []
    for i, cube in enumerate(family):
        wps = [cube.center]
        for b in cover.path_to_u(cube.ball)[1:]:
            if b == U_VERTEX:
                break
            wps.append(tuple(map(float, cover.centers[b])))
        slot = slots[i]
        if target.contains(cube.center[0], cube.center[1]) and len(wps) == 1:
            wps.append(slot)
        else:
            wps.extend(_approach(wps[-1], target, lane_y, margin))
            wps.append((slot[0], lane_y))
            wps.append(slot)
        # drop consecutive duplicates
        clean = [wps[0]]
        for w in wps[1:]:
            if math.hypot(w[0] - clean[-1][0], w[1] - clean[-1][1]) > 1e-12:
                clean.append(w)
        tube = swept_mask(spec, clean, cube.half, foot)
        later = np.zeros(spec.shape, bool)
        for m in cube_masks[i + 1:]:
            later |= m
        if np.any(tube & later):
            raise BlockedRoute(f"route of cube {i} meets a later cube")
        if np.any(tube & h_mask):
            raise BlockedRoute(f"route of cube {i} meets supp h")
        routes.append(Route(cube, clean, slot))
    return routes


def schedule(spec: GridSpec, ordered: list, cover: BallCover, target: TargetSquare,
             supp_vol: float, h_mask=None, n: int = 1, plan: bool = True) -> TransportPlan:
    fams = partition_families(ordered, target.L, supp_vol, n)
    tp = TransportPlan(fams, [], {}, N_L_bound(supp_vol, target.L, n))
    if plan:
        tp.routes = [plan_routes(spec, f, cover, target, h_mask) for f in fams]
    return tp
