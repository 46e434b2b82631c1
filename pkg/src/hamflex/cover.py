"""Ball covers of a planar region: maximal nets, intersection graphs,
distance-2 colorings and BFS trees rooted at a distinguished region U."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .field_core import GridSpec

U_VERTEX = -1


class EpsTooSmallForGrid(ValueError):
    pass


class Disconnected(ValueError):
    pass


@dataclass
class BallCover:
    centers: np.ndarray                 # (k, 2)
    radius: float
    adjacency: list                     # ball -> sorted neighbour balls
    touches_u: list                     # ball -> bool
    n: int = 1
    colors: list | None = None
    parent: dict = field(default_factory=dict)
    depth: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.centers)

    def max_degree(self) -> int:
        return max((len(a) for a in self.adjacency), default=0)

    @property
    def degree_bound(self) -> int:
        return 5 ** (2 * self.n) - 1

    def full_neighbors(self, v: int):
        """Neighbours in the graph over balls plus the U-vertex."""
        if v == U_VERTEX:
            return [i for i, t in enumerate(self.touches_u) if t]
        out = list(self.adjacency[v])
        if self.touches_u[v]:
            out.append(U_VERTEX)
        return out

    def path_to_u(self, b: int) -> list:
        if b not in self.parent:
            raise KeyError(f"ball {b} not in spanning tree")
        path = [b]
        while path[-1] != U_VERTEX:
            path.append(self.parent[path[-1]])
        return path

    def leaves(self) -> list:
        has_child = {p for p in self.parent.values()}
        return [b for b in range(self.size) if b not in has_child]

    def to_dict(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "radius": self.radius,
            "n": self.n,
            "adjacency": [list(map(int, a)) for a in self.adjacency],
            "touches_u": [bool(t) for t in self.touches_u],
            "colors": None if self.colors is None else list(map(int, self.colors)),
            "parent": {str(k): int(v) for k, v in sorted(self.parent.items())},
            "depth": {str(k): int(v) for k, v in sorted(self.depth.items())},
            "max_degree": self.max_degree(),
            "degree_bound": self.degree_bound,
            "n_colors": None if self.colors is None else (max(self.colors) + 1 if self.colors else 0),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BallCover":
        c = cls(np.asarray(d["centers"], float).reshape(-1, 2), float(d["radius"]),
                [list(a) for a in d["adjacency"]], list(d["touches_u"]), int(d.get("n", 1)))
        c.colors = d.get("colors")
        c.parent = {int(k): int(v) for k, v in d.get("parent", {}).items()}
        c.depth = {int(k): int(v) for k, v in d.get("depth", {}).items()}
        return c


def _greedy_net(points: np.ndarray, eps: float) -> np.ndarray:
    """Row-major greedy maximal eps-separated subset (indices into points)."""
    buckets: dict = {}
    chosen = []
    inv = 1.0 / eps
    for idx, (x, y) in enumerate(points):
        bx, by = int(np.floor(x * inv)), int(np.floor(y * inv))
        ok = True
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for j in buckets.get((bx + dx, by + dy), ()):
                    px, py = points[j]
                    if (px - x) ** 2 + (py - y) ** 2 < eps * eps:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            chosen.append(idx)
            buckets.setdefault((bx, by), []).append(idx)
    return np.asarray(chosen, int)


def build_net(spec: GridSpec, omega_region, u_region, eps: float, n: int = 1) -> BallCover:
    """Greedy eps-net over the cell centers of omega minus U, with its ball graph."""
    omega = np.asarray(omega_region, bool)
    u = np.asarray(u_region, bool)
    if eps <= 2.0 * spec.cell_diameter:
        raise EpsTooSmallForGrid(f"eps={eps} must exceed two cell diameters ({2 * spec.cell_diameter:.4g})")
    X, Y = spec.centers()
    cand = omega & ~u
    pts = np.column_stack([X[cand], Y[cand]])    # row-major order
    sel = _greedy_net(pts, eps) if len(pts) else np.zeros(0, int)
    ux, uy = X[u], Y[u]
    upts = np.column_stack([ux, uy])
    kept = []
    touches = []
    for i in sel:
        c = pts[i]
        # cells of the grid whose centers fall inside the ball
        near = np.hypot(X - c[0], Y - c[1]) < eps
        if near.any() and np.all(u[near]):
            continue      # ball inside U: discard
        kept.append(c)
        if len(upts):
            touches.append(bool(np.any(np.hypot(upts[:, 0] - c[0], upts[:, 1] - c[1]) < eps)))
        else:
            touches.append(False)
    centers = np.asarray(kept, float).reshape(-1, 2)
    adjacency = []
    for i in range(len(centers)):
        d = np.hypot(centers[:, 0] - centers[i, 0], centers[:, 1] - centers[i, 1])
        nb = np.flatnonzero(d < 2.0 * eps)
        adjacency.append([int(j) for j in nb if j != i])
    return BallCover(centers, float(eps), adjacency, touches, n)


def color_distance2(cover: BallCover) -> BallCover:
    """Greedy coloring where same-colored balls are at graph distance >= 3.

    Colors the graph over balls (the U-vertex is not colored).  Balls are
    processed in index order and take the smallest color absent from their
    distance-1 and distance-2 neighbourhoods, so at most d^2 + 1 colors
    are used with d the maximum degree.
    """
    k = cover.size
    colors = [-1] * k
    for v in range(k):
        used = set()
        for w in cover.adjacency[v]:
            used.add(colors[w])
            for x in cover.adjacency[w]:
                used.add(colors[x])
        c = 0
        while c in used:
            c += 1
        colors[v] = c
    cover.colors = colors
    return cover


def graph_distance_balls(cover: BallCover, src: int) -> dict:
    dist = {src: 0}
    q = deque([src])
    while q:
        v = q.popleft()
        for w in cover.adjacency[v]:
            if w not in dist:
                dist[w] = dist[v] + 1
                q.append(w)
    return dist


def coloring_is_valid(cover: BallCover) -> bool:
    """BFS from every ball: no same-colored ball within distance 2."""
    for v in range(cover.size):
        dist = graph_distance_balls(cover, v)
        for w, d in dist.items():
            if w != v and d <= 2 and cover.colors[w] == cover.colors[v]:
                return False
    return True


def spanning_tree(cover: BallCover) -> BallCover:
    """Shortest-path (BFS) tree of balls plus U, rooted at U."""
    parent: dict = {}
    depth = {U_VERTEX: 0}
    q = deque([U_VERTEX])
    while q:
        v = q.popleft()
        for w in sorted(cover.full_neighbors(v)):
            if w not in depth:
                depth[w] = depth[v] + 1
                parent[w] = v
                q.append(w)
    missing = [b for b in range(cover.size) if b not in depth]
    if missing:
        raise Disconnected(f"{len(missing)} balls cannot reach U (first: {missing[0]})")
    cover.parent = parent
    cover.depth = {b: depth[b] for b in range(cover.size)}
    return cover


def coverage_gap(spec: GridSpec, cover: BallCover, omega_region, u_region) -> float:
    """Max over cell centers of omega minus U of the distance to the nearest center."""
    X, Y = spec.centers()
    m = np.asarray(omega_region, bool) & ~np.asarray(u_region, bool)
    pts = np.column_stack([X[m], Y[m]])
    if not len(pts):
        return 0.0
    if not cover.size:
        return float("inf")
    best = np.full(len(pts), np.inf)
    for c in cover.centers:
        best = np.minimum(best, np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1]))
    return float(best.max())
