"""Shifted-lattice cube covers.

For scale a and shift lam in {0,1}^2 the lattice is a*lam + 2a*Z^2; each
lattice point v carries the open cube v + (-2a/3, 2a/3)^2.  Cubes of one
shift class are disjoint because the lattice spacing 2a exceeds the side 4a/3.
The four classes together cover the plane.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .field_core import GridSpec, dilate


class ScaleTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Cube:
    center: tuple
    half: float
    ball: int

    @property
    def side(self) -> float:
        return 2.0 * self.half

    @property
    def volume(self) -> float:
        return self.side ** 2

    def contains(self, x, y):
        return (np.abs(np.asarray(x) - self.center[0]) < self.half) & \
               (np.abs(np.asarray(y) - self.center[1]) < self.half)

    def cell_mask(self, spec: GridSpec) -> np.ndarray:
        X, Y = spec.centers()
        return self.contains(X, Y)

    def to_dict(self) -> dict:
        return {"center": [float(self.center[0]), float(self.center[1])],
                "half": float(self.half), "ball": int(self.ball)}

    @classmethod
    def from_dict(cls, d) -> "Cube":
        return cls((float(d["center"][0]), float(d["center"][1])), float(d["half"]), int(d["ball"]))


@dataclass
class CubeFamily:
    color: int
    shift: tuple
    a: float
    cubes: list = field(default_factory=list)

    @property
    def volume(self) -> float:
        return float(sum(c.volume for c in self.cubes))

    def to_dict(self) -> dict:
        return {"color": self.color, "shift": list(self.shift), "a": self.a,
                "cubes": [c.to_dict() for c in self.cubes]}

    @classmethod
    def from_dict(cls, d) -> "CubeFamily":
        return cls(int(d["color"]), tuple(d["shift"]), float(d["a"]),
                   [Cube.from_dict(c) for c in d["cubes"]])


def shifts(n: int = 1):
    return list(itertools.product((0, 1), repeat=2 * n))


def default_scale(delta: float, n: int = 1) -> float:
    return 0.9 * delta / (2 * n)


def build_cube_cover(spec: GridSpec, supports: dict, a: float | None, delta: float,
                     n: int = 1, colors: dict | None = None) -> dict:
    """Map (color, shift) -> CubeFamily covering every support cell.

    ``supports`` maps a ball id to the cell mask of the support it hosts;
    ``colors`` maps ball ids to colors (all 0 when omitted).
    """
    if n != 1:
        raise NotImplementedError("cube covers are built on planar grids only")
    if a is None:
        a = default_scale(delta, n)
    if not (0 < a < delta / (2 * n)):
        raise ScaleTooLarge(f"need 0 < a < delta/(2n) = {delta / (2 * n):.6g}, got a={a}")
    colors = colors or {}
    half = 2.0 * a / 3.0
    k = int(np.ceil(delta / min(spec.dx, spec.dy)))
    X, Y = spec.centers()
    fams: dict = {}
    for ball in sorted(supports):
        supp = np.asarray(supports[ball], bool)
        if not supp.any():
            continue
        col = int(colors.get(ball, 0))
        vdelta = dilate(supp, k)
        sx, sy = X[supp], Y[supp]
        x0, x1 = X[vdelta].min(), X[vdelta].max()
        y0, y1 = Y[vdelta].min(), Y[vdelta].max()
        for lam in shifts(n):
            fam = fams.setdefault((col, lam), CubeFamily(col, lam, a))
            ox, oy = a * lam[0], a * lam[1]
            ix = np.arange(np.floor((x0 - ox) / (2 * a)) - 1, np.ceil((x1 - ox) / (2 * a)) + 2)
            iy = np.arange(np.floor((y0 - oy) / (2 * a)) - 1, np.ceil((y1 - oy) / (2 * a)) + 2)
            for jy in iy:
                vy = oy + 2 * a * jy
                for jx in ix:
                    vx = ox + 2 * a * jx
                    r, c = spec.cell_of(vx, vy)
                    inside_box = spec.x_min <= vx < spec.x_max and spec.y_min <= vy < spec.y_max
                    if not inside_box or not vdelta[r, c]:
                        continue
                    hit = np.any((np.abs(sx - vx) < half) & (np.abs(sy - vy) < half))
                    if hit:
                        fam.cubes.append(Cube((float(vx), float(vy)), half, int(ball)))
    for lam in shifts(n):
        for col in {int(colors.get(b, 0)) for b in supports}:
            fams.setdefault((col, lam), CubeFamily(col, lam, a))
    return dict(sorted(fams.items()))


def verify_volume_bound(families: dict, supp_vol: float, limit: float = 2.0) -> dict:
    """Per-class ratio Vol(union of cubes) / Vol(supp); flags ratios above ``limit``."""
    out = {}
    for key, fam in families.items():
        ratio = fam.volume / supp_vol if supp_vol > 0 else (0.0 if not fam.cubes else float("inf"))
        out[key] = {"ratio": ratio, "flagged": ratio > limit}
    return out


def families_disjoint(fam: CubeFamily) -> bool:
    cs = fam.cubes
    for i in range(len(cs)):
        for j in range(i + 1, len(cs)):
            dx = abs(cs[i].center[0] - cs[j].center[0])
            dy = abs(cs[i].center[1] - cs[j].center[1])
            if dx < cs[i].half + cs[j].half and dy < cs[i].half + cs[j].half:
                return False
    return True


def coverage_mask(spec: GridSpec, families: dict) -> np.ndarray:
    m = np.zeros(spec.shape, bool)
    for fam in families.values():
        for c in fam.cubes:
            m |= c.cell_mask(spec)
    return m


def corner_candidates(p, a: float):
    """The 4 lattice corners around p := a*floor(p/a) + a*{0,1}^2."""
    q = (a * np.floor(p[0] / a), a * np.floor(p[1] / a))
    return [(q[0] + a * e0, q[1] + a * e1) for e0, e1 in shifts(1)]
