"""Parametric invariant norms alpha*sup + sum beta_p * L^p and the
quantities built from them: the plateau sequence h_k and its limit b,
the regime classifier, the Calabi integral, the averaging inequality,
level-band (Abel) decompositions and indicator decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .field_core import GridField, GridSpec, TimeField, _trapezoid, lp_norm, mask_volume, mean, sup_norm

DEGENERATE = "degenerate_Cal"
HOFER = "Hofer"
HOFER_CAL = "Hofer_plus_Cal"


class RegionTooSmall(ValueError):
    pass


class GridExhausted(ValueError):
    pass


class InequalityViolated(AssertionError):
    pass


class HypothesisViolated(ValueError):
    pass


@dataclass(frozen=True)
class NormSpec:
    alpha: float = 1.0
    betas: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        clean = {}
        for p, w in dict(self.betas).items():
            p, w = float(p), float(w)
            if not 1.0 <= p < math.inf:
                raise ValueError(f"exponent {p} outside [1, inf)")
            if w < 0:
                raise ValueError(f"weight for p={p} is negative")
            if w > 0:
                clean[p] = clean.get(p, 0.0) + w
        object.__setattr__(self, "betas", dict(sorted(clean.items())))
        if self.alpha == 0 and not self.betas:
            raise ValueError("all weights are zero")

    @classmethod
    def parse(cls, alpha: float, betas: str = "") -> "NormSpec":
        """``betas`` as "p:w,p:w"; empty string for none."""
        out = {}
        for item in filter(None, (s.strip() for s in betas.split(","))):
            p, w = item.split(":")
            out[float(p)] = out.get(float(p), 0.0) + float(w)
        return cls(float(alpha), out)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "betas": {format(p, "g"): w for p, w in self.betas.items()}}


def eval_norm(spec: NormSpec, f: GridField) -> float:
    out = spec.alpha * sup_norm(f) if spec.alpha else 0.0
    for p, w in spec.betas.items():
        out += w * lp_norm(f, p)
    return float(out)


def calabi(H: TimeField) -> float:
    """Space-time integral of H."""
    return _trapezoid([mean(f) for f in H.fields], H.t_grid)


def calabi_chain(spec: NormSpec, H: TimeField, S) -> dict:
    """Lower bound int ||H_t|| dt >= ||1_S / Vol(S)|| * |Cal(H)| for H supported in S."""
    grid = H.spec
    S = np.asarray(S, bool)
    for f in H.fields:
        if np.any((f.values != 0) & ~S):
            raise ValueError("H leaves S")
    G = GridField(grid, np.where(S, 1.0 / mask_volume(grid, S), 0.0))
    lhs = _trapezoid([eval_norm(spec, f) for f in H.fields], H.t_grid)
    rhs = eval_norm(spec, G) * abs(calabi(H))
    return {"lhs": lhs, "rhs": rhs, "ok": lhs >= rhs * (1 - 1e-12) - 1e-14}


# ------------------------------------------------------------ h_k sequence

def _cell_order(spec: GridSpec, region: np.ndarray) -> np.ndarray:
    """Flat indices of region cells, nearest to the region centroid first."""
    X, Y = spec.centers()
    idx = np.flatnonzero(region.ravel())
    cx, cy = X.ravel()[idx].mean(), Y.ravel()[idx].mean()
    d = np.hypot(X.ravel()[idx] - cx, Y.ravel()[idx] - cy)
    return idx[np.lexsort((idx, np.round(d, 12)))]


def build_hk(k: int, spec: GridSpec, region=None) -> GridField:
    """Plateau at height 1/k on floor(k / cell_area) cells plus one collar
    cell carrying the remainder, so the integral is exactly 1."""
    if k < 1:
        raise ValueError("k must be >= 1")
    region = np.ones(spec.shape, bool) if region is None else np.asarray(region, bool)
    if mask_volume(spec, region) < k + 1:
        raise RegionTooSmall(f"region volume {mask_volume(spec, region):.4g} < k + 1 = {k + 1}")
    area = spec.cell_area
    n_plat = int(math.floor(k / area * (1 + 1e-12)))
    if n_plat * area <= k - 1.0 / k:
        raise RegionTooSmall(f"cells too coarse for the plateau volume bound at k={k}")
    order = _cell_order(spec, region)
    v = np.zeros(spec.ny * spec.nx)
    v[order[:n_plat]] = 1.0 / k
    rest = 1.0 - n_plat * area / k
    if rest > 1e-15:
        v[order[n_plat]] = rest / area
    return GridField(spec, v.reshape(spec.shape))


def hk_constraints(h: GridField, k: int) -> dict:
    plateau = np.isclose(h.values, 1.0 / k, rtol=0, atol=1e-15)
    return {"sup": sup_norm(h), "integral": mean(h), "plateau_volume": mask_volume(h.spec, plateau),
            "ok": bool(h.values.min() >= 0 and sup_norm(h) <= 1.0 / k + 1e-15
                       and abs(mean(h) - 1.0) < 1e-12 and mask_volume(h.spec, plateau) > k - 1.0 / k)}


def closed_form_hk_norm(spec: NormSpec, k: int) -> float:
    """Norm of an ideal plateau of height 1/k and volume k."""
    return spec.alpha / k + sum(w * k ** (1.0 / p - 1.0) for p, w in spec.betas.items())


def closed_form_b(spec: NormSpec) -> float:
    return float(spec.betas.get(1.0, 0.0))


def default_grid(k_max: int) -> GridSpec:
    """Square with volume above k_max + 1 and cells with area below 1 / (4 k_max)."""
    side = math.ceil(math.sqrt(k_max + 1)) + 1
    n = int(math.ceil(side * 2 * math.sqrt(k_max)))
    return GridSpec(-side / 2, side / 2, -side / 2, side / 2, n, n)


@dataclass
class BEstimate:
    b: float               # analytic value
    b_tail_min: float
    b_extrapolated: float
    ks: list
    norms: list
    tolerance: float

    @property
    def consistent(self) -> bool:
        return abs(self.b_extrapolated - self.b) <= self.tolerance

    def to_dict(self) -> dict:
        return {"b": self.b, "b_tail_min": self.b_tail_min, "b_extrapolated": self.b_extrapolated,
                "tolerance": self.tolerance, "consistent": self.consistent,
                "ks": list(self.ks), "norms": [float(v) for v in self.norms]}


def estimate_b(spec: NormSpec, k_max: int, grid: GridSpec | None = None) -> BEstimate:
    """b = liminf ||h_k|| from k = 1..k_max, with the closed form as cross-check.

    The extrapolated limit is the constant coefficient of a least-squares
    fit on the tail [k_max/2, k_max] in the basis 1, 1/k and k^(1/p - 1).
    """
    if k_max < 4:
        raise ValueError("k_max must be >= 4")
    grid = default_grid(k_max) if grid is None else grid
    ks = list(range(1, k_max + 1))
    norms = []
    try:
        for k in ks:
            norms.append(eval_norm(spec, build_hk(k, grid)))
    except RegionTooSmall as e:
        raise GridExhausted(f"grid cannot host h_{k}: {e}") from e
    tail = np.arange(k_max // 2, k_max + 1)
    y = np.array(norms)[tail - 1]
    cols = [np.ones(len(tail)), 1.0 / tail]
    cols += [tail ** (1.0 / p - 1.0) for p in spec.betas if p > 1.0]
    coef, *_ = np.linalg.lstsq(np.stack(cols, axis=1), y, rcond=None)
    return BEstimate(closed_form_b(spec), float(y.min()), float(coef[0]), ks, norms, 2.0 / k_max)


@dataclass
class RegimeReport:
    spec: NormSpec
    lower_const: float
    b: BEstimate
    regime: str

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "lower_const": self.lower_const,
                "b_estimate": self.b.to_dict(), "regime": self.regime}


def regime_of(alpha: float, b: float) -> str:
    if alpha <= 0:
        return DEGENERATE
    return HOFER if b == 0 else HOFER_CAL


def classify_regime(spec: NormSpec, k_max: int = 50, grid: GridSpec | None = None) -> RegimeReport:
    est = estimate_b(spec, k_max, grid)
    return RegimeReport(spec, spec.alpha, est, regime_of(spec.alpha, est.b))


# ------------------------------------------------------------ averaging

def averaging_check(spec: NormSpec, F: GridField, partition: list, raise_on_fail: bool = True) -> dict:
    """Compare ||sum <F>_S 1_S|| with ||F|| for a partition of supp F."""
    grid = F.spec
    masks = [np.asarray(m, bool) for m in partition]
    union = np.zeros(grid.shape, bool)
    for m in masks:
        if np.any(union & m):
            raise ValueError("partition sets overlap")
        union |= m
    if np.any((F.values != 0) & ~union):
        raise ValueError("partition does not cover supp F")
    avg = np.zeros(grid.shape)
    for m in masks:
        if m.any():
            avg[m] = F.values[m].mean()
    lhs = eval_norm(spec, GridField(grid, avg))
    rhs = eval_norm(spec, F)
    ok = lhs <= rhs * (1 + 1e-12) + 1e-14
    if raise_on_fail and not ok:
        raise InequalityViolated(f"averaged norm {lhs:.6g} > {rhs:.6g}")
    return {"lhs": lhs, "rhs": rhs, "ok": bool(ok)}


@dataclass
class AbelDecomposition:
    width: float
    levels: int
    layers: list            # (coefficient, mask) pairs; the staircase is sum coef * 1_mask
    bands: list             # masks S_1 .. S_levels (by |F|)
    remainder: GridField

    def staircase(self, spec: GridSpec) -> np.ndarray:
        out = np.zeros(spec.shape)
        for coef, m in self.layers:
            out[m] += coef
        return out

    def tail_volumes(self, spec: GridSpec) -> list:
        """Vol of the union of bands i..levels, for each i."""
        vols, acc = [], np.zeros(spec.shape, bool)
        for m in reversed(self.bands):
            acc = acc | m
            vols.append(mask_volume(spec, acc))
        return vols[::-1]

    @property
    def nonempty_bands(self) -> int:
        return sum(1 for m in self.bands if m.any())


def abel_decompose(F: GridField, levels: int) -> AbelDecomposition:
    """F = remainder + sum_i w * 1_{band index >= i} (signed), w = ||F||_inf / levels."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    spec = F.spec
    v = F.values
    top = sup_norm(F)
    if top == 0:
        z = np.zeros(spec.shape, bool)
        return AbelDecomposition(0.0, levels, [], [z.copy() for _ in range(levels)], GridField(spec, np.zeros(spec.shape)))
    w = top / levels
    idx = np.where(v != 0, np.clip(np.ceil(np.abs(v) / w - 1e-12), 1, levels), 0).astype(int)
    bands = [idx == i for i in range(1, levels + 1)]
    layers = []
    for sign in (1.0, -1.0):
        side = np.sign(v) == sign
        for i in range(1, levels + 1):
            m = side & (idx >= i)
            if m.any():
                layers.append((sign * w, m))
    dec = AbelDecomposition(w, levels, layers, bands, GridField(spec, np.zeros(spec.shape)))
    dec.remainder = GridField(spec, v - dec.staircase(spec))
    return dec


def indicator_decay(spec: NormSpec, vol_sequence) -> list:
    """||1_U|| for Vol(U) along a decreasing sequence; requires alpha = 0."""
    if spec.alpha > 0:
        raise HypothesisViolated("with alpha > 0 every indicator has norm >= alpha")
    vols = [float(v) for v in vol_sequence]
    if any(b > a for a, b in zip(vols, vols[1:])) or any(v < 0 for v in vols):
        raise ValueError("volumes must be non-negative and non-increasing")
    norms = [sum(w * v ** (1.0 / p) for p, w in spec.betas.items()) for v in vols]
    if any(b > a + 1e-15 for a, b in zip(norms, norms[1:])):
        raise InequalityViolated("indicator norms are not monotone")
    return norms
