"""Splitting a zero-mean field into pieces with a bounded weight budget.

The budget of a list of pieces is sum(sup * (support volume + 1)).  The
construction slices |f| into level slabs along a threshold chain starting at
1, removes each slab's mass with a fixed compensator bump h, and groups the
small-volume tail into a single remainder piece.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .field_core import GridField, GridSpec, dilate, l1_norm, mean, sup_norm, support_volume


class RegionOverlap(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    pass


class EtaTooSmall(ValueError):
    pass


class PreconditionError(ValueError):
    pass


BUDGET_ALWAYS = 100.0
BUDGET_CONDITION5 = 24.0   # 23 from the construction plus one unit of grid slack
INTERIM_BOUND = 14.0
THRESHOLD_SUM_BOUND = 4.0


@dataclass
class ThresholdSequence:
    a: list
    slab_volumes: list
    halving_flags: list
    slab_counts: list = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(sum(self.a))


@dataclass
class SplitCertificate:
    pieces: list
    per_piece: list            # (sup, support volume, mean) per piece
    budget: float
    tail_index: int
    condition5_ok: bool
    interim_budget: float
    thresholds: ThresholdSequence | None
    residual: float
    tail_volume: float
    perturbation: GridField | None = None
    h: GridField | None = None

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "interim_budget": self.interim_budget,
            "tail_index": self.tail_index,
            "tail_volume": self.tail_volume,
            "condition5_ok": self.condition5_ok,
            "residual": self.residual,
            "threshold_sum": self.thresholds.total if self.thresholds else 0.0,
            "thresholds": list(self.thresholds.a) if self.thresholds else [],
            "pieces": [{"sup": s, "vol": v, "mean": m} for s, v, m in self.per_piece],
        }


def check_condition5(f: GridField):
    """True iff no nonzero value is attained on more than one cell."""
    v = f.values.ravel()
    nz = v[v != 0.0]
    vals, counts = np.unique(nz, return_counts=True)
    bad = vals[counts > 1]
    return len(bad) == 0, [float(b) for b in bad]


def perturb_to_condition5(f: GridField, eta: float):
    """Return (f', g) with f = f' + g, f' free of repeated nonzero values.

    g is zero-mean, supported exactly on the repeated-value cells, and
    satisfies ||g||_inf <= eta and ||g||_inf * (vol(supp g) + 1) < 1.
    """
    if eta <= 0:
        raise EtaTooSmall("eta must be positive")
    ok, bad = check_condition5(f)
    if ok:
        return f, GridField(f.spec, np.zeros(f.spec.shape), 0.0)
    v = f.values.ravel()
    plateau = np.isin(v, np.array(bad)) & (v != 0.0)
    vol = np.count_nonzero(plateau) * f.spec.cell_area
    amp = min(eta, 0.5 / (vol + 1.0))
    g = np.zeros_like(v)
    base = 0
    for level in bad:
        idx = np.flatnonzero(v == level)
        k = len(idx)
        # positive offsets drawn from one running counter plus a balancing
        # negative one: distinct across all levels, nonzero and zero-sum
        offs = np.arange(base + 1, base + k, dtype=float)
        offs = np.append(offs, -offs.sum())
        base += k - 1
        g[idx] = offs
    g /= np.max(np.abs(g))
    scale = amp
    for _ in range(60):
        gs = scale * g
        fp = v - gs
        if (np.count_nonzero(fp[plateau] == 0.0) == 0
                and check_condition5(GridField(f.spec, fp, 0.0))[0]
                and np.all((gs != 0.0) == plateau)):
            # keep the split exact: f' + g must reproduce f bit for bit
            gs = v - fp
            if np.all((gs != 0.0) == plateau) and abs(gs.sum()) * f.spec.cell_area < 1e-12:
                return (GridField(f.spec, fp.reshape(f.spec.shape)),
                        GridField(f.spec, gs.reshape(f.spec.shape), 0.0))
        scale *= 0.5
        if scale < 64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(v)))):
            break
    raise EtaTooSmall("cannot separate plateau values at this eta / precision")


def build_thresholds(f: GridField) -> ThresholdSequence:
    """Threshold chain a_0 = 1 > a_1 > ... with slabs of volume <= 1.

    Halve when the next half-band has volume < 1; otherwise drop a_{i+1}
    so that the slab holds exactly floor(1/cell_area) cells, placing the
    threshold midway between the two neighbouring sorted values.
    """
    area = f.spec.cell_area
    absvals = np.abs(f.values.ravel())
    nz = np.sort(absvals[absvals > 0.0])[::-1]      # descending
    if nz.size and nz[0] > 1.0 + 1e-12:
        raise PreconditionError("sup norm must be <= 1")
    cap = int(np.floor(1.0 / area + 1e-9))            # cells in a unit-volume slab
    a = [1.0]
    vols, flags, counts = [], [], []
    if nz.size == 0:
        return ThresholdSequence(a, vols, flags, counts)
    vmin = nz[-1]
    pos = 0  # nz[pos:] are the values <= a[-1]
    while a[-1] >= vmin:
        ai = a[-1]
        # values in (ai/2, ai]
        hi = pos
        lo = hi + int(np.count_nonzero(nz[hi:] > ai / 2.0))
        band = lo - hi
        if band * area < 1.0 - 1e-12:
            nxt = ai / 2.0
            flags.append(True)
            take = band
        else:
            # band volume >= 1: cut after exactly cap cells
            v_c = nz[hi + cap - 1]
            v_next = nz[hi + cap] if hi + cap < nz.size else 0.0
            nxt = max(0.5 * (v_c + v_next), ai / 2.0)
            flags.append(False)
            take = cap
        a.append(float(nxt))
        vols.append(take * area)
        counts.append(take)
        pos = hi + take
    return ThresholdSequence(a, vols, flags, counts)


def build_h(spec: GridSpec, h_region) -> GridField:
    """Compensator bump: integral 1, sup <= 1, support of volume ~2 inside h_region.

    A tent centered at the region's centroid, clipped at 1, with its scale
    solved by bisection so that the integral is exactly 1.
    """
    mask = np.asarray(h_region, bool)
    area = spec.cell_area
    need = int(round(2.0 / area))
    if np.count_nonzero(mask) < need:
        raise PreconditionError("h_region volume must be at least 2")
    X, Y = spec.centers()
    cx, cy = X[mask].mean(), Y[mask].mean()
    d = np.hypot(X - cx, Y - cy)
    d_masked = np.where(mask, d, np.inf).ravel()
    order = np.lexsort((np.arange(d_masked.size), d_masked))[:need]
    chosen = np.zeros(d_masked.size, bool)
    chosen[order] = True
    chosen = chosen.reshape(spec.shape)
    r = d[chosen].max() + 0.5 * spec.cell_diameter
    w = np.where(chosen, 1.0 - d / r, 0.0)  # strictly positive on chosen cells

    def integral(s):
        return np.minimum(s * w, 1.0).sum() * area

    lo, hi = 0.0, 1.0
    while integral(hi) < 1.0:
        hi *= 2.0
        if hi > 1e12:
            raise PreconditionError("cannot normalise h")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if integral(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    vals = np.minimum(hi * w, 1.0)
    vals = vals / (vals.sum() * area)   # exact unit integral
    return GridField(spec, vals, 0.0)


def budget_of(per_piece) -> float:
    return float(sum(s * (v + 1.0) for s, v, _ in per_piece))


def _record(piece: GridField):
    return (sup_norm(piece), support_volume(piece), mean(piece))


def split(f: GridField, h_region, eta: float = 1e-6, dilation_cells: int = 1) -> SplitCertificate:
    """Split f into zero-mean pieces with budget <= 100 (<= 24 without perturbation)."""
    spec = f.spec
    area = spec.cell_area
    h_region = np.asarray(h_region, bool)
    fsup, fl1 = sup_norm(f), l1_norm(f)
    if fsup + fl1 > 1.0 + 1e-9:
        raise PreconditionError(f"need ||f||_inf + ||f||_1 <= 1, got {fsup + fl1:.6g}")
    if abs(mean(f)) > 1e-10:
        raise PreconditionError("f must have zero mean")
    supp = f.values != 0.0
    if np.any(supp & h_region):
        raise RegionOverlap("h_region meets the support of f")
    if np.count_nonzero(h_region) * area < 2.0 - 1e-9:
        raise PreconditionError("h_region volume must be at least 2")

    if not np.any(supp):
        return SplitCertificate([], [], 0.0, 0, True, 0.0, ThresholdSequence([1.0], [], []),
                                0.0, 0.0, None, None)

    ok, _ = check_condition5(f)
    g = None
    work = f
    if not ok:
        work, g = perturb_to_condition5(f, eta)

    h = build_h(spec, h_region)
    hv = h.values
    ts = build_thresholds(work)
    absw = np.abs(work.values)
    wv = work.values

    # slab masks S_i = {a_i < |f| <= a_{i-1}}, i = 1..len
    slabs = []
    for i in range(1, len(ts.a)):
        slabs.append((absw > ts.a[i]) & (absw <= ts.a[i - 1]) & (wv != 0.0))

    # interim pieces f|S_i - h * int_S_i f, nonempty slabs only
    interim = 0.0
    for S in slabs:
        if not S.any():
            continue
        piece = np.where(S, wv, 0.0) - hv * (wv[S].sum() * area)
        pf = GridField(spec, piece)
        s, v, _ = _record(pf)
        interim += s * (v + 1.0)

    vols = np.array([np.count_nonzero(S) * area for S in slabs])
    tails = np.cumsum(vols[::-1])[::-1]   # tails[k] = sum_{i >= k} vols (0-based)
    m0 = int(np.argmax(tails < 1.0 - 1e-12)) if np.any(tails < 1.0 - 1e-12) else len(slabs)
    tail_volume = float(tails[m0]) if m0 < len(slabs) else 0.0

    pieces = []
    total = np.zeros(spec.shape)
    for S in slabs[:m0]:
        if not S.any():
            continue
        chi = dilate(S, dilation_cells) if dilation_cells > 0 else S
        body = np.where(chi, wv, 0.0)
        piece = body - hv * (body.sum() * area)
        pieces.append(GridField(spec, piece))
        total = total + piece
    remainder = wv - total
    if np.any(np.abs(remainder) > 0.0):
        pieces.append(GridField(spec, remainder))
    if g is not None:
        pieces.append(g)

    per_piece = [_record(p) for p in pieces]
    recon = np.zeros(spec.shape)
    for p in pieces:
        recon = recon + p.values
    residual = float(np.max(np.abs(recon - f.values)))
    budget = budget_of(per_piece)
    cert = SplitCertificate(pieces, per_piece, budget, m0 + 1, ok, interim, ts,
                            residual, tail_volume, g, h)
    if budget > BUDGET_ALWAYS:
        raise BudgetExceeded(f"budget {budget:.4g} exceeds {BUDGET_ALWAYS}")
    return cert
