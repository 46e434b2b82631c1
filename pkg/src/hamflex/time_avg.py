"""Time reductions for time-dependent Hamiltonians.

``normalize_mean`` removes the per-slice mean with a fixed cutoff chi far
from the support; ``discretize`` replaces a zero-mean G by N autonomous
pieces g_i switched on by bump profiles chi_i, and measures the error
generator K along the flow of the replacement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .field_core import (GridField, GridSpec, TimeField, _trapezoid, l1inf_norm, mask_volume,
                         slice_means, sup_norm, time_union_support)
from .flow2d import _VelocitySampler, min_steps
from .l1_split import RegionOverlap


class VolumeTooSmall(ValueError):
    pass


class TimeGridTooCoarse(ValueError):
    pass


class CannotMeetTolerance(ValueError):
    pass


class BoundViolation(RuntimeError):
    pass


MIN_SAMPLES = 32


# ------------------------------------------------------------ mean removal

@dataclass
class MeanWitness:
    a: np.ndarray          # a(t) = integral of H(t, .)
    chi: GridField
    support_volume: float

    def to_dict(self) -> dict:
        return {"a": [float(v) for v in self.a], "support_volume": self.support_volume,
                "chi_height": float(sup_norm(self.chi))}


def normalize_mean(H: TimeField, chi_region, support=None, tol: float = 1e-8):
    """G = H - a(t) chi with chi uniform of unit integral on ``chi_region``.

    ``support`` (default: union over t of supp H) plays the role of V; the
    region must be disjoint from it and strictly larger, so the chi term
    never raises the per-slice sup norm.
    """
    spec = H.spec
    region = np.asarray(chi_region, bool)
    V = time_union_support(H) if support is None else np.asarray(support, bool)
    a = slice_means(H)
    total = _trapezoid(a, H.t_grid)
    if abs(total) > tol:
        raise ValueError(f"space-time integral of H is {total:.3g}, expected 0")
    if np.any(region & V):
        raise RegionOverlap("chi_region meets the support of H")
    vol_chi = mask_volume(spec, region)
    vol_V = mask_volume(spec, V)
    if not vol_chi > vol_V:
        raise VolumeTooSmall(f"chi_region volume {vol_chi:.4g} must exceed Vol(V) = {vol_V:.4g}")
    chi = np.where(region, 1.0 / vol_chi, 0.0)
    fields = [GridField(spec, f.values - a[k] * chi) for k, f in enumerate(H.fields)]
    G = TimeField(tuple(fields), H.t_grid)
    return G, MeanWitness(a, GridField(spec, chi, 0.0), vol_V)


# -------------------------------------------------------------- bump profiles

def ramp_error(N: int, r: float) -> float:
    """Exact integral of |1 - chi/N| over one interval for the trapezoid
    with linear ramps of duration r, normalized to unit integral."""
    q = 1.0 / (1.0 - N * r)
    return 2 * r * (q / 2 - 1 + 1 / q) + (q - 1) * (1.0 / N - 2 * r)


def _abs_linear_integral(y0, y1, h):
    """Integral of |l| over a segment of length h where l is linear from y0 to y1."""
    y0 = np.asarray(y0, float)
    y1 = np.asarray(y1, float)
    same = y0 * y1 >= 0
    direct = 0.5 * h * (np.abs(y0) + np.abs(y1))
    denom = np.where(same, 1.0, np.abs(y0) + np.abs(y1))
    split = 0.5 * h * (y0 ** 2 + y1 ** 2) / denom
    return np.where(same, direct, split)


@dataclass
class BumpProfile:
    N: int
    i: int
    t: np.ndarray          # sample times on I_i
    chi: np.ndarray
    ramp_samples: int
    integral: float
    deviation: float       # integral of |1 - chi/N| over I_i

    @property
    def plateau_fraction(self) -> float:
        M = len(self.t) - 1
        return (M - 2 * self.ramp_samples) / M


def _profile(N: int, i: int, samples: int, k: int) -> BumpProfile:
    t = np.linspace(i / N, (i + 1) / N, samples + 1)
    shape = np.ones(samples + 1)
    ramp = np.arange(k + 1) / k
    shape[:k + 1] = ramp
    shape[samples - k:] = ramp[::-1]
    area = _trapezoid(shape, t)
    chi = shape / area
    dev = float(np.sum(_abs_linear_integral(1 - chi[:-1] / N, 1 - chi[1:] / N, np.diff(t))))
    return BumpProfile(N, i, t, chi, k, float(_trapezoid(chi, t)), dev)


def bump_profile(N: int, i: int, samples: int, ramp_samples: int | None = None) -> BumpProfile:
    """Piecewise-linear trapezoid on I_i with unit integral.

    By default the widest ramp with deviation below half of 1/N^2 is used,
    falling back to a one-sample ramp as long as the deviation stays below
    1/N^2.  Integrals are exact for the piecewise-linear profile.
    """
    if samples < MIN_SAMPLES:
        raise CannotMeetTolerance(f"need at least {MIN_SAMPLES} samples per interval, got {samples}")
    if not 0 <= i < N:
        raise ValueError("interval index out of range")
    bound = 1.0 / N ** 2
    if ramp_samples is not None:
        prof = _profile(N, i, samples, ramp_samples)
        if prof.deviation >= bound:
            raise CannotMeetTolerance(f"deviation {prof.deviation:.3g} >= 1/N^2 = {bound:.3g}")
        return prof
    best = None
    for k in range(1, samples // 2):
        prof = _profile(N, i, samples, k)
        if prof.deviation <= 0.5 * bound:
            best = prof
        else:
            break
    if best is None:
        best = _profile(N, i, samples, 1)
        if best.deviation >= bound:
            raise CannotMeetTolerance(
                f"{samples} samples per interval cannot meet 1/N^2 = {bound:.3g} (deviation {best.deviation:.3g})")
    return best


# -------------------------------------------------------------- discretize

@dataclass
class DiscretizationCertificate:
    N: int
    g: list
    chi: list
    K: TimeField
    K_norm: float
    K_bound: float
    g_sum: float
    g_sum_bound: float
    G_norm: float
    C: float
    C_prime: float
    slack: float
    G_tilde: TimeField | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return (self.K_norm <= self.K_bound * (1 + self.slack)
                and self.g_sum <= self.g_sum_bound * (1 + self.slack))

    def to_dict(self) -> dict:
        return {"N": self.N, "K_norm": self.K_norm, "K_bound": self.K_bound,
                "g_sum": self.g_sum, "g_sum_bound": self.g_sum_bound, "G_norm": self.G_norm,
                "C": self.C, "C_prime": self.C_prime, "slack": self.slack, "ok": self.ok,
                "g_sup": [sup_norm(g) for g in self.g],
                "chi_deviation": [p.deviation for p in self.chi],
                "chi_ramp_samples": [p.ramp_samples for p in self.chi]}


def interval_samples(T: int, N: int) -> int:
    if (T - 1) % N != 0:
        raise TimeGridTooCoarse(f"{T - 1} time steps do not split into {N} equal intervals")
    M = (T - 1) // N
    if M < MIN_SAMPLES:
        raise TimeGridTooCoarse(f"{M} samples per interval, need >= {MIN_SAMPLES}")
    return M


def time_derivative_sup(G: TimeField) -> float:
    d = np.gradient(G.stack(), G.t_grid, axis=0)
    return float(np.max(np.abs(d)))


def _bilinear(arr: np.ndarray, spec: GridSpec, x, y):
    r, c = spec.to_index(x, y)
    return map_coordinates(arr, [r, c], order=1, mode="constant", cval=0.0)


def error_generator(G: TimeField, G_tilde: TimeField, cell_fraction: float = 0.5) -> TimeField:
    """K(t, x) = (G - G~)(t, phi^t(x)) with phi^t the flow of G~ from the cell centers."""
    spec = G.spec
    t = G.t_grid
    smp = _VelocitySampler(spec, [f.values for f in G_tilde.fields], t)
    X, Y = spec.centers()
    x, y = X.copy(), Y.copy()
    D = G.stack() - G_tilde.stack()
    out = [_bilinear(D[0], spec, x, y)]
    for j in range(len(t) - 1):
        steps = min_steps(spec, smp.speed, t[j + 1] - t[j], cell_fraction)
        x, y = smp.run_points(x, y, t[j], t[j + 1], steps)
        out.append(_bilinear(D[j + 1], spec, x, y))
    return TimeField(tuple(GridField(spec, o) for o in out), t)


def discretize(G: TimeField, N: int, mean_tol: float = 1e-8, compute_K: bool = True,
               assert_bounds: bool = True) -> DiscretizationCertificate:
    """Autonomous pieces g_i = int_{I_i} G dt with profiles chi_i; certified errors."""
    if N < 1:
        raise ValueError("N must be >= 1")
    spec = G.spec
    T = G.T
    M = interval_samples(T, N)
    means = slice_means(G)
    if np.max(np.abs(means)) > mean_tol:
        raise ValueError(f"G must have zero mean on every slice (max {np.max(np.abs(means)):.3g})")
    t = G.t_grid
    S = G.stack()
    g, profiles = [], []
    Gt = np.zeros_like(S)
    for i in range(N):
        sl = slice(i * M, (i + 1) * M + 1)
        gi = np.trapezoid(S[sl], t[sl], axis=0)
        g.append(GridField(spec, gi))
        prof = bump_profile(N, i, M)
        profiles.append(prof)
        # interval endpoints are shared; chi vanishes there so the sum is safe
        Gt[sl] += prof.chi[:, None, None] * gi[None]
    G_tilde = TimeField(tuple(GridField(spec, a) for a in Gt), t)
    C = time_derivative_sup(G)
    Cp = float(max(sup_norm(f) for f in G.fields))
    G_norm = l1inf_norm(G)
    slack = 10.0 / T
    if compute_K:
        K = error_generator(G, G_tilde)
        K_norm = l1inf_norm(K)
    else:
        K = None
        K_norm = float("nan")
    g_sum = float(sum(sup_norm(x) for x in g))
    cert = DiscretizationCertificate(N, g, profiles, K, K_norm, (C + Cp) / N, g_sum,
                                     G_norm + C / N, G_norm, C, Cp, slack, G_tilde)
    if assert_bounds and compute_K and not cert.ok:
        raise BoundViolation(f"K norm {K_norm:.4g} vs {(C + Cp) / N:.4g}, "
                             f"sum g {g_sum:.4g} vs {G_norm + C / N:.4g}")
    return cert
