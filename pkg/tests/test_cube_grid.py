import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamflex.cube_grid import (Cube, CubeFamily, ScaleTooLarge, build_cube_cover, corner_candidates,
                               coverage_mask, default_scale, families_disjoint, shifts,
                               verify_volume_bound)
from hamflex.field_core import GridSpec

SPEC = GridSpec(-2, 2, -2, 2, 128, 128)
X, Y = SPEC.centers()


def on_lattice(c, a, lam):
    kx = (c[0] - a * lam[0]) / (2 * a)
    ky = (c[1] - a * lam[1]) / (2 * a)
    return abs(kx - round(kx)) < 1e-9 and abs(ky - round(ky)) < 1e-9


def test_empty_support():
    fams = build_cube_cover(SPEC, {0: np.zeros(SPEC.shape, bool)}, None, 0.2)
    assert all(not f.cubes for f in fams.values())


def test_scale_too_large():
    supp = np.hypot(X, Y) < 0.5
    with pytest.raises(ScaleTooLarge):
        build_cube_cover(SPEC, {0: supp}, 0.1, 0.2)
    with pytest.raises(ScaleTooLarge):
        build_cube_cover(SPEC, {0: supp}, 0.0, 0.2)
    assert default_scale(0.2) == pytest.approx(0.09)


@pytest.mark.parametrize("cell", [(64, 64), (10, 77), (100, 3), (37, 91)])
def test_single_point_corner_argument(cell):
    a = 0.09
    supp = np.zeros(SPEC.shape, bool)
    supp[cell] = True
    p = (X[cell], Y[cell])
    # the proof's corner: q = a*floor(p/a); one of q + a*{0,1}^2 is within a/2 of p
    fl = (math.floor(p[0] / a), math.floor(p[1] / a))
    hits = []
    for e, corner in zip(shifts(1), corner_candidates(p, a)):
        lam = ((fl[0] + e[0]) % 2, (fl[1] + e[1]) % 2)
        assert on_lattice(corner, a, lam)
        if Cube(corner, 2 * a / 3, 0).contains(*p):
            hits.append((lam, corner))
    assert hits
    fams = build_cube_cover(SPEC, {0: supp}, a, 0.2)
    for lam, corner in hits:
        centers = [c.center for c in fams[(0, lam)].cubes]
        assert any(abs(c[0] - corner[0]) < 1e-9 and abs(c[1] - corner[1]) < 1e-9 for c in centers)


def test_disk_coverage_exhaustive():
    supp = np.hypot(X - 0.2, Y + 0.1) < 1.0
    delta = 0.2
    fams = build_cube_cover(SPEC, {0: supp}, None, delta)
    assert len(fams) == 4
    for (col, lam), fam in fams.items():
        assert families_disjoint(fam)
        for c in fam.cubes:
            assert on_lattice(c.center, fam.a, lam)
            inside = c.contains(X, Y)
            assert np.any(inside & supp)
            d = np.min(np.hypot(X[supp] - c.center[0], Y[supp] - c.center[1]))
            assert d + math.sqrt(2) * c.half < 2 * delta
    for i, j in zip(*np.nonzero(supp)):
        assert any(c.contains(X[i, j], Y[i, j]) for f in fams.values() for c in f.cubes)
    assert np.all(coverage_mask(SPEC, fams)[supp])


def test_one_cube_half_filled():
    a = 0.09
    fam = CubeFamily(0, (0, 0), a, [Cube((0.0, 0.0), 2 * a / 3, 0)])
    supp_vol = 0.5 * fam.cubes[0].volume
    out = verify_volume_bound({(0, (0, 0)): fam}, supp_vol)
    assert out[(0, (0, 0))]["ratio"] == pytest.approx(2.0) and not out[(0, (0, 0))]["flagged"]


@pytest.mark.parametrize("radius,delta", [(1.0, 0.2), (1.5, 0.12), (0.8, 0.1)])
def test_thick_disk_ratio(radius, delta):
    supp = np.hypot(X, Y) < radius
    vol = supp.sum() * SPEC.cell_area
    fams = build_cube_cover(SPEC, {0: supp}, None, delta)
    ratios = verify_volume_bound(fams, vol)
    for key, fam in fams.items():
        direct = sum((2 * c.half) ** 2 for c in fam.cubes) / vol
        assert ratios[key]["ratio"] == pytest.approx(direct)
        assert direct <= 2 and not ratios[key]["flagged"]


def test_thin_line_flagged():
    supp = np.zeros(SPEC.shape, bool)
    supp[64, 20:100] = True
    vol = supp.sum() * SPEC.cell_area
    fams = build_cube_cover(SPEC, {0: supp}, 0.09, 0.2)
    ratios = verify_volume_bound(fams, vol)
    assert any(r["flagged"] for r in ratios.values())


def test_colors_separate_families():
    s1 = np.hypot(X + 1, Y) < 0.4
    s2 = np.hypot(X - 1, Y) < 0.4
    fams = build_cube_cover(SPEC, {0: s1, 1: s2}, None, 0.2, colors={0: 0, 1: 1})
    assert sorted({k[0] for k in fams}) == [0, 1]
    for (col, _), fam in fams.items():
        assert all(c.ball == col for c in fam.cubes)


def test_family_dict_round_trip():
    fams = build_cube_cover(SPEC, {0: np.hypot(X, Y) < 0.5}, None, 0.2)
    for fam in fams.values():
        back = CubeFamily.from_dict(fam.to_dict())
        assert back.cubes == fam.cubes and back.shift == fam.shift


@given(st.integers(0, 10 ** 6))
@settings(max_examples=15, deadline=None)
def test_disjoint_and_covering_random(seed):
    rng = np.random.default_rng(seed)
    supp = np.zeros(SPEC.shape, bool)
    for _ in range(3):
        c = rng.uniform(-1.2, 1.2, 2)
        supp |= np.hypot(X - c[0], Y - c[1]) < rng.uniform(0.1, 0.6)
    delta = float(rng.uniform(0.08, 0.3))
    fams = build_cube_cover(SPEC, {0: supp}, None, delta)
    assert all(families_disjoint(f) for f in fams.values())
    assert np.all(coverage_mask(SPEC, fams)[supp])
