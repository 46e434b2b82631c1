import math

import numpy as np
import pytest

from hamflex.field_core import GridField, GridSpec, TimeField, l1_norm, l1inf_norm, sup_norm
from hamflex.flow2d import (CFLViolation, CorridorBlocked, FlowMap, OracleUnsupported, Translation,
                            WindowDifferenceOracle, conjugation_identities, integrate,
                            integrate_autonomous, loads_fm1, dumps_fm1, measure_distortion,
                            pullback, smooth_bump, translate_cube, velocity)

from conftest import quintic_cut, rotation_hamiltonian


def box_cut(X, Y, r0, r1):
    return quintic_cut(np.maximum(np.abs(X), np.abs(Y)), r0, r1)


def test_zero_hamiltonian_is_identity():
    s = GridSpec(-1, 1, -1, 1, 32, 32)
    fm = integrate(TimeField.autonomous(GridField(s, np.zeros(s.shape))), 10)
    X, Y = s.centers()
    assert np.array_equal(fm.fwd_x, X) and np.array_equal(fm.bwd_y, Y)
    assert fm.area_distortion == 0.0


def test_linear_hamiltonian_translates_down():
    s = GridSpec(-4, 4, -4, 4, 128, 128)
    X, Y = s.centers()
    H = GridField(s, X * box_cut(X, Y, 2.2, 3.4))
    fm = integrate(TimeField.autonomous(H), 128)
    inner = (np.abs(X) < 0.8) & (np.abs(Y) < 0.8)
    assert np.max(np.abs(fm.fwd_x - X)[inner]) < 1e-12
    assert np.max(np.abs(fm.fwd_y - (Y - 1.0))[inner]) < 1e-12
    assert np.max(np.abs(fm.bwd_y - (Y + 1.0))[inner]) < 1e-12


def test_cfl_violation():
    s = GridSpec(-4, 4, -4, 4, 64, 64)
    X, Y = s.centers()
    H = GridField(s, 10 * X * box_cut(X, Y, 2.0, 3.0))
    with pytest.raises(CFLViolation):
        integrate(TimeField.autonomous(H), 1)
    with pytest.raises(ValueError):
        integrate(TimeField.autonomous(H), 0)


def rotate(x, y, angle):
    # xdot = y, ydot = -x: clockwise rotation
    c, s = math.cos(angle), math.sin(angle)
    return c * x + s * y, -s * x + c * y


def test_rotation_matches_analytic(rotation_flow):
    spec, H, fm = rotation_flow
    X, Y = spec.centers()
    inner = np.hypot(X, Y) < 0.7
    ex, ey = rotate(X, Y, 1.0)
    assert np.max(np.hypot(fm.fwd_x - ex, fm.fwd_y - ey)[inner]) < 1e-4
    bx, by = rotate(X, Y, -1.0)
    assert np.max(np.hypot(fm.bwd_x - bx, fm.bwd_y - by)[inner]) < 1e-4
    assert fm.area_distortion <= 1e-3
    assert fm.roundtrip_error() < 1e-6


def test_identity_outside_support(rotation_flow):
    spec, H, fm = rotation_flow
    X, Y = spec.centers()
    far = np.hypot(X, Y) > 1.7
    assert np.array_equal(fm.fwd_x[far], X[far]) and np.array_equal(fm.fwd_y[far], Y[far])


def test_pullback_identity():
    s = GridSpec(-1, 1, -1, 1, 40, 40)
    f = GridField(s, np.random.default_rng(0).normal(size=s.shape))
    # cell-center coordinates round-trip through to_index with ~1e-16 error
    assert np.max(np.abs(pullback(f, FlowMap.identity(s)).values - f.values)) < 1e-12


def test_pullback_translation_shifts_support():
    s = GridSpec(-3, 3, -3, 3, 96, 96)
    X, Y = s.centers()
    shift_cells = 16
    shift = shift_cells * s.dx
    res = translate_cube(s, [(-1.0, 0.0), (-1.0 + shift, 0.0)], 0.4)
    f = GridField(s, smooth_bump(s, (-1.0, 0.0), (0.35, 0.3)))
    g = pullback(f, res.flow)
    expected = np.roll(f.values, shift_cells, axis=1)
    assert np.max(np.abs(g.values - expected)) < 1e-9
    assert np.array_equal(np.abs(g.values) > 1e-10, np.abs(expected) > 1e-10)


def test_pullback_rotation_norms(rotation_flow):
    spec, H, fm = rotation_flow
    f = GridField(spec, smooth_bump(spec, (0.25, 0.1), (0.4, 0.25)))
    g = pullback(f, fm)
    assert abs(sup_norm(g) - sup_norm(f)) <= 1e-3 * sup_norm(f)
    # bilinear interpolation: each cell off by at most Lip * cell diameter / 2
    vx, vy = velocity(spec, f.values)
    lip = float(np.max(np.hypot(vx, vy)))
    support = np.hypot(*spec.centers()) < 0.9
    interp = lip * spec.cell_diameter / 2 * support.sum() * spec.cell_area
    assert abs(l1_norm(g) - l1_norm(f)) <= fm.area_distortion * l1_norm(f) + interp


def bump_at(x, y, center, axes):
    r2 = ((x - center[0]) / axes[0]) ** 2 + ((y - center[1]) / axes[1]) ** 2
    out = np.zeros_like(x)
    m = r2 < 1
    out[m] = np.exp(1 - 1 / (1 - r2[m]))
    return out


def test_pullback_group_composition():
    s = GridSpec(-2, 2, -2, 2, 128, 128)
    H = rotation_hamiltonian(s, 0.3, 1.8)
    K = GridField(s, 0.6 * smooth_bump(s, (0.2, -0.1), (0.9, 0.7)))
    phi = integrate(TimeField.autonomous(H), 200)
    psi = integrate(TimeField.autonomous(K), 200)
    c, ax = (0.3, 0.2), (0.5, 0.4)
    f = GridField(s, smooth_bump(s, c, ax))
    comp = psi.compose(phi)
    once = pullback(f, phi)
    direct = pullback(f, comp)
    # interpolation tolerance: worst single pullback among the three, each against the analytic bump
    exact_once = GridField(s, bump_at(phi.bwd_x, phi.bwd_y, c, ax))
    exact_comp = bump_at(comp.bwd_x, comp.bwd_y, c, ax)
    tol = max(np.max(np.abs(once.values - exact_once.values)),
              np.max(np.abs(pullback(exact_once, psi).values - exact_comp)),
              np.max(np.abs(direct.values - exact_comp)))
    gap = np.max(np.abs(pullback(once, psi).values - direct.values))
    assert gap <= 2 * tol


def test_compose_and_distortion(rotation_flow):
    spec, H, fm = rotation_flow
    back = fm.compose(fm.inv())
    X, Y = spec.centers()
    assert np.max(np.hypot(back.fwd_x - X, back.fwd_y - Y)) < 1e-6
    # node differences overestimate the tangent-flow value
    assert measure_distortion(fm) >= fm.area_distortion


def test_translate_zero_length():
    s = GridSpec(-2, 2, -2, 2, 64, 64)
    res = translate_cube(s, [(0.0, 0.0), (0.0, 0.0)], 0.3)
    X, Y = s.centers()
    assert res.hofer_cost == 0.0 and np.array_equal(res.flow.fwd_x, X)


def test_translate_straight_cost_by_quadrature():
    s = GridSpec(-3, 3, -3, 3, 96, 96)
    res = translate_cube(s, [(-1.0, 0.0), (0.5, 0.0)], 0.3)
    assert len(res.segment_hamiltonians) == 1
    direct = l1inf_norm(res.as_timefield())
    assert direct == pytest.approx(sup_norm(res.segment_hamiltonians[0]), rel=1e-12)
    assert 0.5 * direct <= res.hofer_cost <= 2 * direct
    # the cube itself moves exactly
    X, Y = s.centers()
    cube = (np.abs(X + 1.0) < 0.3) & (np.abs(Y) < 0.3)
    assert np.max(np.abs(res.flow.fwd_x[cube] - X[cube] - 1.5)) < 1e-9


def test_translate_L_route_lands_and_fixes_exterior():
    s = GridSpec(-3, 3, -3, 3, 96, 96)
    X, Y = s.centers()
    res = translate_cube(s, [(-1.2, -1.0), (1.0, -1.0), (1.0, 1.2)], 0.3)
    cube = (np.abs(X + 1.2) < 0.3) & (np.abs(Y + 1.0) < 0.3)
    assert np.max(np.abs(res.flow.fwd_x[cube] - (X[cube] + 2.2))) < s.dx
    assert np.max(np.abs(res.flow.fwd_y[cube] - (Y[cube] + 2.2))) < s.dy
    out = ~res.corridor
    assert np.max(np.abs(res.flow.fwd_x - X)[out]) <= 1e-9
    assert np.max(np.abs(res.flow.fwd_y - Y)[out]) <= 1e-9
    assert res.flow.area_distortion <= 1e-3


def test_translate_blocked_corridor():
    s = GridSpec(-3, 3, -3, 3, 96, 96)
    X, Y = s.centers()
    wall = (np.abs(X) < 0.1) & (np.abs(Y) < 1.0)
    with pytest.raises(CorridorBlocked):
        translate_cube(s, [(-1.0, 0.0), (1.0, 0.0)], 0.3, obstacles=wall)


def test_single_factor_identities_exact():
    s = GridSpec(-2, 2, -2, 2, 64, 64)
    F = GridField(s, 0.05 * smooth_bump(s, (0.0, 0.0), (0.5, 0.4)))
    f0 = integrate(TimeField.autonomous(F), 20)
    rep = conjugation_identities(s, [f0], [], [], [Translation(0.0, 0.0)])
    assert rep.N == 0 and rep.gaps == {"Phi_vs_Phi_prime": 0.0}


def test_chain_identities_and_ledger(chain256):
    inst, rep = chain256
    assert rep.N == 3
    for name in ("identity1", "identity1_factorwise", "identity2", "identity3", "h0_equals_Phi_prime"):
        assert rep.gaps[name] <= 5e-3, name
    assert rep.ledger <= 6 * rep.delta + 1e-12
    assert rep.ok


def test_fm1_round_trip(rotation_flow):
    spec, H, fm = rotation_flow
    small = GridSpec(-2, 2, -2, 2, 24, 20)
    X, Y = small.centers()
    sub = integrate(TimeField.autonomous(GridField(small, 0.1 * X * box_cut(X, Y, 0.7, 1.6))), 10)
    back = loads_fm1(dumps_fm1(sub))
    for a, b in ((back.fwd_x, sub.fwd_x), (back.fwd_y, sub.fwd_y), (back.bwd_x, sub.bwd_x)):
        assert np.max(np.abs(a - b)) <= 1e-15 * 4
    assert back.area_distortion == sub.area_distortion
    assert back.spec == small


def dy_bump(spec, center, axes):
    B = smooth_bump(spec, center, axes)
    out = np.zeros_like(B)
    out[1:-1] = (B[2:] - B[:-2]) / (2 * spec.dy)
    return out


def test_oracle_reconstructs_window_field():
    s = GridSpec(-2, 2, -2, 2, 96, 96)
    X, Y = s.centers()
    window = (np.abs(X) < 1.2) & (np.abs(Y) < 1.2)
    v = dy_bump(s, (0.1, -0.1), (0.6, 0.5))
    f = GridField(s, 0.05 * v / np.max(np.abs(v)))
    oracle = WindowDifferenceOracle()
    terms = oracle(f, window)
    assert len(terms) <= oracle.max_terms
    H = oracle.hamiltonian(f, window).values
    # H solves the centered difference equation D_y H = -f/2 exactly
    Dy = np.zeros_like(H)
    Dy[1:-1] = (H[2:] - H[:-2]) / (2 * s.dy)
    assert np.max(np.abs(Dy[1:-1] + f.values[1:-1] / 2)) < 1e-12
    assert np.allclose(terms[1][1].fwd_x, terms[0][1].bwd_x, atol=1e-12)


def test_oracle_residual_is_second_order():
    s = GridSpec(-2, 2, -2, 2, 96, 96)
    X, Y = s.centers()
    window = (np.abs(X) < 1.2) & (np.abs(Y) < 1.2)
    v = dy_bump(s, (0.1, -0.1), (0.6, 0.5))
    v = v / np.max(np.abs(v))
    rel = []
    for amp in (0.02, 0.04):
        f = GridField(s, amp * v)
        terms = WindowDifferenceOracle()(f, window)
        rel.append(np.max(np.abs(WindowDifferenceOracle.reconstruct(terms, s).values - f.values)) / amp)
    assert 1.5 < rel[1] / rel[0] < 2.5


def test_oracle_rejects_unsupported():
    s = GridSpec(-2, 2, -2, 2, 64, 64)
    X, Y = s.centers()
    window = (np.abs(X) < 1.0) & (np.abs(Y) < 1.0)
    bump = GridField(s, 0.1 * smooth_bump(s, (0.0, 0.0), (0.5, 0.5)))
    with pytest.raises(OracleUnsupported):
        WindowDifferenceOracle()(bump, window)
    outside = GridField(s, 0.1 * dy_bump(s, (1.5, 0.0), (0.3, 0.3)))
    with pytest.raises(OracleUnsupported):
        WindowDifferenceOracle()(outside, window)


def test_integrate_autonomous_cost():
    s = GridSpec(-2, 2, -2, 2, 64, 64)
    F = GridField(s, 0.2 * smooth_bump(s, (0.0, 0.0), (0.8, 0.8)))
    fm = integrate_autonomous(F, 40, duration=0.5)
    assert fm.hofer_cost == pytest.approx(0.5 * sup_norm(F))
