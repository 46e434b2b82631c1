import numpy as np
import pytest

from hamflex.field_core import GridField, GridSpec, TimeField
from hamflex.flow2d import chain_instance, integrate


def quintic_cut(r, r0, r1):
    s = np.clip((r - r0) / (r1 - r0), 0.0, 1.0)
    return 1.0 - s ** 3 * (10 - 15 * s + 6 * s * s)


def rotation_hamiltonian(spec: GridSpec, r0=0.8, r1=1.6) -> GridField:
    """r^2/2 inside r0 (unit angular speed), cut off smoothly by r1."""
    X, Y = spec.centers()
    r = np.hypot(X, Y)
    return GridField(spec, 0.5 * r ** 2 * quintic_cut(r, r0, r1))


def random_zero_mean(spec: GridSpec, rng, n_bumps=4, total=1.0, region=None):
    """Smooth zero-mean field from paired Gaussians, masked and rescaled so
    that sup + L1 equals ``total``."""
    X, Y = spec.centers()
    v = np.zeros(spec.shape)
    for _ in range(n_bumps):
        c = rng.uniform(-1.0, 1.0, 2)
        w = rng.uniform(0.15, 0.4)
        v += rng.normal() * np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2) / (2 * w * w))
    mask = np.hypot(X, Y) < 1.5 if region is None else region
    v = np.where(mask, v, 0.0)
    v[mask] -= v[mask].mean()
    s = np.max(np.abs(v)) + np.abs(v).sum() * spec.cell_area
    return GridField(spec, v * (total / s))


@pytest.fixture(scope="session")
def rotation_flow():
    spec = GridSpec(-2, 2, -2, 2, 256, 256)
    H = rotation_hamiltonian(spec)
    return spec, H, integrate(TimeField.autonomous(H), 400)


@pytest.fixture(scope="session")
def chain256():
    spec = GridSpec(-4.5, 4.5, -4.5, 4.5, 256, 256)
    inst = chain_instance(spec)
    return inst, inst.check(raise_on_mismatch=False)


def poly_dx_bump(spec: GridSpec, center, radius):
    """Exact x-derivative of (1 - r^2)^4, corrected to zero grid sum by a
    multiple of the bump itself (keeps the field C^2)."""
    X, Y = spec.centers()
    r2 = ((X - center[0]) ** 2 + (Y - center[1]) ** 2) / radius ** 2
    inside = r2 < 1
    b = np.where(inside, (1 - r2) ** 4, 0.0)
    db = np.where(inside, -8 * (X - center[0]) / radius ** 2 * (1 - r2) ** 3, 0.0)
    db = db - b * db.sum() / b.sum()
    return db / np.max(np.abs(db))


def oscillating_field(spec: GridSpec, T: int, rng, amp=0.3, n_modes=3) -> TimeField:
    """Zero-mean G(t,x) = amp * sum_m a_m sin(2 pi w_m t + p_m) B_m(x)."""
    t = np.linspace(0.0, 1.0, T)
    basis = [poly_dx_bump(spec, rng.uniform(-0.8, 0.8, 2), 0.6) for _ in range(n_modes)]
    coef = [(rng.uniform(0.2, 1), rng.uniform(1, 3), rng.uniform(0, 6)) for _ in basis]
    arr = np.array([sum(a * np.sin(2 * np.pi * w * tt + p) * B for (a, w, p), B in zip(coef, basis))
                    for tt in t])
    return TimeField.from_array(spec, amp * arr)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """record(n, ok, detail): print and keep one PASS/FAIL line, then assert."""
    def record(n, ok, detail=""):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}" + (f"  [{detail}]" if detail else "")
        print(line)
        request.config.stash.setdefault(_ACCEPTANCE, {})[n] = line
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
