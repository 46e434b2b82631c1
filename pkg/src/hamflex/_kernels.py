"""Compiled inner loops for trajectory integration."""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _cr(t, w, dw, ddw):
    t2 = t * t
    t3 = t2 * t
    w[0] = 0.5 * (-t3 + 2.0 * t2 - t)
    w[1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0)
    w[2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t)
    w[3] = 0.5 * (t3 - t2)
    dw[0] = 0.5 * (-3.0 * t2 + 4.0 * t - 1.0)
    dw[1] = 0.5 * (9.0 * t2 - 10.0 * t)
    dw[2] = 0.5 * (-9.0 * t2 + 8.0 * t + 1.0)
    dw[3] = 0.5 * (3.0 * t2 - 2.0 * t)
    ddw[0] = 0.5 * (-6.0 * t + 4.0)
    ddw[1] = 0.5 * (18.0 * t - 10.0)
    ddw[2] = 0.5 * (-18.0 * t + 8.0)
    ddw[3] = 0.5 * (6.0 * t - 2.0)


@njit(cache=True)
def _derivs(A, k0, k1, s, x, y, x_min, y_min, dx, dy, pad, out, w):
    """Gradient and Hessian of the blended Catmull-Rom interpolant at (x, y).

    out = (Hx, Hy, Hxx, Hxy, Hyy); w is scratch of shape (6, 4).
    """
    ny = A.shape[1]
    nx = A.shape[2]
    cx = (x - x_min) / dx - 0.5 + pad
    cy = (y - y_min) / dy - 0.5 + pad
    ix = int(np.floor(cx))
    iy = int(np.floor(cy))
    if ix < 1 or iy < 1 or ix > nx - 3 or iy > ny - 3:
        for q in range(5):
            out[q] = 0.0
        return
    _cr(cx - ix, w[0], w[1], w[2])
    _cr(cy - iy, w[3], w[4], w[5])
    hx = 0.0
    hy = 0.0
    hxx = 0.0
    hxy = 0.0
    hyy = 0.0
    for a in range(4):
        r = iy - 1 + a
        sx = 0.0
        sdx = 0.0
        sddx = 0.0
        for b in range(4):
            c = ix - 1 + b
            if s == 0.0:
                v = A[k0, r, c]
            else:
                v = (1.0 - s) * A[k0, r, c] + s * A[k1, r, c]
            sx += w[0, b] * v
            sdx += w[1, b] * v
            sddx += w[2, b] * v
        hx += w[3, a] * sdx
        hy += w[4, a] * sx
        hxx += w[3, a] * sddx
        hxy += w[4, a] * sdx
        hyy += w[5, a] * sx
    out[0] = hx / dx
    out[1] = hy / dy
    out[2] = hxx / (dx * dx)
    out[3] = hxy / (dx * dy)
    out[4] = hyy / (dy * dy)


@njit(cache=True)
def _locate(tg, t):
    n = tg.shape[0]
    if n == 1:
        return 0, 0, 0.0
    k = np.searchsorted(tg, t, side="right") - 1
    if k < 0:
        k = 0
    if k > n - 2:
        k = n - 2
    s = (t - tg[k]) / (tg[k + 1] - tg[k])
    if s < 0.0:
        s = 0.0
    if s > 1.0:
        s = 1.0
    return k, k + 1, s


@njit(cache=True)
def rk4_tangent(A, live, tg, xs, ys, t0, t1, steps, x_min, y_min, dx, dy, pad):
    """RK4 on (position, Jacobian) for every start point.

    Velocity is (H_y, -H_x); the Jacobian obeys dJ/dt = DV J with
    DV = [[H_xy, H_yy], [-H_xx, -H_xy]].
    Returns x, y and det(J) - 1 per point.  ``live[r, c]`` flags stencils
    (rows r..r+3, cols c..c+3 of A) holding a nonzero value at some time;
    a point starting on a dead stencil has zero velocity forever.
    """
    n = xs.shape[0]
    ox = np.empty(n)
    oy = np.empty(n)
    odet = np.empty(n)
    h = (t1 - t0) / steps
    d = np.empty(5)
    w = np.empty((6, 4))
    ks = np.empty((4, 6))
    for i in range(n):
        ix = int(np.floor((xs[i] - x_min) / dx - 0.5 + pad))
        iy = int(np.floor((ys[i] - y_min) / dy - 0.5 + pad))
        if ix < 1 or iy < 1 or ix > live.shape[1] or iy > live.shape[0] or not live[iy - 1, ix - 1]:
            ox[i] = xs[i]
            oy[i] = ys[i]
            odet[i] = 0.0
            continue
        st = np.empty(6)
        st[0] = xs[i]
        st[1] = ys[i]
        st[2] = 1.0
        st[3] = 0.0
        st[4] = 0.0
        st[5] = 1.0
        tmp = np.empty(6)
        t = t0
        for _ in range(steps):
            for stage in range(4):
                if stage == 0:
                    tt = t
                    for q in range(6):
                        tmp[q] = st[q]
                elif stage < 3:
                    tt = t + 0.5 * h
                    for q in range(6):
                        tmp[q] = st[q] + 0.5 * h * ks[stage - 1, q]
                else:
                    tt = t + h
                    for q in range(6):
                        tmp[q] = st[q] + h * ks[2, q]
                k0, k1, s = _locate(tg, tt)
                _derivs(A, k0, k1, s, tmp[0], tmp[1], x_min, y_min, dx, dy, pad, d, w)
                # velocity and tangent map
                ks[stage, 0] = d[1]
                ks[stage, 1] = -d[0]
                a11 = d[3]
                a12 = d[4]
                a21 = -d[2]
                a22 = -d[3]
                ks[stage, 2] = a11 * tmp[2] + a12 * tmp[4]
                ks[stage, 3] = a11 * tmp[3] + a12 * tmp[5]
                ks[stage, 4] = a21 * tmp[2] + a22 * tmp[4]
                ks[stage, 5] = a21 * tmp[3] + a22 * tmp[5]
            for q in range(6):
                st[q] += h / 6.0 * (ks[0, q] + 2.0 * ks[1, q] + 2.0 * ks[2, q] + ks[3, q])
            t += h
        ox[i] = st[0]
        oy[i] = st[1]
        odet[i] = st[2] * st[5] - st[3] * st[4] - 1.0
    return ox, oy, odet


@njit(cache=True)
def velocity_at(A, k0, k1, s, xs, ys, x_min, y_min, dx, dy, pad):
    n = xs.shape[0]
    u = np.empty(n)
    v = np.empty(n)
    d = np.empty(5)
    w = np.empty((6, 4))
    for i in range(n):
        _derivs(A, k0, k1, s, xs[i], ys[i], x_min, y_min, dx, dy, pad, d, w)
        u[i] = d[1]
        v[i] = -d[0]
    return u, v


@njit(cache=True)
def _grad(A, k0, k1, s, x, y, x_min, y_min, dx, dy, pad, w):
    ny = A.shape[1]
    nx = A.shape[2]
    cx = (x - x_min) / dx - 0.5 + pad
    cy = (y - y_min) / dy - 0.5 + pad
    ix = int(np.floor(cx))
    iy = int(np.floor(cy))
    if ix < 1 or iy < 1 or ix > nx - 3 or iy > ny - 3:
        return 0.0, 0.0
    _cr(cx - ix, w[0], w[1], w[2])
    _cr(cy - iy, w[3], w[4], w[5])
    hx = 0.0
    hy = 0.0
    for a in range(4):
        r = iy - 1 + a
        sx = 0.0
        sdx = 0.0
        for b in range(4):
            c = ix - 1 + b
            if s == 0.0:
                v = A[k0, r, c]
            else:
                v = (1.0 - s) * A[k0, r, c] + s * A[k1, r, c]
            sx += w[0, b] * v
            sdx += w[1, b] * v
        hx += w[3, a] * sdx
        hy += w[4, a] * sx
    return hx / dx, hy / dy


@njit(cache=True)
def rk4_points(A, live, tg, xs, ys, t0, t1, steps, x_min, y_min, dx, dy, pad):
    """Positions only; same scheme as ``rk4_tangent``."""
    n = xs.shape[0]
    ox = np.empty(n)
    oy = np.empty(n)
    h = (t1 - t0) / steps
    w = np.empty((6, 4))
    for i in range(n):
        x = xs[i]
        y = ys[i]
        ix = int(np.floor((x - x_min) / dx - 0.5 + pad))
        iy = int(np.floor((y - y_min) / dy - 0.5 + pad))
        if ix < 1 or iy < 1 or ix > live.shape[1] or iy > live.shape[0] or not live[iy - 1, ix - 1]:
            ox[i] = x
            oy[i] = y
            continue
        t = t0
        for _ in range(steps):
            k0, k1, s = _locate(tg, t)
            gx, gy = _grad(A, k0, k1, s, x, y, x_min, y_min, dx, dy, pad, w)
            ax, ay = gy, -gx
            k0, k1, s = _locate(tg, t + 0.5 * h)
            gx, gy = _grad(A, k0, k1, s, x + 0.5 * h * ax, y + 0.5 * h * ay, x_min, y_min, dx, dy, pad, w)
            bx, by = gy, -gx
            gx, gy = _grad(A, k0, k1, s, x + 0.5 * h * bx, y + 0.5 * h * by, x_min, y_min, dx, dy, pad, w)
            cx, cy = gy, -gx
            k0, k1, s = _locate(tg, t + h)
            gx, gy = _grad(A, k0, k1, s, x + h * cx, y + h * cy, x_min, y_min, dx, dy, pad, w)
            x += h / 6.0 * (ax + 2.0 * bx + 2.0 * cx + gy)
            y += h / 6.0 * (ay + 2.0 * by + 2.0 * cy - gx)
            t += h
        ox[i] = x
        oy[i] = y
    return ox, oy
