"""Hot loops: the nonlocal exponential operator and the HJ numerical flux.

Each kernel has a numba implementation (explicit loops) and a numpy
implementation (vectorised over nodes); both evaluate the same formulas in the
same order of quadrature nodes, so they agree to rounding.
"""
import math

import numpy as np

from ._accel import njit, resolve_backend

EXT_ENVELOPE = 0
EXT_LINEAR = 1


# ---------------------------------------------------------------- nonlocal operator

@njit(cache=True)
def _ext_value(y, u0, u1, uN2, uN1, L, dx, A_ext, mode):
    # value of the extended field at |y| > L
    if y > 0:
        ub = uN1
        slope = (uN1 - uN2) / dx
    else:
        ub = u0
        slope = (u0 - u1) / dx
    if mode == 0:
        return ub - A_ext * math.log((1.0 + y * y) / (1.0 + L * L))
    return ub + slope * (abs(y) - L)


def limited_curvature(u, dx):
    """Per-cell curvature ``minmod(D2 u_j, D2 u_{j+1})``; zero where the two disagree in sign."""
    n = u.size
    d2 = np.zeros(n)
    d2[1:-1] = (u[:-2] - 2.0 * u[1:-1] + u[2:]) / (dx * dx)
    a, b = d2[:-1], d2[1:]
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _position_tables(u, L, dx, eps, A_ext, mode, cell_t, shift, clip, quadratic=True):
    """``exp((v - shift)/eps)`` of the extended field at ``-L + (j + t) dx``.

    Rows follow ``cell_t``; columns cover ``j = -N .. 2N - 1`` (offset ``N``).
    Inside the grid ``v`` is the linear interpolant, plus (``quadratic``) the
    parabolic correction with the limited cell curvature. The correction
    lifts the O(dx^2) interpolation bias, which the kernel singularity would
    otherwise turn into an O(dx) operator error.
    """
    n = u.size
    j = np.arange(-n, 2 * n)
    t = cell_t[:, None]
    inside = (j >= 0) & (j <= n - 2)
    jc = np.clip(j, 0, n - 2)
    v_in = (1.0 - t) * u[jc] + t * u[jc + 1]
    if quadratic:
        v_in = v_in - 0.5 * limited_curvature(u, dx)[jc] * t * (1.0 - t) * dx * dx
    y = -L + (j[None, :] + t) * dx
    v_out = _ext_value_np(y, u, L, dx, A_ext, mode)
    v = np.where(inside[None, :], v_in, v_out)
    expo = (v - shift) / eps
    return np.exp(np.minimum(expo, clip)), bool(np.any(expo > clip))


@njit(cache=True)
def _near_part(u, i, n, xi, L, dx, eps, A_ext, mode, near_h, near_W):
    if i > 0:
        um = u[i - 1]
    else:
        um = _ext_value(xi - dx, u[0], u[1], u[n - 2], u[n - 1], L, dx, A_ext, mode)
    if i < n - 1:
        up = u[i + 1]
    else:
        up = _ext_value(xi + dx, u[0], u[1], u[n - 2], u[n - 1], L, dx, A_ext, mode)
    g = (up - um) / (2.0 * dx)
    c = (up - 2.0 * u[i] + um) / (dx * dx)
    near = 0.0
    lam = 0.0
    inv_eps = 1.0 / eps
    for j in range(near_h.shape[0]):
        h = near_h[j]
        s = g * h * inv_eps
        d = 0.5 * c * h * h * inv_eps
        ch = math.cosh(s)
        sh = math.sinh(0.5 * s)
        ed = math.expm1(d)
        near += near_W[j] * 2.0 * (ed * ch + 2.0 * sh * sh)
        lam += near_W[j] * 2.0 * (ed + 1.0) * ch * h * h * inv_eps / (dx * dx)
    return near, lam


@njit(cache=True)
def _nonlocal_numba(u, L, dx, eps, A_ext, mode, near_h, near_W, V, in_m, in_q, in_qm, far_h, far_k,
                    far_w, tailw, two_alpha, log_inv_tol, shift):
    n = u.shape[0]
    nq = far_h.shape[0]
    n_in = in_m.shape[0]
    B = np.empty(n)
    lam = np.empty(n)
    inv_eps = 1.0 / eps
    u0 = u[0]
    u1 = u[1]
    uN2 = u[n - 2]
    uN1 = u[n - 1]
    worst = -np.inf
    for i in range(n):
        ui = u[i]
        xi = -L + i * dx
        near, lam_i = _near_part(u, i, n, xi, L, dx, eps, A_ext, mode, near_h, near_W)
        kcut = ((shift - ui) * inv_eps + log_inv_tol) / two_alpha
        # table part: products of precomputed exponentials
        acc = 0.0
        vmax = 0.0
        J = 0
        for j in range(n_in):
            if far_k[j] > kcut:
                break
            J = j + 1
            m = in_m[j]
            a = V[in_q[j], n + i + m]
            b = V[in_qm[j], n + i - m - 1]
            acc += far_w[j] * (a + b)
            if a > vmax:
                vmax = a
            if b > vmax:
                vmax = b
        r = math.exp((shift - ui) * inv_eps)
        e_sum = acc * r
        wsum = tailw[0] - tailw[J]
        wrst = -np.inf
        if vmax > 0:
            wrst = math.log(vmax) + (shift - ui) * inv_eps
        # beyond the grid: direct evaluation
        if J == n_in:
            for j in range(n_in, nq):
                if far_k[j] > kcut:
                    break
                J = j + 1
                h = far_h[j]
                a1 = (_ext_value(xi + h, u0, u1, uN2, uN1, L, dx, A_ext, mode) - ui) * inv_eps
                a2 = (_ext_value(xi - h, u0, u1, uN2, uN1, L, dx, A_ext, mode) - ui) * inv_eps
                if a1 > wrst:
                    wrst = a1
                if a2 > wrst:
                    wrst = a2
                e_sum += far_w[j] * (math.exp(min(a1, 700.0)) + math.exp(min(a2, 700.0)))
                wsum += far_w[j]
        if wrst > worst:
            worst = wrst
        B[i] = near + e_sum - 2.0 * wsum - 2.0 * tailw[J]
        lam[i] = lam_i + e_sum * inv_eps
    return B, lam, worst


def _ext_value_np(y, u, L, dx, A_ext, mode):
    right = y > 0
    ub = np.where(right, u[-1], u[0])
    if mode == EXT_ENVELOPE:
        return ub - A_ext * np.log((1.0 + y * y) / (1.0 + L * L))
    slope = np.where(right, (u[-1] - u[-2]) / dx, (u[0] - u[1]) / dx)
    return ub + slope * (np.abs(y) - L)


def _nonlocal_numpy(u, L, dx, eps, A_ext, mode, near_h, near_W, V, in_m, in_q, in_qm, far_h, far_k,
                    far_w, tailw, two_alpha, log_inv_tol, shift, chunk=256):
    n = u.size
    n_in = in_m.size
    idx = np.arange(n)
    xi = -L + idx * dx
    inv_eps = 1.0 / eps
    um = np.empty(n)
    up = np.empty(n)
    um[1:] = u[:-1]
    up[:-1] = u[1:]
    um[0] = _ext_value_np(np.array([xi[0] - dx]), u, L, dx, A_ext, mode)[0]
    up[-1] = _ext_value_np(np.array([xi[-1] + dx]), u, L, dx, A_ext, mode)[0]
    g = (up - um) / (2.0 * dx)
    c = (up - 2.0 * u + um) / (dx * dx)
    h = near_h[:, None]
    s = g[None, :] * h * inv_eps
    d = 0.5 * c[None, :] * h * h * inv_eps
    ch = np.cosh(s)
    sh = np.sinh(0.5 * s)
    ed = np.expm1(d)
    near = near_W @ (2.0 * (ed * ch + 2.0 * sh * sh))
    lam = near_W @ (2.0 * (ed + 1.0) * ch * h * h * inv_eps / (dx * dx))

    kcut = ((shift - u) * inv_eps + log_inv_tol) / two_alpha
    J = np.searchsorted(far_k, kcut, side="right")
    J_in = np.minimum(J, n_in)
    acc = np.zeros(n)
    vmax = np.zeros(n)
    for start in range(0, int(J_in.max()), chunk):
        stop = min(start + chunk, n_in)
        active = np.arange(start, stop)[:, None] < J_in[None, :]
        m = in_m[start:stop, None]
        a = V[in_q[start:stop, None], n + idx[None, :] + m]
        b = V[in_qm[start:stop, None], n + idx[None, :] - m - 1]
        w = np.where(active, far_w[start:stop, None], 0.0)
        acc += np.sum(w * (a + b), axis=0)
        vmax = np.maximum(vmax, np.max(np.where(active, np.maximum(a, b), 0.0), axis=0))
    logr = (shift - u) * inv_eps
    e_sum = acc * np.exp(logr)
    with np.errstate(divide="ignore"):
        wrst = np.where(vmax > 0, np.log(np.where(vmax > 0, vmax, 1.0)) + logr, -np.inf)
    wsum = tailw[0] - tailw[J_in]

    far_nodes = np.flatnonzero(J > n_in)
    if far_nodes.size:
        jj = np.arange(n_in, int(J.max()))
        active = jj[:, None] < J[None, far_nodes]
        hh = far_h[jj][:, None]
        x0 = xi[far_nodes][None, :]
        u_i = u[far_nodes][None, :]
        a1 = (_ext_value_np(x0 + hh, u, L, dx, A_ext, mode) - u_i) * inv_eps
        a2 = (_ext_value_np(x0 - hh, u, L, dx, A_ext, mode) - u_i) * inv_eps
        w = np.where(active, far_w[jj][:, None], 0.0)
        e_sum[far_nodes] += np.sum(w * (np.exp(np.minimum(a1, 700.0)) + np.exp(np.minimum(a2, 700.0))), axis=0)
        wsum[far_nodes] += np.sum(w, axis=0)
        wrst[far_nodes] = np.maximum(wrst[far_nodes],
                                     np.max(np.where(active, np.maximum(a1, a2), -np.inf), axis=0))
    B = near + e_sum - 2.0 * wsum - 2.0 * tailw[J]
    lam = lam + e_sum * inv_eps
    return B, lam, float(wrst.max())


def nonlocal_operator_kernel(u, plan, backend=None):
    """Evaluate the operator for field values ``u`` using a precomputed quadrature plan.

    Returns ``(B, lam, max_exponent)`` where ``lam`` is the magnitude of the
    diagonal of the linearised operator (the explicit-stability rate).
    """
    backend = resolve_backend(backend)
    u = np.ascontiguousarray(u, dtype=np.float64)
    shift = float(u.max())
    # keep every product V * exp((shift - u_i)/eps) below the overflow threshold
    clip = 700.0 - (shift - float(u.min())) / plan.eps
    V, clipped = _position_tables(u, plan.L, plan.dx, plan.eps, plan.A_ext, plan.extension_mode,
                                  plan.cell_t, shift, clip, plan.interpolation == "quadratic")
    fn = _nonlocal_numba if backend == "numba" else _nonlocal_numpy
    B, lam, worst = fn(u, plan.L, plan.dx, plan.eps, plan.A_ext, plan.extension_mode, plan.near_h,
                       plan.near_W, V, plan.in_m, plan.in_q, plan.in_qm, plan.far_h, plan.far_k,
                       plan.far_w, plan.tailw, 2.0 * plan.alpha, plan.log_inv_tol, shift)
    if clipped:
        worst = math.inf
    return B, lam, worst


# ---------------------------------------------------------------- HJ numerical flux

@njit(cache=True)
def _hermite_eval(p, p0, dp, h, h1, h2, pmax):
    if p > pmax:
        p = pmax
    elif p < -pmax:
        p = -pmax
    s = (p - p0) / dp
    i = int(math.floor(s))
    if i < 0:
        i = 0
    if i > h.shape[0] - 2:
        i = h.shape[0] - 2
    t = s - i
    t2 = t * t
    t3 = t2 * t
    t4 = t3 * t
    t5 = t4 * t
    return (h[i] * (1 - 10 * t3 + 15 * t4 - 6 * t5) + h[i + 1] * (10 * t3 - 15 * t4 + 6 * t5)
            + dp * (h1[i] * (t - 6 * t3 + 8 * t4 - 3 * t5) + h1[i + 1] * (-4 * t3 + 7 * t4 - 3 * t5))
            + dp * dp * (h2[i] * 0.5 * (t2 - 3 * t3 + 3 * t4 - t5) + h2[i + 1] * 0.5 * (t3 - 2 * t4 + t5)))


@njit(cache=True)
def _hj_flux_numba(u, dx, p0, dp, h, h1, h2, pmax, flux_kind, theta):
    n = u.shape[0]
    out = np.empty(n)
    for i in range(n):
        # constant-gradient extrapolation at the ends
        if i > 0:
            a = (u[i] - u[i - 1]) / dx
        else:
            a = (u[1] - u[0]) / dx
        if i < n - 1:
            b = (u[i + 1] - u[i]) / dx
        else:
            b = (u[n - 1] - u[n - 2]) / dx
        a = min(max(a, -pmax), pmax)
        b = min(max(b, -pmax), pmax)
        if flux_kind == 0:
            if a <= b:
                out[i] = max(_hermite_eval(a, p0, dp, h, h1, h2, pmax),
                             _hermite_eval(b, p0, dp, h, h1, h2, pmax))
            else:
                q = min(max(0.0, b), a)
                out[i] = _hermite_eval(q, p0, dp, h, h1, h2, pmax)
        else:
            out[i] = _hermite_eval(0.5 * (a + b), p0, dp, h, h1, h2, pmax) + 0.5 * theta * (b - a)
    return out


def _one_sided(u, dx, pmax):
    a = np.empty_like(u)
    b = np.empty_like(u)
    d = np.diff(u) / dx
    a[1:] = d
    a[0] = d[0]
    b[:-1] = d
    b[-1] = d[-1]
    return np.clip(a, -pmax, pmax), np.clip(b, -pmax, pmax)


def _hj_flux_numpy(u, dx, table, flux_kind, theta):
    a, b = _one_sided(u, dx, table.p_max)
    if flux_kind == 0:
        up = np.maximum(table(a), table(b))
        down = table(np.minimum(np.maximum(0.0, b), a))
        return np.where(a <= b, up, down)
    return table(0.5 * (a + b)) + 0.5 * theta * (b - a)


FLUX_GODUNOV = 0
FLUX_LLF = 1


def hj_flux_kernel(u, dx, table, flux_kind=FLUX_GODUNOV, theta=0.0, backend=None):
    """Numerical Hamiltonian at every node from the one-sided clamped gradients."""
    backend = resolve_backend(backend)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if backend == "numba":
        return _hj_flux_numba(u, dx, float(table.p_nodes[0]), table.dp, table.h_values,
                              table.hprime_values, table.hsecond_values, table.p_max,
                              flux_kind, float(theta))
    return _hj_flux_numpy(u, dx, table, flux_kind, theta)


# ---------------------------------------------------------------- logarithmic growth hull

@njit(cache=True)
def _one_sided_hull(u, x, c, out):
    # out[i] = max(out[i], max_{j <= i} u[j] - c log(1 + x[i] - x[j])).
    # For j < k the difference of the two cones increases with x, so a newer
    # source wins on an interval next to itself and then hands over for good.
    # The upper envelope is kept as a stack of (source, end of its interval),
    # newest on top; each source is pushed and popped at most once.
    n = u.shape[0]
    src = np.empty(n, dtype=np.int64)
    end = np.empty(n)
    top = 0
    for i in range(n):
        xi = x[i]
        while top > 0 and end[top - 1] <= xi:
            top -= 1
        env = -np.inf
        if top > 0:
            s = src[top - 1]
            env = u[s] - c * math.log1p(xi - x[s])
        if u[i] > env:
            while top > 0:
                s = src[top - 1]
                b = end[top - 1]
                if b == np.inf:
                    dominated = u[i] >= u[s]
                else:
                    dominated = u[i] - c * math.log1p(b - xi) >= u[s] - c * math.log1p(b - x[s])
                if dominated:
                    top -= 1
                else:
                    break
            if top > 0:
                s = src[top - 1]
                # u_s - c log(1+y-x_s) = u_i - c log(1+y-x_i), solved without cancellation
                em = math.expm1((u[s] - u[i]) / c)
                end_i = xi - 1.0 + (xi - x[s]) / em if em > 0.0 else np.inf
            else:
                end_i = np.inf
            src[top] = i
            end[top] = end_i
            top += 1
        elif env > out[i]:
            out[i] = env


@njit(cache=True)
def _log_hull_numba(u, x, two_alpha, _unused):
    out = u.copy()
    _one_sided_hull(u, x, two_alpha, out)
    # mirror for sources to the right
    outr = out[::-1].copy()
    _one_sided_hull(u[::-1].copy(), -x[::-1], two_alpha, outr)
    return outr[::-1].copy()


def _log_hull_numpy(u, x, two_alpha, _unused=None, chunk=512):
    out = u.copy()
    for start in range(0, u.size, chunk):
        sl = slice(start, start + chunk)
        cone = u[None, :] - two_alpha * np.log1p(np.abs(x[sl, None] - x[None, :]))
        out[sl] = np.maximum(u[sl], cone.max(axis=1))
    return out


def log_growth_hull(u, x, alpha, backend=None):
    """Smallest function above ``u`` with ``v(y) - v(x) <= 2 alpha log(1 + |y - x|)``."""
    backend = resolve_backend(backend)
    u = np.ascontiguousarray(u, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    fn = _log_hull_numba if backend == "numba" else _log_hull_numpy
    return fn(u, x, 2.0 * alpha, None)
