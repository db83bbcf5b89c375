"""Pure-Python integrator core; reference for (and fallback of) the compiled ``_core``.

Both cores advance the method of steps with classical RK4 on a uniform
grid. Delayed values come from cubic Hermite interpolation of the stored
past. History nodes sit at ``t_k = (k - nh) dt``, ``k = 0..nh``.

A query that lands exactly on the history/solution seam (``t = 0``) takes
the side of the current step midpoint, so breakpoints on grid nodes keep
fourth-order accuracy.
"""

import math

import numpy as np

SEAM = 1e-9


def _phi_table(x, period, knots, coef):
    u = math.fmod(x, period)
    if u < 0.0:
        u += period
    lo, hi = 0, len(knots) - 2
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if knots[mid] <= u:
            lo = mid
        else:
            hi = mid - 1
    d = u - knots[lo]
    c0, c1, c2, c3 = coef[0, lo], coef[1, lo], coef[2, lo], coef[3, lo]
    return ((c0 * d + c1) * d + c2) * d + c3, (3.0 * c0 * d + 2.0 * c1) * d + c2


def _make_phi(kind, beta, period, knots, coef):
    if kind == 0:
        return lambda x: (math.sin(x) - beta, math.cos(x))
    knots = [float(v) for v in knots]
    coef = np.asarray(coef, dtype=float)
    return lambda x: _phi_table(x, period, knots, coef)


def _hermite(y0, m0, y1, m1, dt, th):
    th2 = th * th
    th3 = th2 * th
    return (
        (2.0 * th3 - 3.0 * th2 + 1.0) * y0
        + (th3 - 2.0 * th2 + th) * dt * m0
        + (-2.0 * th3 + 3.0 * th2) * y1
        + (th3 - th2) * dt * m1
    )


def _use_history(tq, mid_flag, dt):
    if tq < -SEAM * dt:
        return True
    if tq > SEAM * dt:
        return False
    return mid_flag


def pll_ode(T, s, h, dt, n_steps, nl_kind, beta, period, knots, coef,
            hist_sig, hist_dot, hist_ddot, sigma0, v0, div_limit):
    """Second-order delayed loop ``x'' + x'/T + phi(x(t-h)) + s T d/dt phi(x(t-h)) = 0``.

    Returns ``(sigma, velocity, acceleration, n_done)``.
    """
    phi = _make_phi(nl_kind, beta, period, knots, coef)
    nh = len(hist_sig) - 1
    sig = np.zeros(n_steps + 1)
    vel = np.zeros(n_steps + 1)
    acc_r = np.zeros(n_steps + 1)
    acc_l = np.zeros(n_steps + 1)
    sig[0], vel[0] = sigma0, v0
    inv_T = 1.0 / T
    sT = s * T
    cur = [0]

    def delayed(tq, flag):
        if _use_history(tq, flag, dt):
            u = tq / dt + nh
            i = min(max(int(math.floor(u)), 0), nh - 1)
            th = u - i
            x = _hermite(hist_sig[i], hist_dot[i], hist_sig[i + 1], hist_dot[i + 1], dt, th)
            xd = _hermite(hist_dot[i], hist_ddot[i], hist_dot[i + 1], hist_ddot[i + 1], dt, th)
        else:
            u = tq / dt
            i = min(max(int(math.floor(u)), 0), cur[0] - 1)
            th = u - i
            x = _hermite(sig[i], vel[i], sig[i + 1], vel[i + 1], dt, th)
            xd = _hermite(vel[i], acc_r[i], vel[i + 1], acc_l[i + 1], dt, th)
        return x, xd

    def rhs(t, x, v, flag):
        if h == 0.0:
            xd, vd = x, v
        else:
            xd, vd = delayed(t - h, flag)
        f, df = phi(xd)
        return -v * inv_T - f - sT * df * vd

    prev_flag = True
    n_done = n_steps
    for n in range(n_steps + 1):
        cur[0] = n
        t = n * dt
        x, v = sig[n], vel[n]
        flag = (t + 0.5 * dt - h) < 0.0
        a1 = rhs(t, x, v, flag)
        acc_r[n] = a1
        acc_l[n] = a1 if (n == 0 or flag == prev_flag) else rhs(t, x, v, prev_flag)
        prev_flag = flag
        if n == n_steps:
            break
        hd = 0.5 * dt
        a2 = rhs(t + hd, x + hd * v, v + hd * a1, flag)
        v2 = v + hd * a1
        a3 = rhs(t + hd, x + hd * v2, v + hd * a2, flag)
        v3 = v + hd * a2
        a4 = rhs(t + dt, x + dt * v3, v + dt * a3, flag)
        v4 = v + dt * a3
        xn = x + dt / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
        vn = v + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        if not (math.isfinite(xn) and math.isfinite(vn)) or abs(vn) > div_limit:
            n_done = n
            break
        sig[n + 1], vel[n + 1] = xn, vn
    return sig, vel, acc_r, n_done


def volterra(mu, dt, n_steps, alpha, dgain, ddelay, mgain, mrate, mdelay,
             nl_kind, beta, period, knots, coef, hist_sig, hist_dot, sigma0, v0, div_limit):
    """First-order Volterra loop, or its ``mu``-perturbed second-order form when ``mu > 0``.

    ``alpha`` holds the forcing at every half step (length ``2 n_steps + 1``).
    Returns ``(sigma, sigma_dot, convolution, n_done)``.
    """
    phi = _make_phi(nl_kind, beta, period, knots, coef)
    nh = len(hist_sig) - 1
    nd, nm = len(dgain), len(mgain)
    dgain = [float(g) for g in dgain]
    ddelay = [float(d) for d in ddelay]
    mgain = [complex(g) for g in mgain]
    mrate = [complex(r) for r in mrate]
    mdelay = [float(d) for d in mdelay]
    second = mu > 0.0
    sig = np.zeros(n_steps + 1)
    sdot = np.zeros(n_steps + 1)
    conv = np.zeros(n_steps + 1)
    sig[0] = sigma0
    w = [0j] * nm
    cur = [0]

    def sigma_at(tq, mid_flag):
        if _use_history(tq, mid_flag, dt):
            u = tq / dt + nh
            i = min(max(int(math.floor(u)), 0), nh - 1)
            return _hermite(hist_sig[i], hist_dot[i], hist_sig[i + 1], hist_dot[i + 1], dt, u - i), True
        u = tq / dt
        i = min(max(int(math.floor(u)), 0), cur[0] - 1)
        return _hermite(sig[i], sdot[i], sig[i + 1], sdot[i + 1], dt, u - i), False

    def rhs(t, x, v, ws, a_t, t_mid):
        r = a_t
        for j in range(nd):
            d = ddelay[j]
            if d == 0.0:
                r += dgain[j] * phi(x)[0]
            else:
                xd, _ = sigma_at(t - d, (t_mid - d) < 0.0)
                r += dgain[j] * phi(xd)[0]
        dw = [0j] * nm
        for i in range(nm):
            r -= (mgain[i] * ws[i]).real
            d = mdelay[i]
            drive = 0.0
            if d == 0.0:
                drive = phi(x)[0]
            else:
                xd, hist = sigma_at(t - d, (t_mid - d) < 0.0)
                if not hist:
                    drive = phi(xd)[0]
            dw[i] = -mrate[i] * ws[i] + drive
        if second:
            return v, (r - v) / mu, dw, r
        return r, 0.0, dw, r

    def conv_now(ws):
        return sum((mgain[i] * ws[i]).real for i in range(nm))

    v = v0
    n_done = n_steps
    hd = 0.5 * dt
    for n in range(n_steps + 1):
        cur[0] = n
        t = n * dt
        tm = t + hd
        x = sig[n]
        k1x, k1v, k1w, r1 = rhs(t, x, v, w, alpha[min(2 * n, 2 * n_steps)], tm)
        sdot[n] = v if second else k1x
        conv[n] = conv_now(w)
        if n == n_steps:
            break
        w2 = [w[i] + hd * k1w[i] for i in range(nm)]
        k2x, k2v, k2w, _ = rhs(t + hd, x + hd * k1x, v + hd * k1v, w2, alpha[2 * n + 1], tm)
        w3 = [w[i] + hd * k2w[i] for i in range(nm)]
        k3x, k3v, k3w, _ = rhs(t + hd, x + hd * k2x, v + hd * k2v, w3, alpha[2 * n + 1], tm)
        w4 = [w[i] + dt * k3w[i] for i in range(nm)]
        k4x, k4v, k4w, _ = rhs(t + dt, x + dt * k3x, v + dt * k3v, w4, alpha[2 * n + 2], tm)
        xn = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        vn = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        w = [w[i] + dt / 6.0 * (k1w[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i]) for i in range(nm)]
        rate = vn if second else k4x
        if not (math.isfinite(xn) and math.isfinite(vn)) or abs(rate) > div_limit:
            n_done = n
            break
        sig[n + 1] = xn
        v = vn
    return sig, sdot, conv, n_done
