# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled integrator core. Mirrors :mod:`slipcert._pycore` line for line."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, floor, fmod, isfinite, fabs

cnp.import_array()

cdef double SEAM = 1e-9


cdef struct Phi:
    int kind
    double beta
    double period
    int nk
    const double* knots
    const double* c0
    const double* c1
    const double* c2
    const double* c3


cdef inline void phi_eval(Phi* p, double x, double* f, double* df) noexcept nogil:
    cdef double u, d
    cdef int lo, hi, mid
    if p.kind == 0:
        f[0] = sin(x) - p.beta
        df[0] = cos(x)
        return
    u = fmod(x, p.period)
    if u < 0.0:
        u += p.period
    lo = 0
    hi = p.nk - 2
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if p.knots[mid] <= u:
            lo = mid
        else:
            hi = mid - 1
    d = u - p.knots[lo]
    f[0] = ((p.c0[lo] * d + p.c1[lo]) * d + p.c2[lo]) * d + p.c3[lo]
    df[0] = (3.0 * p.c0[lo] * d + 2.0 * p.c1[lo]) * d + p.c2[lo]


cdef inline double hermite(double y0, double m0, double y1, double m1, double dt, double th) noexcept nogil:
    cdef double th2 = th * th
    cdef double th3 = th2 * th
    return ((2.0 * th3 - 3.0 * th2 + 1.0) * y0 + (th3 - 2.0 * th2 + th) * dt * m0
            + (-2.0 * th3 + 3.0 * th2) * y1 + (th3 - th2) * dt * m1)


cdef inline bint use_history(double tq, bint mid_flag, double dt) noexcept nogil:
    if tq < -SEAM * dt:
        return True
    if tq > SEAM * dt:
        return False
    return mid_flag


cdef inline int clip(int i, int lo, int hi) noexcept nogil:
    if i < lo:
        return lo
    if i > hi:
        return hi
    return i


cdef Phi make_phi(int kind, double beta, double period, double[::1] knots, double[:, ::1] coef):
    cdef Phi p
    p.kind = kind
    p.beta = beta
    p.period = period
    p.nk = knots.shape[0]
    p.knots = &knots[0]
    p.c0 = &coef[0, 0]
    p.c1 = &coef[1, 0]
    p.c2 = &coef[2, 0]
    p.c3 = &coef[3, 0]
    return p


# --- second-order delayed PLL ---------------------------------------------

cdef struct OdeCtx:
    double inv_T
    double sT
    double h
    double dt
    int nh
    int cur
    Phi* phi
    const double* hs
    const double* hd
    const double* hdd
    double* sig
    double* vel
    double* acc_r
    double* acc_l


cdef inline double ode_rhs(OdeCtx* c, double t, double x, double v, bint flag) noexcept nogil:
    cdef double xd, vd, u, th, f, df
    cdef int i
    if c.h == 0.0:
        xd = x
        vd = v
    else:
        u = t - c.h
        if use_history(u, flag, c.dt):
            u = u / c.dt + c.nh
            i = clip(<int>floor(u), 0, c.nh - 1)
            th = u - i
            xd = hermite(c.hs[i], c.hd[i], c.hs[i + 1], c.hd[i + 1], c.dt, th)
            vd = hermite(c.hd[i], c.hdd[i], c.hd[i + 1], c.hdd[i + 1], c.dt, th)
        else:
            u = u / c.dt
            i = clip(<int>floor(u), 0, c.cur - 1)
            th = u - i
            xd = hermite(c.sig[i], c.vel[i], c.sig[i + 1], c.vel[i + 1], c.dt, th)
            vd = hermite(c.vel[i], c.acc_r[i], c.vel[i + 1], c.acc_l[i + 1], c.dt, th)
    phi_eval(c.phi, xd, &f, &df)
    return -v * c.inv_T - f - c.sT * df * vd


def pll_ode(double T, double s, double h, double dt, int n_steps, int nl_kind, double beta,
            double period, knots, coef, hist_sig, hist_dot, hist_ddot,
            double sigma0, double v0, double div_limit):
    cdef double[::1] kn = np.ascontiguousarray(knots, dtype=np.float64)
    cdef double[:, ::1] cf = np.ascontiguousarray(coef, dtype=np.float64)
    cdef double[::1] hs = np.ascontiguousarray(hist_sig, dtype=np.float64)
    cdef double[::1] hd = np.ascontiguousarray(hist_dot, dtype=np.float64)
    cdef double[::1] hdd = np.ascontiguousarray(hist_ddot, dtype=np.float64)
    sig_a = np.zeros(n_steps + 1)
    vel_a = np.zeros(n_steps + 1)
    accr_a = np.zeros(n_steps + 1)
    accl_a = np.zeros(n_steps + 1)
    cdef double[::1] sig = sig_a
    cdef double[::1] vel = vel_a
    cdef double[::1] acc_r = accr_a
    cdef double[::1] acc_l = accl_a
    cdef Phi phi = make_phi(nl_kind, beta, period, kn, cf)
    cdef OdeCtx c
    c.inv_T = 1.0 / T
    c.sT = s * T
    c.h = h
    c.dt = dt
    c.nh = hs.shape[0] - 1
    c.cur = 0
    c.phi = &phi
    c.hs = &hs[0]
    c.hd = &hd[0]
    c.hdd = &hdd[0]
    c.sig = &sig[0]
    c.vel = &vel[0]
    c.acc_r = &acc_r[0]
    c.acc_l = &acc_l[0]
    sig[0] = sigma0
    vel[0] = v0
    cdef int n
    cdef int n_done = n_steps
    cdef double t, x, v, a1, a2, a3, a4, v2, v3, v4, xn, vn
    cdef double half = 0.5 * dt
    cdef bint flag, prev_flag = True
    with nogil:
        for n in range(n_steps + 1):
            c.cur = n
            t = n * dt
            x = sig[n]
            v = vel[n]
            flag = (t + half - h) < 0.0
            a1 = ode_rhs(&c, t, x, v, flag)
            acc_r[n] = a1
            if n == 0 or flag == prev_flag:
                acc_l[n] = a1
            else:
                acc_l[n] = ode_rhs(&c, t, x, v, prev_flag)
            prev_flag = flag
            if n == n_steps:
                break
            a2 = ode_rhs(&c, t + half, x + half * v, v + half * a1, flag)
            v2 = v + half * a1
            a3 = ode_rhs(&c, t + half, x + half * v2, v + half * a2, flag)
            v3 = v + half * a2
            a4 = ode_rhs(&c, t + dt, x + dt * v3, v + dt * a3, flag)
            v4 = v + dt * a3
            xn = x + dt / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
            vn = v + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            if not (isfinite(xn) and isfinite(vn)) or fabs(vn) > div_limit:
                n_done = n
                break
            sig[n + 1] = xn
            vel[n + 1] = vn
    return sig_a, vel_a, accr_a, n_done


# --- Volterra form with exponential kernel modes ----------------------------

cdef struct VolCtx:
    double mu
    bint second
    double dt
    int nh
    int cur
    int nd
    int nm
    Phi* phi
    const double* hs
    const double* hd
    double* sig
    double* sdot
    const double* dgain
    const double* ddelay
    const double complex* mgain
    const double complex* mrate
    const double* mdelay


cdef inline double sigma_at(VolCtx* c, double tq, bint mid_flag, bint* hist) noexcept nogil:
    cdef double u
    cdef int i
    if use_history(tq, mid_flag, c.dt):
        hist[0] = True
        u = tq / c.dt + c.nh
        i = clip(<int>floor(u), 0, c.nh - 1)
        return hermite(c.hs[i], c.hd[i], c.hs[i + 1], c.hd[i + 1], c.dt, u - i)
    hist[0] = False
    u = tq / c.dt
    i = clip(<int>floor(u), 0, c.cur - 1)
    return hermite(c.sig[i], c.sdot[i], c.sig[i + 1], c.sdot[i + 1], c.dt, u - i)


cdef inline double vol_rhs(VolCtx* c, double t, double x, double v, double complex* ws,
                           double a_t, double t_mid, double* dx, double* dv,
                           double complex* dw) noexcept nogil:
    cdef double r = a_t
    cdef double f, df, xd, d, drive
    cdef bint hist
    cdef int j
    for j in range(c.nd):
        d = c.ddelay[j]
        if d == 0.0:
            phi_eval(c.phi, x, &f, &df)
        else:
            xd = sigma_at(c, t - d, (t_mid - d) < 0.0, &hist)
            phi_eval(c.phi, xd, &f, &df)
        r += c.dgain[j] * f
    for j in range(c.nm):
        r -= (c.mgain[j] * ws[j]).real
        d = c.mdelay[j]
        drive = 0.0
        if d == 0.0:
            phi_eval(c.phi, x, &f, &df)
            drive = f
        else:
            xd = sigma_at(c, t - d, (t_mid - d) < 0.0, &hist)
            if not hist:
                phi_eval(c.phi, xd, &f, &df)
                drive = f
        dw[j] = -c.mrate[j] * ws[j] + drive
    if c.second:
        dx[0] = v
        dv[0] = (r - v) / c.mu
    else:
        dx[0] = r
        dv[0] = 0.0
    return r


def volterra(double mu, double dt, int n_steps, alpha, dgain, ddelay, mgain, mrate, mdelay,
             int nl_kind, double beta, double period, knots, coef, hist_sig, hist_dot,
             double sigma0, double v0, double div_limit):
    cdef double[::1] kn = np.ascontiguousarray(knots, dtype=np.float64)
    cdef double[:, ::1] cf = np.ascontiguousarray(coef, dtype=np.float64)
    cdef double[::1] hs = np.ascontiguousarray(hist_sig, dtype=np.float64)
    cdef double[::1] hd = np.ascontiguousarray(hist_dot, dtype=np.float64)
    cdef double[::1] al = np.ascontiguousarray(alpha, dtype=np.float64)
    # one padding slot keeps pointers valid when there are no terms
    cdef double[::1] dg = np.ascontiguousarray(np.append(np.asarray(dgain, dtype=np.float64), 0.0))
    cdef double[::1] dd = np.ascontiguousarray(np.append(np.asarray(ddelay, dtype=np.float64), 0.0))
    cdef double complex[::1] mg = np.ascontiguousarray(np.append(np.asarray(mgain, dtype=np.complex128), 0j))
    cdef double complex[::1] mr = np.ascontiguousarray(np.append(np.asarray(mrate, dtype=np.complex128), 0j))
    cdef double[::1] md = np.ascontiguousarray(np.append(np.asarray(mdelay, dtype=np.float64), 0.0))
    cdef int nm = len(mgain)
    sig_a = np.zeros(n_steps + 1)
    sdot_a = np.zeros(n_steps + 1)
    conv_a = np.zeros(n_steps + 1)
    scratch = np.zeros((9, nm + 1), dtype=np.complex128)
    cdef double[::1] sig = sig_a
    cdef double[::1] sdot = sdot_a
    cdef double[::1] conv = conv_a
    cdef double complex[:, ::1] sc = scratch
    cdef Phi phi = make_phi(nl_kind, beta, period, kn, cf)
    cdef VolCtx c
    c.mu = mu
    c.second = mu > 0.0
    c.dt = dt
    c.nh = hs.shape[0] - 1
    c.cur = 0
    c.nd = len(dgain)
    c.nm = nm
    c.phi = &phi
    c.hs = &hs[0]
    c.hd = &hd[0]
    c.sig = &sig[0]
    c.sdot = &sdot[0]
    c.dgain = &dg[0]
    c.ddelay = &dd[0]
    c.mgain = &mg[0]
    c.mrate = &mr[0]
    c.mdelay = &md[0]
    cdef double complex* w = &sc[0, 0]
    cdef double complex* wt = &sc[1, 0]
    cdef double complex* k1 = &sc[2, 0]
    cdef double complex* k2 = &sc[3, 0]
    cdef double complex* k3 = &sc[4, 0]
    cdef double complex* k4 = &sc[5, 0]
    cdef int n, i
    cdef int n_done = n_steps
    cdef double t, tm, x, v, xn, vn, cv, rate
    cdef double k1x, k1v, k2x, k2v, k3x, k3v, k4x, k4v
    cdef double half = 0.5 * dt
    sig[0] = sigma0
    v = v0
    with nogil:
        for n in range(n_steps + 1):
            c.cur = n
            t = n * dt
            tm = t + half
            x = sig[n]
            vol_rhs(&c, t, x, v, w, al[2 * n if n < n_steps else 2 * n_steps], tm, &k1x, &k1v, k1)
            if c.second:
                sdot[n] = v
            else:
                sdot[n] = k1x
            cv = 0.0
            for i in range(nm):
                cv += (c.mgain[i] * w[i]).real
            conv[n] = cv
            if n == n_steps:
                break
            for i in range(nm):
                wt[i] = w[i] + half * k1[i]
            vol_rhs(&c, t + half, x + half * k1x, v + half * k1v, wt, al[2 * n + 1], tm, &k2x, &k2v, k2)
            for i in range(nm):
                wt[i] = w[i] + half * k2[i]
            vol_rhs(&c, t + half, x + half * k2x, v + half * k2v, wt, al[2 * n + 1], tm, &k3x, &k3v, k3)
            for i in range(nm):
                wt[i] = w[i] + dt * k3[i]
            vol_rhs(&c, t + dt, x + dt * k3x, v + dt * k3v, wt, al[2 * n + 2], tm, &k4x, &k4v, k4)
            xn = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            vn = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
            for i in range(nm):
                w[i] = w[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if c.second:
                rate = vn
            else:
                rate = k4x
            if not (isfinite(xn) and isfinite(vn)) or fabs(rate) > div_limit:
                n_done = n
                break
            sig[n + 1] = xn
            v = vn
    return sig_a, sdot_a, conv_a, n_done
