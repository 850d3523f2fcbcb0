# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path kernel.

Runs the same per-bundle scheme as ``_kernel_py`` (see that module for the
description) with the GIL released, one bundle at a time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, pow, sqrt, cos, fabs, INFINITY, NAN
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t M1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t M2 = 0x94D049BB133111EBULL
cdef uint64_t K_STEP = 0xD1B54A32D192ED03ULL
cdef double U53 = 1.0 / 9007199254740992.0
cdef double TWO_PI = 6.283185307179586
cdef double S_MAX = 745.0

DEF MAXW = 64


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * M1
    z = (z ^ (z >> 27)) * M2
    return z ^ (z >> 31)


cdef inline uint64_t stream_key(uint64_t seed, uint64_t path, uint64_t role) noexcept nogil:
    cdef uint64_t k = mix64(seed + GOLDEN)
    k = mix64(k ^ (path * GOLDEN))
    return mix64(k ^ (role * K_STEP))


cdef inline double uniform(uint64_t key, uint64_t counter, uint64_t index) noexcept nogil:
    cdef uint64_t z = mix64(counter + GOLDEN)
    z = mix64(key ^ z)
    z = mix64(z ^ (index * K_STEP))
    return (<double>(z >> 11) + 0.5) * U53


cdef inline double normal(uint64_t ka, uint64_t kb, uint64_t counter, uint64_t index) noexcept nogil:
    cdef double u1 = uniform(ka, counter, index)
    cdef double u2 = uniform(kb, counter, index)
    return sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)


cdef int poisson_inv(double lam, double u) noexcept nogil:
    cdef double p = exp(-lam)
    cdef double F = p
    cdef int k = 0
    while u > F and k < 100000:
        k += 1
        p = p * lam / k
        F = F + p
        if p == 0.0 and F < u:
            break
    return k


# ---------------------------------------------------------------- Lévy tail
cdef struct Levy:
    int code
    double p[8]
    double *lu
    double *lt
    int n


cdef double levy_tail(Levy *L, double u) noexcept nogil:
    cdef double s, t, a, sc
    cdef int k, n
    if L.code == 0:
        return 0.0
    if L.code == 1:
        return L.p[1] if u <= L.p[0] else 0.0
    if L.code == 2:
        # alpha, beta, c_b, log u0, small_alpha, small_scale, tail_u0
        s = log(u)
        if s >= L.p[3]:
            t = L.p[2] * exp(-L.p[0] * s)
            if L.p[1] != 0.0:
                t = t * pow(s, L.p[1])
            return t
        t = L.p[6]
        sc = L.p[5]
        if sc > 0:
            a = L.p[4]
            if a == 0.0:
                t = t + sc * log(L.p[7] / u)
            else:
                t = t + sc * (pow(u, -a) - pow(L.p[7], -a)) / a
        return t
    # tabulated
    n = L.n
    s = log(u)
    if s < L.lu[0]:
        return exp(L.lt[0])
    k = 0
    while k + 1 < n and L.lu[k + 1] <= s:
        k += 1
    if k > n - 2:
        k = n - 2
    return exp(L.lt[k] + (L.lt[k + 1] - L.lt[k]) / (L.lu[k + 1] - L.lu[k]) * (s - L.lu[k]))


cdef double levy_tail_inverse(Levy *L, double y) noexcept nogil:
    cdef double s, lo, hi, mid, t, a, sc, d, t0, slope, ly, u0
    cdef int k, i, n
    if L.code == 1:
        return L.p[0]
    if L.code == 2:
        t0 = L.p[6]
        if y <= t0:
            if L.p[1] == 0.0:
                s = log(L.p[2] / y) / L.p[0]
                if s > S_MAX:
                    s = S_MAX
                return exp(s)
            lo = L.p[3]
            hi = S_MAX
            for i in range(100):
                mid = 0.5 * (lo + hi)
                t = L.p[2] * exp(-L.p[0] * mid) * pow(mid, L.p[1])
                if t > y:
                    lo = mid
                else:
                    hi = mid
            return exp(hi)
        u0 = L.p[7]
        sc = L.p[5]
        if sc <= 0:
            return u0
        a = L.p[4]
        d = y - t0
        if a == 0.0:
            return u0 * exp(-d / sc)
        return pow(pow(u0, -a) + a * d / sc, -1.0 / a)
    # tabulated
    n = L.n
    ly = log(y)
    if ly >= L.lt[0]:
        return exp(L.lu[0])
    k = 0
    while k + 1 < n and L.lt[k + 1] > ly:
        k += 1
    if k > n - 2:
        k = n - 2
    slope = (L.lt[k + 1] - L.lt[k]) / (L.lu[k + 1] - L.lu[k])
    if slope < 0:
        s = L.lu[k] + (ly - L.lt[k]) / slope
    else:
        s = L.lu[k + 1]
    if s > S_MAX:
        s = S_MAX
    return exp(s)


# ---------------------------------------------------------------- drift
cdef inline void drift_nl(int code, double *p, double x, double *val, double *der) noexcept nogil:
    """Nonlinear part of I and its derivative (linear parts are folded)."""
    cdef double s, e, bh, ah, c
    if code == 1:
        val[0] = 0.5 * p[0] * x * x
        der[0] = p[0] * x
        return
    if code == 2:
        c = p[0]
        ah = p[1]
        bh = p[2]
        if x >= p[3]:
            s = log(x)
            e = c * pow(x, ah)
            if bh == 0.0:
                val[0] = e
                der[0] = ah * e / x
            else:
                val[0] = e * pow(s, bh)
                der[0] = e * (ah * pow(s, bh) + bh * pow(s, bh - 1)) / x
        else:
            val[0] = x * (p[4] + x * (p[5] + x * p[6]))
            der[0] = p[4] + x * (2 * p[5] + 3 * p[6] * x)
        return
    val[0] = 0.0
    der[0] = 0.0


cdef inline double interp_cum(double *tab, int n, double s0, double ds, double s) noexcept nogil:
    cdef double r = (s - s0) / ds
    cdef int k = <int> r
    cdef double w
    if k < 0:
        return 0.0
    if k >= n - 1:
        return tab[n - 1]
    w = r - k
    if tab[k] > 0 and tab[k + 1] > 0:
        return exp(log(tab[k]) + w * (log(tab[k + 1]) - log(tab[k])))
    return tab[k] + w * (tab[k + 1] - tab[k])


cdef void insertion_order(double *key, int *order, int w) noexcept nogil:
    cdef int i, j, t
    for i in range(w):
        order[i] = i
    for i in range(1, w):
        t = order[i]
        j = i - 1
        while j >= 0 and key[order[j]] > key[t]:
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = t


def run_bundles(object P):
    """Simulate the bundles described by the parameter dict ``P`` in place."""
    cdef:
        double[:, ::1] x0 = P["x0"]
        int64_t[::1] bundle_ids = P["bundle_ids"]
        int[::1] slot_drift = P["slot_drift"]
        int[::1] d_code = P["d_code"]
        double[::1] d_lin = P["d_lin"]
        double[:, ::1] d_par = P["d_par"]
        double[::1] lv_par = P["levy_par"]
        double[::1] lv_lu = P["levy_lu"]
        double[::1] lv_lt = P["levy_lt"]
        double[::1] cum1 = P["cum1"]
        double[::1] below = P["below"]
        double[::1] above = P["above"]
        double[:, :, ::1] rec = P["rec"]
        double[:, ::1] xfinal = P["xfinal"]
        int[:, ::1] status = P["status"]
        double[:, ::1] tevent = P["tevent"]
        double[:, :, ::1] tau_below = P["tau_below"]
        double[:, :, ::1] tau_above = P["tau_above"]
        int[:, ::1] njump = P["njump"]
        double[:, :, ::1] jt = P["jump_t"]
        double[:, :, ::1] jh = P["jump_h"]
        int64_t[::1] stats = P["stats"]
        int B = x0.shape[0]
        int W = x0.shape[1]
        int nb = below.shape[0]
        int na = above.shape[0]
        int n_steps = P["n_steps"]
        int stride = P["stride"]
        int H = P["max_halvings"]
        int adapt_h = P["adaptive_halvings"]
        bint adaptive = P["adaptive"]
        bint rec_jumps = P["record_jumps"]
        bint stop_passed = P["stop_when_passed"]
        int jcap = jt.shape[2]
        double dt = P["dt"]
        double gamma_comp = P["comp"]
        double s2 = P["s2"]
        double eps = P["eps"]
        double tail_eps = P["tail_eps"]
        double x_explode = P["x_explode"]
        double rate_cap = P["rate_cap"]
        double cfl = P["cfl"]
        double sub_cfl = P["sub_cfl"]
        bint stoch = P["s2"] > 0 or P["tail_eps"] > 0
        double cells = P["coupling_cells"]
        double cum_s0 = P["cum_s0"]
        double cum_ds = P["cum_ds"]
        int n_cum = cum1.shape[0]
        uint64_t seed = <uint64_t> P["seed"]
        Levy L
        int b, i, j, r, n, L_lvl, N, kk, ri, nalive, q, ncell, c_lo
        uint64_t kA, kB, kP, kJ, kM, counter, tick, size
        uint64_t nticks = (<uint64_t> 1) << H
        double x[MAXW]
        double xp[MAXW]
        double xd[MAXW]
        double keyv[MAXW]
        int order[MAXW]
        bint alive[MAXW]
        double xm, rate, h, ts, te, tt, rem, hi, K, bv, dv, nv, k1, k2, y, xn, tcross
        double kd, eps_x, m1a, tail_x, lam, u, hsz, cum, prev, g, width, val, der, lin, tz
        int err = 0
    if W > MAXW:
        raise ValueError("bundle width above the compiled limit")
    L.code = <int> P["levy_code"]
    for i in range(8):
        L.p[i] = lv_par[i]
    L.n = lv_lu.shape[0]
    L.lu = &lv_lu[0] if L.n > 0 else NULL
    L.lt = &lv_lt[0] if L.n > 0 else NULL
    with nogil:
        for b in range(B):
            kA = stream_key(seed, <uint64_t> bundle_ids[b], 1)
            kB = stream_key(seed, <uint64_t> bundle_ids[b], 2)
            kP = stream_key(seed, <uint64_t> bundle_ids[b], 3)
            kJ = stream_key(seed, <uint64_t> bundle_ids[b], 4)
            kM = stream_key(seed, <uint64_t> bundle_ids[b], 5)
            for j in range(W):
                x[j] = x0[b, j]
                alive[j] = True
                status[b, j] = 0
                tevent[b, j] = NAN
                njump[b, j] = 0
                if x[j] <= 0.0:
                    x[j] = 0.0
                    alive[j] = False
                    status[b, j] = 1
                    tevent[b, j] = 0.0
                elif x[j] >= x_explode:
                    x[j] = INFINITY
                    alive[j] = False
                    status[b, j] = 2
                    tevent[b, j] = 0.0
                for q in range(nb):
                    tau_below[b, j, q] = 0.0 if x[j] <= below[q] else NAN
                for q in range(na):
                    tau_above[b, j, q] = 0.0 if x[j] >= above[q] else NAN
                rec[b, j, 0] = x[j]
            for n in range(n_steps):
                tick = 0
                while tick < nticks:
                    xm = 0.0
                    nalive = 0
                    K = 0.0
                    for j in range(W):
                        xp[j] = x[j]
                        if alive[j]:
                            nalive += 1
                            if x[j] > xm:
                                xm = x[j]
                            if stoch:
                                lin = d_lin[slot_drift[j]] + gamma_comp
                                drift_nl(d_code[slot_drift[j]], &d_par[slot_drift[j], 0], x[j], &val, &der)
                                dv = fabs(lin + der)
                                if dv > K:
                                    K = dv
                                if x[j] > 0:
                                    bv = fabs(lin * x[j] + val) / x[j]
                                    if bv > K:
                                        K = bv
                    if nalive == 0:
                        break
                    # substep level from the jump rate and the drift stiffness
                    rate = xm * tail_eps * dt
                    L_lvl = 0
                    while rate > rate_cap and L_lvl < (adapt_h if adaptive else H):
                        rate = rate * 0.5
                        L_lvl += 1
                    if rate > rate_cap and not adaptive:
                        err = 1
                        stats[1] = b
                        stats[2] = n
                        break
                    kd = K * dt
                    i = 0
                    while kd > sub_cfl and i < H:
                        kd = kd * 0.5
                        i += 1
                    if i > L_lvl:
                        L_lvl = i
                    if L_lvl > stats[0]:
                        stats[0] = L_lvl
                    size = (<uint64_t> 1) << (H - L_lvl)
                    if size > nticks - tick:
                        size = nticks - tick
                    h = dt * <double> size / <double> nticks
                    ts = n * dt + dt * <double> tick / <double> nticks
                    te = (n + <double> (tick + size) / <double> nticks) * dt
                    counter = (<uint64_t> n) * nticks + tick
                    tick = tick + size
                    # cutoff for this substep
                    eps_x = eps
                    m1a = 0.0
                    tail_x = tail_eps
                    if adaptive and xm * tail_eps * h > rate_cap:
                        eps_x = levy_tail_inverse(&L, rate_cap / (xm * h))
                        tail_x = levy_tail(&L, eps_x)
                        m1a = interp_cum(&cum1[0], n_cum, cum_s0, cum_ds, log(eps_x))
                        stats[3] += 1
                    lam = xm * tail_x * h
                    # deterministic part: common-step Heun
                    rem = h
                    tt = ts
                    while rem > 0:
                        K = 0.0
                        for j in range(W):
                            if alive[j]:
                                lin = d_lin[slot_drift[j]] + gamma_comp - m1a
                                drift_nl(d_code[slot_drift[j]], &d_par[slot_drift[j], 0], x[j], &val, &der)
                                dv = fabs(lin + der)
                                if dv > K:
                                    K = dv
                                if x[j] > 0:
                                    bv = fabs(lin * x[j] + val) / x[j]
                                    if bv > K:
                                        K = bv
                        hi = rem
                        if K * rem > cfl:
                            hi = cfl / K
                            if m1a > 0 and hi < h / 256:
                                hi = h / 256
                            if hi > rem:
                                hi = rem
                        for j in range(W):
                            if not alive[j]:
                                continue
                            lin = d_lin[slot_drift[j]] + gamma_comp - m1a
                            drift_nl(d_code[slot_drift[j]], &d_par[slot_drift[j], 0], x[j], &val, &der)
                            k1 = -lin * x[j] - val
                            y = x[j] + hi * k1
                            if y < 0.0:
                                y = 0.0
                            drift_nl(d_code[slot_drift[j]], &d_par[slot_drift[j], 0], y, &val, &der)
                            k2 = -lin * y - val
                            xn = x[j] + 0.5 * hi * (k1 + k2)
                            for q in range(nb):
                                if tau_below[b, j, q] != tau_below[b, j, q] and xn <= below[q]:
                                    tau_below[b, j, q] = tt + hi * (x[j] - below[q]) / (x[j] - xn)
                            for q in range(na):
                                if tau_above[b, j, q] != tau_above[b, j, q] and xn >= above[q]:
                                    tau_above[b, j, q] = tt + hi * (above[q] - x[j]) / (xn - x[j])
                            if xn <= 0.0:
                                tevent[b, j] = tt + hi * x[j] / (x[j] - xn)
                                status[b, j] = 1
                                alive[j] = False
                                xn = 0.0
                            x[j] = xn
                        tt = tt + hi
                        rem = rem - hi
                        if rem <= 1e-15 * h:
                            rem = 0.0
                    # Gaussian part: layered white noise over pre-step states
                    if s2 > 0.0:
                        for j in range(W):
                            xd[j] = x[j]
                            keyv[j] = xp[j] if alive[j] else INFINITY
                        insertion_order(keyv, order, W)
                        cum = 0.0
                        prev = 0.0
                        c_lo = 0
                        for r in range(W):
                            j = order[r]
                            if not alive[j]:
                                break
                            if cells > 0.0:
                                ncell = <int> (xp[j] / cells)
                                if ncell * cells < xp[j]:
                                    ncell += 1
                                for kk in range(c_lo, ncell):
                                    cum = cum + normal(kA, kB, counter, <uint64_t> kk) * sqrt(s2 * cells * h)
                                if ncell > c_lo:
                                    c_lo = ncell
                            else:
                                width = xp[j] - prev
                                cum = cum + normal(kA, kB, counter, <uint64_t> r) * sqrt(s2 * width * h)
                                prev = xp[j]
                            xn = xd[j] + cum
                            for q in range(nb):
                                if tau_below[b, j, q] != tau_below[b, j, q] and xn <= below[q]:
                                    tau_below[b, j, q] = ts + h * (xd[j] - below[q]) / (xd[j] - xn)
                            for q in range(na):
                                if tau_above[b, j, q] != tau_above[b, j, q] and xn >= above[q]:
                                    tau_above[b, j, q] = ts + h * (above[q] - xd[j]) / (xn - xd[j])
                            if xn <= 0.0:
                                tevent[b, j] = ts + h * xd[j] / (xd[j] - xn)
                                status[b, j] = 1
                                alive[j] = False
                                xn = 0.0
                            x[j] = xn
                    # jumps: thinning of marks (u, h) at the dominating rate
                    if lam > 0.0:
                        N = poisson_inv(lam, uniform(kP, counter, 0))
                        for i in range(N):
                            u = uniform(kM, counter, <uint64_t> i) * xm
                            hsz = levy_tail_inverse(&L, uniform(kJ, counter, <uint64_t> i) * tail_x)
                            for j in range(W):
                                if alive[j] and u <= xp[j]:
                                    x[j] = x[j] + hsz
                                    if rec_jumps and njump[b, j] < jcap:
                                        jt[b, j, njump[b, j]] = te
                                        jh[b, j, njump[b, j]] = hsz
                                    njump[b, j] += 1
                        tz = te
                        for j in range(W):
                            if alive[j]:
                                for q in range(na):
                                    if tau_above[b, j, q] != tau_above[b, j, q] and x[j] >= above[q]:
                                        tau_above[b, j, q] = tz
                    for j in range(W):
                        if alive[j] and x[j] >= x_explode:
                            x[j] = INFINITY
                            alive[j] = False
                            status[b, j] = 2
                            tevent[b, j] = te
                            for q in range(na):
                                if tau_above[b, j, q] != tau_above[b, j, q]:
                                    tau_above[b, j, q] = te
                if err:
                    break
                if stop_passed:
                    q = 1
                    for j in range(W):
                        for r in range(nb):
                            if tau_below[b, j, r] != tau_below[b, j, r]:
                                q = 0
                        for r in range(na):
                            if tau_above[b, j, r] != tau_above[b, j, r]:
                                q = 0
                    if q:
                        break
                if (n + 1) % stride == 0:
                    for j in range(W):
                        rec[b, j, (n + 1) // stride] = x[j]
            for j in range(W):
                xfinal[b, j] = x[j]
            if err:
                break
    return err
