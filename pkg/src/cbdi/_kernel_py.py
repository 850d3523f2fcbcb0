"""NumPy path kernel, vectorised over bundles.

A bundle is a set of ``W`` slots (paths) driven by the same noise: one
Poisson stream of marks ``(u, h)`` thinned by ``u <= X_slot`` and one
white-noise field layered over the sorted pre-step states.  Every outer
step ``dt`` is cut into ``2**L`` substeps, ``L`` the least level keeping
the dominating jump rate ``max(X) * tail(eps) * h`` under ``rate_cap``.
Within a substep the slots move, in order, by

1. the drift ``-(gamma + comp) x - I(x)``, integrated with Heun steps of a
   common length ``<= cfl / K`` (``K`` the largest local rate in the
   bundle), which preserves the order of slots and of drifts;
2. the Gaussian part of variance ``s2 * X * h``;
3. the accepted jumps, applied at the end of the substep.

Draws are addressed by ``(seed, bundle id, role, counter, index)`` with
``counter = n * 2**H + sub * 2**(H - L)``, so a bundle's path does not
depend on which worker runs it.  ``_kernel.pyx`` runs the same scheme one
bundle at a time.
"""

import numpy as np

from . import rng
from .drift import LINEAR, CUSTOM


def _interp_cum(tab, s0, ds, s):
    r = (s - s0) / ds
    k = r.astype(np.int64)
    n = tab.size
    out = np.empty_like(s)
    neg = k < 0
    top = k >= n - 1
    mid = ~(neg | top)
    out[neg] = 0.0
    out[top] = tab[n - 1]
    km = k[mid]
    w = r[mid] - km
    a, b = tab[km], tab[np.minimum(km + 1, n - 1)]
    with np.errstate(divide="ignore", invalid="ignore"):
        geo = np.exp(np.log(a) + w * (np.log(b) - np.log(a)))
    out[mid] = np.where((a > 0) & (b > 0), geo, a + w * (b - a))
    return out


class _Drifts:
    """Nonlinear drift parts per slot; linear parts are folded into ``lin``."""

    def __init__(self, drifts, codes, slot_drift):
        self.drifts = drifts
        self.codes = codes
        self.slot_drift = np.asarray(slot_drift)
        self.groups = [(k, np.nonzero(self.slot_drift == k)[0]) for k in range(len(drifts))]

    def __call__(self, x, mask):
        val = np.zeros_like(x)
        der = np.zeros_like(x)
        safe = np.where(mask, x, 1.0)
        for k, cols in self.groups:
            if cols.size == 0 or self.codes[k] == LINEAR:
                continue
            d = self.drifts[k]
            sub = safe[:, cols]
            v = np.asarray(d.eval(sub.ravel()), dtype=float).reshape(sub.shape)
            g = np.asarray(d.eval_deriv(sub.ravel()), dtype=float).reshape(sub.shape)
            val[:, cols] = v
            der[:, cols] = g
        return np.where(mask, val, 0.0), np.where(mask, der, 0.0)


def _poisson_inv(lam, u):
    p = np.exp(-lam)
    F = p.copy()
    k = np.zeros(lam.shape, dtype=np.int64)
    live = u > F
    while np.any(live):
        k[live] += 1
        p[live] = p[live] * lam[live] / k[live]
        F[live] = F[live] + p[live]
        stop = live & (p == 0.0) & (F < u)
        live = live & (u > F) & (k < 100000) & ~stop
    return k


def _cross_below(tau, xa, xb, t0, span, levels, upd):
    if levels.size == 0:
        return
    with np.errstate(divide="ignore", invalid="ignore"):
        tc = t0[:, None, None] + span[:, None, None] * (xa[..., None] - levels) / (xa[..., None] - xb[..., None])
    hit = upd[..., None] & np.isnan(tau) & (xb[..., None] <= levels)
    tau[hit] = tc[hit]


def _cross_above(tau, xa, xb, t0, span, levels, upd):
    if levels.size == 0:
        return
    with np.errstate(divide="ignore", invalid="ignore"):
        tc = t0[:, None, None] + span[:, None, None] * (levels - xa[..., None]) / (xb[..., None] - xa[..., None])
    hit = upd[..., None] & np.isnan(tau) & (xb[..., None] >= levels)
    tau[hit] = tc[hit]


def run_bundles(P):
    """Simulate the bundles described by ``P`` in place; 0 on success."""
    # exploded slots hold inf; their (masked) arithmetic may produce nan
    with np.errstate(invalid="ignore", over="ignore"):
        return _run(P)


def _run(P):
    x0 = P["x0"]
    B, W = x0.shape
    levy = P["levy"]
    drifts = _Drifts(P["drifts"], P["d_code"], P["slot_drift"])
    d_lin = P["d_lin"][P["slot_drift"]]
    below, above = P["below"], P["above"]
    rec, status, tevent = P["rec"], P["status"], P["tevent"]
    tau_below, tau_above = P["tau_below"], P["tau_above"]
    njump, jt, jh, stats = P["njump"], P["jump_t"], P["jump_h"], P["stats"]
    n_steps, stride = P["n_steps"], P["stride"]
    H, adapt_h, adaptive = P["max_halvings"], P["adaptive_halvings"], bool(P["adaptive"])
    rec_jumps, jcap = bool(P["record_jumps"]), jt.shape[2]
    dt, comp, s2, eps = P["dt"], P["comp"], P["s2"], P["eps"]
    tail_eps, x_explode, cap, cfl = P["tail_eps"], P["x_explode"], P["rate_cap"], P["cfl"]
    sub_cfl = P["sub_cfl"]
    cells = P["coupling_cells"]
    cum1, cum_s0, cum_ds = P["cum1"], P["cum_s0"], P["cum_ds"]
    seed = int(P["seed"])

    ids = [int(i) for i in P["bundle_ids"]]
    keys = {role: np.array([rng.stream_key(seed, i, role) for i in ids], dtype=np.uint64)
            for role in (rng.GAUSS_A, rng.GAUSS_B, rng.POISSON, rng.JUMP, rng.MARK)}
    kA, kB = keys[rng.GAUSS_A], keys[rng.GAUSS_B]
    kP, kJ, kM = keys[rng.POISSON], keys[rng.JUMP], keys[rng.MARK]

    x = x0.astype(float).copy()
    alive = np.ones((B, W), dtype=bool)
    status[:] = 0
    tevent[:] = np.nan
    njump[:] = 0
    ext = x <= 0.0
    x[ext] = 0.0
    alive[ext] = False
    status[ext] = 1
    tevent[ext] = 0.0
    expl = alive & (x >= x_explode)
    x[expl] = np.inf
    alive[expl] = False
    status[expl] = 2
    tevent[expl] = 0.0
    tau_below[:] = np.where(x[..., None] <= below, 0.0, np.nan)
    tau_above[:] = np.where(x[..., None] >= above, 0.0, np.nan)
    rec[:, :, 0] = x
    ranks = np.arange(W, dtype=np.uint64)

    nticks = 1 << H
    stoch = s2 > 0 or tail_eps > 0
    lin0 = d_lin[None, :] + comp
    stop_passed = bool(P["stop_when_passed"]) and (below.size + above.size) > 0
    done = np.zeros(B, dtype=bool)
    for n in range(n_steps):
        tick = np.zeros(B, dtype=np.int64)
        while True:
            mb = (tick < nticks) & ~done
            alv = alive & mb[:, None]
            mb &= alv.any(axis=1)
            if not np.any(mb):
                break
            alv = alive & mb[:, None]
            xp = x.copy()
            xm = np.where(alv, x, 0.0).max(axis=1)
            # substep level from the jump rate and the drift stiffness
            rate = xm * tail_eps * dt
            L = np.zeros(B, dtype=np.int64)
            lim = adapt_h if adaptive else H
            for _ in range(lim):
                m = mb & (rate > cap)
                if not np.any(m):
                    break
                rate[m] = rate[m] * 0.5
                L[m] += 1
            bad = mb & (rate > cap)
            if np.any(bad) and not adaptive:
                stats[1] = int(np.argmax(bad))
                stats[2] = n
                return 1
            if stoch:
                val, der = drifts(x, alv)
                with np.errstate(divide="ignore", invalid="ignore"):
                    kk = np.maximum(np.abs(lin0 + der),
                                    np.where(x > 0, np.abs(lin0 * x + val) / x, 0.0))
                kd = np.where(alv, kk, 0.0).max(axis=1) * dt
                Ld = np.zeros(B, dtype=np.int64)
                for _ in range(H):
                    m = mb & (kd > sub_cfl)
                    if not np.any(m):
                        break
                    kd[m] = kd[m] * 0.5
                    Ld[m] += 1
                L = np.maximum(L, Ld)
            stats[0] = max(int(stats[0]), int(L[mb].max()))
            size = np.minimum(np.left_shift(1, H - L), nticks - tick)
            h = dt * size.astype(float) / float(nticks)
            ts = n * dt + dt * tick.astype(float) / float(nticks)
            # end time written as (n + frac) * dt so step ends equal record times
            te = (n + (tick + size).astype(float) / float(nticks)) * dt
            counter = np.uint64(n) * np.uint64(nticks) + tick.astype(np.uint64)
            tick = np.where(mb, tick + size, tick)
            tail_x = np.full(B, tail_eps)
            m1a = np.zeros(B)
            if adaptive:
                ad = mb & (xm * tail_eps * h > cap)
                if np.any(ad):
                    ex = np.atleast_1d(levy.tail_inverse(cap / (xm[ad] * h[ad])))
                    tail_x[ad] = np.atleast_1d(levy.tail(ex))
                    m1a[ad] = _interp_cum(cum1, cum_s0, cum_ds, np.log(ex))
                    stats[3] += int(ad.sum())
            lam = xm * tail_x * h

            # drift, common Heun steps per bundle
            rem = np.where(mb, h, 0.0)
            tt = ts.copy()
            lin = d_lin[None, :] + comp - m1a[:, None]
            while True:
                ah = rem > 0
                if not np.any(ah):
                    break
                upd = alive & ah[:, None]
                val, der = drifts(x, upd)
                with np.errstate(divide="ignore", invalid="ignore"):
                    kk = np.maximum(np.abs(lin + der),
                                    np.where(x > 0, np.abs(lin * x + val) / x, 0.0))
                K = np.where(upd, kk, 0.0).max(axis=1)
                hi = np.where(K * rem > cfl, cfl / np.where(K > 0, K, 1.0), rem)
                floor = np.where((m1a > 0) & (hi < h / 256), h / 256, hi)
                hi = np.where(K * rem > cfl, np.minimum(floor, rem), hi)
                k1 = -lin * x - val
                y = x + hi[:, None] * k1
                y = np.where(y < 0.0, 0.0, y)
                val2, _ = drifts(y, upd)
                k2 = -lin * y - val2
                xn = x + 0.5 * hi[:, None] * (k1 + k2)
                _cross_below(tau_below, x, xn, tt, hi, below, upd)
                _cross_above(tau_above, x, xn, tt, hi, above, upd)
                dead = upd & (xn <= 0.0)
                if np.any(dead):
                    bi, wi = np.nonzero(dead)
                    tevent[bi, wi] = tt[bi] + hi[bi] * x[bi, wi] / (x[bi, wi] - xn[bi, wi])
                    status[dead] = 1
                    alive[dead] = False
                    xn[dead] = 0.0
                x = np.where(upd, xn, x)
                tt = np.where(ah, tt + hi, tt)
                rem = np.where(ah, rem - hi, rem)
                rem = np.where(rem <= 1e-15 * h, 0.0, rem)

            # Gaussian part, layered over sorted pre-step states
            if s2 > 0.0:
                alv = alive & mb[:, None]
                xd = x.copy()
                keyv = np.where(alv, xp, np.inf)
                order = np.argsort(keyv, axis=1, kind="stable")
                xs = np.take_along_axis(xp, order, axis=1)
                als = np.take_along_axis(alv, order, axis=1)
                if cells > 0.0:
                    cum = _cells_noise(kA, kB, counter, xs, als, cells, s2, h)
                else:
                    prev = np.concatenate([np.zeros((B, 1)), xs[:, :-1]], axis=1)
                    width = np.where(als, xs - prev, 0.0)
                    g = rng.normal(kA[:, None], kB[:, None], counter[:, None], ranks[None, :])
                    g = np.where(als, g * np.sqrt(s2 * width * h[:, None]), 0.0)
                    cum = np.cumsum(g, axis=1)
                inc = np.zeros_like(x)
                np.put_along_axis(inc, order, cum, axis=1)
                xn = xd + inc
                _cross_below(tau_below, xd, xn, ts, h, below, alv)
                _cross_above(tau_above, xd, xn, ts, h, above, alv)
                dead = alv & (xn <= 0.0)
                if np.any(dead):
                    bi, wi = np.nonzero(dead)
                    tevent[bi, wi] = te[bi] * xd[bi, wi] / (xd[bi, wi] - xn[bi, wi])
                    status[dead] = 1
                    alive[dead] = False
                    xn[dead] = 0.0
                x = np.where(alv, xn, x)

            # jumps
            jb = mb & (lam > 0.0)
            if np.any(jb):
                N = np.zeros(B, dtype=np.int64)
                N[jb] = _poisson_inv(lam[jb], rng.uniform(kP[jb], counter[jb], 0))
                for i in range(int(N.max())):
                    mi = jb & (i < N)
                    u = rng.uniform(kM, counter, i) * xm
                    q = rng.uniform(kJ[mi], counter[mi], i) * tail_x[mi]
                    hsz = np.zeros(B)
                    hsz[mi] = np.atleast_1d(levy.tail_inverse(q))
                    acc = alive & mi[:, None] & (u[:, None] <= xp)
                    if rec_jumps and np.any(acc):
                        bi, wi = np.nonzero(acc)
                        room = njump[bi, wi] < jcap
                        jt[bi[room], wi[room], njump[bi[room], wi[room]]] = te[bi[room]]
                        jh[bi[room], wi[room], njump[bi[room], wi[room]]] = hsz[bi[room]]
                    x = np.where(acc, x + hsz[:, None], x)
                    njump += acc
                if above.size:
                    tz = te
                    upa = alive & jb[:, None]
                    hit = upa[..., None] & np.isnan(tau_above) & (x[..., None] >= above)
                    tau_above[hit] = np.broadcast_to(tz[:, None, None], tau_above.shape)[hit]
            boom = alive & mb[:, None] & (x >= x_explode)
            if np.any(boom):
                bi, wi = np.nonzero(boom)
                x[boom] = np.inf
                alive[boom] = False
                status[boom] = 2
                tevent[bi, wi] = te[bi]
                if above.size:
                    hit = boom[..., None] & np.isnan(tau_above)
                    tau_above[hit] = np.broadcast_to(te[:, None, None], tau_above.shape)[hit]
        if stop_passed:
            done |= ~(np.isnan(tau_below).any(axis=(1, 2)) | np.isnan(tau_above).any(axis=(1, 2)))
            if np.all(done):
                break
        if (n + 1) % stride == 0:
            rec[~done, :, (n + 1) // stride] = x[~done]
    P["xfinal"][:] = x
    return 0


def _cells_noise(kA, kB, counter, xs, als, cells, s2, h):
    """Cumulative noise over fixed-width cells for ranked slots."""
    B, W = xs.shape
    cum = np.zeros((B, W))
    for b in range(B):
        tot = 0.0
        c_lo = 0
        sd = np.sqrt(s2 * cells * h[b])
        for r in range(W):
            if not als[b, r]:
                break
            nc = int(xs[b, r] / cells)
            if nc * cells < xs[b, r]:
                nc += 1
            if nc > c_lo:
                idx = np.arange(c_lo, nc, dtype=np.uint64)
                g = rng.normal(kA[b], kB[b], counter[b], idx) * sd
                for v in g:
                    tot = tot + v
                c_lo = nc
            cum[b, r] = tot
    return cum
