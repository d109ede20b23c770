"""Hot numeric kernels.

Every kernel exists twice: a numba version (``*_nb``) and a pure-numpy
version (``*_np``). The public names dispatch on :data:`USE_NUMBA`; the
benchmark and the kernel tests call both variants explicitly.

Conventions shared by the survival kernels
------------------------------------------
A proportional-hazards curve for subject ``i`` is described by a risk
multiplier ``r[i]`` and baseline jumps ``(times[k], inc[k])``; the subject's
hazard increment at ``times[k]`` is ``r[i] * inc[k]``. Survival is either the
product-limit form ``prod(1 - h)`` (``product=True``) or ``exp(-sum(h))``.
Deaths precede censorings at tied times, so at an event/censoring tie ``s``
the event curve is taken right-continuous, ``S(s)``, and the censoring curve
left-continuous, ``K(s-)``.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

CENSORING = 0
EVENT = 1


# ---------------------------------------------------------------------------
# Cox partial likelihood (Breslow ties), single stratum, times ascending


@njit
def cox_derivs_nb(time, status, X, beta):
    n, p = X.shape
    eta = X @ beta
    shift = eta.max() if n > 0 else 0.0
    w = np.exp(eta - shift)
    s0 = 0.0
    s1 = np.zeros(p)
    s2 = np.zeros((p, p))
    loglik = 0.0
    grad = np.zeros(p)
    info = np.zeros((p, p))
    i = n - 1
    while i >= 0:
        j = i
        while j > 0 and time[j - 1] == time[i]:
            j -= 1
        d = 0.0
        xe = np.zeros(p)
        ee = 0.0
        for k in range(j, i + 1):
            wk = w[k]
            s0 += wk
            for a in range(p):
                s1[a] += wk * X[k, a]
                for b in range(p):
                    s2[a, b] += wk * X[k, a] * X[k, b]
            if status[k] > 0:
                d += 1.0
                ee += eta[k]
                for a in range(p):
                    xe[a] += X[k, a]
        if d > 0:
            loglik += ee - d * (math.log(s0) + shift)
            for a in range(p):
                m_a = s1[a] / s0
                grad[a] += xe[a] - d * m_a
                for b in range(p):
                    info[a, b] += d * (s2[a, b] / s0 - m_a * s1[b] / s0)
        i = j - 1
    return loglik, grad, info


def cox_derivs_np(time, status, X, beta):
    n, p = X.shape
    if n == 0:
        return 0.0, np.zeros(p), np.zeros((p, p))
    eta = X @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    first = np.searchsorted(time, time, side="left")
    ev = status > 0
    s0 = np.cumsum(w[::-1])[::-1][first][ev]
    s1 = np.cumsum((w[:, None] * X)[::-1], axis=0)[::-1][first][ev]
    s2 = np.cumsum((w[:, None, None] * X[:, :, None] * X[:, None, :])[::-1], axis=0)[::-1][first][ev]
    loglik = float(np.sum(eta[ev]) - np.sum(np.log(s0) + shift))
    m = s1 / s0[:, None]
    grad = X[ev].sum(axis=0) - m.sum(axis=0)
    info = (s2 / s0[:, None, None]).sum(axis=0) - m.T @ m
    return loglik, grad, info


# ---------------------------------------------------------------------------
# Survival evaluated at one time per subject


@njit
def surv_at_nb(r, times, inc, tau, inclusive, product):
    n = r.shape[0]
    m = times.shape[0]
    out = np.empty(n)
    for i in range(n):
        s = 1.0
        cum = 0.0
        for k in range(m):
            tk = times[k]
            if tk > tau[i] or (not inclusive and tk == tau[i]):
                break
            h = r[i] * inc[k]
            if product:
                s *= 1.0 - h
            else:
                cum += h
        out[i] = s if product else math.exp(-cum)
    return out


def surv_at_np(r, times, inc, tau, inclusive, product):
    if times.shape[0] == 0:
        return np.ones(r.shape[0])
    if inclusive:
        mask = times[None, :] <= tau[:, None]
    else:
        mask = times[None, :] < tau[:, None]
    h = np.outer(r, inc) * mask
    if product:
        return np.prod(1.0 - h, axis=1)
    return np.exp(-np.sum(h, axis=1))


# ---------------------------------------------------------------------------
# Martingale integrals  int_0^{min(T*, horizon)} dM(r) / {S(r) K(r-)}


@njit
def mart_integral_nb(target, rS, sT, sInc, rK, kT, kInc, tstar, jumped,
                     horizon, prodS, prodK, floor):
    n = rS.shape[0]
    ms = sT.shape[0]
    mk = kT.shape[0]
    out = np.empty(n)
    hits = 0
    inf = np.inf
    for i in range(n):
        lim = min(tstar[i], horizon)
        S = 1.0
        K = 1.0
        cumS = 0.0
        cumK = 0.0
        Kpre = -1.0
        acc = 0.0
        p = 0
        q = 0
        while True:
            ns = sT[p] if p < ms else inf
            nk = kT[q] if q < mk else inf
            s = ns if ns < nk else nk
            if s > lim:
                break
            if ns == s:
                h = rS[i] * sInc[p]
                if prodS:
                    S *= 1.0 - h
                else:
                    cumS += h
                    S = math.exp(-cumS)
                if target == 1:
                    H = S * K
                    if H < floor:
                        H = floor
                        hits += 1
                    acc -= h / H
                p += 1
            if nk == s:
                h = rK[i] * kInc[q]
                if s == tstar[i]:
                    Kpre = K
                # a death at s has left the censoring risk set at s
                if target == 0 and not (s == tstar[i] and not jumped[i]):
                    H = S * K
                    if H < floor:
                        H = floor
                        hits += 1
                    acc -= h / H
                if prodK:
                    K *= 1.0 - h
                else:
                    cumK += h
                    K = math.exp(-cumK)
                q += 1
        if jumped[i] and tstar[i] <= horizon:
            Km = Kpre if Kpre >= 0.0 else K
            H = S * Km
            if H < floor:
                H = floor
                hits += 1
            acc += 1.0 / H
        out[i] = acc
    return out, hits


def _curve_on_grid(r, times, inc, grid, product):
    dense = np.zeros(grid.shape[0])
    if times.shape[0]:
        dense[np.searchsorted(grid, times)] = inc
    h = np.outer(r, dense)
    if product:
        return h, np.cumprod(1.0 - h, axis=1)
    return h, np.exp(-np.cumsum(h, axis=1))


def mart_integral_np(target, rS, sT, sInc, rK, kT, kInc, tstar, jumped,
                     horizon, prodS, prodK, floor):
    n = rS.shape[0]
    sT, sInc = sT[sT <= horizon], sInc[sT <= horizon]
    kT, kInc = kT[kT <= horizon], kInc[kT <= horizon]
    grid = np.union1d(sT, kT)
    lim = np.minimum(tstar, horizon)
    hS, S = _curve_on_grid(rS, sT, sInc, grid, prodS)
    hK, K = _curve_on_grid(rK, kT, kInc, grid, prodK)
    Kminus = np.hstack([np.ones((n, 1)), K[:, :-1]])
    H = S * Kminus
    low = H < floor
    live = grid[None, :] <= lim[:, None]
    if target == CENSORING:
        live &= ~((grid[None, :] == tstar[:, None]) & ~jumped.astype(bool)[:, None])
    hits = int(np.sum(low & live & ((hS if target == EVENT else hK) > 0)))
    H = np.where(low, floor, H)
    dA = hS if target == EVENT else hK
    acc = -np.sum(np.where(live, dA / H, 0.0), axis=1)

    count = jumped.astype(bool) & (tstar <= horizon)
    if np.any(count):
        idx = np.nonzero(count)[0]
        j = np.searchsorted(grid, tstar[idx], side="right") - 1
        j2 = np.searchsorted(grid, tstar[idx], side="left") - 1
        s_at = np.where(j >= 0, S[idx, np.maximum(j, 0)], 1.0) if grid.size else np.ones(idx.size)
        k_at = np.where(j2 >= 0, K[idx, np.maximum(j2, 0)], 1.0) if grid.size else np.ones(idx.size)
        Hc = s_at * k_at
        hits += int(np.sum(Hc < floor))
        acc[idx] += 1.0 / np.maximum(Hc, floor)
    return acc, hits


# ---------------------------------------------------------------------------
# dispatch


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def cox_derivs(time, status, X, beta):
    """Breslow log partial likelihood, score and information for one stratum.

    Rows must be sorted by ascending ``time``.
    """
    f = cox_derivs_nb if USE_NUMBA else cox_derivs_np
    return f(_f64(time), _f64(status), _f64(X), _f64(beta))


def surv_at(r, times, inc, tau, inclusive=True, product=True):
    """Per-subject survival at ``tau[i]`` (``<=`` jumps if inclusive, else ``<``)."""
    f = surv_at_nb if USE_NUMBA else surv_at_np
    return f(_f64(r), _f64(times), _f64(inc), _f64(tau), bool(inclusive), bool(product))


def mart_integral(target, rS, sT, sInc, rK, kT, kInc, tstar, jumped, horizon,
                  prodS=True, prodK=True, floor=0.01):
    """Integral of the event (``target=EVENT``) or censoring martingale over 1/(S K-).

    Returns ``(values, floor_hits)``.
    """
    f = mart_integral_nb if USE_NUMBA else mart_integral_np
    out, hits = f(int(target), _f64(rS), _f64(sT), _f64(sInc), _f64(rK), _f64(kT),
                  _f64(kInc), _f64(tstar), np.ascontiguousarray(jumped, dtype=np.bool_),
                  float(horizon), bool(prodS), bool(prodK), float(floor))
    return out, int(hits)
