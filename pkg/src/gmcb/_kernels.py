"""Compiled element-wise kernels.

Every kernel takes a ``numpy.random.Generator`` and consumes it in a fixed
order, so chains are reproducible from the seed.  Matrices follow the
package layout: ``B``/``Lam`` are (p, q); ``delta``/``tau`` are (q, q) with
only the strictly lower triangle used (row ``j`` holds the coefficients of
response ``j`` on responses ``0..j-1``).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MAX_ROUNDS = 1_000_000

_PI = math.pi
_C1 = math.sqrt(math.pi / 2.0)
_SQRT2 = math.sqrt(2.0)
_SQRTPI = math.sqrt(math.pi)
_LOG2 = math.log(2.0)

TINY = 1e-300
HUGE = 1e300


# ---------------------------------------------------------------------------
# tilted positive stable
# ---------------------------------------------------------------------------


@njit(cache=True, error_model="numpy")
def _sinc(x):
    if abs(x) < 1e-5:
        return 1.0 - x * x / 6.0
    return math.sin(x) / x


@njit(cache=True, error_model="numpy")
def _zolotarev(u, a):
    return ((1.0 - a) * _sinc((1.0 - a) * u)) ** (1.0 - a) \
        * (a * _sinc(a * u)) ** a / _sinc(u)


@njit(cache=True, error_model="numpy")
def _untilted(a, rng):
    while True:
        u = _PI * rng.random()
        e = rng.standard_exponential()
        s = _sinc(u)
        if s > 0.0 and e > 0.0:
            break
    return (_zolotarev(u, a) ** (1.0 / (1.0 - a)) / e) ** ((1.0 - a) / a)


@njit(cache=True, error_model="numpy")
def ts_draw(a, lam, rng):
    """One tilted stable draw; returns -1.0 if the iteration cap is hit."""
    if lam <= 0.0:
        return _untilted(a, rng)
    lam_a = lam ** a
    if lam_a < 1.0:
        for _ in range(MAX_ROUNDS):
            x = _untilted(a, rng)
            if math.isfinite(x) and math.log(rng.random()) <= -lam * x:
                return x
        return -1.0

    b = (1.0 - a) / a
    gam = lam_a * a * (1.0 - a)
    sg = math.sqrt(gam)
    c3 = (2.0 + _C1) * sg
    xi = (1.0 + _SQRT2 * c3) / _PI
    psi = c3 * math.exp(-gam * _PI * _PI / 8.0) / _SQRTPI
    w1 = _C1 * xi / sg
    w2 = 2.0 * _SQRTPI * psi
    w3 = xi * _PI
    big = gam >= 1.0
    rounds = 0
    while rounds < MAX_ROUNDS:
        # auxiliary angle
        U = 0.0
        Z = 0.0
        z = 0.0
        while rounds < MAX_ROUNDS:
            rounds += 1
            V = rng.random()
            if big:
                if V < w1 / (w1 + w2):
                    U = abs(rng.standard_normal()) / sg
                else:
                    W = rng.random()
                    U = _PI * (1.0 - W * W)
            else:
                W = rng.random()
                if V < w3 / (w2 + w3):
                    U = _PI * W
                else:
                    U = _PI * (1.0 - W * W)
            W = rng.random()
            if U >= _PI:
                continue
            zeta = math.sqrt(_sinc(U) / (_sinc(a * U) ** a
                                         * _sinc((1.0 - a) * U) ** (1.0 - a)))
            z = 1.0 / (1.0 - (1.0 + a * zeta / sg) ** (-1.0 / a))
            rho = _PI * math.exp(-lam_a * (1.0 - 1.0 / (zeta * zeta))) \
                / ((1.0 + _C1) * sg / zeta + z)
            d = 0.0
            if big and U >= 0.0:
                d += xi * math.exp(-gam * U * U / 2.0)
            if U > 0.0:
                d += psi / math.sqrt(_PI - U)
            if (not big) and U >= 0.0:
                d += xi
            Z = W * rho * d
            if Z <= 1.0:
                break
        if rounds >= MAX_ROUNDS:
            return -1.0
        A = _zolotarev(U, a) ** (1.0 / (1.0 - a))
        m = (b / A) ** a * lam_a
        delta = math.sqrt(m * a / A)
        a1 = delta * _C1
        a3 = z / A
        s = a1 + delta + a3
        V2 = rng.random()
        N = 0.0
        E1 = 0.0
        if V2 < a1 / s:
            N = rng.standard_normal()
            X = m - delta * abs(N)
        elif V2 < (a1 + delta) / s:
            X = m + delta * rng.random()
        else:
            E1 = rng.standard_exponential()
            X = m + delta + E1 * a3
        if X <= 0.0:
            continue
        E2 = -math.log(Z)
        c = A * (X - m) + math.exp(math.log(lam) - b * math.log(m)) * ((m / X) ** b - 1.0)
        if X < m:
            c -= N * N / 2.0
        elif X > m + delta:
            c -= E1
        if c <= E2:
            return X ** (-b)
    return -1.0


@njit(cache=True, error_model="numpy")
def ts_fill(a, lam, out, rng):
    for i in range(out.size):
        out[i] = ts_draw(a[i], lam[i], rng)


# ---------------------------------------------------------------------------
# regularisation parameters (Lambda, tau)
# ---------------------------------------------------------------------------


@njit(cache=True, error_model="numpy")
def reg_draw(load, inv_a, e1, f1, e2, f2, rng):
    s1 = e1 + inv_a
    s2 = e2 + inv_a
    r1 = f1 + load
    r2 = f2 + load
    lw1 = e1 * math.log(f1) - math.lgamma(e1) + math.lgamma(s1) - s1 * math.log(r1)
    lw2 = e2 * math.log(f2) - math.lgamma(e2) + math.lgamma(s2) - s2 * math.log(r2)
    mx = max(lw1, lw2)
    p1 = math.exp(lw1 - mx) / (math.exp(lw1 - mx) + math.exp(lw2 - mx))
    if rng.random() < p1:
        x = rng.gamma(s1, 1.0) / r1
    else:
        x = rng.gamma(s2, 1.0) / r2
    return max(x, TINY)


@njit(cache=True, error_model="numpy")
def k_lambda(B, Lam, gamma, alpha, e1, f1, e2, f2, rng):
    p, q = B.shape
    inv_a = 1.0 / alpha
    for j in range(q):
        h = 0.5 / gamma[j]
        for k in range(p):
            Lam[k, j] = reg_draw(abs(B[k, j]) ** alpha * h, inv_a, e1, f1, e2, f2, rng)


@njit(cache=True, error_model="numpy")
def k_tau(delta, tau, gamma, alpha, s1, t1, s2, t2, rng):
    q = delta.shape[0]
    inv_a = 1.0 / alpha
    for j in range(1, q):
        h = 0.5 / gamma[j]
        for k in range(j):
            tau[j, k] = reg_draw(abs(delta[j, k]) ** alpha * h, inv_a, s1, t1, s2, t2, rng)


# ---------------------------------------------------------------------------
# noise variances
# ---------------------------------------------------------------------------


@njit(cache=True, error_model="numpy")
def pen_B(B, Lam, alpha):
    p, q = B.shape
    out = np.zeros(q)
    for j in range(q):
        for k in range(p):
            out[j] += Lam[k, j] * abs(B[k, j]) ** alpha
    return out


@njit(cache=True, error_model="numpy")
def pen_D(delta, tau, alpha):
    q = delta.shape[0]
    out = np.zeros(q)
    for j in range(1, q):
        for k in range(j):
            out[j] += tau[j, k] * abs(delta[j, k]) ** alpha
    return out


@njit(cache=True, error_model="numpy")
def seq_resnorm(G, delta):
    """||R_j - R_{<j} delta_j||^2 for every column, from G = R'R."""
    q = G.shape[0]
    out = np.empty(q)
    for j in range(q):
        v = G[j, j]
        for k in range(j):
            dk = delta[j, k]
            if dk == 0.0:
                continue
            v -= 2.0 * dk * G[k, j]
            acc = 0.0
            for l in range(j):
                acc += G[k, l] * delta[j, l]
            v += dk * acc
        out[j] = max(v, 0.0)
    return out


@njit(cache=True, error_model="numpy")
def k_gamma(resnorm, penb, pend, n, p, alpha_b, alpha_d, a, b, gamma, rng):
    q = gamma.size
    for j in range(q):
        shape = 0.5 * n + p / alpha_b + j / alpha_d + a
        rate = 0.5 * (resnorm[j] + penb[j] + pend[j]) + b
        g = rng.gamma(shape, 1.0)
        gamma[j] = min(max(rate / max(g, TINY), TINY), HUGE)


# ---------------------------------------------------------------------------
# penalty exponents
# ---------------------------------------------------------------------------


@njit(cache=True, error_model="numpy")
def _ep_norm(alpha):
    # log alpha - (1/alpha) log 2 - lgamma(1/alpha)
    return math.log(alpha) - _LOG2 / alpha - math.lgamma(1.0 / alpha)


@njit(cache=True, error_model="numpy")
def logk_alpha_b(alpha, B, Lam, gamma):
    p, q = B.shape
    inv_a = 1.0 / alpha
    val = p * q * _ep_norm(alpha)
    for j in range(q):
        for k in range(p):
            r = Lam[k, j] / gamma[j]
            val += inv_a * math.log(r) - 0.5 * r * abs(B[k, j]) ** alpha
    return val


@njit(cache=True, error_model="numpy")
def logk_alpha_d(alpha, delta, tau, gamma):
    q = delta.shape[0]
    inv_a = 1.0 / alpha
    val = 0.5 * q * (q - 1) * _ep_norm(alpha)
    for j in range(1, q):
        for k in range(j):
            r = tau[j, k] / gamma[j]
            val += inv_a * math.log(r) - 0.5 * r * abs(delta[j, k]) ** alpha
    return val


@njit(cache=True, error_model="numpy")
def k_mh_alpha_b(alpha, step, lo, hi, B, Lam, gamma, rng):
    prop = alpha + step * rng.standard_normal()
    if prop < lo or prop > hi:
        return alpha, 0
    lr = logk_alpha_b(prop, B, Lam, gamma) - logk_alpha_b(alpha, B, Lam, gamma)
    if math.log(rng.random()) < lr:
        return prop, 1
    return alpha, 0


@njit(cache=True, error_model="numpy")
def k_mh_alpha_d(alpha, step, lo, hi, delta, tau, gamma, rng):
    prop = alpha + step * rng.standard_normal()
    if prop < lo or prop > hi:
        return alpha, 0
    lr = logk_alpha_d(prop, delta, tau, gamma) - logk_alpha_d(alpha, delta, tau, gamma)
    if math.log(rng.random()) < lr:
        return prop, 1
    return alpha, 0


# ---------------------------------------------------------------------------
# random-walk element updates
# ---------------------------------------------------------------------------


@njit(cache=True, error_model="numpy")
def mh_B_logratio(k, j, d, B, Lam, gamma, alpha, Omega, XtX, S):
    """Log acceptance ratio for B[k, j] -> B[k, j] + d, with S = X'(Y - XB)."""
    q = B.shape[1]
    sw = 0.0
    for l in range(q):
        sw += S[k, l] * Omega[l, j]
    dll = d * sw - 0.5 * d * d * XtX[k, k] * Omega[j, j]
    old = B[k, j]
    dlp = -Lam[k, j] * 0.5 / gamma[j] * (abs(old + d) ** alpha - abs(old) ** alpha)
    return dll + dlp


@njit(cache=True, error_model="numpy")
def mh_B_apply(k, j, d, B, XtX, S):
    B[k, j] += d
    for i in range(B.shape[0]):
        S[i, j] -= d * XtX[i, k]


@njit(cache=True, error_model="numpy")
def k_mh_B(B, Lam, gamma, alpha, Omega, XtX, S, step, logstep, acc, rate, target, rng):
    """Element sweep over B (column-major order); adapts ``logstep`` when rate > 0."""
    p, q = B.shape
    for j in range(q):
        for k in range(p):
            d = step[k, j] * rng.standard_normal()
            lr = mh_B_logratio(k, j, d, B, Lam, gamma, alpha, Omega, XtX, S)
            flag = 0.0
            if math.log(rng.random()) < lr:
                mh_B_apply(k, j, d, B, XtX, S)
                acc[k, j] += 1
                flag = 1.0
            if rate > 0.0:
                logstep[k, j] = min(max(logstep[k, j] + rate * (flag - target), -25.0), 5.0)
                step[k, j] = math.exp(logstep[k, j])


@njit(cache=True, error_model="numpy")
def delta_score(j, delta, G):
    """g = W_j'(Z_j - W_j delta_j) expressed through G."""
    g = np.empty(j)
    for k in range(j):
        v = G[k, j]
        for l in range(j):
            v -= G[k, l] * delta[j, l]
        g[k] = v
    return g


@njit(cache=True, error_model="numpy")
def mh_delta_logratio(j, k, d, delta, tau, gamma, alpha, G, g):
    h = 0.5 / gamma[j]
    dnorm = -2.0 * d * g[k] + d * d * G[k, k]
    old = delta[j, k]
    return -h * dnorm - tau[j, k] * h * (abs(old + d) ** alpha - abs(old) ** alpha)


@njit(cache=True, error_model="numpy")
def k_mh_delta(delta, tau, gamma, alpha, G, step, logstep, acc, rate, target, rng):
    q = delta.shape[0]
    for j in range(1, q):
        g = delta_score(j, delta, G)
        for k in range(j):
            d = step[j, k] * rng.standard_normal()
            lr = mh_delta_logratio(j, k, d, delta, tau, gamma, alpha, G, g)
            flag = 0.0
            if math.log(rng.random()) < lr:
                delta[j, k] += d
                for l in range(j):
                    g[l] -= d * G[l, k]
                acc[j, k] += 1
                flag = 1.0
            if rate > 0.0:
                logstep[j, k] = min(max(logstep[j, k] + rate * (flag - target), -25.0), 5.0)
                step[j, k] = math.exp(logstep[j, k])


@njit(cache=True, error_model="numpy")
def adapt_step(step, accepted, rate, target):
    if rate > 0.0:
        step = step * math.exp(rate * (accepted - target))
        step = min(max(step, 1e-6), 10.0)
    return step


# ---------------------------------------------------------------------------
# scale-mixture latents
# ---------------------------------------------------------------------------


@njit(cache=True, error_model="numpy")
def k_omega(B, Lam, gamma, alpha, out, rng):
    """Latent precision multipliers; returns False if a draw failed."""
    p, q = B.shape
    st = 0.5 * alpha
    e = 2.0 / alpha
    for j in range(q):
        for k in range(p):
            c = (Lam[k, j] * 0.5 / gamma[j]) ** e
            w = ts_draw(st, B[k, j] * B[k, j] * c, rng)
            if w < 0.0:
                return False
            out[k, j] = min(max(2.0 * w, TINY), HUGE)
    return True


@njit(cache=True, error_model="numpy")
def k_epsilon(delta, tau, gamma, alpha, out, rng):
    q = delta.shape[0]
    st = 0.5 * alpha
    e = 2.0 / alpha
    for j in range(1, q):
        for k in range(j):
            c = (tau[j, k] * 0.5 / gamma[j]) ** e
            w = ts_draw(st, delta[j, k] * delta[j, k] * c, rng)
            if w < 0.0:
                return False
            out[j, k] = min(max(2.0 * w, TINY), HUGE)
    return True


# ---------------------------------------------------------------------------
# dense helpers and fused sweeps
# ---------------------------------------------------------------------------
# hpv layout: k1, k2, e1, f1, e2, f2, s1, t1, s2, t2, a, b
# alphas: [alpha_b, alpha_d]; astep: proposal scales; aacc: accept counts


@njit(cache=True, error_model="numpy")
def omega_nb(delta, gamma):
    q = gamma.size
    T = np.eye(q)
    for j in range(1, q):
        for k in range(j):
            T[j, k] = -delta[j, k]
    Om = np.zeros((q, q))
    for i in range(q):
        for l in range(q):
            v = 0.0
            for j in range(max(i, l), q):
                v += T[j, i] * T[j, l] / gamma[j]
            Om[i, l] = v
    return Om


@njit(cache=True, error_model="numpy")
def resid_gram_nb(B, XtX, XtY, YtY):
    C = B.T @ XtY
    G = YtY - C - C.T + B.T @ (XtX @ B)
    return 0.5 * (G + G.T)


@njit(cache=True, error_model="numpy")
def chol_draw(Q, h, rng):
    """x ~ N(Q^{-1} h, Q^{-1}); returns (x, ok)."""
    m = h.size
    L = np.zeros((m, m))
    for j in range(m):
        s = Q[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return np.zeros(m), False
        d = math.sqrt(s)
        L[j, j] = d
        for i in range(j + 1, m):
            s = Q[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / d
    y = np.empty(m)
    for i in range(m):
        s = h[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    z = np.empty(m)
    for i in range(m):
        z[i] = rng.standard_normal()
    x = np.empty(m)
    for i in range(m - 1, -1, -1):
        s = y[i] + z[i]
        for k in range(i + 1, m):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x, True


@njit(cache=True, error_model="numpy")
def gamma_step(B, Lam, delta, tau, gamma, alpha_b, alpha_d, G, n, a, b, rng):
    rss = seq_resnorm(G, delta)
    penb = pen_B(B, Lam, alpha_b)
    pend = pen_D(delta, tau, alpha_d)
    k_gamma(rss, penb, pend, n, B.shape[0], alpha_b, alpha_d, a, b, gamma, rng)


@njit(cache=True, error_model="numpy")
def mh_sweep(B, Lam, delta, tau, gamma, alphas, XtX, XtY, YtY, n, hpv,
             stepB, logB, accB, stepD, logD, accD, astep, aacc, rate, target, rng):
    k1 = hpv[0]
    k2 = hpv[1]
    k_lambda(B, Lam, gamma, alphas[0], hpv[2], hpv[3], hpv[4], hpv[5], rng)
    Om = omega_nb(delta, gamma)
    S = XtY - XtX @ B
    k_mh_B(B, Lam, gamma, alphas[0], Om, XtX, S, stepB, logB, accB, rate, target, rng)
    new, acc = k_mh_alpha_b(alphas[0], astep[0], k1, k2, B, Lam, gamma, rng)
    alphas[0] = new
    aacc[0] += acc
    astep[0] = adapt_step(astep[0], acc, rate, target)
    k_tau(delta, tau, gamma, alphas[1], hpv[6], hpv[7], hpv[8], hpv[9], rng)
    G = resid_gram_nb(B, XtX, XtY, YtY)
    k_mh_delta(delta, tau, gamma, alphas[1], G, stepD, logD, accD, rate, target, rng)
    gamma_step(B, Lam, delta, tau, gamma, alphas[0], alphas[1], G, n, hpv[10], hpv[11], rng)
    new, acc = k_mh_alpha_d(alphas[1], astep[1], k1, k2, delta, tau, gamma, rng)
    alphas[1] = new
    aacc[1] += acc
    astep[1] = adapt_step(astep[1], acc, rate, target)


@njit(cache=True, error_model="numpy")
def smn_sweep(B, Lam, delta, tau, gamma, alphas, XtX, XtY, YtY, n, hpv, upper,
              astep, aacc, rate, target, rng):
    """Scale-mixture sweep with direct block draws.

    Returns 0 on success, 1 for a stable-sampler failure, 2 for a failed
    factorisation of the B block, 3 for a failed delta block.
    """
    p, q = B.shape
    k1 = hpv[0]
    hi = min(hpv[1], upper)
    omega = np.empty((p, q))
    if not k_omega(B, Lam, gamma, alphas[0], omega, rng):
        return 1
    Om = omega_nb(delta, gamma)
    m = p * q
    Q = np.empty((m, m))
    h = np.empty(m)
    XtYO = XtY @ Om
    e = 2.0 / alphas[0]
    for j in range(q):
        for k in range(p):
            r = j * p + k
            h[r] = XtYO[k, j]
            for jj in range(q):
                for kk in range(p):
                    Q[r, jj * p + kk] = Om[j, jj] * XtX[k, kk]
            dl = min(max(omega[k, j], TINY), HUGE) * (Lam[k, j] * 0.5 / gamma[j]) ** e
            Q[r, r] += min(max(dl, TINY), HUGE)
    x, ok = chol_draw(Q, h, rng)
    if not ok:
        return 2
    for j in range(q):
        for k in range(p):
            B[k, j] = x[j * p + k]
    k_lambda(B, Lam, gamma, alphas[0], hpv[2], hpv[3], hpv[4], hpv[5], rng)
    new, acc = k_mh_alpha_b(alphas[0], astep[0], k1, hi, B, Lam, gamma, rng)
    alphas[0] = new
    aacc[0] += acc
    astep[0] = adapt_step(astep[0], acc, rate, target)
    eps = np.ones((q, q))
    if not k_epsilon(delta, tau, gamma, alphas[1], eps, rng):
        return 1
    G = resid_gram_nb(B, XtX, XtY, YtY)
    e = 2.0 / alphas[1]
    for j in range(1, q):
        g = gamma[j]
        Qd = np.empty((j, j))
        hd = np.empty(j)
        for k in range(j):
            hd[k] = G[k, j] / g
            for l in range(j):
                Qd[k, l] = G[k, l] / g
            ps = min(max(eps[j, k], TINY), HUGE) * (tau[j, k] * 0.5 / g) ** e
            Qd[k, k] += min(max(ps, TINY), HUGE)
        x, ok = chol_draw(Qd, hd, rng)
        if not ok:
            return 3
        for k in range(j):
            delta[j, k] = x[k]
    k_tau(delta, tau, gamma, alphas[1], hpv[6], hpv[7], hpv[8], hpv[9], rng)
    gamma_step(B, Lam, delta, tau, gamma, alphas[0], alphas[1], G, n, hpv[10], hpv[11], rng)
    new, acc = k_mh_alpha_d(alphas[1], astep[1], k1, hi, delta, tau, gamma, rng)
    alphas[1] = new
    aacc[1] += acc
    astep[1] = adapt_step(astep[1], acc, rate, target)
    return 0
