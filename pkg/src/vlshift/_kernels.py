"""Compiled numerical kernels.

Everything in this module is numba-jitted and self-contained (no scipy
inside compiled code) so that the hot paths -- the dense-output ODE
solver, the Gillespie cores and the Laplace marginal likelihood -- run
at machine speed inside the sampler and the simulation oracles.  The
public modules wrap these kernels with validation and friendlier types;
tests exercise the wrappers against independent oracles.
"""

import math

import numpy as np
from numba import njit, prange

# ---------------------------------------------------------------------------
# Dormand-Prince 5(4) tableau with Shampine's quartic dense-output interpolant.
# Coefficients follow the standard published values (same as MATLAB's ode45).

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])

_DP_A = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [1 / 5, 0.0, 0.0, 0.0, 0.0],
        [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
        [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    ]
)

_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])

_DP_E = np.array(
    [
        71 / 57600,
        0.0,
        -71 / 16695,
        71 / 1920,
        -17253 / 339200,
        22 / 525,
        -1 / 40,
    ]
)

_DP_P = np.array(
    [
        [1.0, -2.8535800653862835, 3.0717434641059005, -1.1270175653862835],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 4.023133379230305, -6.249321565289, 2.675424484351598],
        [0.0, -3.7324019615885042, 10.068970589843675, -5.685526961588504],
        [0.0, 2.5548038301849423, -6.399112377351017, 3.5219323679207912],
        [0.0, -1.3744241142186024, 3.272657752246729, -1.7672812570757455],
        [0.0, 1.3824689317781436, -3.764937863556287, 2.382468931778144],
    ]
)

V_FLOOR = 1e-30  # virion counts below this are treated as log10 V = -inf

# solver / likelihood status codes
OK = 0
OK_NUMERIC = 1  # Laplace replaced by dense numeric integration (fallback)
ZERO_LIK = 2
DOMAIN_ERROR = 3
STEP_FAILURE = 4
CURVATURE_ERROR = 5  # h''(tau0) >= 0 and no numeric fallback requested


@njit(cache=True, inline="always")
def _tcl_rhs(beta, k, delta, rho, c, y, out):
    inf_flux = beta * y[0] * y[3]
    out[0] = -inf_flux
    out[1] = inf_flux - k * y[1]
    out[2] = k * y[1] - delta * y[2]
    out[3] = rho * y[2] - c * y[3]


@njit(cache=True)
def solve_tcl(beta, k, delta, rho, c, y0, t_end, rtol, atol, max_steps):
    """Adaptive DP 5(4) integration of the mean-field system on [0, t_end].

    Returns (status, n_seg, ts, ys, Q) where segment j covers
    [ts[j], ts[j+1]] and the dense solution there is
    y(t) = ys[j] + h * (x*Q[j,:,0] + x^2*Q[j,:,1] + x^3*Q[j,:,2] + x^4*Q[j,:,3])
    with x = (t - ts[j]) / h.
    """
    n = 4
    cap = 512
    ts = np.empty(cap)
    ys = np.empty((cap, n))
    Q = np.empty((cap, n, 4))

    t = 0.0
    y = y0.copy()
    ts[0] = t
    ys[0] = y

    f = np.empty(n)
    _tcl_rhs(beta, k, delta, rho, c, y, f)

    # initial step selection (Hairer-style, as in standard RK codes)
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (f[i] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = np.empty(n)
    f1 = np.empty(n)
    for i in range(n):
        y1[i] = y[i] + h0 * f[i]
    _tcl_rhs(beta, k, delta, rho, c, y1, f1)
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d2 += ((f1[i] - f[i]) / sc) ** 2
    d2 = math.sqrt(d2 / n) / h0
    dm = max(d1, d2)
    if dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    h = min(100.0 * h0, h1, t_end)

    K = np.empty((7, n))
    y_stage = np.empty(n)
    y_new = np.empty(n)
    err = np.empty(n)

    n_seg = 0
    step_rejected = False
    steps = 0
    while t < t_end:
        if steps >= max_steps:
            return STEP_FAILURE, n_seg, ts, ys, Q
        steps += 1
        if h < 1e-14 * max(1.0, abs(t)):
            return STEP_FAILURE, n_seg, ts, ys, Q
        if t + h > t_end:
            h = t_end - t

        for i in range(n):
            K[0, i] = f[i]
        for s in range(1, 6):
            for i in range(n):
                acc = 0.0
                for m in range(s):
                    acc += _DP_A[s, m] * K[m, i]
                y_stage[i] = y[i] + h * acc
            _tcl_rhs(beta, k, delta, rho, c, y_stage, K[s])
        for i in range(n):
            acc = 0.0
            for m in range(6):
                acc += _DP_B[m] * K[m, i]
            y_new[i] = y[i] + h * acc
        _tcl_rhs(beta, k, delta, rho, c, y_new, K[6])

        norm = 0.0
        for i in range(n):
            e = 0.0
            for m in range(7):
                e += _DP_E[m] * K[m, i]
            e *= h
            sc = atol + rtol * max(abs(y[i]), abs(y_new[i]))
            norm += (e / sc) ** 2
        norm = math.sqrt(norm / n)

        if norm <= 1.0:
            if norm == 0.0:
                factor = 10.0
            else:
                factor = min(10.0, 0.9 * norm ** -0.2)
            if step_rejected:
                factor = min(1.0, factor)
            step_rejected = False

            if n_seg + 1 >= cap:
                new_cap = cap * 2
                ts2 = np.empty(new_cap)
                ys2 = np.empty((new_cap, n))
                Q2 = np.empty((new_cap, n, 4))
                ts2[: n_seg + 1] = ts[: n_seg + 1]
                ys2[: n_seg + 1] = ys[: n_seg + 1]
                Q2[:n_seg] = Q[:n_seg]
                ts, ys, Q = ts2, ys2, Q2
                cap = new_cap

            # dense coefficients: Q = K^T @ P
            for i in range(n):
                for m in range(4):
                    acc = 0.0
                    for s in range(7):
                        acc += K[s, i] * _DP_P[s, m]
                    Q[n_seg, i, m] = acc

            t += h
            for i in range(n):
                y[i] = y_new[i]
                f[i] = K[6, i]
            n_seg += 1
            ts[n_seg] = t
            ys[n_seg] = y
            h *= factor
        else:
            step_rejected = True
            h *= max(0.2, 0.9 * norm ** -0.2)

    return OK, n_seg, ts[: n_seg + 1], ys[: n_seg + 1], Q[:n_seg]


@njit(cache=True, inline="always")
def _find_segment(ts, n_seg, t):
    lo = 0
    hi = n_seg  # segments are 0..n_seg-1
    while lo < hi:
        mid = (lo + hi) // 2
        if ts[mid + 1] < t:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def dense_eval_state(ts, ys, Q, n_seg, t, out):
    """Evaluate the dense solution (all 4 components) at internal time t."""
    if t <= ts[0]:
        for i in range(4):
            out[i] = ys[0, i]
        return
    if t >= ts[n_seg]:
        for i in range(4):
            out[i] = ys[n_seg, i]
        return
    j = _find_segment(ts, n_seg, t)
    h = ts[j + 1] - ts[j]
    x = (t - ts[j]) / h
    x2 = x * x
    x3 = x2 * x
    x4 = x3 * x
    for i in range(4):
        out[i] = ys[j, i] + h * (
            x * Q[j, i, 0] + x2 * Q[j, i, 1] + x3 * Q[j, i, 2] + x4 * Q[j, i, 3]
        )


@njit(cache=True, inline="always")
def dense_eval_v(ts, ys, Q, n_seg, t):
    """Evaluate V only (hot path of the likelihood)."""
    if t <= ts[0]:
        return ys[0, 3]
    if t >= ts[n_seg]:
        return ys[n_seg, 3]
    j = _find_segment(ts, n_seg, t)
    h = ts[j + 1] - ts[j]
    x = (t - ts[j]) / h
    x2 = x * x
    x3 = x2 * x
    x4 = x3 * x
    return ys[j, 3] + h * (
        x * Q[j, 3, 0] + x2 * Q[j, 3, 1] + x3 * Q[j, 3, 2] + x4 * Q[j, 3, 3]
    )


# ---------------------------------------------------------------------------
# Gaussian log-density helpers, safe far into the tails.

_LOG_SQRT_2PI = 0.9189385332046727
_INV_SQRT2 = 0.7071067811865476


@njit(cache=True, inline="always")
def norm_logpdf_std(x):
    return -0.5 * x * x - _LOG_SQRT_2PI


@njit(cache=True)
def norm_logcdf_std(x):
    if x < -26.0:
        # asymptotic expansion of Mills ratio; erfc underflows near -37
        x2 = x * x
        series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)
        return -0.5 * x2 - math.log(-x) - _LOG_SQRT_2PI + math.log(series)
    if x < 8.0:
        return math.log(0.5 * math.erfc(-x * _INV_SQRT2))
    return math.log1p(-0.5 * math.erfc(x * _INV_SQRT2))


# ---------------------------------------------------------------------------
# Time-shift density (generalized-gamma pushforward) in log space.


@njit(cache=True)
def tau_logpdf_core(tau, lam, mu_w, a, d, p):
    lt = lam * tau
    s = p * (math.log(mu_w / a) + lt)
    if s > 700.0:
        return -np.inf
    return (
        math.log(p)
        + math.log(lam)
        + d * (math.log(mu_w) - math.log(a))
        - math.lgamma(d / p)
        - math.exp(s)
        + lt * d
    )


# ---------------------------------------------------------------------------
# Branching ingredients: growth rate (cubic root) and left eigenvector.


@njit(cache=True)
def growth_rate_core(k, delta, c, rho, beta_star):
    """Real root of (x+k)(x+delta)(x+c) = beta_star*k*rho above -min(k,delta,c)."""
    target = beta_star * k * rho
    # exact criticality: root is 0 iff k*delta*c == target
    if k * delta * c == target:
        return 0.0
    lo = -min(min(k, delta), c) * (1.0 - 1e-12)
    hi = max(1.0, target ** (1.0 / 3.0))
    while (hi + k) * (hi + delta) * (hi + c) - target <= 0.0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = (mid + k) * (mid + delta) * (mid + c) - target
        if g < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, abs(hi)):
            break
    x = 0.5 * (lo + hi)
    # Newton polish
    for _ in range(4):
        g = (x + k) * (x + delta) * (x + c) - target
        dg = (x + delta) * (x + c) + (x + k) * (x + c) + (x + k) * (x + delta)
        x -= g / dg
    return x


@njit(cache=True)
def left_eigvec_core(k, delta, rho, lam):
    """Left eigenvector over (E, I, V) at eigenvalue lam, normalized to sum 1."""
    u_e = 1.0
    u_i = (lam + k) / k
    u_v = u_i * (lam + delta) / rho
    s = u_e + u_i + u_v
    return u_e / s, u_i / s, u_v / s


# ---------------------------------------------------------------------------
# Path likelihood and Laplace-approximated marginal likelihood.


@njit(cache=True)
def path_loglik_core(
    ts, ys, Q, n_seg, t0, tau, times, values, censored, eta, kappa
):
    """Censored-normal log path likelihood for one series at shift tau.

    The trajectory arrays are the dense solve started at infection, so the
    model log10 VL at clock time t is log10 V(t + tau - t0) with the
    -inf branch whenever t <= t0 or t + tau <= t0.  Returns -inf when a
    detected observation lands on the -inf branch.
    """
    total = 0.0
    horizon = ts[n_seg]
    log_kappa = math.log(kappa)
    for j in range(times.size):
        tj = times[j]
        z_neg_inf = False
        if tj <= t0:
            z_neg_inf = True
        else:
            s = tj + tau - t0
            if s <= 0.0:
                z_neg_inf = True
            else:
                if s > horizon:
                    return np.nan  # horizon too short; caller treats as error
                v = dense_eval_v(ts, ys, Q, n_seg, s)
                if v <= V_FLOOR:
                    z_neg_inf = True
                else:
                    z = math.log10(v)
        if censored[j] != 0:
            if not z_neg_inf:
                total += norm_logcdf_std((eta - z) / kappa)
            # z = -inf: CDF is 1, contributes log 1 = 0
        else:
            if z_neg_inf:
                return -np.inf
            total += norm_logpdf_std((values[j] - z) / kappa) - log_kappa
    return total


@njit(cache=True)
def _h_at(
    tau, ts, ys, Q, n_seg, t0, times, values, censored, eta, kappa,
    lam, mu_w, a, d, p,
):
    pl = path_loglik_core(ts, ys, Q, n_seg, t0, tau, times, values, censored, eta, kappa)
    if np.isnan(pl):
        return np.nan
    if pl == -np.inf:
        return -np.inf
    return pl + tau_logpdf_core(tau, lam, mu_w, a, d, p)


_GOLDEN = 0.6180339887498949


@njit(cache=True)
def laplace_marginal_core(
    ts, ys, Q, n_seg, t0, times, values, censored, eta, kappa,
    lam, mu_w, log_qbar, a, d, p, tau_lo, tau_hi, n_grid, numeric_fallback,
):
    """Log marginal likelihood via the closed-form Laplace approximation.

    Maximizes h(tau) = log[path_lik(tau) * f(tau)] by grid bracketing plus
    golden-section refinement on [tau_lo, tau_hi], then uses Richardson-refined
    central differences for the curvature.  When the series has no detected
    observation, or the curvature is not negative at the optimum (the
    concavity assumption of the closed form fails), either falls back to a
    dense Simpson rule over the same interval (numeric_fallback true; the
    in-sampler path) or reports CURVATURE_ERROR so the caller can switch to
    exact quadrature.

    Returns (loglik, tau0, h_width, status).
    """
    if times.size == 0:
        return log_qbar, 0.0, 0.0, OK

    n_detected = 0
    for j in range(times.size):
        if censored[j] == 0:
            n_detected += 1

    if n_detected == 0 and not numeric_fallback:
        return -np.inf, np.nan, np.nan, CURVATURE_ERROR

    if n_detected > 0:
        # --- locate the mode
        best = -np.inf
        best_i = -1
        step = (tau_hi - tau_lo) / (n_grid - 1)
        for i in range(n_grid):
            tau = tau_lo + step * i
            h = _h_at(tau, ts, ys, Q, n_seg, t0, times, values, censored, eta, kappa,
                      lam, mu_w, a, d, p)
            if np.isnan(h):
                return -np.inf, np.nan, np.nan, DOMAIN_ERROR
            if h > best:
                best = h
                best_i = i
        if best == -np.inf:
            return -np.inf, np.nan, np.nan, ZERO_LIK

        lo = tau_lo + step * max(0, best_i - 1)
        hi = tau_lo + step * min(n_grid - 1, best_i + 1)
        # golden-section maximization of h
        x1 = hi - _GOLDEN * (hi - lo)
        x2 = lo + _GOLDEN * (hi - lo)
        f1 = _h_at(x1, ts, ys, Q, n_seg, t0, times, values, censored, eta, kappa,
                   lam, mu_w, a, d, p)
        f2 = _h_at(x2, ts, ys, Q, n_seg, t0, times, values, censored, eta, kappa,
                   lam, mu_w, a, d, p)
        while hi - lo > 1e-9:
            if f1 < f2:
                lo = x1
                x1 = x2
                f1 = f2
                x2 = lo + _GOLDEN * (hi - lo)
                f2 = _h_at(x2, ts, ys, Q, n_seg, t0, times, values, censored, eta,
                           kappa, lam, mu_w, a, d, p)
            else:
                hi = x2
                x2 = x1
                f2 = f1
                x1 = hi - _GOLDEN * (hi - lo)
                f1 = _h_at(x1, ts, ys, Q, n_seg, t0, times, values, censored, eta,
                           kappa, lam, mu_w, a, d, p)
        tau0 = 0.5 * (lo + hi)
        h0 = _h_at(tau0, ts, ys, Q, n_seg, t0, times, values, censored, eta, kappa,
                   lam, mu_w, a, d, p)

        # --- curvature by Richardson-refined central differences (step 1e-4)
        e = 1e-4
        hp = _h_at(tau0 + e, ts, ys, Q, n_seg, t0, times, values, censored, eta,
                   kappa, lam, mu_w, a, d, p)
        hm = _h_at(tau0 - e, ts, ys, Q, n_seg, t0, times, values, censored, eta,
                   kappa, lam, mu_w, a, d, p)
        hp2 = _h_at(tau0 + 2 * e, ts, ys, Q, n_seg, t0, times, values, censored, eta,
                    kappa, lam, mu_w, a, d, p)
        hm2 = _h_at(tau0 - 2 * e, ts, ys, Q, n_seg, t0, times, values, censored, eta,
                    kappa, lam, mu_w, a, d, p)
        d1 = (hp - 2.0 * h0 + hm) / (e * e)
        d2 = (hp2 - 2.0 * h0 + hm2) / (4.0 * e * e)
        hcurv = (4.0 * d1 - d2) / 3.0
        if hcurv < 0.0 and np.isfinite(hcurv):
            width = math.sqrt(-1.0 / hcurv)
            loglik = _LOG_SQRT_2PI + log_qbar + h0 + math.log(width)
            return loglik, tau0, width, OK
        if not numeric_fallback:
            return -np.inf, tau0, np.nan, CURVATURE_ERROR
        # fall through to numeric integration on curvature failure

    # --- dense Simpson fallback: all-censored series or non-concave optimum
    m = 4000  # even panel count; plateau-like integrands are cheap and rare
    step = (tau_hi - tau_lo) / m
    hs = np.empty(m + 1)
    hmax = -np.inf
    for i in range(m + 1):
        tau = tau_lo + step * i
        h = _h_at(tau, ts, ys, Q, n_seg, t0, times, values, censored, eta, kappa,
                  lam, mu_w, a, d, p)
        if np.isnan(h):
            return -np.inf, np.nan, np.nan, DOMAIN_ERROR
        hs[i] = h
        if h > hmax:
            hmax = h
    if hmax == -np.inf:
        return -np.inf, np.nan, np.nan, ZERO_LIK
    acc = math.exp(hs[0] - hmax) + math.exp(hs[m] - hmax)
    for i in range(1, m):
        w = 4.0 if i % 2 == 1 else 2.0
        acc += w * math.exp(hs[i] - hmax)
    integral = acc * step / 3.0
    return log_qbar + hmax + math.log(integral), np.nan, np.nan, OK_NUMERIC


@njit(cache=True, parallel=True)
def batch_laplace_loglik(
    r0, delta, rho, t0, kappa, lam, mu_w, log_qbar, a, d, p,
    tau_lo, tau_hi, valid, k, c, s0,
    times_flat, values_flat, cens_flat, offsets, eta,
    t_end, rtol, atol, n_grid,
):
    """Per-individual Laplace log marginal likelihoods, parallel over subjects.

    All law ingredients (lam, mu_w, q*, surrogate a/d/p, quantile bounds)
    are precomputed by the caller; invalid rows (support or hypercube
    violations) are flagged in `valid` and come back as -inf.
    """
    n = r0.size
    out = np.empty(n)
    status = np.empty(n, dtype=np.int64)
    for i in prange(n):
        if valid[i] == 0:
            out[i] = -np.inf
            status[i] = ZERO_LIK
            continue
        beta = r0[i] * delta[i] * c / (rho[i] * s0)
        y0 = np.empty(4)
        y0[0] = s0 - 1.0
        y0[1] = 1.0
        y0[2] = 0.0
        y0[3] = 0.0
        st, n_seg, ts, ys, Q = solve_tcl(
            beta, k, delta[i], rho[i], c, y0, t_end[i], rtol, atol, 100000
        )
        if st != OK:
            out[i] = -np.inf
            status[i] = STEP_FAILURE
            continue
        lo = offsets[i]
        hi = offsets[i + 1]
        ll, _, _, lst = laplace_marginal_core(
            ts, ys, Q, n_seg, t0[i],
            times_flat[lo:hi], values_flat[lo:hi], cens_flat[lo:hi], eta, kappa,
            lam[i], mu_w[i], log_qbar[i], a[i], d[i], p[i],
            tau_lo[i], tau_hi[i], n_grid, True,
        )
        out[i] = ll
        status[i] = lst
    return out, status


@njit(cache=True, parallel=True)
def batch_deterministic_loglik(
    r0, delta, rho, t0, kappa, valid, k, c, s0,
    times_flat, values_flat, cens_flat, offsets, eta,
    t_end, rtol, atol,
):
    """Baseline per-individual log path likelihoods with the shift pinned
    to zero and no extinction factor."""
    n = r0.size
    out = np.empty(n)
    for i in prange(n):
        if valid[i] == 0:
            out[i] = -np.inf
            continue
        beta = r0[i] * delta[i] * c / (rho[i] * s0)
        y0 = np.empty(4)
        y0[0] = s0 - 1.0
        y0[1] = 1.0
        y0[2] = 0.0
        y0[3] = 0.0
        st, n_seg, ts, ys, Q = solve_tcl(
            beta, k, delta[i], rho[i], c, y0, t_end[i], rtol, atol, 100000
        )
        if st != OK:
            out[i] = -np.inf
            continue
        lo = offsets[i]
        hi = offsets[i + 1]
        pl = path_loglik_core(
            ts, ys, Q, n_seg, t0[i], 0.0,
            times_flat[lo:hi], values_flat[lo:hi], cens_flat[lo:hi], eta, kappa,
        )
        out[i] = -np.inf if np.isnan(pl) else pl
    return out


# ---------------------------------------------------------------------------
# Neural surrogate forward pass (3 -> 64 -> 3, ReLU then softplus).


@njit(cache=True, inline="always")
def _softplus(x):
    if x > 30.0:
        return x
    if x < -30.0:
        return math.exp(x)
    return math.log1p(math.exp(x))


@njit(cache=True)
def nn_forward(x0, x1, x2, w1, b1, w2, b2, in_mean, in_std):
    """Forward pass returning the positive (a, d, p) prediction."""
    s0 = (x0 - in_mean[0]) / in_std[0]
    s1 = (x1 - in_mean[1]) / in_std[1]
    s2 = (x2 - in_mean[2]) / in_std[2]
    n_h = b1.size
    h = np.empty(n_h)
    for i in range(n_h):
        v = w1[i, 0] * s0 + w1[i, 1] * s1 + w1[i, 2] * s2 + b1[i]
        h[i] = v if v > 0.0 else 0.0
    out = np.empty(3)
    for o in range(3):
        acc = b2[o]
        for i in range(n_h):
            acc += w2[o, i] * h[i]
        out[o] = _softplus(acc)
    return out


# ---------------------------------------------------------------------------
# Gillespie direct-method cores.
#
# Events of the full target-cell-limited chain (state S, E, I, V):
#   infection        (-1, +1, 0, 0)   rate beta*S*V
#   eclipse exit     ( 0, -1, +1, 0)  rate k*E
#   cell removal     ( 0, 0, -1, 0)   rate delta*I
#   virion production( 0, 0, 0, +1)   rate rho*I
#   virion clearance ( 0, 0, 0, -1)   rate c*V
#
# The linear branching chain keeps S fixed at S0 and tracks (E, I, V) with
# infection rate beta*S0*V creating a new E.

SSA_EXTINCT = 0
SSA_ESCAPED = 1
SSA_TMAX = 2
SSA_CAPPED = 3


@njit(cache=True)
def ssa_tcl_run(
    seed, s0, beta, k, delta, rho, c, t_max,
    escape_total, crossing_level, stop_on_cross, grid, grid_states,
    event_counts,
):
    """One exact path of the full chain from (S0-1, 1, 0, 0).

    escape_total > 0 stops the run (outcome SSA_ESCAPED) once E+I+V reaches
    it -- used for extinction-fraction estimation where survival is already
    certain for any practical purpose.  crossing_level > 0 records the first
    time V >= level; stop_on_cross additionally ends the run there.  grid
    (may be empty) requests piecewise-constant state snapshots at the given
    times; after the run stops the last state persists.
    """
    np.random.seed(seed)
    s = s0 - 1.0
    e = 1.0
    i_ = 0.0
    v = 0.0
    t = 0.0
    t_cross = np.nan
    gi = 0
    n_grid = grid.size
    outcome = SSA_TMAX

    while True:
        a1 = beta * s * v
        a2 = k * e
        a3 = delta * i_
        a4 = rho * i_
        a5 = c * v
        total = a1 + a2 + a3 + a4 + a5
        if total <= 0.0:
            outcome = SSA_EXTINCT if (e + i_ + v) == 0.0 else SSA_TMAX
            break
        dt = -math.log(np.random.random()) / total
        t_new = t + dt
        # grid points are processed monotonically; state is constant on [t, t_new)
        while gi < n_grid and grid[gi] < t_new:
            grid_states[gi, 0] = s
            grid_states[gi, 1] = e
            grid_states[gi, 2] = i_
            grid_states[gi, 3] = v
            gi += 1
        if t_new > t_max:
            t = t_max
            outcome = SSA_TMAX
            break
        t = t_new
        u = np.random.random() * total
        if u < a1:
            s -= 1.0
            e += 1.0
            event_counts[0] += 1
        elif u < a1 + a2:
            e -= 1.0
            i_ += 1.0
            event_counts[1] += 1
        elif u < a1 + a2 + a3:
            i_ -= 1.0
            event_counts[2] += 1
        elif u < a1 + a2 + a3 + a4:
            v += 1.0
            event_counts[3] += 1
            if crossing_level > 0.0 and math.isnan(t_cross) and v >= crossing_level:
                t_cross = t
                if stop_on_cross:
                    outcome = SSA_ESCAPED
                    break
        else:
            v -= 1.0
            event_counts[4] += 1
        infected = e + i_ + v
        if infected == 0.0:
            outcome = SSA_EXTINCT
            break
        if escape_total > 0.0 and infected >= escape_total:
            outcome = SSA_ESCAPED
            break

    while gi < n_grid:
        grid_states[gi, 0] = s
        grid_states[gi, 1] = e
        grid_states[gi, 2] = i_
        grid_states[gi, 3] = v
        gi += 1
    return outcome, t_cross, t, s, e, i_, v


@njit(cache=True, parallel=True)
def ssa_tcl_batch(
    seeds, s0, beta, k, delta, rho, c, t_max,
    escape_total, crossing_level, stop_on_cross,
):
    """Parallel batch of full-chain runs; per-run seeding keeps results
    independent of thread scheduling."""
    n = seeds.size
    outcomes = np.empty(n, dtype=np.int64)
    t_cross = np.empty(n)
    t_end = np.empty(n)
    for r in prange(n):
        empty_grid = np.empty(0)
        empty_states = np.empty((0, 4))
        counts = np.zeros(5, dtype=np.int64)
        oc, tc, te, _, _, _, _ = ssa_tcl_run(
            seeds[r], s0, beta, k, delta, rho, c, t_max,
            escape_total, crossing_level, stop_on_cross, empty_grid,
            empty_states, counts,
        )
        outcomes[r] = oc
        t_cross[r] = tc
        t_end[r] = te
    return outcomes, t_cross, t_end


@njit(cache=True)
def bp_run(seed, beta_star, k, delta, rho, c, t_max, cap, event_counts):
    """One exact path of the linear branching chain from (E,I,V) = (1,0,0).

    Stops at extinction, t_max, or when E+I+V reaches `cap` (outcome
    SSA_CAPPED) -- deep in the deterministic regime, so the martingale
    summary can be read off at the stop time instead.  event_counts
    accumulates per-type tallies in the same order as the full chain
    (infection, eclipse exit, removal, production, clearance).
    """
    np.random.seed(seed)
    e = 1.0
    i_ = 0.0
    v = 0.0
    t = 0.0
    outcome = SSA_TMAX
    while True:
        a1 = k * e
        a2 = delta * i_
        a3 = rho * i_
        a4 = c * v
        a5 = beta_star * v
        total = a1 + a2 + a3 + a4 + a5
        if total <= 0.0:
            outcome = SSA_EXTINCT
            break
        dt = -math.log(np.random.random()) / total
        t_new = t + dt
        if t_new > t_max:
            t = t_max
            outcome = SSA_TMAX
            break
        t = t_new
        u = np.random.random() * total
        if u < a1:
            e -= 1.0
            i_ += 1.0
            event_counts[1] += 1
        elif u < a1 + a2:
            i_ -= 1.0
            event_counts[2] += 1
        elif u < a1 + a2 + a3:
            v += 1.0
            event_counts[3] += 1
        elif u < a1 + a2 + a3 + a4:
            v -= 1.0
            event_counts[4] += 1
        else:
            e += 1.0
            event_counts[0] += 1
        pop = e + i_ + v
        if pop == 0.0:
            outcome = SSA_EXTINCT
            break
        if pop >= cap:
            outcome = SSA_CAPPED
            break
    return outcome, t, e, i_, v


@njit(cache=True, parallel=True)
def bp_batch_w(seeds, beta_star, k, delta, rho, c, t_max, cap, lam, u_e, u_i, u_v):
    """Martingale summaries W = exp(-lam*t_stop) * u.X(t_stop) per run.

    Extinct runs come back as NaN.  Runs stopped by the population cap use
    their actual stop time, which leaves the summary unbiased (optional
    stopping on the martingale).
    """
    n = seeds.size
    w = np.empty(n)
    for r in prange(n):
        counts = np.zeros(5, dtype=np.int64)
        outcome, t_stop, e, i_, v = bp_run(
            seeds[r], beta_star, k, delta, rho, c, t_max, cap, counts
        )
        if outcome == SSA_EXTINCT:
            w[r] = np.nan
        else:
            w[r] = math.exp(-lam * t_stop) * (u_e * e + u_i * i_ + u_v * v)
    return w
