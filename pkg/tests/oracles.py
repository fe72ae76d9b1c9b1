"""Independent reference implementations used by the tests.

None of these reuse package internals beyond plain data containers.
"""

from __future__ import annotations

import numpy as np


def ou_transition(a, q, dt):
    """Exact per-mode OU mean factor and variance over a lag ``dt``."""
    a = np.asarray(a, dtype=float)
    q = np.asarray(q, dtype=float)
    s = np.exp(-a * dt)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(a > 0, q * (1 - np.exp(-2 * a * dt)) / (2 * np.where(a > 0, a, 1)), q * dt)
    return s, v


def kalman_filter(x0, C0, a, q, L, Sigma, times, y):
    """Filter means, covariances, predictive log-likelihood for diagonal OU dynamics."""
    m = np.array(x0, dtype=float)
    C = np.array(C0, dtype=float)
    means, covs, loglik = [], [], 0.0
    t_prev = 0.0
    for t, yi in zip(times, y):
        s, v = ou_transition(a, q, t - t_prev)
        m = s * m
        C = s[:, None] * C * s[None, :] + np.diag(v)
        S = L @ C @ L.T + Sigma
        r = yi - L @ m
        Sinv = np.linalg.inv(S)
        _, logdet = np.linalg.slogdet(S)
        loglik += -0.5 * (len(r) * np.log(2 * np.pi) + logdet + r @ Sinv @ r)
        K = C @ L.T @ Sinv
        m = m + K @ r
        C = C - K @ L @ C
        C = 0.5 * (C + C.T)
        means.append(m.copy())
        covs.append(C.copy())
        t_prev = t
    return np.array(means), np.array(covs), loglik


def x0_posterior(prior_var, a, q, L, Sigma, times, y):
    """Conditional law of ``x0`` given all observations (zero-mean Gaussian prior).

    Builds the joint Gaussian of ``(x0, y_1..y_n)`` directly.
    """
    M = len(a)
    n = len(times)
    P0 = np.diag(prior_var)
    # x_{t_i} = S(t_i) x0 + noise; cov of noise between times via OU
    blocks_mean = []
    for t in times:
        blocks_mean.append(L * np.exp(-a * t))
    H = np.vstack(blocks_mean)                       # (n m) x M, y = H x0 + e
    m = L.shape[0]
    Cn = np.zeros((n * m, n * m))
    for i, ti in enumerate(times):
        for j, tj in enumerate(times):
            lo, hi = min(ti, tj), max(ti, tj)
            # Cov(x_ti, x_tj) from the noise alone: S(hi - lo) Var(x_lo)
            var_lo = q * (1 - np.exp(-2 * a * lo)) / (2 * a)
            cov = np.exp(-a * (hi - lo)) * var_lo
            Cn[i * m:(i + 1) * m, j * m:(j + 1) * m] = (L * cov) @ L.T
        Cn[i * m:(i + 1) * m, i * m:(i + 1) * m] += Sigma
    Y = np.concatenate(y)
    S = H @ P0 @ H.T + Cn
    K = P0 @ H.T @ np.linalg.inv(S)
    mean = K @ Y
    cov = P0 - K @ H @ P0
    return mean, cov


def brute_force_convolution(kernel, act, field, nodes, domain_length):
    """``dx * sum_k' k(dist(xi_k, xi_k')) f(x_k')`` by a double loop."""
    M = len(field)
    dx = domain_length / M
    out = np.zeros(M)
    fx = act(field)
    for k in range(M):
        for kp in range(M):
            d = abs(nodes[k] - nodes[kp])
            r = min(d, domain_length - d)
            out[k] += kernel(r) * fx[kp]
    return dx * out


def rk4_scalar(f, y0, t_end, h):
    n = int(round(t_end / h))
    y = y0
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def grid_filter_midpoint_mean(drift, a, q, x0, t1, n_steps, y, ell, sigma2, grid):
    """Smoothed mean of ``X_{t1/2}`` for the scalar Euler chain by dense grid recursion.

    The chain is ``x' = s x + phi F(x) + sqrt(v) z`` with the same exponential
    Euler step as the package, on ``n_steps`` steps over ``[0, t1]``; the
    observation is ``y ~ N(ell x_{t1}, sigma2)``.  Probabilities are carried
    on ``grid`` with trapezoid weights.
    """
    dt = t1 / n_steps
    s = np.exp(-a * dt)
    phi = (1 - s) / a if a > 0 else dt
    v = q * (1 - np.exp(-2 * a * dt)) / (2 * a) if a > 0 else q * dt
    w = np.gradient(grid)
    mean_next = s * grid + phi * drift(grid)
    # K[i, k] = density of moving from grid[k] to grid[i]
    K = np.exp(-0.5 * (grid[:, None] - mean_next[None, :]) ** 2 / v) / np.sqrt(2 * np.pi * v)
    # first step from the point mass
    m0 = s * x0 + phi * drift(np.array([x0]))[0]
    p = np.exp(-0.5 * (grid - m0) ** 2 / v) / np.sqrt(2 * np.pi * v)
    half = n_steps // 2
    for _ in range(half - 1):
        p = K @ (w * p)
    p_mid = p.copy()
    # backward likelihood from the midpoint to the observation
    lik = np.exp(-0.5 * (y - ell * grid) ** 2 / sigma2)
    h = lik
    for _ in range(n_steps - half):
        h = K.T @ (w * h)
    post = p_mid * h
    return float(np.sum(w * grid * post) / np.sum(w * post))
