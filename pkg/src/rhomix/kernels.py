"""Compiled inner loops: component and mixture log-densities, psi and T sums.

Family codes: 0 gaussian, 1 cauchy, 2 laplace, 3 skew-Gaussian, 4 uniform
(location = left end, scale = width), 5 spike.
"""
import math
import os

import numba as nb
import numpy as np

if "NUMBA_THREADING_LAYER" not in os.environ:
    # skip the TBB probe, which warns on older system TBB builds
    nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

LOG2PI = math.log(2.0 * math.pi)
LOGPI = math.log(math.pi)
LOG2 = math.log(2.0)


@nb.njit(cache=True)
def log_ndtr(t):
    if t > -30.0:
        return math.log(0.5 * math.erfc(-t / math.sqrt(2.0)))
    t2 = t * t
    return -0.5 * t2 - math.log(-t) - 0.5 * LOG2PI + math.log1p(-1.0 / t2 + 3.0 / (t2 * t2))


@nb.njit(cache=True)
def comp_logpdf(code, shape, z, s, ls, x):
    """log of f((x - z)/s)/s where ``ls`` = log s; +inf at a spike singularity."""
    u = (x - z) / s
    if code == 0:
        return -0.5 * LOG2PI - ls - 0.5 * u * u
    if code == 1:
        return -LOGPI - ls - math.log1p(u * u)
    if code == 2:
        return -LOG2 - ls - abs(u)
    if code == 3:
        return LOG2 - 0.5 * LOG2PI - ls - 0.5 * u * u + log_ndtr(shape * u)
    if code == 4:
        return -ls if 0.0 <= u <= 1.0 else -np.inf
    d = abs(x - z)
    if d == 0.0:
        return np.inf
    if d <= s:
        return math.log(0.5 * (1.0 - shape)) - ls - shape * math.log(d / s)
    return -np.inf


@nb.njit(cache=True)
def component_logpdf(code, shape, z, s, x, out):
    ls = math.log(s)
    for i in range(x.shape[0]):
        out[i] = comp_logpdf(code, shape, z, s, ls, x[i])


@nb.njit(cache=True)
def mixture_logpdf(codes, shapes, logw, zs, ss, x, out):
    """log sum_k w_k f_k(x); components with zero weight are skipped."""
    K = codes.shape[0]
    lss = np.empty(K)
    for k in range(K):
        lss[k] = math.log(ss[k])
    vals = np.empty(K)
    for i in range(x.shape[0]):
        m = -np.inf
        for k in range(K):
            if logw[k] == -np.inf:
                vals[k] = -np.inf
                continue
            v = logw[k] + comp_logpdf(codes[k], shapes[k], zs[k], ss[k], lss[k], x[i])
            vals[k] = v
            if v > m:
                m = v
        if m == np.inf or m == -np.inf:
            out[i] = m
            continue
        acc = 0.0
        for k in range(K):
            acc += math.exp(vals[k] - m)
        out[i] = m + math.log(acc)


@nb.njit(cache=True)
def psi_log(d):
    """psi(sqrt(r)) for log-ratio d = log r; NaN (0/0 or inf/inf) maps to 0.

    Equal to tanh(d/4), written so that psi_log(-d) == -psi_log(d) bit for bit.
    """
    if d != d:
        return 0.0
    a = abs(d)
    if a < 0.01:
        v = 0.25 * a * (1.0 - a * a / 48.0)
    else:
        t = math.exp(-0.5 * a)
        v = (1.0 - t) / (1.0 + t)
    return v if d > 0 else -v


@nb.njit(cache=True)
def t_sum(lq, lp):
    """T statistic from two log-density vectors, in sample order."""
    acc = 0.0
    for i in range(lq.shape[0]):
        acc += psi_log(lp[i] - lq[i])
    return acc


@nb.njit(cache=True)
def t_row(L, e, out):
    """out[j] = T(q_e, q_j) for every row of L."""
    for j in range(L.shape[0]):
        out[j] = t_sum(L[e], L[j])


@nb.njit(cache=True)
def t_against(lq, P, out):
    for j in range(P.shape[0]):
        out[j] = t_sum(lq, P[j])


@nb.njit(cache=True, parallel=True)
def t_matrix(L):
    """Antisymmetric matrix T[i, j] = T(q_i, q_j); only i < j is summed."""
    m = L.shape[0]
    T = np.zeros((m, m))
    for i in nb.prange(m):
        for j in range(i + 1, m):
            T[i, j] = t_sum(L[i], L[j])
    for i in range(m):
        for j in range(i + 1, m):
            T[j, i] = -T[i, j]
    return T
