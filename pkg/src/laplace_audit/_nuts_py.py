"""Pure-Python multinomial No-U-Turn sampler.

Mirrors the compiled kernel in ``_nuts_ext.pyx`` step for step, including the
splitmix64 stream used for the in-tree uniforms, so both backends make the
same decisions given the same momenta and per-iteration seeds.

The sampler works with an identity mass matrix on whatever coordinates the
potential is expressed in; the driver passes Laplace-standardized
coordinates.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import expit, log_expit

_M64 = (1 << 64) - 1
MAX_DELTA_H = 1000.0

# dual-averaging constants
DA_GAMMA = 0.05
DA_T0 = 10.0
DA_KAPPA = 0.75


class SplitMix64:
    """splitmix64 generator returning doubles in [0, 1)."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = int(seed) & _M64

    def uniform(self) -> float:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _M64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
        z ^= z >> 31
        return (z >> 11) * (1.0 / 9007199254740992.0)


def _log_add(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = a if a > b else b
    return m + math.log(math.exp(a - m) + math.exp(b - m))


def _no_uturn(p_left, p_right, rho):
    return float(p_left @ rho) > 0.0 and float(p_right @ rho) > 0.0


class _Tree:
    __slots__ = ("q_beg", "p_beg", "g_beg", "q_end", "p_end", "g_end", "rho", "log_w",
                 "q_prop", "u_prop", "g_prop", "invalid")


class _Ctx:
    __slots__ = ("potential", "eps", "h0", "rng", "n_leap", "sum_acc", "divergent")


def _leapfrog(ctx, q, p, g, direction):
    h = direction * ctx.eps
    p = p - 0.5 * h * g
    q = q + h * p
    u, g = ctx.potential(q)
    p = p - 0.5 * h * g
    return q, p, g, u


def _build(ctx, q, p, g, direction, depth):
    if depth == 0:
        q, p, g, u = _leapfrog(ctx, q, p, g, direction)
        energy = u + 0.5 * float(p @ p)
        if energy != energy:
            energy = math.inf
        ctx.n_leap += 1
        dh = energy - ctx.h0
        ctx.sum_acc += 1.0 if dh <= 0.0 else math.exp(-dh)
        t = _Tree()
        t.q_beg = t.q_end = t.q_prop = q
        t.p_beg = t.p_end = p
        t.g_beg = t.g_end = t.g_prop = g
        t.u_prop = u
        t.rho = p.copy()
        t.log_w = -dh
        t.invalid = False
        if dh > MAX_DELTA_H:
            ctx.divergent = True
            t.invalid = True
        return t
    a = _build(ctx, q, p, g, direction, depth - 1)
    if a.invalid:
        return a
    b = _build(ctx, a.q_end, a.p_end, a.g_end, direction, depth - 1)
    if b.invalid:
        return b
    t = _Tree()
    t.q_beg, t.p_beg, t.g_beg = a.q_beg, a.p_beg, a.g_beg
    t.q_end, t.p_end, t.g_end = b.q_end, b.p_end, b.g_end
    t.log_w = _log_add(a.log_w, b.log_w)
    if ctx.rng.uniform() < math.exp(b.log_w - t.log_w):
        t.q_prop, t.u_prop, t.g_prop = b.q_prop, b.u_prop, b.g_prop
    else:
        t.q_prop, t.u_prop, t.g_prop = a.q_prop, a.u_prop, a.g_prop
    t.rho = a.rho + b.rho
    t.invalid = _turning(a, b, direction, t.rho)
    return t


def _turning(first, second, direction, rho):
    """Generalized U-turn test on the union of two adjacent trees."""
    if direction > 0:
        lt, rt = first, second
        l_left, l_right, r_left, r_right = lt.p_beg, lt.p_end, rt.p_beg, rt.p_end
    else:
        lt, rt = second, first
        l_left, l_right, r_left, r_right = lt.p_end, lt.p_beg, rt.p_end, rt.p_beg
    if not _no_uturn(l_left, r_right, rho):
        return True
    if not _no_uturn(l_left, r_left, lt.rho + r_left):
        return True
    if not _no_uturn(l_right, r_right, rt.rho + l_right):
        return True
    return False


def transition(potential, q, u, g, p0, eps, seed, max_depth=10):
    """One NUTS transition from ``q`` with initial momentum ``p0``.

    Returns ``(q, u, g, accept_stat, n_leapfrog, depth, divergent)``.
    """
    ctx = _Ctx()
    ctx.potential, ctx.eps = potential, eps
    ctx.h0 = u + 0.5 * float(p0 @ p0)
    ctx.rng = SplitMix64(seed)
    ctx.n_leap, ctx.sum_acc, ctx.divergent = 0, 0.0, False

    whole = _Tree()
    whole.q_beg = whole.q_end = q
    whole.p_beg = whole.p_end = p0
    whole.g_beg = whole.g_end = g
    whole.rho = p0.copy()
    whole.log_w = 0.0
    q_s, u_s, g_s = q, u, g
    depth = 0
    # whole.*_beg is the physical left end, whole.*_end the right end
    while depth < max_depth:
        direction = 1 if ctx.rng.uniform() > 0.5 else -1
        if direction > 0:
            sub = _build(ctx, whole.q_end, whole.p_end, whole.g_end, 1, depth)
        else:
            sub = _build(ctx, whole.q_beg, whole.p_beg, whole.g_beg, -1, depth)
        if sub.invalid:
            break
        depth += 1
        if sub.log_w > whole.log_w or ctx.rng.uniform() < math.exp(sub.log_w - whole.log_w):
            q_s, u_s, g_s = sub.q_prop, sub.u_prop, sub.g_prop
        whole.log_w = _log_add(whole.log_w, sub.log_w)
        rho = whole.rho + sub.rho
        if direction > 0:
            left, right = whole, sub
            turned = _turning(left, right, 1, rho)
            whole.q_end, whole.p_end, whole.g_end = sub.q_end, sub.p_end, sub.g_end
        else:
            # sub was built leftwards: its end is the new physical left end
            left = _Tree()
            left.p_beg, left.p_end, left.rho = sub.p_end, sub.p_beg, sub.rho
            turned = _turning(left, whole, 1, rho)
            whole.q_beg, whole.p_beg, whole.g_beg = sub.q_end, sub.p_end, sub.g_end
        whole.rho = rho
        if turned:
            break
    acc = ctx.sum_acc / ctx.n_leap if ctx.n_leap else 0.0
    return q_s, u_s, g_s, acc, ctx.n_leap, depth, ctx.divergent


def dual_averaging_update(da, accept_stat, target_accept):
    """Update ``da = [log_eps, log_eps_bar, h_bar, mu, count]`` in place."""
    da[4] += 1.0
    t = da[4]
    eta = 1.0 / (t + DA_T0)
    da[2] = (1.0 - eta) * da[2] + eta * (target_accept - accept_stat)
    da[0] = da[3] - da[2] * math.sqrt(t) / DA_GAMMA
    w = t ** (-DA_KAPPA)
    da[1] = (1.0 - w) * da[1] + w * da[0]


def run_chunk(potential, q, momenta, seeds, da, adapt, step_size, target_accept, max_depth,
              out_q, out_u, out_acc, out_nleap, out_div, out_depth):
    """Run ``len(momenta)`` transitions and fill the output arrays.

    When ``adapt`` is true the step size is ``exp(da[0])`` and ``da`` is
    updated after every transition; otherwise ``step_size`` is used.
    Returns the final position.
    """
    q = np.array(q, dtype=float)
    u, g = potential(q)
    for i in range(len(momenta)):
        eps = math.exp(da[0]) if adapt else step_size
        q, u, g, acc, nl, depth, div = transition(potential, q, u, g, np.array(momenta[i]), eps,
                                                  int(seeds[i]), max_depth)
        if adapt:
            dual_averaging_update(da, acc, target_accept)
        out_q[i] = q
        out_u[i] = u
        out_acc[i] = acc
        out_nleap[i] = nl
        out_div[i] = div
        out_depth[i] = depth
    return q


def logistic_potential(A, c, L, mu, prec):
    """Potential and gradient of a logistic posterior in standardized coordinates.

    ``U(q) = prec |mu + L q|^2 / 2 + sum_i softplus(-(c_i + A_i q))``.
    """
    A = np.ascontiguousarray(A, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    L = np.ascontiguousarray(L, dtype=float)
    mu = np.ascontiguousarray(mu, dtype=float)

    def potential(q):
        w = mu + L @ q
        m = c + A @ q
        u = 0.5 * prec * float(w @ w) - float(np.sum(log_expit(m)))
        g = prec * (L.T @ w) - expit(-m) @ A
        return u, g

    return potential
