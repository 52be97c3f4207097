# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled multinomial NUTS kernel for logistic-regression posteriors.

The potential is expressed in Laplace-standardized coordinates:

    U(q) = prec |mu + L q|^2 / 2 + sum_i softplus(-(c_i + A_i q)).

The tree logic, the splitmix64 uniforms and the dual-averaging update match
``_nuts_py`` decision for decision.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, sqrt, pow, INFINITY, isnan
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy

cnp.import_array()

cdef double MAX_DELTA_H = 1000.0
cdef double DA_GAMMA = 0.05
cdef double DA_T0 = 10.0
cdef double DA_KAPPA = 0.75

# slot layout: 11 vectors of length p per tree depth
cdef enum:
    Q_BEG = 0
    P_BEG = 1
    G_BEG = 2
    Q_END = 3
    P_END = 4
    G_END = 5
    Q_PROP = 6
    G_PROP = 7
    RHO = 8
    RHO_A = 9
    P_AEND = 10
    NVEC = 11


cdef struct Model:
    int n
    int p
    double* A
    double* c
    double* L
    double* mu
    double prec
    double* w     # scratch, length p


cdef struct Slot:
    double* v      # NVEC * p doubles
    double log_w
    double u_prop
    int invalid


cdef struct Ctx:
    Model* model
    Slot* slots
    double eps
    double h0
    unsigned long long rng
    long n_leap
    double sum_acc
    int divergent


cdef inline double uniform(Ctx* ctx) nogil:
    cdef unsigned long long z
    ctx.rng = ctx.rng + 0x9E3779B97F4A7C15ULL
    z = ctx.rng
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    z = z ^ (z >> 31)
    return <double>(z >> 11) * (1.0 / 9007199254740992.0)


cdef inline double log_add(double a, double b) nogil:
    cdef double m
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    m = a if a > b else b
    return m + log(exp(a - m) + exp(b - m))


cdef inline double dot(double* a, double* b, int p) nogil:
    cdef double s = 0.0
    cdef int i
    for i in range(p):
        s += a[i] * b[i]
    return s


cdef double potential(Model* m, double* q, double* g) nogil:
    """Return U(q) and write its gradient into g."""
    cdef int n = m.n, p = m.p, i, j
    cdef double u = 0.0, mi, s, e
    cdef double* row
    for i in range(p):
        s = m.mu[i]
        for j in range(i + 1):
            s += m.L[i * p + j] * q[j]
        m.w[i] = s
        u += s * s
    u *= 0.5 * m.prec
    # prior gradient prec * L' w
    for j in range(p):
        s = 0.0
        for i in range(j, p):
            s += m.L[i * p + j] * m.w[i]
        g[j] = m.prec * s
    for i in range(n):
        row = m.A + i * p
        mi = m.c[i]
        for j in range(p):
            mi += row[j] * q[j]
        # softplus(-mi) and sigma(-mi)
        if mi >= 0.0:
            e = exp(-mi)
            u += log1p(e)
            s = e / (1.0 + e)
        else:
            e = exp(mi)
            u += log1p(e) - mi
            s = 1.0 / (1.0 + e)
        for j in range(p):
            g[j] -= s * row[j]
    return u


cdef inline int no_uturn(double* a, double* b, double* rho, int p) nogil:
    return dot(a, rho, p) > 0.0 and dot(b, rho, p) > 0.0


cdef int turning(double* l_left, double* l_right, double* r_left, double* r_right,
                 double* rho_l, double* rho_r, double* tmp, int p) nogil:
    cdef int i
    for i in range(p):
        tmp[i] = rho_l[i] + rho_r[i]
    if not no_uturn(l_left, r_right, tmp, p):
        return 1
    for i in range(p):
        tmp[i] = rho_l[i] + r_left[i]
    if not no_uturn(l_left, r_left, tmp, p):
        return 1
    for i in range(p):
        tmp[i] = rho_r[i] + l_right[i]
    if not no_uturn(l_right, r_right, tmp, p):
        return 1
    return 0


cdef void build(Ctx* ctx, int depth, double* q0, double* p0, double* g0, int direction,
                double* tmp) nogil:
    cdef int p = ctx.model.p, i
    cdef Slot* s = &ctx.slots[depth]
    cdef double* v = s.v
    cdef double h, u, energy, dh
    cdef Slot* b
    cdef double* bv
    cdef double log_w
    if depth == 0:
        h = direction * ctx.eps
        memcpy(v + Q_END * p, q0, p * sizeof(double))
        for i in range(p):
            v[P_END * p + i] = p0[i] - 0.5 * h * g0[i]
        for i in range(p):
            v[Q_END * p + i] += h * v[P_END * p + i]
        u = potential(ctx.model, v + Q_END * p, v + G_END * p)
        for i in range(p):
            v[P_END * p + i] -= 0.5 * h * v[G_END * p + i]
        energy = u + 0.5 * dot(v + P_END * p, v + P_END * p, p)
        if isnan(energy):
            energy = INFINITY
        ctx.n_leap += 1
        dh = energy - ctx.h0
        if dh <= 0.0:
            ctx.sum_acc += 1.0
        else:
            ctx.sum_acc += exp(-dh)
        memcpy(v + Q_BEG * p, v + Q_END * p, p * sizeof(double))
        memcpy(v + P_BEG * p, v + P_END * p, p * sizeof(double))
        memcpy(v + G_BEG * p, v + G_END * p, p * sizeof(double))
        memcpy(v + Q_PROP * p, v + Q_END * p, p * sizeof(double))
        memcpy(v + G_PROP * p, v + G_END * p, p * sizeof(double))
        memcpy(v + RHO * p, v + P_END * p, p * sizeof(double))
        s.u_prop = u
        s.log_w = -dh
        s.invalid = 0
        if dh > MAX_DELTA_H:
            ctx.divergent = 1
            s.invalid = 1
        return
    # first half
    build(ctx, depth - 1, q0, p0, g0, direction, tmp)
    b = &ctx.slots[depth - 1]
    bv = b.v
    if b.invalid:
        s.invalid = 1
        return
    memcpy(v + Q_BEG * p, bv + Q_BEG * p, 3 * p * sizeof(double))     # q,p,g beg
    memcpy(v + Q_END * p, bv + Q_END * p, 3 * p * sizeof(double))     # start of second half
    memcpy(v + Q_PROP * p, bv + Q_PROP * p, 2 * p * sizeof(double))   # q,g prop
    memcpy(v + RHO_A * p, bv + RHO * p, p * sizeof(double))
    memcpy(v + P_AEND * p, bv + P_END * p, p * sizeof(double))
    s.u_prop = b.u_prop
    log_w = b.log_w
    # second half
    build(ctx, depth - 1, v + Q_END * p, v + P_END * p, v + G_END * p, direction, tmp)
    if b.invalid:
        s.invalid = 1
        return
    memcpy(v + Q_END * p, bv + Q_END * p, 3 * p * sizeof(double))
    s.log_w = log_add(log_w, b.log_w)
    if uniform(ctx) < exp(b.log_w - s.log_w):
        memcpy(v + Q_PROP * p, bv + Q_PROP * p, 2 * p * sizeof(double))
        s.u_prop = b.u_prop
    for i in range(p):
        v[RHO * p + i] = v[RHO_A * p + i] + bv[RHO * p + i]
    if direction > 0:
        s.invalid = turning(v + P_BEG * p, v + P_AEND * p, bv + P_BEG * p, bv + P_END * p,
                            v + RHO_A * p, bv + RHO * p, tmp, p)
    else:
        s.invalid = turning(bv + P_END * p, bv + P_BEG * p, v + P_AEND * p, v + P_BEG * p,
                            bv + RHO * p, v + RHO_A * p, tmp, p)


cdef inline void da_update(double[::1] da, double accept_stat, double target_accept) nogil:
    cdef double t, eta, w
    da[4] += 1.0
    t = da[4]
    eta = 1.0 / (t + DA_T0)
    da[2] = (1.0 - eta) * da[2] + eta * (target_accept - accept_stat)
    da[0] = da[3] - da[2] * sqrt(t) / DA_GAMMA
    w = pow(t, -DA_KAPPA)
    da[1] = (1.0 - w) * da[1] + w * da[0]


def run_logistic_chunk(double[:, ::1] A, double[::1] c, double[:, ::1] L, double[::1] mu,
                       double prec, double[::1] q_init, double[:, ::1] momenta,
                       cnp.uint64_t[::1] seeds, double[::1] da, bint adapt, double step_size,
                       double target_accept, int max_depth,
                       double[:, ::1] out_q, double[::1] out_u, double[::1] out_acc,
                       cnp.int64_t[::1] out_nleap, cnp.int8_t[::1] out_div,
                       cnp.int64_t[::1] out_depth):
    """Run ``len(momenta)`` NUTS transitions on a logistic posterior.

    Fills the ``out_*`` arrays and updates ``da`` in place when ``adapt``.
    Returns the final position as a new array.
    """
    cdef int p = L.shape[0], n = A.shape[0], m = momenta.shape[0]
    cdef int it, i, depth, direction, turned
    cdef Model model
    cdef Ctx ctx
    cdef double u, u_s, acc, eps
    cdef double* buf
    cdef double *q, *g, *q_s, *g_s, *wl, *tmp
    cdef double *wq_l, *wp_l, *wg_l, *wq_r, *wp_r, *wg_r, *w_rho, *new_rho
    cdef double w_log_w
    cdef Slot* sub
    cdef double* sv
    if A.shape[1] != p and n > 0:
        raise ValueError("A must have p columns")
    model.n = n
    model.p = p
    model.A = &A[0, 0] if n > 0 else NULL
    model.c = &c[0] if n > 0 else NULL
    model.L = &L[0, 0]
    model.mu = &mu[0]
    model.prec = prec
    buf = <double*>malloc(((max_depth + 1) * NVEC + 16) * p * sizeof(double))
    ctx.slots = <Slot*>malloc((max_depth + 1) * sizeof(Slot))
    if buf == NULL or ctx.slots == NULL:
        free(buf)
        free(ctx.slots)
        raise MemoryError()
    for i in range(max_depth + 1):
        ctx.slots[i].v = buf + i * NVEC * p
    wl = buf + (max_depth + 1) * NVEC * p
    q, g, q_s, g_s = wl, wl + p, wl + 2 * p, wl + 3 * p
    wq_l, wp_l, wg_l = wl + 4 * p, wl + 5 * p, wl + 6 * p
    wq_r, wp_r, wg_r = wl + 7 * p, wl + 8 * p, wl + 9 * p
    w_rho, new_rho, tmp = wl + 10 * p, wl + 11 * p, wl + 12 * p
    model.w = wl + 13 * p
    ctx.model = &model
    try:
        with nogil:
            for i in range(p):
                q[i] = q_init[i]
            u = potential(&model, q, g)
            for it in range(m):
                eps = exp(da[0]) if adapt else step_size
                ctx.eps = eps
                ctx.rng = seeds[it]
                ctx.n_leap = 0
                ctx.sum_acc = 0.0
                ctx.divergent = 0
                for i in range(p):
                    wp_l[i] = momenta[it, i]
                ctx.h0 = u + 0.5 * dot(wp_l, wp_l, p)
                memcpy(wq_l, q, p * sizeof(double))
                memcpy(wg_l, g, p * sizeof(double))
                memcpy(wq_r, q, p * sizeof(double))
                memcpy(wp_r, wp_l, p * sizeof(double))
                memcpy(wg_r, g, p * sizeof(double))
                memcpy(w_rho, wp_l, p * sizeof(double))
                memcpy(q_s, q, p * sizeof(double))
                memcpy(g_s, g, p * sizeof(double))
                u_s = u
                w_log_w = 0.0
                depth = 0
                while depth < max_depth:
                    direction = 1 if uniform(&ctx) > 0.5 else -1
                    if direction > 0:
                        build(&ctx, depth, wq_r, wp_r, wg_r, 1, tmp)
                    else:
                        build(&ctx, depth, wq_l, wp_l, wg_l, -1, tmp)
                    sub = &ctx.slots[depth]
                    sv = sub.v
                    if sub.invalid:
                        break
                    depth += 1
                    if sub.log_w > w_log_w or uniform(&ctx) < exp(sub.log_w - w_log_w):
                        memcpy(q_s, sv + Q_PROP * p, p * sizeof(double))
                        memcpy(g_s, sv + G_PROP * p, p * sizeof(double))
                        u_s = sub.u_prop
                    w_log_w = log_add(w_log_w, sub.log_w)
                    for i in range(p):
                        new_rho[i] = w_rho[i] + sv[RHO * p + i]
                    if direction > 0:
                        turned = turning(wp_l, wp_r, sv + P_BEG * p, sv + P_END * p,
                                         w_rho, sv + RHO * p, tmp, p)
                        memcpy(wq_r, sv + Q_END * p, p * sizeof(double))
                        memcpy(wp_r, sv + P_END * p, p * sizeof(double))
                        memcpy(wg_r, sv + G_END * p, p * sizeof(double))
                    else:
                        turned = turning(sv + P_END * p, sv + P_BEG * p, wp_l, wp_r,
                                         sv + RHO * p, w_rho, tmp, p)
                        memcpy(wq_l, sv + Q_END * p, p * sizeof(double))
                        memcpy(wp_l, sv + P_END * p, p * sizeof(double))
                        memcpy(wg_l, sv + G_END * p, p * sizeof(double))
                    memcpy(w_rho, new_rho, p * sizeof(double))
                    if turned:
                        break
                acc = ctx.sum_acc / ctx.n_leap if ctx.n_leap > 0 else 0.0
                if adapt:
                    da_update(da, acc, target_accept)
                memcpy(q, q_s, p * sizeof(double))
                memcpy(g, g_s, p * sizeof(double))
                u = u_s
                for i in range(p):
                    out_q[it, i] = q[i]
                out_u[it] = u
                out_acc[it] = acc
                out_nleap[it] = ctx.n_leap
                out_div[it] = ctx.divergent
                out_depth[it] = depth
        result = np.empty(p)
        for i in range(p):
            result[i] = q[i]
        return result
    finally:
        free(buf)
        free(ctx.slots)


def logistic_potential_ext(double[:, ::1] A, double[::1] c, double[:, ::1] L, double[::1] mu,
                           double prec, double[::1] q):
    """Evaluate the compiled potential once; used by tests and benchmarks."""
    cdef Model model
    cdef int p = L.shape[0]
    cdef double u
    g = np.empty(p)
    w = np.empty(p)
    cdef double[::1] gv = g
    cdef double[::1] wv = w
    model.n = A.shape[0]
    model.p = p
    model.A = &A[0, 0] if model.n > 0 else NULL
    model.c = &c[0] if model.n > 0 else NULL
    model.L = &L[0, 0]
    model.mu = &mu[0]
    model.prec = prec
    model.w = &wv[0]
    u = potential(&model, &q[0], &gv[0])
    return u, g
