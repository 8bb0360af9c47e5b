# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Metropolis sweep kernel.

Mirrors the NumPy backend move for move: same pre-drawn random layout, same
proposal construction, same acceptance rule.  The evaluator (feature map,
complex RBM heads, symmetry projection, gauge sign) is inlined in C for the
single-row amplitude evaluations that dominate the sweep cost.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, cos, erf, exp, fabs, hypot, log, log1p, sin, sqrt

cnp.import_array()

cdef double LN_EPS = 1e-6
cdef double NEG_INF = -1e308
cdef double SQRT2 = 1.4142135623730951
cdef double LOG2 = 0.6931471805599453


cdef inline double complex cx(double re, double im) noexcept:
    return re + 1j * im


cdef inline double complex cexp_(double complex z) noexcept:
    cdef double m
    if z.real <= -700.0:
        return 0.0
    m = exp(z.real)
    return cx(m * cos(z.imag), m * sin(z.imag))


cdef inline double complex clog_(double complex z) noexcept:
    cdef double m = hypot(z.real, z.imag)
    if m == 0.0:
        return cx(NEG_INF, 0.0)
    return cx(log(m), atan2(z.imag, z.real))


cdef inline double complex clogcosh(double complex z) noexcept:
    # stable branch: z + log((1 + exp(-2z)) / 2) for Re z >= 0
    cdef double complex zs = z
    if z.real < 0.0:
        zs = -z
    cdef double complex w = cexp_(-2.0 * zs)
    return zs + clog_(1.0 + w) - LOG2


cdef inline double gelu(double x) noexcept:
    return 0.5 * x * (1.0 + erf(x / SQRT2))


cdef int invert_inplace(double complex[:, ::1] work, double complex[:, ::1] out,
                        int n, double* logabs) noexcept:
    """Gauss-Jordan with partial pivoting; returns 0 on success."""
    cdef int i, j, k, piv
    cdef double best, mag, acc
    cdef double complex factor, pivval
    acc = 0.0
    for i in range(n):
        for j in range(n):
            out[i, j] = 1.0 if i == j else 0.0
    for k in range(n):
        piv = k
        best = hypot(work[k, k].real, work[k, k].imag)
        for i in range(k + 1, n):
            mag = hypot(work[i, k].real, work[i, k].imag)
            if mag > best:
                best = mag
                piv = i
        if best == 0.0:
            logabs[0] = NEG_INF
            return 1
        if piv != k:
            for j in range(n):
                work[k, j], work[piv, j] = work[piv, j], work[k, j]
                out[k, j], out[piv, j] = out[piv, j], out[k, j]
        pivval = work[k, k]
        acc += log(best)
        for j in range(n):
            work[k, j] = work[k, j] / pivval
            out[k, j] = out[k, j] / pivval
        for i in range(n):
            if i == k:
                continue
            factor = work[i, k]
            if factor.real != 0.0 or factor.imag != 0.0:
                for j in range(n):
                    work[i, j] = work[i, j] - factor * work[k, j]
                    out[i, j] = out[i, j] - factor * out[k, j]
    logabs[0] = acc
    return 0


cdef void fmap_single(
    const signed char* u, int ns, int n_ch,
    const long[:, ::1] nbr, int kk,
    const double[:, ::1] stem_w, const double[::1] stem_b,
    int n_blocks,
    const double[:, :, ::1] dw_w, const double[:, ::1] dw_b,
    const double[:, ::1] ln_g, const double[:, ::1] ln_b,
    const double[:, :, ::1] w1, const double[:, ::1] b1,
    const double[:, :, ::1] w2, const double[:, ::1] b2,
    const double[:, ::1] res_g,
    const double[::1] fin_g, const double[::1] fin_b,
    double[:, ::1] y, double[:, ::1] x1, double[:, ::1] x2,
    double[:, ::1] a1buf,
    double* feat,
) noexcept:
    cdef int p, c, k, b, f, fc
    cdef double acc, mu, var, inv, h
    fc = b1.shape[1] if n_blocks > 0 else 0
    for p in range(ns):
        for c in range(n_ch):
            acc = stem_b[c]
            for k in range(kk):
                acc += stem_w[k, c] * u[nbr[p, k]]
            y[p, c] = acc
    for b in range(n_blocks):
        for p in range(ns):
            for c in range(n_ch):
                acc = dw_b[b, c]
                for k in range(kk):
                    acc += dw_w[b, k, c] * y[nbr[p, k], c]
                x1[p, c] = acc
        for p in range(ns):
            mu = 0.0
            for c in range(n_ch):
                mu += x1[p, c]
            mu /= n_ch
            var = 0.0
            for c in range(n_ch):
                h = x1[p, c] - mu
                var += h * h
            var /= n_ch
            inv = 1.0 / sqrt(var + LN_EPS)
            for c in range(n_ch):
                x2[p, c] = ln_g[b, c] * ((x1[p, c] - mu) * inv) + ln_b[b, c]
        for p in range(ns):
            for f in range(fc):
                acc = b1[b, f]
                for c in range(n_ch):
                    acc += x2[p, c] * w1[b, c, f]
                a1buf[p, f] = gelu(acc)
        for p in range(ns):
            for c in range(n_ch):
                acc = b2[b, c]
                for f in range(fc):
                    acc += a1buf[p, f] * w2[b, f, c]
                y[p, c] = y[p, c] + res_g[b, c] * acc
    for p in range(ns):
        mu = 0.0
        for c in range(n_ch):
            mu += y[p, c]
        mu /= n_ch
        var = 0.0
        for c in range(n_ch):
            h = y[p, c] - mu
            var += h * h
        var /= n_ch
        inv = 1.0 / sqrt(var + LN_EPS)
        for c in range(n_ch):
            feat[p * n_ch + c] = fin_g[c] * ((y[p, c] - mu) * inv) + fin_b[c]


cdef int eval_projected_row(
    const signed char* config, int ns,
    const long[:, ::1] term_perms, const double complex[::1] term_phases,
    const signed char[::1] term_flips, const signed char[::1] sub_a,
    int use_marshall, int use_fmap,
    const long[:, ::1] nbr,
    const double[:, ::1] stem_w, const double[::1] stem_b, int n_blocks,
    const double[:, :, ::1] dw_w, const double[:, ::1] dw_b,
    const double[:, ::1] ln_g, const double[:, ::1] ln_b,
    const double[:, :, ::1] w1, const double[:, ::1] b1,
    const double[:, :, ::1] w2, const double[:, ::1] b2,
    const double[:, ::1] res_g,
    const double[::1] fin_g, const double[::1] fin_b,
    const double complex[:, :, ::1] head_w, const double complex[:, ::1] head_b,
    const double complex[::1] head_c,
    double log_bound,
    signed char[::1] raw, double[::1] feat,
    double complex[:, ::1] lh, double complex[::1] coef,
    double[:, ::1] fy, double[:, ::1] fx1, double[:, ::1] fx2, double[:, ::1] fa1,
    double complex* la_out,
) noexcept:
    """Projected log-amplitudes of one configuration; returns 1 on overflow."""
    cdef int n_terms = term_perms.shape[0]
    cdef int n_heads = head_w.shape[0]
    cdef int hidden = head_w.shape[1]
    cdef int n_feat = head_w.shape[2]
    cdef int n_ch = stem_b.shape[0] if use_fmap else 0
    cdef int kk = nbr.shape[1] if use_fmap else 0
    cdef int t, p, j, a, f, down_a
    cdef double ref
    cdef double complex sign, pre, acc_lc, amp
    for t in range(n_terms):
        for p in range(ns):
            raw[p] = term_flips[t] * config[term_perms[t, p]]
        sign = term_phases[t]
        if use_marshall:
            down_a = 0
            for p in range(ns):
                if sub_a[p] == 1 and raw[p] == -1:
                    down_a += 1
            if down_a % 2 == 1:
                sign = -sign
        coef[t] = sign
        if use_fmap:
            fmap_single(&raw[0], ns, n_ch, nbr, kk, stem_w, stem_b,
                        n_blocks, dw_w, dw_b, ln_g, ln_b, w1, b1,
                        w2, b2, res_g, fin_g, fin_b,
                        fy, fx1, fx2, fa1, &feat[0])
        else:
            for p in range(ns):
                feat[p] = raw[p]
        for j in range(n_heads):
            acc_lc = head_c[j]
            for a in range(hidden):
                pre = head_b[j, a]
                for f in range(n_feat):
                    pre = pre + head_w[j, a, f] * feat[f]
                acc_lc = acc_lc + clogcosh(pre)
            if fabs(acc_lc.real) > log_bound:
                return 1
            lh[t, j] = acc_lc
    for j in range(n_heads):
        if n_terms == 1:
            la_out[j] = lh[0, j] + clog_(coef[0])
        else:
            ref = NEG_INF
            for t in range(n_terms):
                if lh[t, j].real > ref:
                    ref = lh[t, j].real
            amp = 0.0
            for t in range(n_terms):
                amp = amp + coef[t] * cexp_(lh[t, j] - ref)
            la_out[j] = cx(ref, 0.0) + clog_(amp)
    return 0


def log_amps_batch(
    const signed char[:, ::1] batch,
    const long[:, ::1] term_perms,
    const double complex[::1] term_phases,
    const signed char[::1] term_flips,
    const signed char[::1] sub_a,
    int use_marshall,
    int use_fmap,
    const long[:, ::1] nbr,
    const double[:, ::1] stem_w, const double[::1] stem_b,
    int n_blocks,
    const double[:, :, ::1] dw_w, const double[:, ::1] dw_b,
    const double[:, ::1] ln_g, const double[:, ::1] ln_b,
    const double[:, :, ::1] w1, const double[:, ::1] b1,
    const double[:, :, ::1] w2, const double[:, ::1] b2,
    const double[:, ::1] res_g,
    const double[::1] fin_g, const double[::1] fin_b,
    const double complex[:, :, ::1] head_w,
    const double complex[:, ::1] head_b,
    const double complex[::1] head_c,
    double log_bound,
    long[::1] status,
    double complex[:, ::1] out,
):
    """Projected log-amplitudes for a batch of configurations."""
    cdef int nb = batch.shape[0]
    cdef int ns = batch.shape[1]
    cdef int n_terms = term_perms.shape[0]
    cdef int n_heads = head_w.shape[0]
    cdef int n_feat = head_w.shape[2]
    cdef int n_ch = stem_b.shape[0] if use_fmap else 0
    feat_np = np.empty(n_feat, dtype=np.float64)
    cdef double[::1] feat = feat_np
    raw_np = np.empty(ns, dtype=np.int8)
    cdef signed char[::1] raw = raw_np
    lh_np = np.empty((n_terms, n_heads), dtype=np.complex128)
    cdef double complex[:, ::1] lh = lh_np
    coef_np = np.empty(n_terms, dtype=np.complex128)
    cdef double complex[::1] coef = coef_np
    la_np = np.empty(n_heads, dtype=np.complex128)
    cdef double complex[::1] la = la_np
    cdef double[:, ::1] fy, fx1, fx2, fa1
    if use_fmap:
        fy = np.empty((ns, n_ch), dtype=np.float64)
        fx1 = np.empty((ns, n_ch), dtype=np.float64)
        fx2 = np.empty((ns, n_ch), dtype=np.float64)
        fa1 = np.empty((ns, b1.shape[1] if n_blocks else 1), dtype=np.float64)
    else:
        fy = fx1 = fx2 = fa1 = np.empty((1, 1), dtype=np.float64)
    cdef int b, j
    for b in range(nb):
        if eval_projected_row(
            &batch[b, 0], ns, term_perms, term_phases, term_flips, sub_a,
            use_marshall, use_fmap, nbr, stem_w, stem_b, n_blocks, dw_w, dw_b,
            ln_g, ln_b, w1, b1, w2, b2, res_g, fin_g, fin_b,
            head_w, head_b, head_c, log_bound,
            raw, feat, lh, coef, fy, fx1, fx2, fa1, &la[0],
        ):
            status[0] = 1
            return
        for j in range(n_heads):
            out[b, j] = la[j]


def run_block(
    signed char[:, :, ::1] configs,
    double complex[:, :, ::1] phimat,
    double complex[:, :, ::1] phiinv,
    double[:, ::1] offsets,
    double[::1] logabs,
    const double[:, :, :, ::1] randoms,
    # projection terms
    const long[:, ::1] term_perms,
    const double complex[::1] term_phases,
    const signed char[::1] term_flips,
    const signed char[::1] sub_a,
    int use_marshall,
    # feature map
    int use_fmap,
    const long[:, ::1] nbr,
    const double[:, ::1] stem_w, const double[::1] stem_b,
    int n_blocks,
    const double[:, :, ::1] dw_w, const double[:, ::1] dw_b,
    const double[:, ::1] ln_g, const double[:, ::1] ln_b,
    const double[:, :, ::1] w1, const double[:, ::1] b1,
    const double[:, :, ::1] w2, const double[:, ::1] b2,
    const double[:, ::1] res_g,
    const double[::1] fin_g, const double[::1] fin_b,
    # heads
    const double complex[:, :, ::1] head_w,
    const double complex[:, ::1] head_b,
    const double complex[::1] head_c,
    # thresholds
    double log_bound, double singular_floor, double raw_floor,
    long[::1] status,
):
    cdef int nc = configs.shape[0]
    cdef int n_rows = configs.shape[1]
    cdef int ns = configs.shape[2]
    cdef int n_sweeps = randoms.shape[1]
    cdef int moves = randoms.shape[2]
    cdef int n_terms = term_perms.shape[0]
    cdef int n_heads = head_w.shape[0]
    cdef int hidden = head_w.shape[1]
    cdef int n_feat = head_w.shape[2]
    cdef int n_ch = stem_b.shape[0] if use_fmap else 0
    cdef int kk = nbr.shape[1] if use_fmap else 0

    cdef int n_up = 0
    cdef int p
    for p in range(ns):
        if configs[0, 0, p] == 1:
            n_up += 1
    cdef int n_down = ns - n_up

    # scratch
    feat_np = np.empty(n_feat, dtype=np.float64)
    cdef double[::1] feat = feat_np
    raw_np = np.empty(ns, dtype=np.int8)
    cdef signed char[::1] raw = raw_np
    prop_np = np.empty(ns, dtype=np.int8)
    cdef signed char[::1] proposal = prop_np
    lh_np = np.empty((n_terms, n_heads), dtype=np.complex128)
    cdef double complex[:, ::1] lh = lh_np
    coef_np = np.empty(n_terms, dtype=np.complex128)
    cdef double complex[::1] coef = coef_np
    la_np = np.empty(n_heads, dtype=np.complex128)
    cdef double complex[::1] la_new = la_np
    work_np = np.empty((n_rows, n_rows), dtype=np.complex128)
    cdef double complex[:, ::1] work = work_np
    inv_np = np.empty((n_rows, n_rows), dtype=np.complex128)
    cdef double complex[:, ::1] inv_out = inv_np
    cdef double[:, ::1] fy, fx1, fx2, fa1
    if use_fmap:
        fy = np.empty((ns, n_ch), dtype=np.float64)
        fx1 = np.empty((ns, n_ch), dtype=np.float64)
        fx2 = np.empty((ns, n_ch), dtype=np.float64)
        fa1 = np.empty((ns, b1.shape[1] if n_blocks else 1), dtype=np.float64)
    else:
        fy = fx1 = fx2 = fa1 = np.empty((1, 1), dtype=np.float64)

    cdef long accepted = 0
    cdef int c, s, m, r, k_up, k_dn, i_up, i_dn, cnt, t, j, a, f, down_a, ok
    cdef double u0, u1, u2, u3, old_off, new_off, ref, pred, off_sum, ratio_sq
    cdef double new_logabs
    cdef double complex amp, pre, acc_lc, ratio, rh, sign
    cdef bint overflow = False

    for c in range(nc):
        for s in range(n_sweeps):
            for m in range(moves):
                u0 = randoms[c, s, m, 0]
                u1 = randoms[c, s, m, 1]
                u2 = randoms[c, s, m, 2]
                u3 = randoms[c, s, m, 3]
                r = <int>(u0 * n_rows)
                if r >= n_rows:
                    r = n_rows - 1
                k_up = <int>(u1 * n_up)
                if k_up >= n_up:
                    k_up = n_up - 1
                k_dn = <int>(u2 * n_down)
                if k_dn >= n_down:
                    k_dn = n_down - 1
                # k-th up / down site of row r
                cnt = 0
                i_up = 0
                for p in range(ns):
                    if configs[c, r, p] == 1:
                        if cnt == k_up:
                            i_up = p
                            break
                        cnt += 1
                cnt = 0
                i_dn = 0
                for p in range(ns):
                    if configs[c, r, p] == -1:
                        if cnt == k_dn:
                            i_dn = p
                            break
                        cnt += 1
                for p in range(ns):
                    proposal[p] = configs[c, r, p]
                proposal[i_up] = -1
                proposal[i_dn] = 1

                # projected log-amplitudes of the proposed row
                if eval_projected_row(
                    &proposal[0], ns, term_perms, term_phases, term_flips, sub_a,
                    use_marshall, use_fmap, nbr, stem_w, stem_b, n_blocks,
                    dw_w, dw_b, ln_g, ln_b, w1, b1, w2, b2, res_g, fin_g, fin_b,
                    head_w, head_b, head_c, log_bound,
                    raw, feat, lh, coef, fy, fx1, fx2, fa1, &la_new[0],
                ):
                    status[0] = 1
                    return accepted
                new_off = NEG_INF
                for j in range(n_heads):
                    if la_new[j].real > new_off:
                        new_off = la_new[j].real

                old_off = offsets[c, r]
                ratio = 0.0
                for j in range(n_heads):
                    if la_new[j].real <= NEG_INF:
                        continue
                    rh = cexp_(la_new[j] - old_off)
                    ratio = ratio + rh * phiinv[c, j, r]
                ratio_sq = ratio.real * ratio.real + ratio.imag * ratio.imag
                if not (u3 < ratio_sq):
                    continue
                if new_off <= NEG_INF or ratio_sq == 0.0:
                    continue
                pred = logabs[c] + 0.5 * log(ratio_sq) + old_off - new_off
                if pred <= singular_floor:
                    continue
                off_sum = 0.0
                for j in range(n_rows):
                    off_sum += offsets[c, j]
                off_sum = off_sum - old_off + new_off
                if pred + off_sum <= raw_floor:
                    continue

                # commit: new row, refreshed offset, full refactorization
                for j in range(n_heads):
                    work[r, j] = cexp_(la_new[j] - new_off)
                for p in range(n_rows):
                    if p == r:
                        continue
                    for j in range(n_heads):
                        work[p, j] = phimat[c, p, j]
                ok = invert_inplace(work, inv_out, n_rows, &new_logabs)
                if ok != 0:
                    continue
                for p in range(ns):
                    configs[c, r, p] = proposal[p]
                offsets[c, r] = new_off
                for j in range(n_heads):
                    phimat[c, r, j] = cexp_(la_new[j] - new_off)
                for p in range(n_rows):
                    for j in range(n_rows):
                        phiinv[c, p, j] = inv_out[p, j]
                logabs[c] = new_logabs
                accepted += 1
    return accepted
