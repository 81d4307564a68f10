# cython: language_level=3
"""Compiled kernels: LFSR bit generation, state propagation and the joint
estimator loop. ``corrkal._fallback`` holds the pure-Python equivalents."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite

cnp.import_array()


def lfsr_bits(Py_ssize_t L, long long state, int order, long long[::1] taps):
    cdef long long mask = (1LL << order) - 1
    cdef long long s = state
    cdef int top = order - 1
    cdef Py_ssize_t t, k, ntaps = taps.shape[0]
    cdef long long fb
    out = np.empty(L, dtype=np.int64)
    cdef long long[::1] o = out
    for t in range(L):
        o[t] = (s >> top) & 1
        fb = 0
        for k in range(ntaps):
            fb ^= (s >> (taps[k] - 1)) & 1
        s = ((s << 1) | fb) & mask
    return out


def propagate_states(const double[::1] f, const double[::1] g, const double[::1] u, const double[:, ::1] w):
    cdef Py_ssize_t n = f.shape[0], L = u.shape[0], t, i
    x = np.zeros((n, L))
    cdef double[:, ::1] xv = x
    cdef double[::1] cur = np.zeros(n), nxt = np.zeros(n)
    cdef double acc
    for t in range(L - 1):
        for i in range(n):
            xv[i, t] = cur[i]
        for i in range(n):
            acc = -f[i] * cur[0]
            if i + 1 < n:
                acc += cur[i + 1]
            nxt[i] = acc + g[i] * u[t] + w[i, t]
        for i in range(n):
            cur[i] = nxt[i]
    if L:
        for i in range(n):
            xv[i, L - 1] = cur[i]
    return x


cdef bint _schur_stable(double[::1] c, double[::1] a, double[::1] b):
    # Step-down test on z^m + c_1 z^(m-1) + ... + c_m.
    cdef Py_ssize_t m = c.shape[0], i
    cdef double k, den
    a[0] = 1.0
    for i in range(m):
        a[i + 1] = c[i]
    while m > 0:
        k = a[m]
        if not (k < 1.0 and k > -1.0):
            return False
        den = 1.0 - k * k
        for i in range(m):
            b[i] = (a[i] - k * a[m - i]) / den
        for i in range(m):
            a[i] = b[i]
        m -= 1
    return True


cdef inline void _push(double[::1] h, double value):
    cdef Py_ssize_t i
    for i in range(h.shape[0] - 1, 0, -1):
        h[i] = h[i - 1]
    if h.shape[0]:
        h[0] = value


cdef inline void _push_rows(double[:, ::1] h, double[::1] row):
    cdef Py_ssize_t i, j, n = h.shape[0]
    for i in range(n - 1, 0, -1):
        for j in range(h.shape[1]):
            h[i, j] = h[i - 1, j]
    for j in range(h.shape[1]):
        h[0, j] = row[j]


def joint_loop(
    double[::1] u, double[::1] y, int n, int n_j, int algo,
    double[::1] T, double[:, ::1] Q_bar, double[:, ::1] Q, double[::1] S, double R,
    double p0, double[::1] theta0, bint reflect, bint gamma_raw, bint use_vstar,
    double limit, reflect_fn,
):
    """Joint estimator over a whole record; see ``corrkal.rgels._joint_loop_reference``.

    ``algo`` is 0 (decorrelated KF), 1 (standard KF) or 2 (augmented KF).
    Returns ``(theta_bar, x_hat, P_pred, status)``.
    """
    from corrkal.filters import FilterDivergenceError

    cdef Py_ssize_t L = u.shape[0], ns = 2 * n + 1 + n_j, t, i, j, k
    cdef bint aug = algo == 2
    theta_out = np.zeros((ns, L))
    xhat_out = np.zeros((n, L))
    P_pred_out = np.zeros((n, n))
    cdef double[:, ::1] th_o = theta_out, xh_o = xhat_out, Pp = P_pred_out

    cdef double[::1] th = np.array(theta0, dtype=float)
    cdef double[:, ::1] P = p0 * np.eye(ns)
    cdef double[::1] aux = np.array(theta0, dtype=float)
    cdef double[::1] xh = np.zeros(n), xp = np.zeros(n), xprev = np.zeros(n)
    cdef double[::1] wh = np.zeros(n), K = np.zeros(n), kw = np.zeros(n)
    cdef double[:, ::1] Pk = np.zeros((n, n)), FP = np.zeros((n, n)), F = np.zeros((n, n))
    cdef double[:, ::1] Pa = np.zeros((2 * n, 2 * n)), AP = np.zeros((n, 2 * n))
    cdef double[::1] x1h = np.zeros(n), uh = np.zeros(n), yh = np.zeros(n)
    cdef double[::1] vh = np.zeros(n_j), vsh = np.zeros(n_j)
    cdef double[:, ::1] wbh = np.zeros((n, n)), wrh = np.zeros((n, n))
    cdef double[::1] wvec = np.zeros(n), wbvec = np.zeros(n)
    cdef double[::1] phi = np.zeros(ns), Pphi = np.zeros(ns), gain = np.zeros(ns)
    cdef double[::1] poly = np.zeros(max(n, n_j)), sa = np.zeros(max(n, n_j) + 1), sb = np.zeros(max(n, n_j) + 1)
    cdef double[::1] stab
    cdef double u_prev = 0.0, y_prev = 0.0, s, nu, d, acc, denom, e, gamma, beta, norm, vstar, v, vstar_prev
    cdef double R_gain = R

    if aug:
        for i in range(n):
            for j in range(n):
                Pa[n + i, n + j] = Q[i, j]

    # auxiliary parameters from theta0
    _auxiliary(th, aux, T, n, n_j, reflect, reflect_fn, poly, sa, sb)
    if use_vstar:
        acc = 0.0
        for i in range(n_j):
            acc += th[2 * n + 1 + i] * th[2 * n + 1 + i]
        R_gain = R * (1.0 + acc)

    for t in range(L):
        # ---- filter step with the auxiliary model
        for i in range(n):
            xprev[i] = xh[i]
            for j in range(n):
                F[i, j] = 0.0
            F[i, 0] = -aux[i]
            if i + 1 < n:
                F[i, i + 1] = 1.0
        d = aux[2 * n]
        if not aug:
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += F[i, j] * xh[j]
                xp[i] = acc + aux[n + i] * u_prev + T[i] * y_prev
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc += F[i, k] * Pk[k, j]
                    FP[i, j] = acc
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc += FP[i, k] * F[j, k]
                    Pp[i, j] = acc + Q_bar[i, j]
            s = Pp[0, 0] + R_gain
            if not (s > 0 and isfinite(s)):
                raise FilterDivergenceError(f"innovation variance {s} at t={t}")
            for i in range(n):
                K[i] = Pp[i, 0] / s
            nu = y[t] - xp[0] - d * u[t]
            for i in range(n):
                xh[i] = xp[i] + K[i] * nu
            for i in range(n):
                for j in range(n):
                    Pk[i, j] = Pp[i, j] - K[i] * Pp[0, j]
            for i in range(n):
                for j in range(i + 1, n):
                    acc = 0.5 * (Pk[i, j] + Pk[j, i])
                    Pk[i, j] = acc
                    Pk[j, i] = acc
        else:
            acc = 0.0
            for i in range(n_j):
                acc += aux[2 * n + 1 + i] * vh[i]
            e = y[t] - acc
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += F[i, j] * xh[j]
                xp[i] = acc + aux[n + i] * u_prev + wh[i]
            # A = [F I]; AP = A Pa; Pp = AP A^T
            for i in range(n):
                for j in range(2 * n):
                    acc = 0.0
                    for k in range(n):
                        acc += F[i, k] * Pa[k, j]
                    AP[i, j] = acc + Pa[n + i, j]
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc += AP[i, k] * F[j, k]
                    Pp[i, j] = acc + AP[i, n + j]
            for i in range(n):
                for j in range(i + 1, n):
                    acc = 0.5 * (Pp[i, j] + Pp[j, i])
                    Pp[i, j] = acc
                    Pp[j, i] = acc
            s = Pp[0, 0] + R_gain
            if not (s > 0 and isfinite(s)):
                raise FilterDivergenceError(f"innovation variance {s} at t={t}")
            for i in range(n):
                K[i] = Pp[i, 0] / s
                kw[i] = S[i] / s
            nu = e - xp[0] - d * u[t]
            for i in range(n):
                for j in range(n):
                    Pa[i, j] = Pp[i, j] - K[i] * Pp[0, j]
                    Pa[n + i, n + j] = Q[i, j] - kw[i] * S[j]
                    Pa[i, n + j] = -(K[i] * S[j])
            for i in range(n):
                for j in range(n):
                    Pa[n + j, i] = Pa[i, n + j]
            for i in range(2 * n):
                for j in range(i + 1, 2 * n):
                    acc = 0.5 * (Pa[i, j] + Pa[j, i])
                    Pa[i, j] = acc
                    Pa[j, i] = acc
            for i in range(n):
                xh[i] = xp[i] + K[i] * nu
                wh[i] = kw[i] * nu

        # ---- delayed process-noise reconstruction for t-1
        if t > 0:
            if n_j:
                vstar_prev = vsh[0]
            else:
                vstar_prev = y_prev - xprev[0] - d * u_prev
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += F[i, j] * xprev[j]
                wvec[i] = xh[i] - acc - aux[n + i] * u_prev - T[i] * (xprev[0] + d * u_prev)
                wbvec[i] = wvec[i] - T[i] * vstar_prev
            _push_rows(wrh, wvec)
            _push_rows(wbh, wbvec)

        # ---- regression and RLS
        for i in range(n):
            phi[i] = -x1h[i]
            phi[n + i] = uh[i]
        phi[2 * n] = u[t]
        for i in range(n_j):
            phi[2 * n + 1 + i] = vh[i]
        gamma = 0.0
        for i in range(n):
            gamma += wrh[i, i] if gamma_raw else wbh[i, i]
        beta = 0.0
        for i in range(n):
            beta += T[i] * yh[i]
        for i in range(ns):
            acc = 0.0
            for j in range(ns):
                acc += P[i, j] * phi[j]
            Pphi[i] = acc
        acc = 0.0
        for i in range(ns):
            acc += phi[i] * Pphi[i]
        denom = 1.0 + acc
        acc = 0.0
        for i in range(ns):
            gain[i] = Pphi[i] / denom
            acc += phi[i] * th[i]
        e = y[t] - gamma - beta - acc
        norm = 0.0
        for i in range(ns):
            th[i] = th[i] + gain[i] * e
            norm += th[i] * th[i]
            th_o[i, t] = th[i]
        for i in range(ns):
            for j in range(ns):
                P[i, j] = P[i, j] - gain[i] * Pphi[j]
        for i in range(ns):
            for j in range(i + 1, ns):
                acc = 0.5 * (P[i, j] + P[j, i])
                P[i, j] = acc
                P[j, i] = acc
        norm = sqrt(norm)
        if not norm <= limit:
            return theta_out, xhat_out, np.zeros((n, n)), t

        # ---- auxiliary model and measurement-noise reconstruction
        _auxiliary(th, aux, T, n, n_j, reflect, reflect_fn, poly, sa, sb)
        if use_vstar:
            acc = 0.0
            for i in range(n_j):
                acc += aux[2 * n + 1 + i] * aux[2 * n + 1 + i]
            R_gain = R * (1.0 + acc)
        d = aux[2 * n]
        vstar = y[t] - xh[0] - d * u[t]
        acc = 0.0
        for i in range(n_j):
            acc += aux[2 * n + 1 + i] * vh[i]
        v = vstar - acc
        _push(vsh, vstar)
        _push(vh, v)
        _push(x1h, xh[0])
        _push(uh, u[t])
        _push(yh, y[t])
        u_prev = u[t]
        y_prev = y[t]
        for i in range(n):
            xh_o[i, t] = xh[i]
    return theta_out, xhat_out, P_pred_out, -1


cdef void _auxiliary(double[::1] th, double[::1] aux, double[::1] T, int n, int n_j,
                     bint reflect, reflect_fn, double[::1] poly, double[::1] sa, double[::1] sb):
    cdef Py_ssize_t i
    cdef double[::1] stab
    for i in range(th.shape[0]):
        aux[i] = th[i]
    if not reflect:
        return
    for i in range(n):
        poly[i] = th[i] - T[i]
    if not _schur_stable(poly[:n], sa, sb):
        stab = np.asarray(reflect_fn(np.asarray(poly[:n]).copy()), dtype=float)
        for i in range(n):
            aux[i] = stab[i] + T[i]
    if n_j:
        for i in range(n_j):
            poly[i] = th[2 * n + 1 + i]
        if not _schur_stable(poly[:n_j], sa, sb):
            stab = np.asarray(reflect_fn(np.asarray(poly[:n_j]).copy()), dtype=float)
            for i in range(n_j):
                aux[2 * n + 1 + i] = stab[i]
