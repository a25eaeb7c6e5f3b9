# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MLP kernels: mean cross-entropy, its gradient and exact HVP.

Same contract and flat parameter layout as ``_pykernels``. Per-sample sums
run in a fixed order and samples accumulate in index order, so results are
deterministic but may differ from the numpy backend in the last ulp.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, tanh, fabs

from tavlab._pykernels import logits  # not hot; shared with the fallback

cnp.import_array()

cdef extern from *:
    # lets the compiler assume the row pointers in the blocked loops do not overlap
    ctypedef double* dptr "double * __restrict__"
    ctypedef const double* cdptr "const double * __restrict__"

cdef enum:
    IDENTITY = 0
    RELU = 1
    SIGMOID = 2
    TANH = 3

cdef enum:
    MODE_LOSS = 0
    MODE_GRAD = 1
    MODE_HVP = 2


cdef inline void _act(int kind, double z, double* f, double* d1, double* d2) noexcept nogil:
    cdef double s, e, t
    if kind == RELU:
        if z > 0.0:
            f[0] = z
            d1[0] = 1.0
        else:
            f[0] = 0.0
            d1[0] = 0.0
        d2[0] = 0.0
    elif kind == SIGMOID:
        e = exp(-fabs(z))
        if z >= 0.0:
            s = 1.0 / (1.0 + e)
        else:
            s = e / (1.0 + e)
        f[0] = s
        d1[0] = s * (1.0 - s)
        d2[0] = d1[0] * (1.0 - 2.0 * s)
    elif kind == TANH:
        t = tanh(z)
        f[0] = t
        d1[0] = 1.0 - t * t
        d2[0] = -2.0 * t * d1[0]
    else:
        f[0] = z
        d1[0] = 1.0
        d2[0] = 0.0


cdef void _rows_times(const double* W, const double* V, Py_ssize_t dout, Py_ssize_t din,
                      const double* Ain, const double* RAin, double* S, Py_ssize_t n) noexcept nogil:
    # S[r, :] = sum_c W[r, c] * Ain[c, :] (+ V[r, c] * ... when RAin is given:
    # S[r, :] = sum_c V[r, c] * Ain[c, :] + W[r, c] * RAin[c, :]), inputs in
    # ascending order. Four output rows share each load of the inputs.
    cdef Py_ssize_t r, c, i
    cdef double w0, w1, w2, w3, v0, v1, v2, v3, x, rx
    cdef dptr s0
    cdef dptr s1
    cdef dptr s2
    cdef dptr s3
    cdef cdptr ac
    cdef cdptr rac
    for r in range(dout * n):
        S[r] = 0.0
    r = 0
    while r + 4 <= dout:
        s0 = S + r * n
        s1 = s0 + n
        s2 = s1 + n
        s3 = s2 + n
        for c in range(din):
            ac = Ain + c * n
            w0 = W[r * din + c]
            w1 = W[(r + 1) * din + c]
            w2 = W[(r + 2) * din + c]
            w3 = W[(r + 3) * din + c]
            if RAin == NULL:
                for i in range(n):
                    x = ac[i]
                    s0[i] = s0[i] + w0 * x
                    s1[i] = s1[i] + w1 * x
                    s2[i] = s2[i] + w2 * x
                    s3[i] = s3[i] + w3 * x
            else:
                rac = RAin + c * n
                v0 = V[r * din + c]
                v1 = V[(r + 1) * din + c]
                v2 = V[(r + 2) * din + c]
                v3 = V[(r + 3) * din + c]
                for i in range(n):
                    x = ac[i]
                    rx = rac[i]
                    s0[i] = s0[i] + v0 * x + w0 * rx
                    s1[i] = s1[i] + v1 * x + w1 * rx
                    s2[i] = s2[i] + v2 * x + w2 * rx
                    s3[i] = s3[i] + v3 * x + w3 * rx
        r = r + 4
    while r < dout:
        s0 = S + r * n
        for c in range(din):
            ac = Ain + c * n
            w0 = W[r * din + c]
            if RAin == NULL:
                for i in range(n):
                    s0[i] = s0[i] + w0 * ac[i]
            else:
                rac = RAin + c * n
                v0 = V[r * din + c]
                for i in range(n):
                    s0[i] = s0[i] + v0 * ac[i] + w0 * rac[i]
        r = r + 1


cdef void _cols_times(const double* W, const double* V, Py_ssize_t dout, Py_ssize_t din,
                      const double* D, const double* RD, double* B, Py_ssize_t n) noexcept nogil:
    # B[c, :] = sum_r W[r, c] * D[r, :] (with RD: sum_r V[r, c] * D[r, :] +
    # W[r, c] * RD[r, :]), rows in ascending order, four columns at a time.
    cdef Py_ssize_t r, c, i
    cdef double w0, w1, w2, w3, v0, v1, v2, v3, x, rx
    cdef dptr b0
    cdef dptr b1
    cdef dptr b2
    cdef dptr b3
    cdef cdptr dr
    cdef cdptr rdr
    for c in range(din * n):
        B[c] = 0.0
    c = 0
    while c + 4 <= din:
        b0 = B + c * n
        b1 = b0 + n
        b2 = b1 + n
        b3 = b2 + n
        for r in range(dout):
            dr = D + r * n
            w0 = W[r * din + c]
            w1 = W[r * din + c + 1]
            w2 = W[r * din + c + 2]
            w3 = W[r * din + c + 3]
            if RD == NULL:
                for i in range(n):
                    x = dr[i]
                    b0[i] = b0[i] + w0 * x
                    b1[i] = b1[i] + w1 * x
                    b2[i] = b2[i] + w2 * x
                    b3[i] = b3[i] + w3 * x
            else:
                rdr = RD + r * n
                v0 = V[r * din + c]
                v1 = V[r * din + c + 1]
                v2 = V[r * din + c + 2]
                v3 = V[r * din + c + 3]
                for i in range(n):
                    x = dr[i]
                    rx = rdr[i]
                    b0[i] = b0[i] + v0 * x + w0 * rx
                    b1[i] = b1[i] + v1 * x + w1 * rx
                    b2[i] = b2[i] + v2 * x + w2 * rx
                    b3[i] = b3[i] + v3 * x + w3 * rx
        c = c + 4
    while c < din:
        b0 = B + c * n
        for r in range(dout):
            dr = D + r * n
            w0 = W[r * din + c]
            if RD == NULL:
                for i in range(n):
                    b0[i] = b0[i] + w0 * dr[i]
            else:
                rdr = RD + r * n
                v0 = V[r * din + c]
                for i in range(n):
                    b0[i] = b0[i] + v0 * dr[i] + w0 * rdr[i]
        c = c + 1


cdef void _grad_rows(const double* D, const double* RD, const double* AT, const double* RAT,
                     Py_ssize_t units, Py_ssize_t n, Py_ssize_t dout, Py_ssize_t din,
                     double* G) noexcept nogil:
    # G[r, c] += D[r, i] * AT[i, c] (with RD: RD[r, i] * AT[i, c] +
    # D[r, i] * RAT[i, c]) accumulated over samples in index order; AT rows
    # are sample-major so the inner loop runs over contiguous inputs.
    cdef Py_ssize_t r, c, i
    cdef double d0, d1, d2, d3, e0, e1, e2, e3, x, rx
    cdef dptr g0
    cdef dptr g1
    cdef dptr g2
    cdef dptr g3
    cdef cdptr ac
    cdef cdptr rac
    r = 0
    while r + 4 <= dout:
        g0 = G + r * din
        g1 = g0 + din
        g2 = g1 + din
        g3 = g2 + din
        for i in range(n):
            ac = AT + i * units
            d0 = D[r * n + i]
            d1 = D[(r + 1) * n + i]
            d2 = D[(r + 2) * n + i]
            d3 = D[(r + 3) * n + i]
            if RD == NULL:
                for c in range(din):
                    x = ac[c]
                    g0[c] = g0[c] + d0 * x
                    g1[c] = g1[c] + d1 * x
                    g2[c] = g2[c] + d2 * x
                    g3[c] = g3[c] + d3 * x
            else:
                rac = RAT + i * units
                e0 = RD[r * n + i]
                e1 = RD[(r + 1) * n + i]
                e2 = RD[(r + 2) * n + i]
                e3 = RD[(r + 3) * n + i]
                for c in range(din):
                    x = ac[c]
                    rx = rac[c]
                    g0[c] = g0[c] + (e0 * x + d0 * rx)
                    g1[c] = g1[c] + (e1 * x + d1 * rx)
                    g2[c] = g2[c] + (e2 * x + d2 * rx)
                    g3[c] = g3[c] + (e3 * x + d3 * rx)
        r = r + 4
    while r < dout:
        g0 = G + r * din
        for i in range(n):
            ac = AT + i * units
            d0 = D[r * n + i]
            if RD == NULL:
                for c in range(din):
                    g0[c] = g0[c] + d0 * ac[c]
            else:
                rac = RAT + i * units
                e0 = RD[r * n + i]
                for c in range(din):
                    g0[c] = g0[c] + (e0 * ac[c] + d0 * rac[c])
        r = r + 1


cdef double _run(const double* theta, const Py_ssize_t[::1] dims,
                 const Py_ssize_t[::1] woff, const Py_ssize_t[::1] boff,
                 const Py_ssize_t[::1] aoff, bint bias, Py_ssize_t n, Py_ssize_t units,
                 const double* X, const long long* y, int act,
                 const double* v, int mode, double* out,
                 double* A, double* H, double* D1, double* D2, double* DL,
                 double* RA, double* RH, double* RD, double* AT, double* RAT,
                 double* B, double* RB) noexcept nogil:
    # Unit-major buffers (row u holds unit u for every sample) keep the
    # sample index innermost, so the hot loops are independent across
    # samples and vectorize. Each per-sample sum still runs in the same
    # order as a sample-at-a-time loop: inputs ascending, then bias; the
    # weight gradient accumulates samples in index order.
    cdef Py_ssize_t L = dims.shape[0] - 1
    cdef Py_ssize_t i, l, r, c, k, u, din, dout, wo, bo, ai, ao, zo, K, yi
    cdef double w, vw, m, se, lse, p, dot, dr, rdr, t
    cdef double total = 0.0
    cdef double invn = 1.0 / n
    cdef bint hv = mode == MODE_HVP
    cdef double* S
    cdef double* RS
    cdef double* Ac
    cdef double* RAc
    cdef double* g

    for c in range(dims[0]):
        for i in range(n):
            A[c * n + i] = X[i * dims[0] + c]
            RA[c * n + i] = 0.0

    for l in range(L):
        din = dims[l]
        dout = dims[l + 1]
        wo = woff[l]
        bo = boff[l]
        ai = aoff[l]
        ao = aoff[l + 1]
        _rows_times(theta + wo, NULL, dout, din, A + ai * n, NULL, H + ao * n, n)
        if hv:
            _rows_times(theta + wo, v + wo, dout, din, A + ai * n, RA + ai * n, RH + ao * n, n)
        for r in range(dout):
            if bias:
                S = H + (ao + r) * n
                w = theta[bo + r]
                for i in range(n):
                    S[i] = S[i] + w
                if hv:
                    RS = RH + (ao + r) * n
                    vw = v[bo + r]
                    for i in range(n):
                        RS[i] = RS[i] + vw
            u = (ao + r) * n
            if l < L - 1:
                for i in range(n):
                    _act(act, H[u + i], &A[u + i], &D1[u + i], &D2[u + i])
                if hv:
                    for i in range(n):
                        RA[u + i] = D1[u + i] * RH[u + i]
            else:
                for i in range(n):
                    A[u + i] = H[u + i]
                if hv:
                    for i in range(n):
                        RA[u + i] = RH[u + i]

    zo = aoff[L]
    K = dims[L]
    for i in range(n):
        yi = <Py_ssize_t> y[i]
        m = A[zo * n + i]
        for k in range(1, K):
            t = A[(zo + k) * n + i]
            if t > m:
                m = t
        se = 0.0
        for k in range(K):
            se = se + exp(A[(zo + k) * n + i] - m)
        lse = log(se) + m
        total = total + (lse - A[(zo + yi) * n + i])
        if mode == MODE_LOSS:
            continue
        dot = 0.0
        for k in range(K):
            p = exp(A[(zo + k) * n + i] - m) / se
            DL[(zo + k) * n + i] = p
            if hv:
                dot = dot + p * RA[(zo + k) * n + i]
        for k in range(K):
            p = DL[(zo + k) * n + i]
            if hv:
                RD[(zo + k) * n + i] = (p * RA[(zo + k) * n + i] - p * dot) * invn
            if k == yi:
                p = p - 1.0
            DL[(zo + k) * n + i] = p * invn
    if mode == MODE_LOSS:
        return total * invn

    for u in range(zo):
        for i in range(n):
            AT[i * units + u] = A[u * n + i]
            if hv:
                RAT[i * units + u] = RA[u * n + i]

    for l in range(L - 1, -1, -1):
        din = dims[l]
        dout = dims[l + 1]
        wo = woff[l]
        bo = boff[l]
        ai = aoff[l]
        ao = aoff[l + 1]
        if hv:
            _grad_rows(DL + ao * n, RD + ao * n, AT + ai, RAT + ai, units, n, dout, din, out + wo)
        else:
            _grad_rows(DL + ao * n, NULL, AT + ai, NULL, units, n, dout, din, out + wo)
        if bias:
            for r in range(dout):
                S = (RD if hv else DL) + (ao + r) * n
                for i in range(n):
                    out[bo + r] = out[bo + r] + S[i]
        if l > 0:
            _cols_times(theta + wo, NULL, dout, din, DL + ao * n, NULL, B, n)
            if hv:
                _cols_times(theta + wo, v + wo, dout, din, DL + ao * n, RD + ao * n, RB, n)
            for c in range(din):
                u = (ai + c) * n
                for i in range(n):
                    if hv:
                        RD[u + i] = D2[u + i] * RH[u + i] * B[c * n + i] + D1[u + i] * RB[c * n + i]
                    DL[u + i] = D1[u + i] * B[c * n + i]
    return total * invn


def _call(theta, dims, bias, X, y, act, v, int mode):
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    d = np.asarray(dims, dtype=np.intp)
    L = d.shape[0] - 1
    woff = np.empty(L, dtype=np.intp)
    boff = np.full(L, -1, dtype=np.intp)
    off = 0
    for l in range(L):
        woff[l] = off
        off += d[l] * d[l + 1]
        if bias:
            boff[l] = off
            off += d[l + 1]
    if theta.shape[0] != off:
        raise ValueError(f"theta has length {theta.shape[0]}, expected {off}")
    if X.ndim != 2 or X.shape[1] != d[0]:
        raise ValueError("input dimension mismatch")
    if y.shape[0] != X.shape[0]:
        raise ValueError("labels and inputs differ in length")
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if y.min() < 0 or y.max() >= d[L]:
        raise ValueError("label out of range")
    aoff = np.zeros(L + 1, dtype=np.intp)
    aoff[1:] = np.cumsum(d[:-1])
    units = int(d.sum())
    n = X.shape[0]
    if v is None:
        v = theta
    else:
        v = np.ascontiguousarray(v, dtype=np.float64)
        if v.shape[0] != off:
            raise ValueError("direction length mismatch")
    out = np.zeros(off)
    work = np.zeros((10, units, n))
    scratch = np.zeros((2, units * n))
    cdef const double[::1] tv = theta
    cdef const double[::1] vv = v
    cdef const Py_ssize_t[::1] dv = d
    cdef const Py_ssize_t[::1] wv = woff
    cdef const Py_ssize_t[::1] bv = boff
    cdef const Py_ssize_t[::1] av = aoff
    cdef const double[:, ::1] xv = X
    cdef const long long[::1] yv = y
    cdef double[::1] ov = out
    cdef double[:, :, ::1] wk = work
    cdef double[:, ::1] sc = scratch
    cdef bint b = bool(bias)
    cdef int ac = act
    cdef Py_ssize_t nn = n, uu = units
    cdef double value
    with nogil:
        value = _run(&tv[0], dv, wv, bv, av, b, nn, uu, &xv[0, 0], &yv[0], ac, &vv[0], mode,
                     &ov[0], &wk[0, 0, 0], &wk[1, 0, 0], &wk[2, 0, 0], &wk[3, 0, 0],
                     &wk[4, 0, 0], &wk[5, 0, 0], &wk[6, 0, 0], &wk[7, 0, 0], &wk[8, 0, 0],
                     &wk[9, 0, 0], &sc[0, 0], &sc[1, 0])
    return value, out


def loss(theta, dims, bias, X, y, act):
    return _call(theta, dims, bias, X, y, act, None, MODE_LOSS)[0]


def loss_grad(theta, dims, bias, X, y, act):
    return _call(theta, dims, bias, X, y, act, None, MODE_GRAD)


def hvp(theta, dims, bias, X, y, act, v):
    return _call(theta, dims, bias, X, y, act, v, MODE_HVP)[1]
