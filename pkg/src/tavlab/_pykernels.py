"""Numpy implementation of the MLP loss / gradient / Hessian-vector kernels.

This is the fallback used when the compiled ``_ckernels`` extension is not
available. Both modules expose the same functions with the same flat
parameter layout (see ``tavlab.network``), so callers never need to know
which one is active.
"""
import numpy as np

IDENTITY, RELU, SIGMOID, TANH = 0, 1, 2, 3


def _act(kind, z):
    """Return phi(z), phi'(z), phi''(z) elementwise."""
    if kind == RELU:
        pos = z > 0.0
        return np.where(pos, z, 0.0), pos.astype(np.float64), np.zeros_like(z)
    if kind == SIGMOID:
        e = np.exp(-np.abs(z))
        s = np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
        d1 = s * (1.0 - s)
        return s, d1, d1 * (1.0 - 2.0 * s)
    if kind == TANH:
        t = np.tanh(z)
        d1 = 1.0 - t * t
        return t, d1, -2.0 * t * d1
    if kind == IDENTITY:
        return z.copy(), np.ones_like(z), np.zeros_like(z)
    raise ValueError(f"unknown activation code {kind}")


def _unpack(theta, dims, bias):
    Ws, bs = [], []
    off = 0
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        Ws.append(theta[off:off + d_out * d_in].reshape(d_out, d_in))
        off += d_out * d_in
        if bias:
            bs.append(theta[off:off + d_out])
            off += d_out
        else:
            bs.append(None)
    return Ws, bs


def _pack(gWs, gbs, size):
    out = np.empty(size)
    off = 0
    for gW, gb in zip(gWs, gbs):
        out[off:off + gW.size] = gW.ravel()
        off += gW.size
        if gb is not None:
            out[off:off + gb.size] = gb
            off += gb.size
    return out


def _forward(Ws, bs, X, act):
    L = len(Ws)
    A = [X]
    H, D1, D2 = [], [], []
    for l in range(L):
        h = A[-1] @ Ws[l].T
        if bs[l] is not None:
            h = h + bs[l]
        H.append(h)
        if l < L - 1:
            f, d1, d2 = _act(act, h)
            A.append(f)
            D1.append(d1)
            D2.append(d2)
        else:
            A.append(h)
    return A, H, D1, D2


def _softmax(z):
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    return e / s, np.log(s) + m


def logits(theta, dims, bias, X, act):
    Ws, bs = _unpack(theta, dims, bias)
    return _forward(Ws, bs, X, act)[0][-1]


def loss(theta, dims, bias, X, y, act):
    z = logits(theta, dims, bias, X, act)
    _, lse = _softmax(z)
    n = X.shape[0]
    return float(np.sum(lse[:, 0] - z[np.arange(n), y]) / n)


def loss_grad(theta, dims, bias, X, y, act):
    Ws, bs = _unpack(theta, dims, bias)
    A, H, D1, _ = _forward(Ws, bs, X, act)
    n = X.shape[0]
    rows = np.arange(n)
    z = A[-1]
    p, lse = _softmax(z)
    value = float(np.sum(lse[:, 0] - z[rows, y]) / n)
    delta = p.copy()
    delta[rows, y] -= 1.0
    delta /= n
    L = len(Ws)
    gWs, gbs = [None] * L, [None] * L
    for l in range(L - 1, -1, -1):
        gWs[l] = delta.T @ A[l]
        gbs[l] = delta.sum(axis=0) if bs[l] is not None else None
        if l > 0:
            delta = (delta @ Ws[l]) * D1[l - 1]
    return value, _pack(gWs, gbs, theta.size)


def hvp(theta, dims, bias, X, y, act, v):
    """Exact Hessian-vector product by forward-over-reverse propagation."""
    Ws, bs = _unpack(theta, dims, bias)
    Vs, vbs = _unpack(v, dims, bias)
    A, H, D1, D2 = _forward(Ws, bs, X, act)
    n = X.shape[0]
    rows = np.arange(n)
    L = len(Ws)

    # directional derivatives of the forward pass
    RA = [np.zeros_like(X)]
    RH = []
    for l in range(L):
        rh = A[l] @ Vs[l].T + RA[l] @ Ws[l].T
        if vbs[l] is not None:
            rh = rh + vbs[l]
        RH.append(rh)
        RA.append(D1[l] * rh if l < L - 1 else rh)

    p, _ = _softmax(A[-1])
    delta = p.copy()
    delta[rows, y] -= 1.0
    rz = RH[-1]
    rdelta = p * rz - p * np.sum(p * rz, axis=1, keepdims=True)
    delta /= n
    rdelta /= n

    hWs, hbs = [None] * L, [None] * L
    for l in range(L - 1, -1, -1):
        hWs[l] = rdelta.T @ A[l] + delta.T @ RA[l]
        hbs[l] = rdelta.sum(axis=0) if bs[l] is not None else None
        if l > 0:
            back = delta @ Ws[l]
            rback = delta @ Vs[l] + rdelta @ Ws[l]
            rdelta = D2[l - 1] * RH[l - 1] * back + D1[l - 1] * rback
            delta = D1[l - 1] * back
    return _pack(hWs, hbs, theta.size)
