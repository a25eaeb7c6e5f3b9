"""Small dense linear-algebra helpers over float64.

Parameter vectors are plain 1-D ``numpy.float64`` arrays and matrices are
2-D arrays; this module only adds the checked norms and the power-iteration
spectral norm used throughout the bound computations.
"""
import numpy as np

SPECTRAL_TOL = 1e-10
SPECTRAL_MAX_ITER = 5000
SPECTRAL_SEED = 0


class NonFiniteError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Power iteration ran out of iterations; ``estimate`` holds the last value."""

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


def as_vector(v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def check_finite(v, what="vector"):
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"non-finite {what}")
    return v


def norm2(v):
    v = check_finite(as_vector(v))
    # fixed index-order accumulation; BLAS dot may reorder
    return float(np.sqrt(np.add.reduce(v * v)))


def cosine(v, w):
    v = as_vector(v)
    w = as_vector(w)
    if v.shape != w.shape:
        raise ValueError("length mismatch")
    nv, nw = norm2(v), norm2(w)
    if nv == 0.0 or nw == 0.0:
        raise ValueError("undefined cosine")
    c = float(np.add.reduce(v * w)) / (nv * nw)
    return min(1.0, max(-1.0, c))


def spectral_norm(M, tol=SPECTRAL_TOL, max_iter=SPECTRAL_MAX_ITER, seed=SPECTRAL_SEED):
    """Largest singular value of ``M`` by power iteration on ``M^T M``.

    The start vector is drawn from ``seed`` so repeated calls agree bit for
    bit. Iteration stops once the estimate changes by less than ``tol``
    relative to itself.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError("expected a matrix")
    check_finite(M, "matrix")
    if M.size == 0 or not np.any(M):
        return 0.0
    x = np.random.default_rng(seed).standard_normal(M.shape[1])
    x /= np.linalg.norm(x)
    est = np.linalg.norm(M @ x)
    for _ in range(max_iter):
        y = M.T @ (M @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            # start vector in the null space; restart on a fixed axis
            x = np.zeros(M.shape[1])
            x[int(np.argmax(np.abs(M).sum(axis=0)))] = 1.0
            continue
        x = y / ny
        new = np.linalg.norm(M @ x)
        if abs(new - est) <= tol * new:
            return float(new)
        est = new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps", float(est))
