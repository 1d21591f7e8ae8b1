"""Hot loops: linear forward sweep and discrete adjoint sweep.

Each kernel exists twice: an explicit-loop version compiled with
``numba.njit`` and a vectorized numpy version.  The compiled path is used
when numba imports and the environment variable ``SVOC_NUMBA`` is not set
to ``0``; ``set_backend`` switches at runtime (used by the benchmark).

Weight tables are passed in compact form: ``a[d]`` is the singular weight
w[n][j] for d = n - j and 1 <= j (``a[0]`` is the diagonal weight) and
``b0[n]`` is the first-column weight w[n][0].  The trapezoid weight of
node j in row n is h/2 for j in {0, n} and h otherwise.

Kernel tables ``F`` and ``H`` have shape ``(N+1, N+1, n, n)`` with entry
``[i, j]`` the Jacobian at (t_i, t_j); zero-stride broadcast views are
fine for kernels that do not depend on the outer time.
"""

from __future__ import annotations

import os

import numpy as np

COND_LIMIT = 1e12

try:  # pragma: no cover - exercised implicitly
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False

_backend = "numba" if _HAVE_NUMBA and os.environ.get("SVOC_NUMBA", "1") != "0" else "numpy"


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


def set_threads(count: int) -> None:
    if _HAVE_NUMBA and count > 0:
        numba.set_num_threads(min(int(count), numba.config.NUMBA_NUM_THREADS))


def _inv_with_cond(M):
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError:
        return M, np.inf
    cond = np.abs(M).sum(axis=0).max() * np.abs(Minv).sum(axis=0).max()
    return Minv, cond


# ---------------------------------------------------------------------------
# forward sweep:  x_i = rhs_i + sum_{j=start}^{i} (W[i,j] F[i,j] + Q_i[j] H[i,j]) x_j

def _forward_loops(a, b0, h, F, H, rhs, start):
    N1, n, r = rhs.shape
    x = np.zeros((N1, n, r))
    eye = np.eye(n)
    for i in range(start, N1):
        acc = rhs[i].copy()
        for j in range(start, i):
            if j == 0:
                w = b0[i]
                qw = 0.5 * h
            else:
                w = a[i - j]
                qw = h
            for p in range(n):
                for s in range(n):
                    k = w * F[i, j, p, s] + qw * H[i, j, p, s]
                    if k != 0.0:
                        for c in range(r):
                            acc[p, c] += k * x[j, s, c]
        if i == 0:
            x[i] = acc
            continue
        M = eye - a[0] * F[i, i] - 0.5 * h * H[i, i]
        try:
            Minv = np.linalg.inv(M)
        except Exception:  # exactly singular
            Minv = eye * np.inf
        Minv = np.ascontiguousarray(Minv)
        cond = np.abs(M).sum(axis=0).max() * np.abs(Minv).sum(axis=0).max()
        if not (cond <= COND_LIMIT):
            return x, i, cond
        x[i] = Minv @ acc
    return x, -1, 0.0


def _forward_numpy(a, b0, h, F, H, rhs, start):
    N1, n, r = rhs.shape
    x = np.zeros((N1, n, r))
    eye = np.eye(n)
    for i in range(start, N1):
        acc = rhs[i].copy()
        if i > start:
            j = np.arange(start, i)
            w = a[i - j]
            qw = np.full(j.size, h)
            if start == 0:
                w[0] = b0[i]
                qw[0] = 0.5 * h
            K = w[:, None, None] * F[i, start:i] + qw[:, None, None] * H[i, start:i]
            acc += np.einsum("jps,jsc->pc", K, x[start:i])
        if i == 0:
            x[i] = acc
            continue
        M = eye - a[0] * F[i, i] - 0.5 * h * H[i, i]
        Minv, cond = _inv_with_cond(M)
        if not (cond <= COND_LIMIT):
            return x, i, cond
        x[i] = Minv @ acc
    return x, -1, 0.0


# ---------------------------------------------------------------------------
# adjoint sweep.  Unknowns p_0..p_{N-1} and the terminal mass phat_N = -pi_N/h:
#   pi_N = (I - a0 F[N,N]' - h/2 H[N,N]')^{-1} (c - h/2 src_N)
#   p_k  = src_k + (h/q_k) sum_{n=k}^{N} (W[n,k] F[n,k]' + Q_n[k] H[n,k]') phat_n
# with the n = k term implicit (absent for k = 0).

def _adjoint_loops(a, b0, h, F, H, src, cvec):
    N1, n = src.shape
    N = N1 - 1
    p = np.zeros((N1, n))
    eye = np.eye(n)
    M = eye - a[0] * F[N, N].T - 0.5 * h * H[N, N].T
    try:
        Minv = np.linalg.inv(M)
    except Exception:  # exactly singular
        Minv = eye * np.inf
    Minv = np.ascontiguousarray(Minv)
    cond = np.abs(M).sum(axis=0).max() * np.abs(Minv).sum(axis=0).max()
    if not (cond <= COND_LIMIT):
        return p, N, cond
    p[N] = -(Minv @ (cvec - 0.5 * h * src[N])) / h
    for k in range(N - 1, -1, -1):
        acc = src[k].copy()
        if k == 0:
            scale = 2.0
        else:
            scale = 1.0
        for m in range(k + 1, N1):
            if k == 0:
                w = b0[m]
                qw = 0.5 * h
            else:
                w = a[m - k]
                qw = h
            for s in range(n):
                tot = 0.0
                for t in range(n):
                    tot += (w * F[m, k, t, s] + qw * H[m, k, t, s]) * p[m, t]
                acc[s] += scale * tot
        if k == 0:
            p[k] = acc
            continue
        M = eye - a[0] * F[k, k].T - 0.5 * h * H[k, k].T
        try:
            Minv = np.linalg.inv(M)
        except Exception:  # exactly singular
            Minv = eye * np.inf
        Minv = np.ascontiguousarray(Minv)
        cond = np.abs(M).sum(axis=0).max() * np.abs(Minv).sum(axis=0).max()
        if not (cond <= COND_LIMIT):
            return p, k, cond
        p[k] = Minv @ acc
    return p, -1, 0.0


def _adjoint_numpy(a, b0, h, F, H, src, cvec):
    N1, n = src.shape
    N = N1 - 1
    p = np.zeros((N1, n))
    eye = np.eye(n)
    M = eye - a[0] * F[N, N].T - 0.5 * h * H[N, N].T
    Minv, cond = _inv_with_cond(M)
    if not (cond <= COND_LIMIT):
        return p, N, cond
    p[N] = -(Minv @ (cvec - 0.5 * h * src[N])) / h
    for k in range(N - 1, -1, -1):
        m = np.arange(k + 1, N1)
        if k == 0:
            w, qw, scale = b0[m], np.full(m.size, 0.5 * h), 2.0
        else:
            w, qw, scale = a[m - k], np.full(m.size, h), 1.0
        K = w[:, None, None] * F[k + 1:, k] + qw[:, None, None] * H[k + 1:, k]
        acc = src[k] + scale * np.einsum("mts,mt->s", K, p[k + 1:])
        if k == 0:
            p[k] = acc
            continue
        M = eye - a[0] * F[k, k].T - 0.5 * h * H[k, k].T
        Minv, cond = _inv_with_cond(M)
        if not (cond <= COND_LIMIT):
            return p, k, cond
        p[k] = Minv @ acc
    return p, -1, 0.0


# ---------------------------------------------------------------------------
# tail sums for outer-time independent kernels (before the h/q_k factor):
#   Sf_k = sum_{n>=k} W[n,k] phat_n,  Sg_k = sum_{n>=k} Q_n[k] phat_n

def _tail_loops(a, b0, h, phat):
    N1, n = phat.shape
    Sf = np.zeros((N1, n))
    Sg = np.zeros((N1, n))
    for s in range(n):
        acc = 0.0
        for k in range(N1 - 1, 0, -1):
            acc += phat[k, s]
            Sg[k, s] = h * acc - 0.5 * h * phat[k, s]
        Sg[0, s] = 0.5 * h * acc
        tot = 0.0
        for m in range(1, N1):
            tot += b0[m] * phat[m, s]
        Sf[0, s] = tot
        for k in range(1, N1):
            tot = 0.0
            for d in range(N1 - k):
                tot += a[d] * phat[k + d, s]
            Sf[k, s] = tot
    return Sf, Sg


def _tail_numpy(a, b0, h, phat):
    N1, n = phat.shape
    Sf = np.empty((N1, n))
    for s in range(n):
        # correlation: Sf_k = sum_d a[d] phat_{k+d}
        Sf[:, s] = np.correlate(phat[:, s], a, mode="full")[N1 - 1:]
    Sf[0] = (b0[1:, None] * phat[1:]).sum(axis=0)
    suffix = np.cumsum(phat[::-1], axis=0)[::-1]
    Sg = h * suffix - 0.5 * h * phat
    Sg[0] = 0.5 * h * suffix[1]
    return Sf, Sg


if _HAVE_NUMBA:
    _forward_nb = numba.njit(cache=True)(_forward_loops)
    _adjoint_nb = numba.njit(cache=True)(_adjoint_loops)
    _tail_nb = numba.njit(cache=True)(_tail_loops)


def _c(arr):
    return np.asarray(arr, dtype=np.float64)


def forward_sweep(a, b0, h, F, H, rhs, start=0):
    """Solve the lower-triangular linear Volterra system; ``rhs`` is (N+1, n, r)."""
    if _backend == "numba":
        return _forward_nb(_c(a), _c(b0), float(h), _c(F), _c(H), _c(rhs), int(start))
    return _forward_numpy(a, b0, h, F, H, rhs, start)


def adjoint_sweep(a, b0, h, F, H, src, cvec):
    if _backend == "numba":
        return _adjoint_nb(_c(a), _c(b0), float(h), _c(F), _c(H), _c(src), _c(cvec))
    return _adjoint_numpy(a, b0, h, F, H, src, cvec)


def tail_sums(a, b0, h, phat, q):
    """Return (h/q_k) * (Sf_k, Sg_k); see the comment above ``_tail_loops``."""
    if _backend == "numba":
        Sf, Sg = _tail_nb(_c(a), _c(b0), float(h), _c(phat))
    else:
        Sf, Sg = _tail_numpy(a, b0, h, phat)
    scale = (h / np.asarray(q))[:, None]
    return scale * Sf, scale * Sg
