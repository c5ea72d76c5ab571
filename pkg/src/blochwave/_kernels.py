"""Hot numeric kernels with numba and pure-numpy implementations.

The backend is selected once at import time from the environment variable
``BLOCHWAVE_NUMBA``: set it to ``"0"`` to force the numpy fallback path.
Anything else (or unset) uses the numba-compiled kernels when numba is
importable.  ``set_backend`` switches at runtime, which the benchmark and
the backend-equivalence tests rely on.

Kernels kept here are the ones that dominate profiling outside of LAPACK:
dense fiber-matrix assembly over many Floquet exponents, one-to-one
eigenvalue matching, and direct nonuniform trigonometric evaluation.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------------------
# numpy implementations


def _assemble_kdv_numpy(xis, modes, conv, span, omega, k):
    n = modes.size
    off = modes[:, None] - modes[None, :] + span
    T = conv[off]
    out = np.empty((xis.size, n, n), dtype=np.complex128)
    for f in range(xis.size):
        theta = xis[f] + 2.0 * np.pi * modes
        out[f] = (-1j * theta)[:, None] * (k * T)
        out[f, np.arange(n), np.arange(n)] += -1j * theta * omega + 1j * k**3 * theta**3
    return out


def _assemble_parabolic_numpy(xis, modes, conv, span, omega, k, diff):
    d = diff.shape[0]
    n = modes.size
    off = modes[:, None] - modes[None, :] + span
    out = np.empty((xis.size, d * n, d * n), dtype=np.complex128)
    idx = np.arange(n)
    for f in range(xis.size):
        theta = xis[f] + 2.0 * np.pi * modes
        row = -1j * theta
        for a in range(d):
            for b in range(d):
                blk = row[:, None] * (k * conv[a, b][off])
                blk[idx, idx] += -theta**2 * k**2 * diff[a, b]
                if a == b:
                    blk[idx, idx] += row * omega
                out[f, a * n:(a + 1) * n, b * n:(b + 1) * n] = blk
    return out


def _match_numpy(w1, w2):
    """Greedy one-to-one matching; returns distance from each w1 entry to
    its partner in w2 (inf when w2 is exhausted)."""
    n1, n2 = w1.size, w2.size
    dist = np.abs(w1[:, None] - w2[None, :])
    order = np.argsort(dist, axis=None)
    used1 = np.zeros(n1, dtype=bool)
    used2 = np.zeros(n2, dtype=bool)
    out = np.full(n1, np.inf)
    assigned = 0
    for flat in order:
        i, j = divmod(int(flat), n2)
        if used1[i] or used2[j]:
            continue
        out[i] = dist[i, j]
        used1[i] = True
        used2[j] = True
        assigned += 1
        if assigned == min(n1, n2):
            break
    return out


def _nufft_numpy(coeff, thetas, pts):
    out = np.zeros(pts.size, dtype=np.complex128)
    chunk = max(1, int(2e6) // max(1, thetas.size))
    for s in range(0, pts.size, chunk):
        sl = slice(s, s + chunk)
        out[sl] = np.exp(1j * np.outer(pts[sl], thetas)) @ coeff
    return out


# ---------------------------------------------------------------------------
# numba implementations


@njit(cache=True)
def _assemble_kdv_numba(xis, modes, conv, span, omega, k):  # pragma: no cover
    n = modes.size
    out = np.empty((xis.size, n, n), dtype=np.complex128)
    k3 = k**3
    for f in range(xis.size):
        xi = xis[f]
        for r in range(n):
            theta = xi + 2.0 * np.pi * modes[r]
            pre = -1j * theta
            for c in range(n):
                out[f, r, c] = pre * k * conv[modes[r] - modes[c] + span]
            out[f, r, r] += pre * omega + 1j * k3 * theta**3
    return out


@njit(cache=True)
def _assemble_parabolic_numba(xis, modes, conv, span, omega, k, diff):  # pragma: no cover
    d = diff.shape[0]
    n = modes.size
    out = np.empty((xis.size, d * n, d * n), dtype=np.complex128)
    for f in range(xis.size):
        xi = xis[f]
        for a in range(d):
            for b in range(d):
                for r in range(n):
                    theta = xi + 2.0 * np.pi * modes[r]
                    pre = -1j * theta
                    for c in range(n):
                        v = pre * k * conv[a, b, modes[r] - modes[c] + span]
                        if r == c:
                            v += -theta**2 * k**2 * diff[a, b]
                            if a == b:
                                v += pre * omega
                        out[f, a * n + r, b * n + c] = v
    return out


@njit(cache=True)
def _match_numba(w1, w2):  # pragma: no cover
    n1 = w1.size
    n2 = w2.size
    dist = np.empty((n1, n2))
    for i in range(n1):
        for j in range(n2):
            dist[i, j] = abs(w1[i] - w2[j])
    order = np.argsort(dist.ravel())
    used1 = np.zeros(n1, dtype=np.bool_)
    used2 = np.zeros(n2, dtype=np.bool_)
    out = np.full(n1, np.inf)
    assigned = 0
    target = n1 if n1 < n2 else n2
    for t in range(order.size):
        flat = order[t]
        i = flat // n2
        j = flat - i * n2
        if used1[i] or used2[j]:
            continue
        out[i] = dist[i, j]
        used1[i] = True
        used2[j] = True
        assigned += 1
        if assigned == target:
            break
    return out


@njit(cache=True)
def _nufft_numba(coeff, thetas, pts):  # pragma: no cover
    out = np.zeros(pts.size, dtype=np.complex128)
    for q in range(pts.size):
        acc = 0.0j
        for a in range(thetas.size):
            acc += coeff[a] * np.exp(1j * thetas[a] * pts[q])
        out[q] = acc
    return out


# ---------------------------------------------------------------------------
# dispatch

_BACKEND = "numpy"


def set_backend(name):
    """Select 'numba' or 'numpy'. Returns the backend actually in effect."""
    global _BACKEND
    if name == "numba" and not _HAVE_NUMBA:
        name = "numpy"
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    _BACKEND = name
    return _BACKEND


def get_backend():
    return _BACKEND


def assemble_kdv_fibers(xis, modes, conv, span, omega, k):
    xis = np.ascontiguousarray(xis, dtype=np.float64)
    modes = np.ascontiguousarray(modes, dtype=np.int64)
    conv = np.ascontiguousarray(conv, dtype=np.complex128)
    if _BACKEND == "numba":
        return _assemble_kdv_numba(xis, modes, conv, span, float(omega), float(k))
    return _assemble_kdv_numpy(xis, modes, conv, span, float(omega), float(k))


def assemble_parabolic_fibers(xis, modes, conv, span, omega, k, diff):
    xis = np.ascontiguousarray(xis, dtype=np.float64)
    modes = np.ascontiguousarray(modes, dtype=np.int64)
    conv = np.ascontiguousarray(conv, dtype=np.complex128)
    diff = np.ascontiguousarray(diff, dtype=np.float64)
    if _BACKEND == "numba":
        return _assemble_parabolic_numba(xis, modes, conv, span, float(omega), float(k), diff)
    return _assemble_parabolic_numpy(xis, modes, conv, span, float(omega), float(k), diff)


def match_eigenvalues(w1, w2):
    w1 = np.ascontiguousarray(w1, dtype=np.complex128)
    w2 = np.ascontiguousarray(w2, dtype=np.complex128)
    if _BACKEND == "numba":
        return _match_numba(w1, w2)
    return _match_numpy(w1, w2)


def nufft_eval(coeff, thetas, pts):
    coeff = np.ascontiguousarray(coeff, dtype=np.complex128)
    thetas = np.ascontiguousarray(thetas, dtype=np.float64)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if _BACKEND == "numba":
        return _nufft_numba(coeff, thetas, pts)
    return _nufft_numpy(coeff, thetas, pts)


set_backend("numpy" if os.environ.get("BLOCHWAVE_NUMBA", "1") == "0" else "numba")
