"""Hot numeric kernels: numba-jitted inner loops with a pure-numpy fallback.

The jitted path is the default. Setting the environment variable
``FTL_NO_NUMBA=1`` (checked once, at import) selects the numpy fallback;
the fallback is also used automatically when numba is not importable.
``USING_NUMBA`` reports which path is live. Both paths implement the same
algorithms with the same floating-point operation order per element, so
results agree to machine precision (see tests/test_kernels.py and
benchmarks/bench_kernels.py).
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "FTL_NO_NUMBA"


def _numba_disabled() -> bool:
    return os.environ.get(_ENV_FLAG, "").strip().lower() in {"1", "true", "yes"}


# ---------------------------------------------------------------------------
# Cyclic Jacobi eigensolver core.
#
# Mutates `a` (symmetric, d x d) toward diagonal form and accumulates the
# rotations into `v`; after return, diag(a) holds eigenvalues and the columns
# of `v` the matching eigenvectors. Returns the number of sweeps used.
# Rotation formulas follow the classical stable parametrization
# (t = sign(theta) / (|theta| + sqrt(theta^2 + 1))).
# ---------------------------------------------------------------------------


def _jacobi_numpy(a: np.ndarray, v: np.ndarray, tol: float, max_sweeps: int) -> int:
    d = a.shape[0]
    sweeps = 0
    while sweeps < max_sweeps:
        off2 = np.sum(a * a) - np.sum(np.diag(a) ** 2)
        if off2 <= tol * tol:
            break
        sweeps += 1
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                # entries drowned out by the diagonal: zeroing them directly
                # is cheaper than a rotation and loses nothing at f64
                if abs(apq) <= 1.0e-36 * (abs(app) + abs(aqq)):
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return sweeps


def _jacobi_loops(a, v, tol, max_sweeps):  # pragma: no cover - jitted
    d = a.shape[0]
    sweeps = 0
    while sweeps < max_sweeps:
        off2 = 0.0
        for i in range(d - 1):
            for j in range(i + 1, d):
                off2 += 2.0 * a[i, j] * a[i, j]
        if off2 <= tol * tol:
            break
        sweeps += 1
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                if abs(apq) <= 1.0e-36 * (abs(app) + abs(aqq)):
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    continue
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(d):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(d):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(d):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return sweeps


# ---------------------------------------------------------------------------
# Nearest-center scan: for each row of `probes`, the index of the closest row
# of `centers` in squared euclidean distance, first index winning ties.
# ---------------------------------------------------------------------------

_CHUNK = 2048  # probe rows per numpy broadcast block, keeps memory bounded


def _nearest_center_numpy(probes: np.ndarray, centers: np.ndarray) -> np.ndarray:
    n = probes.shape[0]
    out = np.empty(n, dtype=np.int64)
    for start in range(0, n, _CHUNK):
        block = probes[start : start + _CHUNK]
        d2 = np.sum((block[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        out[start : start + _CHUNK] = np.argmin(d2, axis=1)
    return out


def _nearest_center_loops(probes, centers):  # pragma: no cover - jitted
    n = probes.shape[0]
    m = centers.shape[0]
    d = probes.shape[1]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = 0
        best_d2 = np.inf
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = probes[i, k] - centers[j, k]
                acc += diff * diff
            if acc < best_d2:
                best_d2 = acc
                best = j
        out[i] = best
    return out


if _numba_disabled():
    USING_NUMBA = False
else:
    try:
        from numba import njit

        _jacobi_loops = njit(cache=True)(_jacobi_loops)
        _nearest_center_loops = njit(cache=True)(_nearest_center_loops)
        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USING_NUMBA = False


def jacobi_eigh_inplace(a: np.ndarray, v: np.ndarray, tol: float, max_sweeps: int) -> int:
    """Diagonalize symmetric `a` in place, rotations accumulated into `v`."""
    if USING_NUMBA:
        return int(_jacobi_loops(a, v, tol, max_sweeps))
    return _jacobi_numpy(a, v, tol, max_sweeps)


def nearest_center(probes: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the nearest center per probe row; ties go to the lowest index."""
    probes = np.ascontiguousarray(probes, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    if USING_NUMBA:
        return _nearest_center_loops(probes, centers)
    return _nearest_center_numpy(probes, centers)


def kernel_mode() -> str:
    """Human-readable name of the active kernel path."""
    return "numba" if USING_NUMBA else "numpy"
