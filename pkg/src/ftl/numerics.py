"""Deterministic linear-algebra and randomness primitives.

Matrices and vectors are plain float64 numpy arrays. The symmetric
eigensolver is a cyclic Jacobi iteration (robust and simple for the
dimensions this package targets, d <= ~512); its hot loop lives in
ftl._kernels with a numba and a numpy path.

Randomness: every stream is a numpy PCG64 generator seeded through
SeedSequence, which is specified to produce identical output on all
platforms. Substreams are derived from a root seed plus a label path so
that independent pipeline pieces never share or reorder draws.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigInvalid, DegenerateSpectrum, DimensionMismatch, NonFinite, NonSymmetric

# Symmetry tolerance is scale-aware: |A - A^T| entries may grow with the
# magnitude of A itself (e.g. unnormalized covariance accumulations).
SYM_TOL = 1e-10
JACOBI_TOL_FACTOR = 1e-13
JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True)
class EigenResult:
    """Full spectrum of a symmetric matrix.

    eigenvalues are sorted descending; eigenvectors holds the matching
    unit eigenvectors as columns.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def sym_eigen(a: np.ndarray) -> EigenResult:
    """Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations.

    Eigenvalues come back sorted descending (stable among ties). Each
    eigenvector is sign-normalized so its largest-magnitude component is
    nonnegative, which keeps golden tests stable.

    Raises NonFinite on NaN/Inf entries and NonSymmetric when the input
    deviates from its transpose by more than SYM_TOL * max(1, |A|_max).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFinite("matrix contains NaN or Inf entries")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > SYM_TOL * scale:
        raise NonSymmetric(f"matrix asymmetry {asym:.3e} exceeds tolerance at scale {scale:.3e}")

    d = a.shape[0]
    work = 0.5 * (a + a.T)  # exact symmetry before iterating
    vecs = np.eye(d)
    tol = JACOBI_TOL_FACTOR * float(np.linalg.norm(work))
    _kernels.jacobi_eigh_inplace(work, vecs, tol, JACOBI_MAX_SWEEPS)

    vals = np.diag(work).copy()
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    for j in range(d):
        k = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[k, j] < 0.0:
            vecs[:, j] = -vecs[:, j]
    return EigenResult(eigenvalues=vals, eigenvectors=vecs)


def pca_truncate(eig: EigenResult, energy: float) -> np.ndarray:
    """Smallest leading block of eigenvectors capturing `energy` of the mass.

    Returns the first k eigenvector columns where k is minimal with
    sum(top-k eigenvalues) >= energy * sum(all eigenvalues). Slightly
    negative eigenvalues (within -1e-10 relative to total magnitude) are
    clamped to zero; anything more negative is rejected as an invalid
    spectrum.
    """
    if not 0.0 < energy <= 1.0:
        raise ConfigInvalid(f"energy fraction must lie in (0, 1], got {energy}")
    vals = np.asarray(eig.eigenvalues, dtype=np.float64).copy()
    neg_tol = 1e-10 * max(1.0, float(np.sum(np.abs(vals))))
    if np.any(vals < -neg_tol):
        raise ConfigInvalid(f"spectrum has eigenvalue below -{neg_tol:.3e}; not a PSD spectrum")
    vals[vals < 0.0] = 0.0
    total = float(np.sum(vals))
    if total <= 0.0:
        raise DegenerateSpectrum("total eigenvalue mass is zero")
    # tiny slack absorbs cumulative-sum roundoff at exact thresholds
    target = energy * total - 1e-12 * total
    k = int(np.searchsorted(np.cumsum(vals), target) + 1)
    k = min(k, len(vals))
    return eig.eigenvectors[:, :k].copy()


def project(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Orthogonal projection Q Q^T v onto the column span of Q."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2:
        raise DimensionMismatch(f"projection basis must be a matrix, got shape {q.shape}")
    if v.ndim != 1 or v.shape[0] != q.shape[0]:
        raise DimensionMismatch(f"projection basis {q.shape} does not match vector {v.shape}")
    return q @ (q.T @ v)


def make_rng(seed: int) -> np.random.Generator:
    """Root PCG64 stream for `seed`; identical seed, identical stream, any platform."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def derive_rng(seed: int, *path: int | str) -> np.random.Generator:
    """Independent PCG64 substream addressed by a label path under `seed`.

    String labels are folded to 64-bit ints with blake2b so the derivation
    is stable across platforms and Python versions.
    """
    key = []
    for part in path:
        if isinstance(part, str):
            digest = hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest()
            key.append(int.from_bytes(digest, "little"))
        else:
            key.append(int(part))
    ss = np.random.SeedSequence(seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))
