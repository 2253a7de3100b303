"""Per-class statistics and the center-based feature transfer operator.

A class center is a pose-screened average of rich features, optionally
pooled with features of flipped samples. Deviations of regular-class
samples from their centers are pooled into one unnormalized covariance,
whose leading eigenvectors (by energy fraction) form the transfer basis Q.
Transferring a sample then means re-rooting its projected deviation at a
different class's center:

    transferred = target_center + Q Q^T (source_feature - source_center)

Covariance and hard-sample bookkeeping use regular classes only; UR classes
contribute nothing but their centers, which is the whole point: their own
scatter is too thin to trust.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import network
from .dataset import ImbalancedDataset
from .errors import (
    ConfigInvalid,
    DegenerateSpectrum,
    DimensionMismatch,
    EmptyClass,
    InsufficientData,
)
from .numerics import pca_truncate, sym_eigen


@dataclass(frozen=True)
class TransferConfig:
    tau: float = 30.0  # max |pose| + |flipped pose| for a sample to count toward a center
    energy: float = 0.95
    k_override: int | None = None
    use_flip: bool = True

    def validate(self) -> None:
        if not self.tau > 0:
            raise ConfigInvalid("tau must be positive")
        if not 0.0 < self.energy <= 1.0:
            raise ConfigInvalid("energy must lie in (0, 1]")
        if self.k_override is not None and self.k_override < 1:
            raise ConfigInvalid("k_override must be >= 1 when set")


@dataclass(eq=False)
class ClassStats:
    """Center and scatter bookkeeping for one class.

    mean_radius and hard_indices are populated for regular classes only;
    hard indices are positions into the dataset's sample arrays whose
    distance to the center strictly exceeds the class mean radius.
    """

    center: np.ndarray
    count: int
    mean_radius: float | None = None
    hard_indices: np.ndarray | None = None


@dataclass(eq=False)
class TransferBasis:
    q: np.ndarray  # (d, k), column-orthonormal
    energy: float  # achieved energy fraction
    source_count: int  # samples pooled into the covariance

    @property
    def k(self) -> int:
        return self.q.shape[1]


def estimate_center(
    g: np.ndarray,
    g_flip: np.ndarray | None,
    poses: np.ndarray,
    cfg: TransferConfig,
) -> np.ndarray:
    """Pose-screened class center, optionally averaging flipped features.

    Keeps samples whose pose magnitude plus flipped-pose magnitude stays
    within tau; when that set is empty the average falls back to all
    samples (a class whose every sample is extreme-pose still needs a
    center). With use_flip the kept original and flipped features are
    summed and divided by twice the kept count.
    """
    g = np.atleast_2d(np.asarray(g, dtype=np.float64))
    if g.shape[0] == 0:
        raise EmptyClass("cannot estimate a center from zero samples")
    poses = np.atleast_1d(np.asarray(poses, dtype=np.float64))
    if poses.shape[0] != g.shape[0]:
        raise DimensionMismatch("one pose per feature required")
    keep = (np.abs(poses) + np.abs(-poses)) <= cfg.tau
    if not keep.any():
        keep = np.ones(g.shape[0], dtype=bool)
    if not cfg.use_flip:
        return g[keep].mean(axis=0)
    if g_flip is None:
        raise ConfigInvalid("use_flip requires flipped features")
    g_flip = np.atleast_2d(np.asarray(g_flip, dtype=np.float64))
    if g_flip.shape != g.shape:
        raise DimensionMismatch("flipped features must match original shape")
    kept = int(keep.sum())
    return (g[keep].sum(axis=0) + g_flip[keep].sum(axis=0)) / (2.0 * kept)


def accumulate_covariance(
    features: Sequence[np.ndarray], centers: Sequence[np.ndarray]
) -> np.ndarray:
    """Unnormalized pooled scatter sum_i sum_k (g - c_i)(g - c_i)^T.

    Callers pass regular classes only. Raises InsufficientData unless at
    least one class carries two or more samples. The result is exactly
    symmetric (accumulated as X^T X and symmetrized against BLAS jitter).
    """
    if len(features) != len(centers) or not features:
        raise InsufficientData("need matching, nonempty feature/center sequences")
    if not any(f.shape[0] >= 2 for f in features):
        raise InsufficientData("covariance needs at least one class with >= 2 samples")
    d = features[0].shape[1]
    v = np.zeros((d, d))
    for f, c in zip(features, centers):
        centered = f - c
        v += centered.T @ centered
    return 0.5 * (v + v.T)


def build_basis(v: np.ndarray, cfg: TransferConfig, source_count: int = 0) -> TransferBasis:
    """Leading eigenvectors of the pooled covariance as a transfer basis.

    k_override pins the column count regardless of energy; otherwise the
    minimal k reaching cfg.energy is used. The covariance is consumed
    unnormalized: eigenvectors are scale-invariant so the basis is the
    same either way.
    """
    cfg.validate()
    eig = sym_eigen(v)
    vals = np.clip(eig.eigenvalues, 0.0, None)
    total = float(vals.sum())
    if cfg.k_override is not None:
        if total <= 0.0:
            raise DegenerateSpectrum("covariance has no eigenvalue mass")
        k = min(cfg.k_override, v.shape[0])
        q = eig.eigenvectors[:, :k].copy()
    else:
        q = pca_truncate(eig, cfg.energy)
        k = q.shape[1]
    achieved = float(vals[:k].sum() / total) if total > 0 else 0.0
    return TransferBasis(q=q, energy=achieved, source_count=source_count)


def transfer_feature(
    g_src: np.ndarray, c_src: np.ndarray, c_tgt: np.ndarray, basis: TransferBasis
) -> np.ndarray:
    """Re-root the in-basis deviation of one feature at a target center."""
    g_src = np.asarray(g_src, dtype=np.float64)
    d = basis.q.shape[0]
    for name, vec in (("source feature", g_src), ("source center", c_src), ("target center", c_tgt)):
        if vec.shape != (d,):
            raise DimensionMismatch(f"{name} must have dim {d}, got {vec.shape}")
    dev = g_src - c_src
    return c_tgt + basis.q @ (basis.q.T @ dev)


def transfer_batch(
    g_src: np.ndarray, c_src: np.ndarray, c_tgt: np.ndarray, basis: TransferBasis
) -> np.ndarray:
    """Vectorized transfer_feature over rows."""
    if g_src.shape != c_src.shape or g_src.shape != c_tgt.shape:
        raise DimensionMismatch("per-row source/center/target shapes must agree")
    if g_src.shape[1] != basis.q.shape[0]:
        raise DimensionMismatch(f"features of dim {g_src.shape[1]} do not match basis dim {basis.q.shape[0]}")
    dev = g_src - c_src
    return c_tgt + (dev @ basis.q) @ basis.q.T


EncodeFn = Callable[[np.ndarray], np.ndarray]


def _as_encode_fn(encoder) -> EncodeFn:
    if isinstance(encoder, network.NetworkParams):
        return lambda x: network.encode(encoder, x)
    if callable(encoder):
        return encoder
    raise ConfigInvalid("encoder must be NetworkParams or a callable mapping inputs to features")


def update_stats(
    ds: ImbalancedDataset,
    encoder,
    cfg: TransferConfig,
) -> tuple[list[ClassStats], TransferBasis]:
    """Recompute every class center, regular-class radii/hard lists, and the basis.

    Centers are rebuilt from scratch (no moving averages) so the result is a
    pure function of the dataset and encoder. Regular classes additionally
    yield their mean radius d_i, the hard-sample list (distance strictly
    above d_i), and their contribution to the pooled covariance. UR classes
    never touch the covariance or hard lists.
    """
    cfg.validate()
    encode_fn = _as_encode_fn(encoder)
    g_all = np.asarray(encode_fn(ds.x), dtype=np.float64)
    g_flip_all = None
    if cfg.use_flip:
        x_flip, _ = ds.augmentation.flip_batch(ds.x, ds.poses)
        g_flip_all = np.asarray(encode_fn(x_flip), dtype=np.float64)

    regular = set(ds.regular_ids.tolist())
    stats: list[ClassStats] = []
    reg_features: list[np.ndarray] = []
    reg_centers: list[np.ndarray] = []
    for cls in range(ds.n_classes):
        idx = ds.class_indices(cls)
        if len(idx) == 0:
            raise EmptyClass(f"class {cls} has no samples")
        g = g_all[idx]
        g_flip = g_flip_all[idx] if g_flip_all is not None else None
        center = estimate_center(g, g_flip, ds.poses[idx], cfg)
        if cls in regular:
            dists = np.linalg.norm(g - center, axis=1)
            mean_radius = float(dists.mean())
            hard = idx[dists > mean_radius]
            stats.append(ClassStats(center=center, count=len(idx), mean_radius=mean_radius, hard_indices=hard))
            reg_features.append(g)
            reg_centers.append(center)
        else:
            stats.append(ClassStats(center=center, count=len(idx)))

    v = accumulate_covariance(reg_features, reg_centers)
    basis = build_basis(v, cfg, source_count=int(sum(f.shape[0] for f in reg_features)))
    return stats, basis


def centers_matrix(stats: Sequence[ClassStats]) -> np.ndarray:
    """Class centers stacked by class id, for gallery/transfer lookups."""
    return np.stack([s.center for s in stats])


def hard_list(stats: Sequence[ClassStats]) -> np.ndarray:
    """All regular-class hard sample positions, concatenated in class order."""
    parts = [s.hard_indices for s in stats if s.hard_indices is not None and len(s.hard_indices)]
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(parts)
