"""Diagnostics and accuracy measurements.

Identification follows the center-gallery protocol: every probe is assigned
to the nearest class center in Euclidean distance (ties to the lowest class
id) and rank-1 accuracy is reported separately for regular and UR probes.
Weight-norm statistics summarize classifier row norms with their coefficient
of variation, the package's scalar measure of classifier imbalance. The
center-estimation study compares three estimators on random subsets of
regular classes, with errors normalized by the mean inter-center distance
(our reading of "normalized by inter-class variance"; the normalizer is
reported alongside the numbers).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dataset import ImbalancedDataset
from .errors import ConfigInvalid, EmptyGallery, InsufficientData
from .numerics import derive_rng
from .transfer import TransferConfig, estimate_center

CENTER_METHODS = ("PickOne", "AvgAll", "AvgFlip")
DEFAULT_SUBSET_SIZES = (1, 5, 10, 20)


@dataclass
class EvalReport:
    rank1_regular: float
    rank1_ur: float
    weight_norms: dict[str, object]  # per_class list plus mean/std/cv
    variance_profile: dict[int, tuple[float, float, float]]
    center_error_table: dict[str, dict[int, float]] | None = None
    metadata: dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "rank1_regular": self.rank1_regular,
            "rank1_ur": self.rank1_ur,
            "weight_norms": self.weight_norms,
            "variance_profile": {
                str(cls): {"min": v[0], "mean": v[1], "max": v[2]}
                for cls, v in self.variance_profile.items()
            },
            "metadata": self.metadata,
        }
        if self.center_error_table is not None:
            out["center_error_table"] = {
                method: {str(size): err for size, err in row.items()}
                for method, row in self.center_error_table.items()
            }
        return out


def nn_identify(
    gallery_centers: np.ndarray,
    probe_features: np.ndarray,
    probe_labels: np.ndarray,
    regular_ids: np.ndarray,
    ur_ids: np.ndarray,
) -> tuple[float, float]:
    """Rank-1 center-gallery accuracy, split (regular, UR) by probe label.

    gallery_centers is indexed by class id. A split with no probes reports
    accuracy 0.0 for that side.
    """
    gallery_centers = np.asarray(gallery_centers, dtype=np.float64)
    if gallery_centers.ndim != 2 or gallery_centers.shape[0] < 2:
        raise EmptyGallery("need at least two gallery classes")
    probe_features = np.atleast_2d(np.asarray(probe_features, dtype=np.float64))
    probe_labels = np.asarray(probe_labels, dtype=np.int64)
    assigned = _kernels.nearest_center(probe_features, gallery_centers)
    correct = assigned == probe_labels

    def _split_acc(ids: np.ndarray) -> float:
        mask = np.isin(probe_labels, ids)
        if not mask.any():
            return 0.0
        return float(correct[mask].mean())

    return _split_acc(np.asarray(regular_ids)), _split_acc(np.asarray(ur_ids))


def weight_norm_stats(w: np.ndarray) -> dict[str, object]:
    """Per-class classifier row norms with mean, std, and CV = std/mean."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    norms = np.linalg.norm(w, axis=1)
    mean = float(norms.mean())
    std = float(norms.std())
    cv = std / mean if mean > 0 else 0.0
    return {"per_class": norms.tolist(), "mean": mean, "std": std, "cv": cv}


def variance_profile(
    features: np.ndarray, labels: np.ndarray
) -> dict[int, tuple[float, float, float]]:
    """Per-class (min, mean, max) distance to the class's arithmetic mean."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    out: dict[int, tuple[float, float, float]] = {}
    for cls in np.unique(labels):
        pts = features[labels == cls]
        center = pts.mean(axis=0)
        dists = np.linalg.norm(pts - center, axis=1)
        out[int(cls)] = (float(dists.min()), float(dists.mean()), float(dists.max()))
    return out


def _study_rep(args) -> dict[str, dict[int, float]]:
    """One repetition of the center study; self-contained for pool workers."""
    (rep, seed, class_feats, class_flips, class_poses, full_centers, subset_sizes, methods, tau) = args
    rng = derive_rng(seed, "center-study", rep)
    sums: dict[str, dict[int, float]] = {m: {n: 0.0 for n in subset_sizes} for m in methods}
    max_size = max(subset_sizes)
    flip_cfg = TransferConfig(tau=tau, use_flip=True)
    for feats, flips, poses, full_center in zip(class_feats, class_flips, class_poses, full_centers):
        order = rng.permutation(feats.shape[0])[:max_size]
        for n in subset_sizes:
            sub = order[:n]
            for method in methods:
                if method == "PickOne":
                    est = feats[sub[0]]
                elif method == "AvgAll":
                    est = feats[sub].mean(axis=0)
                elif method == "AvgFlip":
                    est = estimate_center(feats[sub], flips[sub], poses[sub], flip_cfg)
                else:
                    raise ConfigInvalid(f"unknown center method {method!r}")
                sums[method][n] += float(np.linalg.norm(est - full_center))
    return sums


def center_error_study(
    ds: ImbalancedDataset,
    encoder=None,
    subset_sizes: tuple[int, ...] = DEFAULT_SUBSET_SIZES,
    methods: tuple[str, ...] = CENTER_METHODS,
    n_reps: int = 100,
    seed: int = 0,
    tau: float = 30.0,
    jobs: int = 1,
) -> dict[str, object]:
    """Center-estimation error of each method at each subset size.

    For every regular class with enough samples, a random subset mimics an
    UR class; each method estimates a center from it and the error is the
    distance to the full-set mean, normalized by the mean pairwise distance
    between full-set centers, averaged over classes and repetitions. Subsets
    are drawn once per (repetition, class) and shared by all methods, and
    are nested across sizes. Repetition r always uses the substream derived
    from (seed, r), so results do not depend on `jobs`.
    """
    unknown = set(methods) - set(CENTER_METHODS)
    if unknown:
        raise ConfigInvalid(f"unknown center methods: {sorted(unknown)}")
    max_size = max(subset_sizes)
    if encoder is None:
        encode_fn = lambda x: x  # noqa: E731 - identity encoder, study in input space
    else:
        from .transfer import _as_encode_fn

        encode_fn = _as_encode_fn(encoder)

    class_feats, class_flips, class_poses, full_centers = [], [], [], []
    x_flip, _ = ds.augmentation.flip_batch(ds.x, ds.poses)
    for cls in ds.regular_ids.tolist():
        idx = ds.class_indices(cls)
        if len(idx) < max_size:
            continue
        feats = np.asarray(encode_fn(ds.x[idx]), dtype=np.float64)
        class_feats.append(feats)
        class_flips.append(np.asarray(encode_fn(x_flip[idx]), dtype=np.float64))
        class_poses.append(ds.poses[idx])
        full_centers.append(feats.mean(axis=0))
    if not class_feats:
        raise InsufficientData(f"no regular class has >= {max_size} samples")

    centers = np.stack(full_centers)
    n_cls = centers.shape[0]
    if n_cls < 2:
        raise InsufficientData("center-error normalization needs >= 2 regular classes")
    pair_dists = [
        float(np.linalg.norm(centers[i] - centers[j]))
        for i in range(n_cls)
        for j in range(i + 1, n_cls)
    ]
    normalizer = float(np.mean(pair_dists))

    rep_args = [
        (rep, seed, class_feats, class_flips, class_poses, full_centers, tuple(subset_sizes), tuple(methods), tau)
        for rep in range(n_reps)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            partials = list(pool.map(_study_rep, rep_args))
    else:
        partials = [_study_rep(a) for a in rep_args]

    denom = normalizer * n_cls * n_reps
    table = {
        m: {n: sum(p[m][n] for p in partials) / denom for n in subset_sizes} for m in methods
    }
    return {
        "errors": table,
        "normalizer": normalizer,
        "normalization": "mean pairwise distance between full-set class centers",
        "n_classes": n_cls,
        "n_reps": n_reps,
        "tau": tau,
        "subset_sizes": list(subset_sizes),
        "seed": seed,
    }


