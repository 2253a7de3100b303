"""Synthetic imbalanced datasets with a shared intra-class covariance.

Each class i draws samples x = mu_i + B z + (pose/90) * nuisance_strength * u
with z standard normal, B a low-rank factor shared by every class, and u a
fixed nuisance axis. Poses are uniform in [-90, 90] degrees. Class means and
the columns of B are constructed orthogonal to u, so the "flip" augmentation
(reflection across the hyperplane perpendicular to u, plus pose negation) is
identity-preserving, exactly the way a horizontal image flip negates yaw
without changing the subject. Because every class shares B, the shared-
covariance assumption behind feature transfer holds exactly on this data,
which is what makes transfer correctness testable.

The on-disk format is a self-describing little-endian binary: magic "FTLD",
a u16 version, u64 header counts, then the partition ids, the augmentation
matrix, and the sample arrays as raw float64/uint64. Round trips are
bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, CorruptRecord, FormatVersionMismatch, InsufficientData
from .numerics import derive_rng

MAGIC = b"FTLD"
FORMAT_VERSION = 1

# Default UR cutoff: a class with at most this many samples is UR.
UR_THRESHOLD = 20

# Column norm of the shared factor B; fixed so class_sep only moves centers.
FACTOR_SCALE = 0.25


@dataclass(frozen=True, eq=False)
class Sample:
    """One labeled vector with its synthetic-pose nuisance scalar."""

    x: np.ndarray
    label: int
    pose: float


@dataclass(frozen=True, eq=False)
class Augmentation:
    """A fixed linear involution on input space paired with pose negation."""

    matrix: np.ndarray

    def __post_init__(self):
        m = self.matrix
        d = m.shape[0]
        if m.ndim != 2 or m.shape[1] != d:
            raise ConfigInvalid(f"augmentation matrix must be square, got {m.shape}")
        if np.max(np.abs(m @ m - np.eye(d))) > 1e-12:
            raise ConfigInvalid("augmentation matrix is not an involution")

    @classmethod
    def identity(cls, dim: int) -> "Augmentation":
        return cls(np.eye(dim))

    @classmethod
    def axis_reflection(cls, dim: int, axis: int = 0) -> "Augmentation":
        """Reflection negating one coordinate; exact in IEEE arithmetic."""
        m = np.eye(dim)
        m[axis, axis] = -1.0
        return cls(m)

    def flip(self, s: Sample) -> Sample:
        return Sample(x=self.matrix @ s.x, label=s.label, pose=-s.pose)

    def flip_batch(self, x: np.ndarray, poses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x @ self.matrix.T, -poses


@dataclass(frozen=True)
class GeneratorConfig:
    n_regular: int = 50
    n_ur: int = 50
    samples_per_regular: int = 200
    samples_per_ur: int = 5
    input_dim: int = 32
    class_sep: float = 1.0
    shared_cov_rank: int = 8
    nuisance_strength: float = 4.5
    seed: int = 0
    ur_threshold: int = UR_THRESHOLD

    def validate(self) -> None:
        if self.n_regular < 0 or self.n_ur < 0 or self.n_regular + self.n_ur < 1:
            raise ConfigInvalid("need at least one class")
        if self.input_dim < 2:
            raise ConfigInvalid("input_dim must be >= 2 (one nuisance axis plus identity space)")
        if self.samples_per_regular < 1 or (self.n_ur > 0 and self.samples_per_ur < 1):
            raise ConfigInvalid("per-class sample counts must be >= 1")
        if not self.samples_per_ur <= self.ur_threshold < self.samples_per_regular:
            raise ConfigInvalid(
                f"need samples_per_ur <= ur_threshold < samples_per_regular, got "
                f"{self.samples_per_ur} / {self.ur_threshold} / {self.samples_per_regular}"
            )
        if not 1 <= self.shared_cov_rank <= self.input_dim - 1:
            raise ConfigInvalid("shared_cov_rank must fit in the subspace orthogonal to the nuisance axis")
        if self.class_sep < 0 or self.nuisance_strength < 0:
            raise ConfigInvalid("class_sep and nuisance_strength must be nonnegative")


@dataclass(frozen=True, eq=False)
class Latents:
    """Generator ground truth, kept in memory for tests; never serialized."""

    means: np.ndarray  # (n_classes, input_dim)
    factor: np.ndarray  # (input_dim, shared_cov_rank), columns orthonormal * FACTOR_SCALE
    nuisance_dir: np.ndarray  # (input_dim,)


@dataclass
class ImbalancedDataset:
    """Labeled samples with an explicit regular/UR class partition.

    Storage is columnar (x, labels, poses) for vectorized access; sample(i)
    materializes a single Sample view. The partition is established at
    generation time from the UR threshold rule and travels with the data;
    derived subsets (see split_holdout) inherit it unchanged.
    """

    x: np.ndarray
    labels: np.ndarray
    poses: np.ndarray
    n_classes: int
    input_dim: int
    regular_ids: np.ndarray
    ur_ids: np.ndarray
    ur_threshold: int
    augmentation: Augmentation
    latents: Latents | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.x.ndim != 2 or self.x.shape[1] != self.input_dim:
            raise CorruptRecord("sample matrix shape disagrees with input_dim")
        n = self.x.shape[0]
        if self.labels.shape != (n,) or self.poses.shape != (n,):
            raise CorruptRecord("labels/poses length disagrees with sample count")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise CorruptRecord("label outside [0, n_classes)")
        reg = set(self.regular_ids.tolist())
        ur = set(self.ur_ids.tolist())
        if reg & ur:
            raise CorruptRecord("regular and UR id sets overlap")
        present = set(np.unique(self.labels).tolist())
        if not present <= (reg | ur):
            raise CorruptRecord("some labels belong to neither partition")

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    def sample(self, i: int) -> Sample:
        return Sample(x=self.x[i], label=int(self.labels[i]), pose=float(self.poses[i]))

    def class_indices(self, label: int) -> np.ndarray:
        return np.nonzero(self.labels == label)[0]

    def indices_of(self, class_ids: np.ndarray) -> np.ndarray:
        return np.nonzero(np.isin(self.labels, class_ids))[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImbalancedDataset):
            return NotImplemented
        return (
            self.n_classes == other.n_classes
            and self.input_dim == other.input_dim
            and self.ur_threshold == other.ur_threshold
            and np.array_equal(self.regular_ids, other.regular_ids)
            and np.array_equal(self.ur_ids, other.ur_ids)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.poses, other.poses)
            and np.array_equal(self.augmentation.matrix, other.augmentation.matrix)
        )


def generate(cfg: GeneratorConfig) -> ImbalancedDataset:
    """Sample a dataset from the shared-covariance generative model."""
    cfg.validate()
    rng = derive_rng(cfg.seed, "dataset")
    d = cfg.input_dim
    n_classes = cfg.n_regular + cfg.n_ur

    u = np.zeros(d)
    u[0] = 1.0

    # class means: random directions on the sphere of radius class_sep*sqrt(d),
    # restricted to the subspace orthogonal to the nuisance axis
    raw = rng.standard_normal((n_classes, d))
    raw[:, 0] = 0.0
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    means = raw / norms * (cfg.class_sep * np.sqrt(d))

    # shared low-rank factor, columns orthonormal and orthogonal to u
    g = rng.standard_normal((d, cfg.shared_cov_rank))
    g[0, :] = 0.0
    q, _ = np.linalg.qr(g)
    q[0, :] = 0.0
    q /= np.linalg.norm(q, axis=0, keepdims=True)
    factor = q * FACTOR_SCALE

    counts = [cfg.samples_per_regular] * cfg.n_regular + [cfg.samples_per_ur] * cfg.n_ur
    xs, labels, poses = [], [], []
    for cls, m in enumerate(counts):
        z = rng.standard_normal((m, cfg.shared_cov_rank))
        p = rng.uniform(-90.0, 90.0, m)
        xs.append(means[cls] + z @ factor.T + (p / 90.0 * cfg.nuisance_strength)[:, None] * u)
        labels.append(np.full(m, cls, dtype=np.int64))
        poses.append(p)

    return ImbalancedDataset(
        x=np.concatenate(xs) if xs else np.zeros((0, d)),
        labels=np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64),
        poses=np.concatenate(poses) if poses else np.zeros(0),
        n_classes=n_classes,
        input_dim=d,
        regular_ids=np.arange(cfg.n_regular, dtype=np.int64),
        ur_ids=np.arange(cfg.n_regular, n_classes, dtype=np.int64),
        ur_threshold=cfg.ur_threshold,
        augmentation=Augmentation.axis_reflection(d),
        latents=Latents(means=means, factor=factor, nuisance_dir=u),
    )


def split_holdout(
    ds: ImbalancedDataset, per_class: int, seed: int
) -> tuple[ImbalancedDataset, ImbalancedDataset]:
    """Carve `per_class` probe samples out of every class, deterministically.

    The probe set inherits the parent's partition and augmentation; it exists
    to evaluate a model trained on the remaining samples, so its per-class
    counts are not re-checked against the UR threshold rule.
    """
    if per_class < 1:
        raise ConfigInvalid("per_class must be >= 1")
    probe_mask = np.zeros(ds.n_samples, dtype=bool)
    rng = derive_rng(seed, "holdout")
    for cls in range(ds.n_classes):
        idx = ds.class_indices(cls)
        if len(idx) <= per_class:
            raise InsufficientData(
                f"class {cls} has {len(idx)} samples; cannot hold out {per_class}"
            )
        chosen = rng.permutation(len(idx))[:per_class]
        probe_mask[idx[chosen]] = True

    def _take(mask: np.ndarray) -> ImbalancedDataset:
        return ImbalancedDataset(
            x=ds.x[mask].copy(),
            labels=ds.labels[mask].copy(),
            poses=ds.poses[mask].copy(),
            n_classes=ds.n_classes,
            input_dim=ds.input_dim,
            regular_ids=ds.regular_ids.copy(),
            ur_ids=ds.ur_ids.copy(),
            ur_threshold=ds.ur_threshold,
            augmentation=ds.augmentation,
            latents=ds.latents,
        )

    return _take(~probe_mask), _take(probe_mask)


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptRecord(f"file truncated: wanted {n} bytes, got {len(buf)}")
    return buf


def save(ds: ImbalancedDataset, path: str | Path) -> None:
    """Write the dataset in the FTLD v1 binary format (lossless)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(
            struct.pack(
                "<6Q",
                ds.n_samples,
                ds.n_classes,
                ds.input_dim,
                ds.ur_threshold,
                len(ds.regular_ids),
                len(ds.ur_ids),
            )
        )
        f.write(ds.regular_ids.astype("<u8").tobytes())
        f.write(ds.ur_ids.astype("<u8").tobytes())
        f.write(np.ascontiguousarray(ds.augmentation.matrix, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(ds.x, dtype="<f8").tobytes())
        f.write(ds.labels.astype("<u8").tobytes())
        f.write(np.ascontiguousarray(ds.poses, dtype="<f8").tobytes())


def load(path: str | Path) -> ImbalancedDataset:
    """Read an FTLD file; datasets round-trip bit-exactly through save/load."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != MAGIC:
            raise CorruptRecord(f"bad magic {magic!r}; not an FTLD dataset file")
        (version,) = struct.unpack("<H", _read_exact(f, 2))
        if version != FORMAT_VERSION:
            raise FormatVersionMismatch(f"unknown dataset format version {version}")
        n, n_classes, dim, ur_threshold, n_reg, n_ur = struct.unpack("<6Q", _read_exact(f, 48))
        regular_ids = np.frombuffer(_read_exact(f, 8 * n_reg), dtype="<u8").astype(np.int64)
        ur_ids = np.frombuffer(_read_exact(f, 8 * n_ur), dtype="<u8").astype(np.int64)
        m = np.frombuffer(_read_exact(f, 8 * dim * dim), dtype="<f8").reshape(dim, dim).copy()
        x = np.frombuffer(_read_exact(f, 8 * n * dim), dtype="<f8").reshape(n, dim).copy()
        labels = np.frombuffer(_read_exact(f, 8 * n), dtype="<u8").astype(np.int64)
        poses = np.frombuffer(_read_exact(f, 8 * n), dtype="<f8").copy()
        if f.read(1):
            raise CorruptRecord("trailing bytes after dataset payload")
    try:
        aug = Augmentation(m)
    except ConfigInvalid as exc:
        raise CorruptRecord(str(exc)) from None
    return ImbalancedDataset(
        x=x,
        labels=labels,
        poses=poses,
        n_classes=int(n_classes),
        input_dim=int(dim),
        regular_ids=regular_ids,
        ur_ids=ur_ids,
        ur_threshold=int(ur_threshold),
        augmentation=aug,
    )
