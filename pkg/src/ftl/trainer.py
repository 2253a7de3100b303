"""Pretraining, the two-stage alternating regimen, and a fair baseline.

Stage 1 reshapes the decision boundary: with the encoder and decoder frozen,
each iteration trains the filter and classifier on three feature batches (a
hard regular batch, a UR batch, and a transferred batch pairing the hard
batch's deviations with UR targets), using the softmax and metric-L2 terms
only. Stage 2 re-compacts features: the classifier is frozen and normal
mixed batches train encoder, decoder, and filter on the full composite loss.
Class statistics and the transfer basis are refreshed once per alternation.

Every random draw comes from a substream derived from (seed, purpose,
alternation), so a config plus seed pins the whole run bit-for-bit. The
baseline regimen consumes exactly the same number of gradient steps as the
alternating one (pretraining plus 4 * n_iter plain steps per alternation),
which keeps accuracy comparisons budget-fair.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import ImbalancedDataset
from .errors import ConfigInvalid, Diverged, InsufficientData
from .evaluation import nn_identify, variance_profile, weight_norm_stats
from .network import (
    Adam,
    LossWeights,
    NetworkConfig,
    NetworkParams,
    encode,
    filter_features,
    init_params,
    train_step,
    train_step_features,
)
from .numerics import derive_rng
from .transfer import (
    TransferBasis,
    TransferConfig,
    centers_matrix,
    hard_list,
    transfer_batch,
    update_stats,
)

log = logging.getLogger("ftl.trainer")

EventFn = Callable[[dict], None]

EVENT_EVERY = 100  # iterations between progress events


@dataclass(frozen=True)
class TrainConfig:
    pretrain_iters: int = 2000
    n_iter: int = 200  # iterations per stage within one alternation
    total_alternations: int = 4
    batch_size: int = 64
    lr_pretrain: float = 2e-4
    lr_alternate: float = 1e-5
    loss_weights: LossWeights = field(default_factory=LossWeights)
    transfer_cfg: TransferConfig = field(default_factory=TransferConfig)
    seed: int = 0
    # network shape (the full NetworkConfig also needs the dataset's input_dim)
    g_dim: int = 32
    f_dim: int = 32
    hidden: int = 64
    # pretraining is expected to cut its loss by at least this fraction
    pretrain_min_decrease: float = 0.5

    def validate(self) -> None:
        if self.pretrain_iters < 1 or self.batch_size < 1:
            raise ConfigInvalid("pretrain_iters and batch_size must be >= 1")
        if self.n_iter < 0 or self.total_alternations < 0:
            raise ConfigInvalid("n_iter and total_alternations must be >= 0")
        if self.lr_pretrain <= 0 or self.lr_alternate <= 0:
            raise ConfigInvalid("learning rates must be positive")
        if not 0.0 <= self.pretrain_min_decrease < 1.0:
            raise ConfigInvalid("pretrain_min_decrease must lie in [0, 1)")
        self.transfer_cfg.validate()

    def network_config(self, ds: ImbalancedDataset) -> NetworkConfig:
        return NetworkConfig(
            input_dim=ds.input_dim,
            n_classes=ds.n_classes,
            g_dim=self.g_dim,
            f_dim=self.f_dim,
            enc_hidden=(self.hidden,),
            dec_hidden=(self.hidden,),
            filt_hidden=(self.hidden,),
        )


@dataclass
class TrainReport:
    mode: str
    pretrain_trace: list[float]
    stage_traces: list[dict[str, list[float]]]  # one entry per alternation
    snapshots: list[dict]
    total_steps: int
    checkpoint_path: str | None = None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "pretrain_trace": self.pretrain_trace,
            "stage_traces": self.stage_traces,
            "snapshots": self.snapshots,
            "total_steps": self.total_steps,
            "checkpoint_path": self.checkpoint_path,
        }


def _guard(loss: float, where: str) -> None:
    if not np.isfinite(loss):
        raise Diverged(f"loss became non-finite during {where}")


def snapshot_metrics(params: NetworkParams, ds: ImbalancedDataset, label: str) -> dict:
    """Training-set health metrics: weight-norm spread, rank-1, compactness."""
    f = filter_features(params, encode(params, ds.x))
    centers = np.stack([f[ds.labels == cls].mean(axis=0) for cls in range(ds.n_classes)])
    rank1_reg, rank1_ur = nn_identify(centers, f, ds.labels, ds.regular_ids, ds.ur_ids)
    wn = weight_norm_stats(params.fc)
    profile = variance_profile(f, ds.labels)
    mean_intra = float(np.mean([v[1] for v in profile.values()]))
    return {
        "label": label,
        "rank1_regular": rank1_reg,
        "rank1_ur": rank1_ur,
        "weight_norm_cv": wn["cv"],
        "weight_norm_mean": wn["mean"],
        "mean_intra_class_distance": mean_intra,
    }


def pretrain(
    ds: ImbalancedDataset, cfg: TrainConfig, on_event: EventFn | None = None
) -> tuple[NetworkParams, list[float]]:
    """Joint training of all modules on the composite loss, no transfer."""
    params = init_params(cfg.network_config(ds), cfg.seed)
    opt = Adam(cfg.lr_pretrain)
    rng = derive_rng(cfg.seed, "pretrain")
    trace: list[float] = []
    for it in range(cfg.pretrain_iters):
        idx = rng.integers(0, ds.n_samples, cfg.batch_size)
        loss, _ = train_step(params, ds.x[idx], ds.labels[idx], cfg.loss_weights, opt)
        _guard(loss, "pretraining")
        trace.append(loss)
        if on_event and (it + 1) % EVENT_EVERY == 0:
            on_event({"event": "pretrain_progress", "iter": it + 1, "loss": loss})
    tail = float(np.mean(trace[-10:]))
    if tail > (1.0 - cfg.pretrain_min_decrease) * trace[0]:
        log.warning(
            "pretraining loss fell only from %.4f to %.4f; below the %.0f%% decrease target",
            trace[0],
            tail,
            100 * cfg.pretrain_min_decrease,
        )
    return params, trace


def stage1(
    params: NetworkParams,
    ds: ImbalancedDataset,
    stats,
    basis: TransferBasis,
    cfg: TrainConfig,
    alternation: int = 0,
) -> list[float]:
    """Decision-boundary reshape: filter + classifier on three feature batches.

    The encoder and decoder are untouched (batches enter at the filter), so
    their tensors are bit-identical afterwards. Returns the per-iteration
    mean loss over the three updates; mutates params in place.
    """
    ur_samples = ds.indices_of(ds.ur_ids)
    reg_samples = ds.indices_of(ds.regular_ids)
    if len(ur_samples) == 0:
        raise InsufficientData("stage 1 needs UR samples to transfer onto")
    if len(reg_samples) == 0:
        raise InsufficientData("stage 1 needs regular samples to transfer from")
    hard = hard_list(stats)
    if len(hard) == 0:
        log.warning("hard-sample list is empty; falling back to uniform regular sampling")
    centers = centers_matrix(stats)
    rng = derive_rng(cfg.seed, "stage1", alternation)
    opt = Adam(cfg.lr_alternate)
    nb = cfg.batch_size
    trace: list[float] = []
    for _ in range(cfg.n_iter):
        if len(hard) == 0:
            b1 = reg_samples[rng.integers(0, len(reg_samples), nb)]
        elif len(hard) >= nb:
            b1 = hard[rng.integers(0, len(hard), nb)]
        else:
            top_up = reg_samples[rng.integers(0, len(reg_samples), nb - len(hard))]
            b1 = np.concatenate([hard, top_up])
        y1 = ds.labels[b1]
        g1 = encode(params, ds.x[b1])
        loss1 = train_step_features(params, g1, y1, cfg.loss_weights, opt)

        b2 = ur_samples[rng.integers(0, len(ur_samples), nb)]
        y2 = ds.labels[b2]
        g2 = encode(params, ds.x[b2])
        loss2 = train_step_features(params, g2, y2, cfg.loss_weights, opt)

        # pair each hard-batch deviation with a UR label drawn from batch 2
        y3 = y2[rng.integers(0, nb, len(b1))]
        g3 = transfer_batch(g1, centers[y1], centers[y3], basis)
        loss3 = train_step_features(params, g3, y3, cfg.loss_weights, opt)

        mean_loss = (loss1 + loss2 + loss3) / 3.0
        _guard(mean_loss, "stage 1")
        trace.append(mean_loss)
    return trace


def stage2(
    params: NetworkParams,
    ds: ImbalancedDataset,
    cfg: TrainConfig,
    alternation: int = 0,
) -> list[float]:
    """Compact feature learning: full loss, classifier frozen bit-exactly."""
    rng = derive_rng(cfg.seed, "stage2", alternation)
    opt = Adam(cfg.lr_alternate)
    trace: list[float] = []
    for _ in range(cfg.n_iter):
        idx = rng.integers(0, ds.n_samples, cfg.batch_size)
        loss, _ = train_step(
            params, ds.x[idx], ds.labels[idx], cfg.loss_weights, opt, frozen={"fc"}
        )
        _guard(loss, "stage 2")
        trace.append(loss)
    return trace


def run_ftl(
    ds: ImbalancedDataset, cfg: TrainConfig, on_event: EventFn | None = None
) -> tuple[NetworkParams, TrainReport]:
    """Pretrain, then alternate (update stats -> stage 1 -> stage 2)."""
    cfg.validate()
    params, pre_trace = pretrain(ds, cfg, on_event)
    snapshots = [snapshot_metrics(params, ds, "pretrain")]
    if on_event:
        on_event({"event": "snapshot", **snapshots[-1]})
    stage_traces: list[dict[str, list[float]]] = []
    for a in range(cfg.total_alternations):
        stats, basis = update_stats(ds, params, cfg.transfer_cfg)
        s1 = stage1(params, ds, stats, basis, cfg, alternation=a)
        s2 = stage2(params, ds, cfg, alternation=a)
        stage_traces.append({"stage1": s1, "stage2": s2})
        snapshots.append(snapshot_metrics(params, ds, f"alternation_{a}"))
        if on_event:
            on_event({"event": "snapshot", **snapshots[-1]})
    total = cfg.pretrain_iters + cfg.total_alternations * 4 * cfg.n_iter
    report = TrainReport(
        mode="ftl",
        pretrain_trace=pre_trace,
        stage_traces=stage_traces,
        snapshots=snapshots,
        total_steps=total,
    )
    return params, report


def run_baseline(
    ds: ImbalancedDataset, cfg: TrainConfig, on_event: EventFn | None = None
) -> tuple[NetworkParams, TrainReport]:
    """Plain training consuming the same gradient-step budget as run_ftl."""
    cfg.validate()
    params, pre_trace = pretrain(ds, cfg, on_event)
    snapshots = [snapshot_metrics(params, ds, "pretrain")]
    if on_event:
        on_event({"event": "snapshot", **snapshots[-1]})
    per_alternation = 4 * cfg.n_iter
    rng = derive_rng(cfg.seed, "baseline-extra")
    opt = Adam(cfg.lr_alternate)
    stage_traces: list[dict[str, list[float]]] = []
    for a in range(cfg.total_alternations):
        trace: list[float] = []
        for _ in range(per_alternation):
            idx = rng.integers(0, ds.n_samples, cfg.batch_size)
            loss, _ = train_step(params, ds.x[idx], ds.labels[idx], cfg.loss_weights, opt)
            _guard(loss, "baseline extra training")
            trace.append(loss)
        stage_traces.append({"plain": trace})
        snapshots.append(snapshot_metrics(params, ds, f"alternation_{a}"))
        if on_event:
            on_event({"event": "snapshot", **snapshots[-1]})
    total = cfg.pretrain_iters + cfg.total_alternations * per_alternation
    report = TrainReport(
        mode="baseline",
        pretrain_trace=pre_trace,
        stage_traces=stage_traces,
        snapshots=snapshots,
        total_steps=total,
    )
    return params, report
