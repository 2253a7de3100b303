"""Command-line entry point wiring all modules together.

Subcommands: generate, train, eval, transfer-demo, center-study. Every run
takes an --out directory, writes all artifacts inside it, and finishes by
atomically writing a manifest (config snapshot, seed, artifact paths, tool
version, wall-clock timings). Machine-readable JSON-lines events go to
stdout; the human log goes to stderr, with verbosity picked up from the
FTL_LOG environment variable (debug/info/warning/error).

Exit codes: 0 success, 2 usage error, 3 data error, 4 training divergence,
5 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from . import dataset as dataset_mod
from . import evaluation, network, trainer, transfer
from .config import FullConfig, load_config
from .errors import ConfigInvalid, Diverged, FtlError
from .evaluation import EvalReport
from .numerics import derive_rng

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_IO = 5

log = logging.getLogger("ftl.cli")


def _emit(event: dict, stream=None) -> None:
    line = json.dumps(event, sort_keys=True)
    print(line, flush=True)
    if stream is not None:
        stream.write(line + "\n")


def _setup_logging() -> None:
    level = os.environ.get("FTL_LOG", "info").strip().lower()
    numeric = {"debug": logging.DEBUG, "info": logging.INFO, "warning": logging.WARNING, "error": logging.ERROR}
    logging.basicConfig(
        stream=sys.stderr,
        level=numeric.get(level, logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_manifest(
    out_dir: Path, subcommand: str, cfg: FullConfig, seed: int, artifacts: dict[str, str], started: float
) -> None:
    manifest = {
        "tool_version": __version__,
        "kernel_mode": _kernels.kernel_mode(),
        "subcommand": subcommand,
        "seed": seed,
        "config": cfg.to_dict(),
        "artifacts": artifacts,
        "timings": {"wall_seconds": time.time() - started},
    }
    tmp = out_dir / "manifest.json.tmp"
    _write_json(tmp, manifest)
    os.replace(tmp, out_dir / "manifest.json")


def _load_dataset(path: str) -> dataset_mod.ImbalancedDataset:
    if not Path(path).is_file():
        raise ConfigInvalid(f"dataset file not found: {path}")
    return dataset_mod.load(path)


def _load_checkpoint(path: str) -> network.NetworkParams:
    if not Path(path).is_file():
        raise ConfigInvalid(f"checkpoint file not found: {path}")
    return network.load_checkpoint(path)


def _features(params: network.NetworkParams, x: np.ndarray, space: str) -> np.ndarray:
    g = network.encode(params, x)
    if space == "g":
        return g
    if space == "f":
        return network.filter_features(params, g)
    raise ConfigInvalid(f"unknown feature space {space!r}; expected 'f' or 'g'")


def _class_centers(features: np.ndarray, labels: np.ndarray, n_classes: int) -> np.ndarray:
    return np.stack([features[labels == cls].mean(axis=0) for cls in range(n_classes)])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args, cfg: FullConfig, out_dir: Path) -> tuple[dict[str, str], int]:
    for key in (
        "n_regular",
        "n_ur",
        "samples_per_regular",
        "samples_per_ur",
        "input_dim",
        "class_sep",
        "shared_cov_rank",
        "nuisance_strength",
        "ur_threshold",
    ):
        value = getattr(args, key)
        if value is not None:
            cfg.set("dataset", key, value)
    if args.seed is not None:
        cfg.set("dataset", "seed", args.seed)
    gcfg = cfg.generator_config()
    ds = dataset_mod.generate(gcfg)
    artifacts = {"dataset": "dataset.ftld"}
    if args.holdout > 0:
        train_ds, probe_ds = dataset_mod.split_holdout(ds, args.holdout, seed=gcfg.seed)
        dataset_mod.save(train_ds, out_dir / "dataset.ftld")
        dataset_mod.save(probe_ds, out_dir / "probes.ftld")
        artifacts["probes"] = "probes.ftld"
        counts = {"train_samples": train_ds.n_samples, "probe_samples": probe_ds.n_samples}
    else:
        dataset_mod.save(ds, out_dir / "dataset.ftld")
        counts = {"train_samples": ds.n_samples}
    _emit({"event": "generated", "n_classes": ds.n_classes, "input_dim": ds.input_dim, **counts})
    return artifacts, gcfg.seed


def cmd_train(args, cfg: FullConfig, out_dir: Path) -> tuple[dict[str, str], int]:
    if args.seed is not None:
        cfg.set("training", "seed", args.seed)
    ds = _load_dataset(args.dataset)
    tcfg = cfg.train_config()
    runner = trainer.run_ftl if args.mode == "ftl" else trainer.run_baseline
    events_path = out_dir / "events.jsonl"
    with open(events_path, "w", encoding="utf-8") as events:
        _emit({"event": "train_start", "mode": args.mode, "seed": tcfg.seed}, events)
        params, report = runner(ds, tcfg, on_event=lambda e: _emit(e, events))
        network.save_checkpoint(params, out_dir / "checkpoint.ftlc")
        report.checkpoint_path = "checkpoint.ftlc"
        _write_json(out_dir / "report.json", report.to_dict())
        _emit({"event": "train_done", "total_steps": report.total_steps}, events)
    return (
        {"checkpoint": "checkpoint.ftlc", "report": "report.json", "events": "events.jsonl"},
        tcfg.seed,
    )


def cmd_eval(args, cfg: FullConfig, out_dir: Path) -> tuple[dict[str, str], int]:
    if args.space is not None:
        cfg.set("evaluation", "space", args.space)
    space = cfg.get("evaluation", "space")
    ds = _load_dataset(args.dataset)
    params = _load_checkpoint(args.checkpoint)
    probes = _load_dataset(args.probes) if args.probes else ds
    if probes.input_dim != ds.input_dim or probes.n_classes != ds.n_classes:
        raise ConfigInvalid("probe dataset shape does not match the gallery dataset")

    gallery_feats = _features(params, ds.x, space)
    centers = _class_centers(gallery_feats, ds.labels, ds.n_classes)
    probe_feats = _features(params, probes.x, space)
    rank1_reg, rank1_ur = evaluation.nn_identify(
        centers, probe_feats, probes.labels, ds.regular_ids, ds.ur_ids
    )
    wn = evaluation.weight_norm_stats(params.fc)
    profile = evaluation.variance_profile(gallery_feats, ds.labels)

    center_table = None
    study_meta = {}
    if args.center_study:
        study = evaluation.center_error_study(
            ds,
            encoder=params,
            subset_sizes=tuple(cfg.get("evaluation", "subset_sizes")),
            n_reps=cfg.get("evaluation", "n_reps"),
            seed=cfg.get("training", "seed"),
            tau=cfg.get("transfer", "tau"),
            jobs=args.jobs,
        )
        center_table = study["errors"]
        study_meta = {k: v for k, v in study.items() if k != "errors"}

    report = EvalReport(
        rank1_regular=rank1_reg,
        rank1_ur=rank1_ur,
        weight_norms=wn,
        variance_profile=profile,
        center_error_table=center_table,
        metadata={
            "space": space,
            "probe_source": "holdout" if args.probes else "training set",
            "n_probes": int(probes.n_samples),
            "tau": cfg.get("transfer", "tau"),
            **study_meta,
        },
    )
    _write_json(out_dir / "eval_report.json", report.to_dict())

    counts = {cls: int((ds.labels == cls).sum()) for cls in range(ds.n_classes)}
    with open(out_dir / "per_class.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["class_id", "count", "weight_norm", "radius_min", "radius_mean", "radius_max"])
        for cls in range(ds.n_classes):
            rmin, rmean, rmax = profile[cls]
            writer.writerow([cls, counts[cls], wn["per_class"][cls], rmin, rmean, rmax])

    _emit({"event": "eval_done", "rank1_regular": rank1_reg, "rank1_ur": rank1_ur, "space": space})
    return (
        {"eval_report": "eval_report.json", "per_class": "per_class.csv"},
        cfg.get("training", "seed"),
    )


def cmd_transfer_demo(args, cfg: FullConfig, out_dir: Path) -> tuple[dict[str, str], int]:
    seed = args.seed if args.seed is not None else cfg.get("training", "seed")
    ds = _load_dataset(args.dataset)
    params = _load_checkpoint(args.checkpoint)
    tcfg = cfg.transfer_config()
    stats, basis = transfer.update_stats(ds, params, tcfg)
    centers = transfer.centers_matrix(stats)
    if len(ds.ur_ids) == 0:
        raise ConfigInvalid("transfer demo needs at least one UR class as target")
    reg_samples = ds.indices_of(ds.regular_ids)
    rng = derive_rng(seed, "transfer-demo")
    src = reg_samples[rng.integers(0, len(reg_samples), args.count)]
    tgt = ds.ur_ids[rng.integers(0, len(ds.ur_ids), args.count)]
    g_src = network.encode(params, ds.x[src])
    g_new = transfer.transfer_batch(g_src, centers[ds.labels[src]], centers[tgt], basis)

    d = g_src.shape[1]
    header = (
        ["src_class", "tgt_class"]
        + [f"g_src_{i}" for i in range(d)]
        + [f"c_tgt_{i}" for i in range(d)]
        + [f"g_transferred_{i}" for i in range(d)]
    )
    with open(out_dir / "transfers.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for k in range(args.count):
            writer.writerow(
                [int(ds.labels[src[k]]), int(tgt[k])]
                + list(g_src[k])
                + list(centers[tgt[k]])
                + list(g_new[k])
            )
    _emit({"event": "transfer_demo_done", "count": args.count, "basis_k": basis.k, "basis_energy": basis.energy})
    return {"transfers": "transfers.csv"}, seed


def cmd_center_study(args, cfg: FullConfig, out_dir: Path) -> tuple[dict[str, str], int]:
    seed = args.seed if args.seed is not None else cfg.get("training", "seed")
    ds = _load_dataset(args.dataset)
    encoder = _load_checkpoint(args.checkpoint) if args.checkpoint else None
    sizes = tuple(int(s) for s in args.sizes.split(",")) if args.sizes else tuple(cfg.get("evaluation", "subset_sizes"))
    n_reps = args.reps if args.reps is not None else cfg.get("evaluation", "n_reps")
    study = evaluation.center_error_study(
        ds,
        encoder=encoder,
        subset_sizes=sizes,
        n_reps=n_reps,
        seed=seed,
        tau=cfg.get("transfer", "tau"),
        jobs=args.jobs,
    )
    payload = {
        "errors": {m: {str(n): e for n, e in row.items()} for m, row in study["errors"].items()},
        **{k: v for k, v in study.items() if k != "errors"},
    }
    _write_json(out_dir / "center_study.json", payload)
    with open(out_dir / "center_study.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "subset_size", "normalized_error"])
        for method, row in study["errors"].items():
            for n, err in row.items():
                writer.writerow([method, n, err])
    _emit({"event": "center_study_done", "n_reps": n_reps, "sizes": list(sizes)})
    return {"center_study": "center_study.json", "center_study_csv": "center_study.csv"}, seed


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ftl",
        description="Feature transfer learning for imbalanced classification, desk scale.",
    )
    parser.add_argument("--version", action="version", version=f"ftl {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="output directory (all artifacts land here)")
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="seed override")

    g = sub.add_parser("generate", help="synthesize an imbalanced dataset")
    common(g)
    g.add_argument("--n-regular", dest="n_regular", type=int, default=None)
    g.add_argument("--n-ur", dest="n_ur", type=int, default=None)
    g.add_argument("--samples-per-regular", dest="samples_per_regular", type=int, default=None)
    g.add_argument("--samples-per-ur", dest="samples_per_ur", type=int, default=None)
    g.add_argument("--input-dim", dest="input_dim", type=int, default=None)
    g.add_argument("--class-sep", dest="class_sep", type=float, default=None)
    g.add_argument("--shared-cov-rank", dest="shared_cov_rank", type=int, default=None)
    g.add_argument("--nuisance-strength", dest="nuisance_strength", type=float, default=None)
    g.add_argument("--ur-threshold", dest="ur_threshold", type=int, default=None)
    g.add_argument("--holdout", type=int, default=0, help="also write a probe split of this size per class")

    t = sub.add_parser("train", help="train a model (FTL regimen or budget-matched baseline)")
    common(t)
    t.add_argument("--dataset", required=True)
    t.add_argument("--mode", choices=("ftl", "baseline"), default="ftl")

    e = sub.add_parser("eval", help="center-gallery identification and diagnostics")
    common(e)
    e.add_argument("--dataset", required=True, help="gallery dataset (training set)")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--probes", default=None, help="probe dataset; defaults to the gallery dataset")
    e.add_argument("--space", choices=("f", "g"), default=None)
    e.add_argument("--center-study", action="store_true", help="include the center-estimation study")
    e.add_argument("--jobs", type=int, default=1)

    d = sub.add_parser("transfer-demo", help="emit source/target/transferred feature triples as CSV")
    common(d)
    d.add_argument("--dataset", required=True)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--count", type=int, default=100)

    c = sub.add_parser("center-study", help="center-estimation error study")
    common(c)
    c.add_argument("--dataset", required=True)
    c.add_argument("--checkpoint", default=None, help="encoder checkpoint; omitted = identity encoder")
    c.add_argument("--sizes", default=None, help="comma-separated subset sizes")
    c.add_argument("--reps", type=int, default=None)
    c.add_argument("--jobs", type=int, default=1)

    return parser


_HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "transfer-demo": cmd_transfer_demo,
    "center-study": cmd_center_study,
}


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE

    started = time.time()
    try:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg = load_config(args.config)
        artifacts, seed = _HANDLERS[args.subcommand](args, cfg, out_dir)
        _write_manifest(out_dir, args.subcommand, cfg, seed, artifacts, started)
        return EXIT_OK
    except Diverged as exc:
        _emit({"event": "error", "error_type": "TrainingDiverged", "message": str(exc)})
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except FtlError as exc:
        _emit({"event": "error", "error_type": type(exc).__name__, "message": str(exc)})
        log.error("data error: %s", exc)
        return EXIT_DATA
    except OSError as exc:
        _emit({"event": "error", "error_type": "Io", "message": str(exc)})
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
