"""Config-file parsing for the CLI.

The format is flat, typed key=value text in INI sections, one section per
concern. Every key has a default; an unknown section or key is a hard error
so experiment typos die loudly instead of silently running defaults.

    [dataset]
    n_regular = 50
    seed = 7

    [training]
    pretrain_iters = 2000
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import GeneratorConfig
from .errors import ConfigInvalid
from .network import LossWeights
from .trainer import TrainConfig
from .transfer import TransferConfig

_INT, _FLOAT, _BOOL, _STR, _OPT_INT, _INT_LIST = "int", "float", "bool", "str", "opt_int", "int_list"

# section -> key -> (type, default)
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "dataset": {
        "n_regular": (_INT, 50),
        "n_ur": (_INT, 50),
        "samples_per_regular": (_INT, 200),
        "samples_per_ur": (_INT, 5),
        "input_dim": (_INT, 32),
        "class_sep": (_FLOAT, 1.0),
        "shared_cov_rank": (_INT, 8),
        "nuisance_strength": (_FLOAT, 4.5),
        "seed": (_INT, 0),
        "ur_threshold": (_INT, 20),
    },
    "network": {
        "g_dim": (_INT, 32),
        "f_dim": (_INT, 32),
        "hidden": (_INT, 64),
    },
    "training": {
        "pretrain_iters": (_INT, 2000),
        "n_iter": (_INT, 200),
        "total_alternations": (_INT, 4),
        "batch_size": (_INT, 64),
        "lr_pretrain": (_FLOAT, 2e-4),
        "lr_alternate": (_FLOAT, 1e-5),
        "alpha_sfmx": (_FLOAT, 1.0),
        "alpha_recon": (_FLOAT, 1.0),
        "alpha_reg": (_FLOAT, 0.25),
        "seed": (_INT, 0),
        "pretrain_min_decrease": (_FLOAT, 0.5),
    },
    "transfer": {
        "tau": (_FLOAT, 30.0),
        "energy": (_FLOAT, 0.95),
        "k_override": (_OPT_INT, None),
        "use_flip": (_BOOL, True),
    },
    "evaluation": {
        "space": (_STR, "f"),
        "subset_sizes": (_INT_LIST, (1, 5, 10, 20)),
        "n_reps": (_INT, 100),
    },
}


def _convert(kind: str, raw: str, where: str):
    try:
        if kind == _INT:
            return int(raw)
        if kind == _FLOAT:
            return float(raw)
        if kind == _BOOL:
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == _OPT_INT:
            return None if raw.strip().lower() in ("none", "") else int(raw)
        if kind == _INT_LIST:
            return tuple(int(p) for p in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError:
        raise ConfigInvalid(f"cannot parse {where} = {raw!r} as {kind}") from None


@dataclass
class FullConfig:
    """Resolved values for every section, with CLI overrides applied."""

    values: dict[str, dict[str, object]] = field(
        default_factory=lambda: {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    )

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, value) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigInvalid(f"unknown config key [{section}] {key}")
        self.values[section][key] = value

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(**self.values["dataset"])

    def transfer_config(self) -> TransferConfig:
        return TransferConfig(**self.values["transfer"])

    def train_config(self) -> TrainConfig:
        t = self.values["training"]
        n = self.values["network"]
        return TrainConfig(
            pretrain_iters=t["pretrain_iters"],
            n_iter=t["n_iter"],
            total_alternations=t["total_alternations"],
            batch_size=t["batch_size"],
            lr_pretrain=t["lr_pretrain"],
            lr_alternate=t["lr_alternate"],
            loss_weights=LossWeights(t["alpha_sfmx"], t["alpha_recon"], t["alpha_reg"]),
            transfer_cfg=self.transfer_config(),
            seed=t["seed"],
            g_dim=n["g_dim"],
            f_dim=n["f_dim"],
            hidden=n["hidden"],
            pretrain_min_decrease=t["pretrain_min_decrease"],
        )

    def to_dict(self) -> dict:
        out = {}
        for section, keys in self.values.items():
            out[section] = {
                k: (list(v) if isinstance(v, tuple) else v) for k, v in keys.items()
            }
        return out


def load_config(path: str | Path | None) -> FullConfig:
    """Defaults, overlaid with the file's sections when a path is given."""
    cfg = FullConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as exc:
        raise ConfigInvalid(f"malformed config file {path}: {exc}") from None
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigInvalid(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigInvalid(f"unknown config key [{section}] {key}")
            kind = SCHEMA[section][key][0]
            cfg.values[section][key] = _convert(kind, raw, f"[{section}] {key}")
    return cfg
