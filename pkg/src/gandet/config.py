"""Experiment configuration: one flat-key file, CLI overrides, stable hash.

Precedence is flag > file > default. The config hash is computed over the
fully resolved mapping with sorted keys, so key order in the file never
matters.
"""

import hashlib
import json
import os

import yaml

from .degrade import DistortionPool
from .detector import DetectorConfig
from .errors import ConfigError
from .synth import SceneSpec
from .train import TrainConfig

OUT_ROOT_ENV = "GANDET_OUT_ROOT"

# key -> (default, type tag). Types: int, float, str, bool, list[int],
# list[float], list[str], opt_str
SCHEMA = {
    "experiment_id": ("exp", "str"),
    "out_dir": ("runs", "str"),

    "data_seed": (0, "int"),
    "data_image_size": (96, "int"),
    "data_num_objects": (3, "int"),
    "data_min_side": (24, "int"),
    "data_max_side": (48, "int"),
    "data_train": (400, "int"),
    "data_val": (80, "int"),
    "data_test": (150, "int"),

    "pool_family": ("defocus", "str"),
    "pool_camshake_seed": (2023, "int"),
    "pool_camshake_size": (21, "int"),
    "pool_camshake_count": (50, "int"),

    "det_channels": ([12, 24, 36, 48], "list_int"),
    "det_head_kernel": (3, "int"),
    "det_aspect_ratios": ([1.0, 2.0, 0.5], "list_float"),
    "det_anchor_scales": ([33.5 / 96.0, 44.5 / 96.0], "list_float"),
    "det_neg_pos_ratio": (3, "int"),
    "det_alpha": (1.0, "float"),
    "det_init_seed": (0, "int"),

    "train_seed": (0, "int"),
    "train_batch_size": (16, "int"),
    "train_max_epochs": (40, "int"),
    "train_lr": (1e-5, "float"),
    "train_lr_d": (1e-5, "float"),
    "train_baseline_lr": (1e-3, "float"),
    "train_lambda": (1.0, "float"),
    "train_d_period": (2, "int"),
    "train_patience_baseline": (4, "int"),
    "train_patience_finetune": (4, "int"),
    "train_patience_gando": (10, "int"),
    "train_decay_factor": (10.0, "float"),
    "train_max_decays": (2, "int"),
    "train_adam_eps": (1e-8, "float"),
    "train_freeze_after": (None, "opt_str"),
    "train_schedule": ("plateau", "str"),
    "train_two_phase_epochs": ([20, 10], "list_int"),

    "eval_seed": (0, "int"),
    "eval_conf_threshold": (0.05, "float"),
    "eval_nms_iou": (0.45, "float"),
    "eval_max_dets": (100, "int"),
    "eval_families": ([], "list_str"),   # empty -> [pool_family]
}


def _coerce(key, value, tag):
    try:
        if tag == "int":
            if isinstance(value, bool) or (isinstance(value, float) and value != int(value)):
                raise ValueError
            return int(value)
        if tag == "float":
            return float(value)
        if tag == "str":
            if not isinstance(value, str):
                raise ValueError
            return value
        if tag == "opt_str":
            if value is None or isinstance(value, str):
                return value
            raise ValueError
        if tag.startswith("list_"):
            inner = {"list_int": int, "list_float": float, "list_str": str}[tag]
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split() if v]
            return [inner(v) for v in value]
    except (TypeError, ValueError):
        pass
    raise ConfigError(f"config key {key!r}: cannot interpret {value!r} as {tag}")


class ExperimentConfig:
    def __init__(self, values):
        unknown = set(values) - set(SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        self._values = {}
        for key, (default, tag) in SCHEMA.items():
            raw = values.get(key, default)
            self._values[key] = _coerce(key, raw, tag) if raw is not None else None

    def __getitem__(self, key):
        return self._values[key]

    def get(self, key, default=None):
        return self._values.get(key, default)

    def to_dict(self):
        return dict(self._values)

    def hash(self):
        blob = json.dumps(self._values, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    # ----- derived objects -------------------------------------------------
    def scene_spec(self):
        return SceneSpec(
            image_size=self["data_image_size"],
            num_objects=self["data_num_objects"],
            min_object_side=self["data_min_side"],
            max_object_side=self["data_max_side"],
        )

    def counts(self):
        return {"train": self["data_train"], "val": self["data_val"],
                "test": self["data_test"]}

    def pool(self, family=None):
        family = family or self["pool_family"]
        if family == "camshake":
            return DistortionPool.camshake(
                pool_seed=self["pool_camshake_seed"],
                size=self["pool_camshake_size"],
                count=self["pool_camshake_count"],
            )
        return DistortionPool.from_name(family)

    def detector_config(self):
        return DetectorConfig(
            image_size=self["data_image_size"],
            channels=tuple(self["det_channels"]),
            head_kernel=self["det_head_kernel"],
            aspect_ratios=tuple(self["det_aspect_ratios"]),
            anchor_scales=tuple(self["det_anchor_scales"]),
            neg_pos_ratio=self["det_neg_pos_ratio"],
            alpha=self["det_alpha"],
        )

    def train_config(self, mode):
        lr = self["train_baseline_lr"] if mode == "baseline" else self["train_lr"]
        patience_ft = (self["train_patience_baseline"] if mode == "baseline"
                       else self["train_patience_finetune"])
        return TrainConfig(
            seed=self["train_seed"],
            batch_size=self["train_batch_size"],
            max_epochs=self["train_max_epochs"],
            lam=self["train_lambda"],
            lr=lr,
            lr_d=self["train_lr_d"],
            patience_finetune=patience_ft,
            patience_gando=self["train_patience_gando"],
            decay_factor=self["train_decay_factor"],
            max_decays=self["train_max_decays"],
            d_period=self["train_d_period"],
            freeze_after_layer=self["train_freeze_after"],
            adam_eps=self["train_adam_eps"],
            schedule=self["train_schedule"],
            two_phase_epochs=tuple(self["train_two_phase_epochs"]),
        )

    def eval_families(self):
        fams = self["eval_families"] or [self["pool_family"]]
        return list(fams)

    def out_dir(self):
        root = os.environ.get(OUT_ROOT_ENV)
        out = self["out_dir"]
        if root and not os.path.isabs(out):
            out = os.path.join(root, out)
        return out

    def experiment_dir(self):
        return os.path.join(self.out_dir(), self["experiment_id"])


def parse_override(text):
    """'key=value' -> (key, parsed value); values use YAML scalar syntax."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_config(path=None, overrides=()):
    values = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path} must contain a flat key: value mapping")
        values.update(loaded)
    for item in overrides:
        key, val = parse_override(item) if isinstance(item, str) else item
        values[key] = val
    return ExperimentConfig(values)
