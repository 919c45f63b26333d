"""Experiment configuration: JSON schema, validation, and construction.

A config names a dataset, the task split, the buffer capacities, the
methods with their per-method hyperparameters, and the seeds. Validation
failures report the offending field path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import jsonschema

from .losses import LossWeights
from .methods import METHOD_IDS, MethodConfig
from .model import ModelConfig
from .stream import (AugmentPolicy, Dataset, GaussianSpec, gen_synthetic_gaussian,
                     load_cifar_dataset, load_jsonl)
from .tensor import SgdConfig


class ConfigError(ValueError):
    pass


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "bisoncl experiment config",
    "type": "object",
    "required": ["dataset", "num_tasks", "classes_per_task", "buffer_capacities",
                 "methods", "seeds"],
    "additionalProperties": False,
    "properties": {
        "dataset": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["synthetic-gaussian", "cifar", "jsonl"]},
                "seed": {"type": "integer"},
                "num_classes": {"type": "integer", "minimum": 2},
                "dim": {"type": "integer", "minimum": 1},
                "train_per_class": {"type": "integer", "minimum": 1},
                "test_per_class": {"type": "integer", "minimum": 1},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "pair_offset": {"type": ["number", "null"]},
                "train_paths": {"type": "array", "items": {"type": "string"}},
                "test_path": {"type": "string"},
                "format": {"enum": ["auto", "cifar10", "cifar100"]},
                "path": {"type": "string"},
            },
        },
        "num_tasks": {"type": "integer", "minimum": 1},
        "classes_per_task": {"type": "integer", "minimum": 1},
        "buffer_capacities": {"type": "array", "minItems": 1,
                              "items": {"type": "integer", "minimum": 1}},
        "methods": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id"],
                "additionalProperties": False,
                "properties": {
                    "id": {"enum": list(METHOD_IDS)},
                    "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                    "pal_weight": {"type": "number", "minimum": 0},
                    "align_weight": {"type": "number", "minimum": 0},
                    "pal_sharpness": {"type": "number", "exclusiveMinimum": 0},
                    "pal_margin": {"type": "number", "minimum": 0},
                    "inference": {"enum": ["ncm", "linear-softmax"]},
                    "augmentation": {"enum": ["none", "vector-noise", "image-basic"]},
                    "noise_sigma": {"type": "number", "minimum": 0},
                    "noise_zero_prob": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
        "stream_batch_size": {"type": "integer", "minimum": 1},
        "buffer_batch_size": {"type": "integer", "minimum": 1},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden_dims": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "embed_dim": {"type": "integer", "minimum": 1},
                "scale_init": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "fixed_class_order": {
            "type": ["array", "null"],
            "items": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
        "upper_bound_mode": {"enum": ["sequential", "from-scratch"]},
        "output_dir": {"type": "string"},
    },
}


@dataclass
class ExperimentConfig:
    raw: dict
    dataset_spec: dict
    num_tasks: int
    classes_per_task: int
    buffer_capacities: list
    method_cfgs: list  # (id, MethodConfig) pairs in config order
    seeds: list
    stream_batch_size: int = 10
    buffer_batch_size: int = 10
    model: Optional[dict] = None
    fixed_class_order: Optional[list] = None
    upper_bound_mode: str = "sequential"
    output_dir: str = "results"


def validate_config(raw: dict) -> None:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config field {path}: {exc.message}") from exc
    n_need = raw["num_tasks"] * raw["classes_per_task"]
    kind = raw["dataset"].get("kind")
    if kind == "synthetic-gaussian":
        n_have = raw["dataset"].get("num_classes", 10)
        if n_need > n_have:
            raise ConfigError(
                f"config field num_tasks: {raw['num_tasks']} tasks x "
                f"{raw['classes_per_task']} classes need {n_need} classes, "
                f"dataset has {n_have}")
    if kind == "cifar" and not raw["dataset"].get("train_paths"):
        raise ConfigError("config field dataset.train_paths: required for cifar datasets")
    if kind == "jsonl" and not raw["dataset"].get("path"):
        raise ConfigError("config field dataset.path: required for jsonl datasets")
    fco = raw.get("fixed_class_order")
    if fco is not None:
        if len(fco) != raw["num_tasks"]:
            raise ConfigError("config field fixed_class_order: "
                              f"expected {raw['num_tasks']} tasks, got {len(fco)}")
        for i, t in enumerate(fco):
            if len(t) != raw["classes_per_task"]:
                raise ConfigError(f"config field fixed_class_order.{i}: "
                                  f"expected {raw['classes_per_task']} classes")


def _method_config(entry: dict) -> MethodConfig:
    weights = LossWeights(
        pal_weight=entry.get("pal_weight", 0.1),
        align_weight=entry.get("align_weight", 3.0),
        pal_sharpness=entry.get("pal_sharpness", 32.0),
        pal_margin=entry.get("pal_margin", 0.1))
    policy = AugmentPolicy(
        kind=entry.get("augmentation", "none"),
        sigma=entry.get("noise_sigma", 0.05),
        zero_prob=entry.get("noise_zero_prob", 0.1))
    return MethodConfig(
        method=entry["id"],
        weights=weights,
        sgd=SgdConfig(entry.get("learning_rate", 0.1)),
        inference=entry.get("inference", ""),
        augmentation=policy)


def parse_config(raw: dict) -> ExperimentConfig:
    validate_config(raw)
    return ExperimentConfig(
        raw=raw,
        dataset_spec=raw["dataset"],
        num_tasks=raw["num_tasks"],
        classes_per_task=raw["classes_per_task"],
        buffer_capacities=list(raw["buffer_capacities"]),
        method_cfgs=[(m["id"], _method_config(m)) for m in raw["methods"]],
        seeds=list(raw["seeds"]),
        stream_batch_size=raw.get("stream_batch_size", 10),
        buffer_batch_size=raw.get("buffer_batch_size", 10),
        model=raw.get("model"),
        fixed_class_order=raw.get("fixed_class_order"),
        upper_bound_mode=raw.get("upper_bound_mode", "sequential"),
        output_dir=raw.get("output_dir", "results"))


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(raw)


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    spec = cfg.dataset_spec
    kind = spec["kind"]
    if kind == "synthetic-gaussian":
        gspec = GaussianSpec(
            num_classes=spec.get("num_classes", 10),
            dim=spec.get("dim", 32),
            train_per_class=spec.get("train_per_class", 500),
            test_per_class=spec.get("test_per_class", 100),
            radius=spec.get("radius", 3.0),
            sigma=spec.get("sigma", 1.0),
            pair_offset=spec.get("pair_offset"))
        return gen_synthetic_gaussian(gspec, seed=spec.get("seed", 0))
    if kind == "cifar":
        return load_cifar_dataset(spec["train_paths"], spec["test_path"],
                                  fmt=spec.get("format", "auto"))
    if kind == "jsonl":
        return load_jsonl(spec["path"])
    raise ConfigError(f"config field dataset.kind: unknown kind {kind!r}")


def build_model_config(cfg: ExperimentConfig, dataset: Dataset) -> ModelConfig:
    model = cfg.model or {}
    return ModelConfig(
        input_dim=dataset.feature_dim,
        num_classes=dataset.num_classes,
        hidden_dims=tuple(model.get("hidden_dims", (128, 64))),
        embed_dim=model.get("embed_dim", 32),
        scale_init=model.get("scale_init", 10.0))


def default_gaussian_config(output_dir: str = "results") -> dict:
    """The shipped Split-Gaussian-10 benchmark grid."""
    return {
        "dataset": {"kind": "synthetic-gaussian", "seed": 0, "num_classes": 10,
                    "dim": 32, "train_per_class": 500, "test_per_class": 100,
                    "radius": 3.0, "sigma": 1.0},
        "num_tasks": 5,
        "classes_per_task": 2,
        "buffer_capacities": [200],
        "methods": [
            {"id": "finetune"},
            {"id": "er"},
            {"id": "er-ncm"},
            {"id": "bison", "pal_weight": 0.1, "align_weight": 3.0,
             "augmentation": "vector-noise"},
        ],
        "seeds": [0, 1, 2, 3, 4],
        "stream_batch_size": 10,
        "buffer_batch_size": 10,
        "output_dir": output_dir,
    }
