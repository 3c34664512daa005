"""Versioned JSON serialization for trained models.

The payload keeps full float64 precision because json emits shortest
round-trip representations, so save -> load -> predict is bit-identical
to the in-memory model. Unknown kinds or versions are refused rather
than guessed at.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import MissingInputError, UnsupportedModelError, ValidationError
from ..features import StandardizationStats
from .config import ClassifierConfig
from .svm import SvmModel, _PairRule
from .trees import DecisionTree, GradientBoostedTreesModel, RandomForestModel

MODEL_FORMAT_VERSION = 1


def _payload(model) -> dict:
    if isinstance(model, RandomForestModel):
        return {"trees": [t.to_dict() for t in model.trees]}
    if isinstance(model, GradientBoostedTreesModel):
        return {"learning_rate": model.learning_rate,
                "stages": [[t.to_dict() for t in stage]
                           for stage in model.stages]}
    if isinstance(model, SvmModel):
        return {
            "standardization": {"mean": model.stats.mean.tolist(),
                                "std": model.stats.std.tolist()},
            "gamma": model.gamma,
            "pairs": [{
                "class_pos": r.class_pos,
                "class_neg": r.class_neg,
                "sv": r.sv.tolist(),
                "coef": r.coef.tolist(),
                "bias": r.bias,
                "converged": r.converged,
            } for r in model.pairs],
        }
    raise UnsupportedModelError(f"cannot serialize {type(model).__name__}")


def model_to_dict(model, meta: dict | None = None) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "tool_version": __version__,
        "kind": model.kind,
        "config": model.config,
        "class_order": list(model.class_order),
        "n_features": model.n_features,
        "training_meta": dict(model.training_meta),
        "meta": dict(meta or {}),
        "payload": _payload(model),
    }


def save_model(model, path: Path, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, meta)) + "\n")


def model_from_dict(d: dict):
    for key in ("format_version", "kind", "config", "class_order",
                "n_features", "payload"):
        if key not in d:
            raise ValidationError(f"model file missing key {key!r}")
    if d["format_version"] != MODEL_FORMAT_VERSION:
        raise UnsupportedModelError(
            f"model format {d['format_version']} not supported "
            f"(this build reads {MODEL_FORMAT_VERSION})")
    kind = d["kind"]
    config = ClassifierConfig.from_dict(d["config"]).to_dict()
    class_order = tuple(int(c) for c in d["class_order"])
    n_features = int(d["n_features"])
    meta = dict(d.get("training_meta", {}))
    payload = d["payload"]
    if kind == "random_forest":
        return RandomForestModel(
            kind=kind, config=config, class_order=class_order,
            n_features=n_features,
            trees=[DecisionTree.from_dict(t) for t in payload["trees"]],
            training_meta=meta)
    if kind == "gradient_boosted_trees":
        return GradientBoostedTreesModel(
            kind=kind, config=config, class_order=class_order,
            n_features=n_features,
            learning_rate=float(payload["learning_rate"]),
            stages=[[DecisionTree.from_dict(t) for t in stage]
                    for stage in payload["stages"]],
            training_meta=meta)
    if kind == "svm":
        stats = StandardizationStats(
            mean=np.asarray(payload["standardization"]["mean"], dtype=np.float64),
            std=np.asarray(payload["standardization"]["std"], dtype=np.float64))
        pairs = [_PairRule(
            class_pos=int(p["class_pos"]), class_neg=int(p["class_neg"]),
            sv=np.asarray(p["sv"], dtype=np.float64).reshape(-1, n_features),
            coef=np.asarray(p["coef"], dtype=np.float64),
            bias=float(p["bias"]), converged=bool(p["converged"]))
            for p in payload["pairs"]]
        return SvmModel(kind=kind, config=config, class_order=class_order,
                        n_features=n_features, stats=stats,
                        gamma=float(payload["gamma"]), pairs=pairs,
                        training_meta=meta)
    raise UnsupportedModelError(f"unknown model kind {kind!r}")


def load_model(path: Path):
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"model file not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(d)
