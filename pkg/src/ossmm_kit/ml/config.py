"""Classifier configuration: three supported kinds with validated,
defaulted hyperparameters.

The defaults are the tuned operating points the rest of the toolkit
treats as its reference configurations; the CLI grid starts from them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigError

KIND_SVM = "svm"
KIND_RF = "random_forest"
KIND_GBT = "gradient_boosted_trees"
KINDS = (KIND_SVM, KIND_RF, KIND_GBT)

DEFAULT_PARAMS: dict[str, dict] = {
    KIND_SVM: {
        "C": 1.0,
        "gamma": "scale",
        "kernel": "rbf",
        "tol": 1e-3,
    },
    KIND_RF: {
        "n_estimators": 150,
        "max_depth": 15,
        "min_samples_split": 3,
        "min_samples_leaf": 2,
    },
    KIND_GBT: {
        "n_estimators": 100,
        "max_depth": 6,
        "learning_rate": 0.1,
        "subsample": 0.8,
        "colsample": 0.8,
    },
}


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass
class ClassifierConfig:
    """kind plus a fully-populated parameter dict. Construction fills
    defaults and rejects unknown keys or out-of-range values, so a
    config that exists is a config that can train.
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        _require(self.kind in KINDS,
                 f"unknown classifier kind {self.kind!r}; expected one of {KINDS}")
        defaults = DEFAULT_PARAMS[self.kind]
        unknown = set(self.params) - set(defaults)
        _require(not unknown,
                 f"{self.kind}: unknown parameter(s) {sorted(unknown)}")
        merged = {**defaults, **self.params}
        self._check(merged)
        # canonical key order = declaration order of the defaults
        self.params = {k: merged[k] for k in defaults}
        self.seed = int(self.seed)

    def _check(self, p: dict) -> None:
        if self.kind == KIND_SVM:
            _require(isinstance(p["C"], (int, float)) and p["C"] > 0, "svm: C must be > 0")
            g = p["gamma"]
            _require(g == "scale" or (isinstance(g, (int, float)) and g > 0),
                     "svm: gamma must be 'scale' or a positive number")
            _require(p["kernel"] == "rbf", "svm: only the rbf kernel is supported")
            _require(isinstance(p["tol"], (int, float)) and p["tol"] > 0,
                     "svm: tol must be > 0")
        elif self.kind == KIND_RF:
            _require(int(p["n_estimators"]) >= 1, "random_forest: n_estimators >= 1")
            _require(int(p["max_depth"]) >= 1, "random_forest: max_depth >= 1")
            _require(int(p["min_samples_split"]) >= 2,
                     "random_forest: min_samples_split >= 2")
            _require(int(p["min_samples_leaf"]) >= 1,
                     "random_forest: min_samples_leaf >= 1")
        else:
            _require(int(p["n_estimators"]) >= 1,
                     "gradient_boosted_trees: n_estimators >= 1")
            _require(int(p["max_depth"]) >= 1, "gradient_boosted_trees: max_depth >= 1")
            _require(0.0 < float(p["learning_rate"]) <= 1.0,
                     "gradient_boosted_trees: learning_rate in (0, 1]")
            _require(0.0 < float(p["subsample"]) <= 1.0,
                     "gradient_boosted_trees: subsample in (0, 1]")
            _require(0.0 < float(p["colsample"]) <= 1.0,
                     "gradient_boosted_trees: colsample in (0, 1]")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        if not isinstance(d, dict) or "kind" not in d:
            raise ConfigError("classifier config must be a dict with a 'kind' key")
        extra = set(d) - {"kind", "params", "seed"}
        _require(not extra, f"unknown config key(s) {sorted(extra)}")
        return cls(kind=d["kind"], params=dict(d.get("params", {})),
                   seed=int(d.get("seed", 0)))


def stock_config(kind: str, seed: int = 0) -> ClassifierConfig:
    return ClassifierConfig(kind=kind, params={}, seed=seed)


def stock_configs(seed: int = 0) -> list[ClassifierConfig]:
    """The three reference configurations, in canonical kind order."""
    return [stock_config(kind, seed) for kind in KINDS]
