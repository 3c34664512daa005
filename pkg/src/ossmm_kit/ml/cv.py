"""Night-grouped cross-validation with an always-on leakage guard.

Folds partition *nights*, never epochs: every epoch of a night lands on
the same side of every split. Before any model sees a fold, the guard
re-derives night disjointness and checks that no identical feature row
appears on both sides; a violation raises LeakageError, which is an
invariant breach rather than a user error and is never caught
internally.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..errors import (
    EmptyResultsError,
    LeakageError,
    TooFewGroupsError,
    ValidationError,
)
from ..features import FeatureTable
from ..model import CLASS_ORDER
from .config import ClassifierConfig
from .metrics import evaluate
from .smote import smote

_CLASS_IDX = tuple(int(s) for s in CLASS_ORDER)


@dataclass(frozen=True)
class FoldPlan:
    """folds[i] = (train_nights, val_nights); validation sets partition
    the full night list.
    """

    folds: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]

    @property
    def k(self) -> int:
        return len(self.folds)

    def validate(self, nights: list[str]) -> None:
        night_set = set(nights)
        seen_val: set[str] = set()
        for train_n, val_n in self.folds:
            tr, va = set(train_n), set(val_n)
            if tr & va:
                raise ValidationError(f"fold shares nights {sorted(tr & va)}")
            if (tr | va) != night_set:
                raise ValidationError("fold does not cover the night list")
            if seen_val & va:
                raise ValidationError(
                    f"night(s) {sorted(seen_val & va)} validate in two folds")
            seen_val |= va
        if seen_val != night_set:
            raise ValidationError("every night must validate in exactly one fold")


def group_kfold(nights: list[str], k: int, seed: int) -> FoldPlan:
    """Seeded shuffle of the (sorted) night list, then a near-even
    partition: the first n % k folds get one extra night.
    """
    uniq = sorted(set(nights))
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    if k > len(uniq):
        raise TooFewGroupsError(f"k={k} folds but only {len(uniq)} nights")
    order = list(np.random.default_rng(seed).permutation(uniq))
    base, extra = divmod(len(order), k)
    folds = []
    pos = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        val = tuple(order[pos: pos + size])
        train = tuple(n for n in order if n not in val)
        folds.append((train, val))
        pos += size
    plan = FoldPlan(tuple(folds))
    plan.validate(uniq)
    return plan


def _row_hashes(X: np.ndarray) -> set[bytes]:
    return {hashlib.sha256(np.ascontiguousarray(row).tobytes()).digest()
            for row in X}


def assert_no_leakage(train_nights, val_nights,
                      X_train: np.ndarray, X_val: np.ndarray) -> None:
    """Group disjointness plus content disjointness, checked on the
    exact arrays handed to the trainer.
    """
    shared = set(train_nights) & set(val_nights)
    if shared:
        raise LeakageError(f"nights on both sides of a fold: {sorted(shared)}")
    common = _row_hashes(X_train) & _row_hashes(X_val)
    if common:
        raise LeakageError(
            f"{len(common)} identical feature row(s) in both train and val")


def _seed_grid(seed: int, n_folds: int, n_configs: int) -> list[list[tuple[int, int]]]:
    """Independent (smote_seed, train_seed) per (fold, config) cell."""
    children = np.random.SeedSequence(seed).spawn(n_folds * n_configs)
    grid = []
    for fi in range(n_folds):
        row = []
        for ci in range(n_configs):
            s = children[fi * n_configs + ci].generate_state(2)
            row.append((int(s[0]), int(s[1])))
        grid.append(row)
    return grid


def run_cv(table: FeatureTable, configs: list[ClassifierConfig], k: int = 6,
           seed: int = 0, plan: FoldPlan | None = None) -> list[dict]:
    """Evaluate every config on every fold of a night-grouped split.

    Returns one result dict per config (in input order) with per-fold
    scores and mean/std aggregates. Training rows are rebalanced with
    SMOTE inside each fold, after the split, so synthetic rows can never
    straddle it.
    """
    from . import train          # late import: ml.__init__ imports this module

    if not configs:
        raise EmptyResultsError("run_cv: no configs to evaluate")
    nights = sorted(set(table.night_ids.tolist()))
    if plan is None:
        plan = group_kfold(nights, k, seed)
    else:
        plan.validate(nights)
    seeds = _seed_grid(seed, plan.k, len(configs))

    results = [{"config": cfg.to_dict(), "folds": []} for cfg in configs]
    for fi, (train_nights, val_nights) in enumerate(plan.folds):
        tr = table.select_nights(train_nights)
        va = table.select_nights(val_nights)
        assert_no_leakage(train_nights, val_nights, tr.X, va.X)
        for ci, cfg in enumerate(configs):
            smote_seed, train_seed = seeds[fi][ci]
            Xb, yb = smote(tr.X, tr.stages, seed=smote_seed,
                           class_order=_CLASS_IDX)
            model = train(cfg, Xb, yb, seed=train_seed)
            rep = evaluate(va.stages, model.predict(va.X))
            results[ci]["folds"].append({
                "fold": fi,
                "val_nights": list(val_nights),
                "n_val_epochs": rep.n_epochs,
                "accuracy": rep.accuracy,
                "macro_f1": rep.macro_f1,
            })
    for res in results:
        f1s = np.array([f["macro_f1"] for f in res["folds"]])
        accs = np.array([f["accuracy"] for f in res["folds"]])
        res["mean_macro_f1"] = float(f1s.mean())
        res["std_macro_f1"] = float(f1s.std())
        res["mean_accuracy"] = float(accs.mean())
        res["std_accuracy"] = float(accs.std())
    return results


def select_config(results: list[dict]) -> dict:
    """Highest mean macro F1 wins; accuracy breaks ties; remaining ties
    go to the earliest entry. Returns the winning result dict.
    """
    if not results:
        raise EmptyResultsError("select_config: empty result list")
    best = results[0]
    for res in results[1:]:
        if (res["mean_macro_f1"] > best["mean_macro_f1"]
            or (res["mean_macro_f1"] == best["mean_macro_f1"]
                and res["mean_accuracy"] > best["mean_accuracy"])):
            best = res
    return best
