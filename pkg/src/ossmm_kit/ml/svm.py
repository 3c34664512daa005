"""Soft-margin RBF SVM trained by sequential minimal optimization,
one-vs-one for multiclass.

The SMO loop follows the classic two-heuristic scheme: alternate full
passes with non-bound passes, pick the second multiplier by maximum
|E1 - E2| with deterministic fallbacks. No randomness anywhere; scan
orders are fixed, so training is reproducible by construction.

Decision convention: f(x) = sum_j alpha_j y_j K(x_j, x) + b, and the
error cache tracks E_i = f(x_i) - y_i.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ..errors import ValidationError
from ..features import StandardizationStats
from .trees import _check_predict_input, _check_training_labels

_EPS = 1e-10
MAX_SWEEPS = 200


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||a - b||^2) for every row pair."""
    a2 = np.sum(A * A, axis=1)[:, None]
    b2 = np.sum(B * B, axis=1)[None, :]
    d2 = np.maximum(a2 + b2 - 2.0 * (A @ B.T), 0.0)
    return np.exp(-gamma * d2)


def resolve_gamma(gamma, X: np.ndarray) -> float:
    """'scale' means 1 / (n_features * var(X)), mirroring the common
    library convention; a flat matrix falls back to 1 / n_features.
    """
    if gamma == "scale":
        var = float(X.var())
        if var < 1e-12:
            return 1.0 / X.shape[1]
        return 1.0 / (X.shape[1] * var)
    return float(gamma)


class _Smo:
    """Binary SMO on a precomputed kernel matrix with labels in {-1,+1}."""

    def __init__(self, K: np.ndarray, y: np.ndarray, C: float, tol: float):
        self.K = K
        self.y = y.astype(np.float64)
        self.C = C
        self.tol = tol
        self.n = y.shape[0]
        self.alpha = np.zeros(self.n)
        self.b = 0.0
        self.E = -self.y.copy()          # f = 0 initially, E = f - y
        self.converged = False

    def _take_step(self, i1: int, i2: int) -> bool:
        if i1 == i2:
            return False
        a1_old, a2_old = self.alpha[i1], self.alpha[i2]
        y1, y2 = self.y[i1], self.y[i2]
        E1, E2 = self.E[i1], self.E[i2]
        s = y1 * y2
        if s > 0:
            L = max(0.0, a1_old + a2_old - self.C)
            H = min(self.C, a1_old + a2_old)
        else:
            L = max(0.0, a2_old - a1_old)
            H = min(self.C, self.C + a2_old - a1_old)
        if H - L < _EPS:
            return False
        k11 = self.K[i1, i1]
        k12 = self.K[i1, i2]
        k22 = self.K[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > _EPS:
            a2 = a2_old + y2 * (E1 - E2) / eta
            a2 = min(max(a2, L), H)
        else:
            # degenerate curvature: evaluate the objective at both ends
            f1 = y1 * (E1 + self.b) - a1_old * k11 - s * a2_old * k12
            f2 = y2 * (E2 + self.b) - s * a1_old * k12 - a2_old * k22
            L1 = a1_old + s * (a2_old - L)
            H1 = a1_old + s * (a2_old - H)
            obj_l = (L1 * f1 + L * f2 + 0.5 * L1 * L1 * k11
                     + 0.5 * L * L * k22 + s * L * L1 * k12)
            obj_h = (H1 * f1 + H * f2 + 0.5 * H1 * H1 * k11
                     + 0.5 * H * H * k22 + s * H * H1 * k12)
            if obj_l < obj_h - _EPS:
                a2 = L
            elif obj_l > obj_h + _EPS:
                a2 = H
            else:
                return False
        if abs(a2 - a2_old) < _EPS * (a2 + a2_old + _EPS):
            return False
        a1 = a1_old + s * (a2_old - a2)

        d1 = y1 * (a1 - a1_old)
        d2 = y2 * (a2 - a2_old)
        b1 = self.b - E1 - d1 * k11 - d2 * k12
        b2 = self.b - E2 - d1 * k12 - d2 * k22
        if _EPS < a1 < self.C - _EPS:
            b_new = b1
        elif _EPS < a2 < self.C - _EPS:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)

        self.E += d1 * self.K[i1] + d2 * self.K[i2] + (b_new - self.b)
        self.alpha[i1] = a1
        self.alpha[i2] = a2
        self.b = b_new
        return True

    def _examine(self, i2: int) -> int:
        y2 = self.y[i2]
        a2 = self.alpha[i2]
        E2 = self.E[i2]
        r2 = E2 * y2
        if not ((r2 < -self.tol and a2 < self.C) or (r2 > self.tol and a2 > 0)):
            return 0
        non_bound = np.flatnonzero((self.alpha > _EPS)
                                   & (self.alpha < self.C - _EPS))
        if non_bound.size > 1:
            i1 = int(non_bound[np.argmax(np.abs(self.E[non_bound] - E2))])
            if self._take_step(i1, i2):
                return 1
        start = (i2 + 1) % self.n
        for i1 in np.roll(non_bound, -np.searchsorted(non_bound, start)):
            if self._take_step(int(i1), i2):
                return 1
        for i1 in range(start, start + self.n):
            if self._take_step(i1 % self.n, i2):
                return 1
        return 0

    def solve(self) -> None:
        examine_all = True
        sweeps = 0
        while sweeps < MAX_SWEEPS:
            sweeps += 1
            if examine_all:
                targets = range(self.n)
            else:
                targets = np.flatnonzero((self.alpha > _EPS)
                                         & (self.alpha < self.C - _EPS))
            changed = sum(self._examine(int(i)) for i in targets)
            if examine_all:
                if changed == 0:
                    self.converged = True
                    return
                examine_all = False
            elif changed == 0:
                examine_all = True


@dataclass
class _PairRule:
    """One trained one-vs-one decision: f > 0 votes class_pos."""

    class_pos: int
    class_neg: int
    sv: np.ndarray            # (m, d) standardized support vectors
    coef: np.ndarray          # (m,) alpha * y
    bias: float
    converged: bool

    def decision(self, Z: np.ndarray, gamma: float) -> np.ndarray:
        return rbf_kernel(Z, self.sv, gamma) @ self.coef + self.bias


@dataclass
class SvmModel:
    kind: str
    config: dict
    class_order: tuple[int, ...]
    n_features: int
    stats: StandardizationStats
    gamma: float
    pairs: list[_PairRule]
    training_meta: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = _check_predict_input(X, self.n_features)
        Z = self.stats.apply(X)
        votes = np.zeros((X.shape[0], len(self.class_order)), dtype=np.int64)
        for pair in self.pairs:
            f = pair.decision(Z, self.gamma)
            votes[f > 0, pair.class_pos] += 1
            votes[f <= 0, pair.class_neg] += 1
        return np.argmax(votes, axis=1)


def train_svm(config, X: np.ndarray, y: np.ndarray,
              class_order: tuple[int, ...], seed: int) -> SvmModel:
    """Standardizes internally (stats are stored with the model), then
    solves one SMO problem per class pair. seed is accepted for
    interface symmetry; the solver itself is deterministic.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_training_labels(y, class_order)
    p = config.params
    stats = StandardizationStats.fit(X)
    Z = stats.apply(X)
    gamma = resolve_gamma(p["gamma"], Z)
    C = float(p["C"])
    tol = float(p["tol"])

    pairs: list[_PairRule] = []
    for ci, cj in combinations(class_order, 2):
        mask = (y == ci) | (y == cj)
        Zp = Z[mask]
        yp = np.where(y[mask] == ci, 1.0, -1.0)
        if Zp.shape[0] < 2:
            raise ValidationError(f"svm: pair ({ci}, {cj}) has too few rows")
        smo = _Smo(rbf_kernel(Zp, Zp, gamma), yp, C, tol)
        smo.solve()
        keep = smo.alpha > _EPS
        pairs.append(_PairRule(
            class_pos=int(ci), class_neg=int(cj),
            sv=Zp[keep], coef=(smo.alpha * yp)[keep], bias=smo.b,
            converged=smo.converged))
    return SvmModel(
        kind="svm", config=config.to_dict(), class_order=tuple(class_order),
        n_features=X.shape[1], stats=stats, gamma=gamma, pairs=pairs,
        training_meta={"n_rows": int(X.shape[0]),
                       "gamma_resolved": float(gamma),
                       "all_pairs_converged": all(r.converged for r in pairs),
                       "seed": int(seed)})
