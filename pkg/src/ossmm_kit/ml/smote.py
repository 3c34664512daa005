"""Minority oversampling by convex interpolation between same-class
neighbors. Every class is raised to the majority count; originals are
kept untouched as a prefix of the output, synthetic rows are appended
in ascending class order so output layout is reproducible.
"""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateClassError, EmptyInputError

K_NEIGHBORS = 5


def _nearest_neighbors(Xc: np.ndarray, k: int) -> np.ndarray:
    """(n_c, k) indices of each row's k nearest same-class rows by
    squared euclidean distance, self excluded, ties broken by row index.
    """
    sq = np.sum(Xc * Xc, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (Xc @ Xc.T)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def smote(X: np.ndarray, y: np.ndarray, k: int = K_NEIGHBORS, seed: int = 0,
          class_order: tuple[int, ...] | None = None
          ) -> tuple[np.ndarray, np.ndarray]:
    """Balanced (X_out, y_out). k is clamped to class_size - 1 for tiny
    classes; a class with fewer than 2 rows has no segment to
    interpolate along and raises DegenerateClassError.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise EmptyInputError("smote: no rows")
    if X.shape[0] != y.shape[0]:
        raise EmptyInputError(
            f"smote: {X.shape[0]} rows but {y.shape[0]} labels")
    classes = tuple(class_order) if class_order is not None \
        else tuple(sorted(set(y.tolist())))
    counts = {c: int(np.sum(y == c)) for c in classes}
    for c, n_c in counts.items():
        if n_c < 2:
            raise DegenerateClassError(
                f"smote: class {c} has {n_c} sample(s); need at least 2")
    target = max(counts.values())

    rng = np.random.default_rng(seed)
    out_X = [X]
    out_y = [y]
    for c in classes:
        n_c = counts[c]
        need = target - n_c
        if need == 0:
            continue
        Xc = X[y == c]
        k_eff = min(k, n_c - 1)
        nn = _nearest_neighbors(Xc, k_eff)
        base = rng.integers(0, n_c, size=need)
        pick = rng.integers(0, k_eff, size=need)
        u = rng.random(need)
        other = nn[base, pick]
        synth = Xc[base] + u[:, None] * (Xc[other] - Xc[base])
        out_X.append(synth)
        out_y.append(np.full(need, c, dtype=np.int64))
    return np.vstack(out_X), np.concatenate(out_y)
