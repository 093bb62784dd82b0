"""Multi-output ridge regression with contiguous-fold alpha selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RidgeFit:
    weights: np.ndarray        # (p, q)
    alpha: float
    x_mean: np.ndarray         # (p,)
    y_mean: np.ndarray         # (q,)

    @property
    def intercept(self) -> np.ndarray:
        return self.y_mean - self.x_mean @ self.weights

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return (X - self.x_mean) @ self.weights + self.y_mean


def _solve_path(X, Y, alphas):
    """Ridge weights for each alpha from one thin SVD of X."""
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    UtY = U.T @ Y
    out = []
    for a in alphas:
        if a == 0.0:
            tol = s.max(initial=0.0) * max(X.shape) * np.finfo(np.float64).eps
            if s.size < X.shape[1] or np.any(s <= tol):
                raise np.linalg.LinAlgError(
                    "design matrix is rank deficient; use a positive ridge alpha")
            d = 1.0 / s
        else:
            d = s / (s * s + a)
        out.append(Vt.T @ (d[:, None] * UtY))
    return out


def r2_score(y_true, y_pred) -> np.ndarray:
    """Per-column coefficient of determination."""
    ss_res = np.sum((y_true - y_pred) ** 2, axis=0)
    ss_tot = np.sum((y_true - y_true.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = 1.0 - ss_res / ss_tot
    return np.where(ss_tot > 0, r2, np.where(ss_res <= 1e-24, 1.0, 0.0))


def fold_slices(n: int, folds: int) -> list[slice]:
    if folds < 2 or folds > n:
        raise ValueError(f"need 2 <= folds <= n ({n}), got {folds}")
    edges = np.linspace(0, n, folds + 1).round().astype(int)
    return [slice(edges[i], edges[i + 1]) for i in range(folds)]


def fit_ridge(X, Y, alpha_grid=(1e-6,), folds: int = 5, center: bool = True) -> RidgeFit:
    """Fit ridge weights at the grid alpha with the best mean held-out R^2.

    Folds are contiguous blocks (time-series friendly). With a single alpha no
    cross-validation runs. ``center=False`` fits through the origin.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError(f"X {X.shape} and Y {Y.shape} disagree")
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("non-finite input to ridge")
    alphas = [float(a) for a in alpha_grid]
    if not alphas:
        raise ValueError("empty alpha grid")
    if any(a < 0 for a in alphas):
        raise ValueError("ridge alphas must be non-negative")

    def center_of(A):
        return A.mean(axis=0) if center else np.zeros(A.shape[1])

    best = alphas[0]
    if len(alphas) > 1:
        scores = np.zeros(len(alphas))
        for sl in fold_slices(n, folds):
            train = np.ones(n, dtype=bool)
            train[sl] = False
            Xtr, Ytr = X[train], Y[train]
            xm, ym = center_of(Xtr), center_of(Ytr)
            Ws = _solve_path(Xtr - xm, Ytr - ym, alphas)
            for i, W in enumerate(Ws):
                pred = (X[sl] - xm) @ W + ym
                scores[i] += float(np.mean(r2_score(Y[sl], pred)))
        best = alphas[int(np.argmax(scores))]
    xm, ym = center_of(X), center_of(Y)
    (W,) = _solve_path(X - xm, Y - ym, [best])
    return RidgeFit(W, best, xm, ym)
