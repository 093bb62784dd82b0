"""Gesture evaluation: MAE, APE, PCK, FGD, beat consistency and diversity.

Clips are ``(..., N, 98)`` arrays of flattened 49 x 2 keypoints. ``pck`` is
not symmetric: the first argument is the prediction, the second the
reference (whose shoulders set the threshold).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .f2t import pearson_columns  # noqa: F401  (shared utility)
from .skeleton import L_SHOULDER, N_KEYPOINTS, R_SHOULDER


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[-1] != 2 * N_KEYPOINTS:
        raise ValueError(f"last axis must hold {2 * N_KEYPOINTS} coordinates, got {a.shape[-1]}")
    return a, b


def _kp(x):
    return x.reshape(x.shape[:-1] + (N_KEYPOINTS, 2))


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def ape(a, b) -> float:
    """Mean per-keypoint Euclidean error."""
    a, b = _pair(a, b)
    return float(np.mean(np.linalg.norm(_kp(a) - _kp(b), axis=-1)))


def pck(pred, ref, mode: str = "relative", rho: float = 0.2, delta: float = 0.2) -> float:
    """Fraction of keypoints within the threshold of the reference.

    ``relative``: ``rho`` times the reference's shoulder distance in each
    frame, falling back to ``delta`` where that distance is below 1e-6.
    ``absolute``: ``delta`` everywhere.
    """
    a, b = _pair(pred, ref)
    err = np.linalg.norm(_kp(a) - _kp(b), axis=-1)           # (..., N, 49)
    if mode == "relative":
        kb = _kp(b)
        sd = np.linalg.norm(kb[..., R_SHOULDER, :] - kb[..., L_SHOULDER, :], axis=-1)
        thr = np.where(sd < 1e-6, delta, rho * sd)[..., None]
    elif mode == "absolute":
        thr = delta
    else:
        raise ValueError(f"unknown PCK mode {mode!r}")
    return float(np.mean(err <= thr))


# ------------------------------------------------------------------ FGD

def _sym_sqrt(m):
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(mu1, s1, mu2, s2, eps: float = 1e-6, return_flag: bool = False):
    """Frechet distance between N(mu1, s1 + eps I) and N(mu2, s2 + eps I).

    The cross term uses the symmetric form sqrt(s1^1/2 s2 s1^1/2).
    """
    mu1, mu2 = np.atleast_1d(mu1).astype(np.float64), np.atleast_1d(mu2).astype(np.float64)
    s1 = np.atleast_2d(s1).astype(np.float64) + eps * np.eye(mu1.size)
    s2 = np.atleast_2d(s2).astype(np.float64) + eps * np.eye(mu2.size)
    if s1.shape != s2.shape or mu1.shape != mu2.shape:
        raise ValueError("Gaussians must share their dimension")
    w1 = np.linalg.eigvalsh(s1)
    w2 = np.linalg.eigvalsh(s2)
    singular = bool(min(w1.min(), w2.min()) <= 0 or not np.all(np.isfinite(s1 + s2)))
    r1 = _sym_sqrt(s1)
    cross = _sym_sqrt(r1 @ s2 @ r1)
    d = float(np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2 * np.trace(cross))
    if singular:
        warnings.warn("covariance is singular after regularization", RuntimeWarning)
    return (d, singular) if return_flag else d


def _features(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 3 or x.shape[0] < 2:
        raise ValueError("each set needs at least two clips of shape (N, F)")
    return x.reshape(-1, x.shape[-1])


def fgd(a_set, b_set, feature_mode: str = "raw", pca_dim: int = 16, eps: float = 1e-6,
        return_flag: bool = False):
    """Frechet gesture distance over per-frame features.

    ``raw`` uses flattened frames; ``pca`` projects both sets onto the top
    ``pca_dim`` principal axes of their union first.
    """
    fa, fb = _features(a_set), _features(b_set)
    if fa.shape[1] != fb.shape[1]:
        raise ValueError("sets have different feature widths")
    if feature_mode == "pca":
        pooled = np.vstack([fa, fb])
        centre = pooled.mean(axis=0)
        _, _, vt = np.linalg.svd(pooled - centre, full_matrices=False)
        basis = vt[:pca_dim].T
        fa, fb = (fa - centre) @ basis, (fb - centre) @ basis
    elif feature_mode != "raw":
        raise ValueError(f"unknown FGD feature mode {feature_mode!r}")
    return frechet_distance(fa.mean(axis=0), np.cov(fa, rowvar=False),
                            fb.mean(axis=0), np.cov(fb, rowvar=False), eps, return_flag)


# ------------------------------------------------------------------ BC

def kinematic_beats(gesture) -> np.ndarray:
    """Frames where mean keypoint speed is a strict local minimum below the
    clip's median speed. Speed at frame i is the mean displacement from
    frame i - 1."""
    g = np.asarray(gesture, dtype=np.float64)
    if g.ndim != 2 or g.shape[-1] != 2 * N_KEYPOINTS:
        raise ValueError("gesture must be (N, 98)")
    kp = _kp(g)
    speed = np.linalg.norm(np.diff(kp, axis=0), axis=-1).mean(axis=-1)   # frames 1..N-1
    if speed.size < 3:
        return np.zeros(0, dtype=np.int64)
    mid = speed[1:-1]
    is_min = (mid < speed[:-2]) & (mid < speed[2:]) & (mid < np.median(speed))
    return np.nonzero(is_min)[0] + 2


def beat_consistency(gesture, onsets, sigma: float = 1.5, beats=None, return_flag: bool = False):
    """Mean over kinematic beats of exp(-d^2 / 2 sigma^2), d = frame distance
    to the nearest onset. No beats gives 0 and raises the flag."""
    onsets = np.asarray(onsets, dtype=np.float64).reshape(-1)
    if onsets.size == 0:
        raise ValueError("beat consistency needs at least one onset")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    beats = kinematic_beats(gesture) if beats is None else np.asarray(beats, dtype=np.float64)
    if beats.size == 0:
        return (0.0, True) if return_flag else 0.0
    d = np.min(np.abs(beats[:, None] - onsets[None, :]), axis=1)
    v = float(np.mean(np.exp(-d ** 2 / (2 * sigma ** 2))))
    return (v, False) if return_flag else v


def diversity(clips) -> float:
    """Mean pairwise L2 distance between flattened clips."""
    x = np.asarray(clips, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("diversity needs at least two clips")
    f = x.reshape(x.shape[0], -1)
    sq = np.sum(f ** 2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * f @ f.T, 0)
    iu = np.triu_indices(f.shape[0], 1)
    return float(np.mean(np.sqrt(d2[iu])))


# ------------------------------------------------------------------ report

@dataclass
class MetricsReport:
    mae: float
    ape: float
    pck: float
    fgd: float
    bc: float
    diversity: float
    config: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("mae", "ape", "pck", "fgd", "bc", "diversity")}
        out.update({f"config.{k}": v for k, v in self.config.items()})
        out.update({f"flag.{k}": v for k, v in self.flags.items()})
        return out


def evaluate(gen, ref, onsets=None, pck_rho: float = 0.2, bc_sigma: float = 1.5,
             fgd_mode: str = "raw", pca_dim: int = 16) -> MetricsReport:
    """All six measures for generated clips against reference clips.

    ``onsets`` is one array of onset frames per clip (BC is skipped, reported
    as 0 with a flag, when absent).
    """
    gen, ref = _pair(gen, ref)
    if gen.ndim == 2:
        gen, ref = gen[None], ref[None]
    flags = {}
    if gen.shape[0] >= 2:
        f, flags["fgd_singular"] = fgd(gen, ref, fgd_mode, pca_dim, return_flag=True)
        div = diversity(gen)
    else:
        f, div = 0.0, 0.0
        flags["single_clip"] = True
    bcs, no_beats = [], 0
    if onsets is not None:
        for g, o in zip(gen, onsets):
            if len(o) == 0:
                continue
            v, flag = beat_consistency(g, o, bc_sigma, return_flag=True)
            bcs.append(v)
            no_beats += flag
    if not bcs:
        flags["bc_missing"] = True
    if no_beats:
        flags["bc_no_beats"] = no_beats
    cfg = {"pck_rho": pck_rho, "bc_sigma": bc_sigma, "fgd_mode": fgd_mode,
           "n_clips": gen.shape[0]}
    if fgd_mode == "pca":
        cfg["pca_dim"] = pca_dim
    return MetricsReport(mae(gen, ref), ape(gen, ref), pck(gen, ref, rho=pck_rho), f,
                         float(np.mean(bcs)) if bcs else 0.0, div, cfg, flags)
