"""Text-conditioned gesture diffusion (phase I) and the shared model container.

A :class:`GestureModel` bundles denoiser parameters, their Adam state, the
diffusion schedule, gesture normalization statistics and whatever its
condition needs (a text embedding table, or fMRI z-scoring statistics).
Gestures are trained and sampled in normalized coordinates; public
generation functions return clips in the original coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import align
from .denoiser import (AdamState, DenoiserConfig, adam_step, config_from_params, forward,
                       init_params, loss_and_grad)
from .diffusion import DiffusionSchedule, make_schedule, q_sample, sample_loop
from .io import Checkpoint
from .rng import stream

MODALITIES = ("text", "fmri")


@dataclass
class T2GConfig:
    T: int = 50
    d_model: int = 128
    n_blocks: int = 2
    text_dim: int = 32
    batch_size: int = 32
    lr: float = 1e-3
    steps: int = 2000
    clip_len: int = 64
    stride: int = 16

    def echo(self) -> dict:
        return dict(self.__dict__)


# ------------------------------------------------------------ text table

def make_text_table(vocab_size: int, dim: int = 32, seed=0) -> np.ndarray:
    """Seeded embedding table with one extra row for the silence token."""
    if vocab_size < 1 or dim < 1:
        raise ValueError("vocab_size and dim must be positive")
    return stream(seed, "text-table").standard_normal((vocab_size + 1, dim)) / np.sqrt(dim)


def embed_frame_text(words, table) -> np.ndarray:
    """Row i is the embedding of the word at frame i."""
    words = np.asarray(words)
    table = np.asarray(table)
    if words.size and (words.min() < 0 or words.max() >= table.shape[0]):
        bad = words[(words < 0) | (words >= table.shape[0])][0]
        raise KeyError(f"word id {int(bad)} not in the embedding table")
    return table[words.astype(np.int64)]


# ------------------------------------------------------------ model

@dataclass
class GestureModel:
    modality: str
    params: dict
    sched: DiffusionSchedule
    x_mean: np.ndarray
    x_std: np.ndarray
    table: np.ndarray | None = None          # text modality
    c_mean: np.ndarray | None = None         # fmri modality
    c_std: np.ndarray | None = None
    adam: AdamState | None = None
    step: int = 0
    losses: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    clip_x0: float | None = None             # bound on x0 estimates while sampling

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")

    @property
    def cond_dim(self) -> int:
        return config_from_params(self.params).cond_dim

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.x_mean) / self.x_std

    def denormalize(self, x):
        return np.asarray(x, dtype=np.float64) * self.x_std + self.x_mean

    def denoiser(self):
        params = self.params
        return lambda x, t, c: forward(params, x, t, c)

    def sample(self, cond, seed) -> np.ndarray:
        """Normalized sample for a prepared ``(N, D_c)`` condition."""
        cond = np.asarray(cond)
        if cond.ndim != 2 or cond.shape[1] != self.cond_dim:
            raise ValueError(f"condition of shape {cond.shape} does not fit width {self.cond_dim}")
        n_feat = self.x_mean.shape[0]
        return sample_loop(self.denoiser(), cond, self.sched, seed, (cond.shape[0], n_feat),
                           clip_x0=self.clip_x0)

    def to_arrays(self, prefix: str) -> dict:
        p = prefix.rstrip("/") + "/"
        out = {p + "param/" + k: v for k, v in self.params.items()}
        if self.adam is not None:
            out.update({p + "adam_m/" + k: v for k, v in self.adam.m.items()})
            out.update({p + "adam_v/" + k: v for k, v in self.adam.v.items()})
            out[p + "adam_hyper"] = np.array([self.adam.lr, self.adam.beta1, self.adam.beta2,
                                              self.adam.eps])
        out[p + "state"] = np.array([self.step, self.adam.step if self.adam else -1,
                                     MODALITIES.index(self.modality)], dtype=np.int64)
        out[p + "betas"] = self.sched.beta
        out[p + "x_mean"] = self.x_mean
        out[p + "x_std"] = self.x_std
        out[p + "losses"] = np.asarray(self.losses, dtype=np.float64)
        if self.clip_x0 is not None:
            out[p + "clip_x0"] = np.array([self.clip_x0])
        for name in ("table", "c_mean", "c_std"):
            v = getattr(self, name)
            if v is not None:
                out[p + name] = v
        return out

    def to_meta(self, prefix: str) -> dict:
        return {f"{prefix}.{k}": v for k, v in self.config.items()} | {
            f"{prefix}.modality": self.modality}

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, prefix: str) -> "GestureModel":
        g = ckpt.group(prefix)
        if "state" not in g:
            raise KeyError(f"checkpoint has no model under {prefix!r}")
        step, adam_step_, mod = (int(v) for v in g["state"])
        params = {k[6:]: v for k, v in g.items() if k.startswith("param/")}
        adam = None
        if adam_step_ >= 0:
            lr, b1, b2, eps = (float(v) for v in g["adam_hyper"])
            adam = AdamState({k[7:]: v for k, v in g.items() if k.startswith("adam_m/")},
                             {k[7:]: v for k, v in g.items() if k.startswith("adam_v/")},
                             adam_step_, lr, b1, b2, eps)
        beta = g["betas"]
        sched = make_schedule(len(beta), float(beta[0]), float(beta[-1]))
        if not np.array_equal(sched.beta, beta):
            raise ValueError("stored schedule is not linear")
        config = {k[len(prefix) + 1:]: v for k, v in ckpt.meta.items()
                  if k.startswith(prefix + ".") and k != prefix + ".modality"}
        clip = float(g["clip_x0"][0]) if "clip_x0" in g else None
        return cls(MODALITIES[mod], params, sched, g["x_mean"], g["x_std"], g.get("table"),
                   g.get("c_mean"), g.get("c_std"), adam, step, list(g["losses"]), config, clip)


def to_checkpoint(models: dict, extra_arrays=None, extra_meta=None) -> Checkpoint:
    """``models`` maps a prefix (e.g. ``"x"``, ``"f"``) to a GestureModel."""
    arrays, meta = {}, {}
    for prefix, m in models.items():
        arrays.update(m.to_arrays(prefix))
        meta.update(m.to_meta(prefix))
    arrays.update(extra_arrays or {})
    meta.update(extra_meta or {})
    return Checkpoint(arrays, meta)


def gesture_stats(clips) -> tuple[np.ndarray, np.ndarray]:
    x = np.concatenate([np.asarray(c).reshape(-1, np.asarray(c).shape[-1]) for c in clips])
    return x.mean(axis=0), np.maximum(x.std(axis=0), 1e-3)


# ------------------------------------------------------------ data

def t2g_clips(records, clip_len: int = 64, stride: int = 16) -> list[dict]:
    """Slice paired records (``track``, ``gestures``) into training clips."""
    out = []
    for rec in records:
        for c in align.clip_dataset({"words": rec["track"], "gesture": rec["gestures"]},
                                    clip_len, stride):
            out.append(c)
    return out


def _stack(model: GestureModel, clips):
    if not clips:
        raise ValueError("empty dataset")
    lengths = {len(c["words"]) for c in clips}
    if len(lengths) != 1:
        raise ValueError(f"clips differ in length: {sorted(lengths)}")
    X0 = np.stack([model.normalize(c["gesture"]) for c in clips]).astype(np.float32)
    C = np.stack([embed_frame_text(c["words"], model.table) for c in clips]).astype(np.float32)
    return X0, C


def supervised_batch(X0, C, step: int, seed, batch_size: int, T: int) -> dict:
    """The phase-I batch for a global step; shared with phase II so that a
    zero-weight alignment run retraces phase I exactly."""
    rng = stream(seed, "t2g-train", step)
    idx = rng.integers(X0.shape[0], size=batch_size)
    t = rng.integers(1, T + 1, size=batch_size)
    eps = rng.standard_normal((batch_size,) + X0.shape[1:]).astype(np.float32)
    return {"x0": X0[idx], "cond": C[idx], "t": t, "eps": eps}


def new_t2g_model(clips, cfg: T2GConfig, vocab_size: int, seed) -> GestureModel:
    table = make_text_table(vocab_size, cfg.text_dim, seed)
    mean, std = gesture_stats([c["gesture"] for c in clips])
    dcfg = DenoiserConfig(cond_dim=cfg.text_dim, d_model=cfg.d_model, n_blocks=cfg.n_blocks,
                          n_feat=mean.shape[0])
    params = init_params(dcfg, seed)
    # sampling keeps x0 estimates inside the range seen in training
    bound = max(float(np.max(np.abs((np.asarray(c["gesture"]) - mean) / std))) for c in clips)
    return GestureModel("text", params, make_schedule(cfg.T), mean, std, table=table,
                        adam=AdamState.fresh(params, cfg.lr), config=cfg.echo(),
                        clip_x0=bound)


def train_t2g(clips, cfg: T2GConfig, seed, vocab_size: int | None = None,
              resume: GestureModel | None = None, until: int | None = None,
              callback=None) -> GestureModel:
    """Phase-I training on ``clips`` (dicts with ``words`` and ``gesture``).

    Runs global steps ``model.step .. until-1`` (``until`` defaults to
    ``cfg.steps``). With ``resume`` the given model continues in place; its
    batches are the ones a straight run would have drawn.
    """
    if resume is None:
        if vocab_size is None:
            vocab_size = int(max(int(np.max(c["words"])) for c in clips))
        model = new_t2g_model(clips, cfg, vocab_size, seed)
    else:
        model = resume
        if model.modality != "text":
            raise ValueError("can only resume a text-conditioned model")
    X0, C = _stack(model, clips)
    if X0.shape[1] != cfg.clip_len:
        raise ValueError(f"clips have {X0.shape[1]} frames, config expects {cfg.clip_len}")
    until = cfg.steps if until is None else until
    while model.step < until:
        batch = supervised_batch(X0, C, model.step, seed, cfg.batch_size, model.sched.T)
        loss, grads = loss_and_grad(model.params, batch, model.sched)
        adam_step(model.params, grads, model.adam)
        model.losses.append(loss)
        model.step += 1
        if callback is not None:
            callback(model)
    return model


def eps_mse(model: GestureModel, clips, seed, n_t: int = 8) -> float:
    """Held-out noise-prediction MSE at ``n_t`` fixed random steps per clip."""
    X0, C = _stack(model, clips)
    rng = stream(seed, "eps-mse")
    total = 0.0
    for _ in range(n_t):
        t = rng.integers(1, model.sched.T + 1, size=X0.shape[0])
        eps = rng.standard_normal(X0.shape)
        x_t = q_sample(X0.astype(np.float64), t, eps, model.sched)
        out = forward(model.params, x_t, t, C)
        total += float(np.mean((out - eps) ** 2))
    return total / n_t


def generate_from_text(model: GestureModel, words, seed) -> np.ndarray:
    """Sample a clip for frame-aligned word ids; returns original coordinates."""
    if model.modality != "text":
        raise ValueError("checkpoint was trained for fMRI conditions, not text")
    return model.denormalize(model.sample(embed_frame_text(words, model.table), seed))
