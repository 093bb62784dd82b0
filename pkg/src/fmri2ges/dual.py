"""Phase II: fMRI-conditioned gesture diffusion through dual decoding alignment.

Unpaired fMRI is decoded to text, the text model turns that text into a
pseudo gesture, and the fMRI model is trained to predict the same noise as
the text model on the re-noised pseudo gesture::

    loss = |eps - eps_x(x_t, c_x, t)|^2
           + lam * w(t) * |eps_x(x_t', c_x', t) - eps_f(x_t', c_f, t)|^2

with squared norms taken as means over elements and ``w(t)`` either
``sqrt((1 - ab_t) / ab_t)`` ("paper-sqrt") or ``(1 - ab_t) / ab_t`` ("exact",
which makes the second term the x0-space error of the two DDIM predictions).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import align
from .denoiser import (AdamState, DenoiserConfig, adam_step, backward,
                       forward, init_params, loss_and_grad)
from .diffusion import DiffusionSchedule, q_sample, sample_loop
from .f2t import F2TModels
from .rng import stream, subseed
from .t2g import GestureModel, _stack, embed_frame_text, supervised_batch

log = logging.getLogger(__name__)

WEIGHT_MODES = ("paper-sqrt", "exact")
PSEUDO_MODES = ("renoise", "chain-intermediate")


@dataclass
class DualConfig:
    lam: float = 0.01
    mode: str = "paper-sqrt"
    pseudo_mode: str = "renoise"
    steps: int = 600                 # phase-II steps on top of the phase-I count
    batch_size: int = 32
    align_batch: int = 32
    lr: float = 1e-3
    freeze_x: bool = False
    d_model: int = 128
    n_blocks: int = 2
    clip_len: int = 64
    stride: int = 16

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.mode not in WEIGHT_MODES:
            raise ValueError(f"mode must be one of {WEIGHT_MODES}")
        if self.pseudo_mode not in PSEUDO_MODES:
            raise ValueError(f"pseudo_mode must be one of {PSEUDO_MODES}")

    def echo(self) -> dict:
        return dict(self.__dict__)


def weight(t, sched: DiffusionSchedule, mode: str = "paper-sqrt") -> np.ndarray:
    ab = sched.ab(t)
    r = (1.0 - ab) / ab
    if mode == "paper-sqrt":
        return np.sqrt(r)
    if mode == "exact":
        return r
    raise ValueError(f"unknown weighting mode {mode!r}")


# ------------------------------------------------------------ pseudo pairs

@dataclass
class PseudoPair:
    words: np.ndarray            # (N,) decoded frame-aligned ids
    x0: np.ndarray               # (N, 98) pseudo gesture, normalized coordinates
    cond_f: np.ndarray           # (N, D_f) raw frame-aligned fMRI
    seed: int
    record: int = 0
    offset: int = 0
    chain: np.ndarray | None = None   # (T, N, 98) reverse-chain states x_T..x_1


@dataclass
class PseudoSet:
    pairs: list = field(default_factory=list)
    skipped: int = 0


def _sample_with_chain(model: GestureModel, cond, seed):
    """``sample_loop`` that also returns the state entering each step (x_t)."""
    states = {}

    def den(x, t, c):
        states[t] = x.copy()
        return forward(model.params, x, t, c)

    x0 = sample_loop(den, cond, model.sched, seed, (cond.shape[0], model.x_mean.shape[0]),
                     clip_x0=model.clip_x0)
    return x0, np.stack([states[t] for t in range(1, model.sched.T + 1)])


def make_pseudo(f2t: F2TModels, t2g: GestureModel, voxels, seed, record: int = 0,
                clip_len: int = 64, stride: int = 16, keep_chain: bool = False,
                fps: float = 15.0) -> PseudoSet:
    """Decode one unpaired fMRI record and turn every clip window into a pair.

    Windows whose decoded words are all silence are skipped and counted.
    """
    if t2g.modality != "text":
        raise ValueError("pseudo gestures need a text-conditioned model")
    if f2t.vocab_size + 1 != t2g.table.shape[0]:
        raise ValueError("decoder and text model disagree on the vocabulary")
    voxels = np.asarray(voxels, dtype=np.float64)
    tr = f2t.enc.tr_seconds
    n = align.frames_per_tr(fps, tr)
    decoded = f2t.decode(voxels, subseed(seed, "decode", record))
    silence = f2t.vocab_size
    track = align.replicate_word_track(decoded.per_tr, n, silence)
    frames_f = align.replicate_fmri(voxels, tr, fps)
    out = PseudoSet()
    for clip in align.clip_dataset({"words": track, "fmri": frames_f}, clip_len, stride):
        if np.all(clip["words"] == silence):
            out.skipped += 1
            continue
        s = subseed(seed, "pseudo", record, clip["offset"])
        cond = embed_frame_text(clip["words"], t2g.table)
        if keep_chain:
            x0, chain = _sample_with_chain(t2g, cond, s)
        else:
            x0, chain = t2g.sample(cond, s), None
        out.pairs.append(PseudoPair(clip["words"], x0, clip["fmri"], s, record, clip["offset"],
                                    chain))
    return out


def regenerate(t2g: GestureModel, pair: PseudoPair) -> np.ndarray:
    return t2g.sample(embed_frame_text(pair.words, t2g.table), pair.seed)


# ------------------------------------------------------------ loss

def alignment_term(theta_x, theta_f, x_t, c_x, c_f, t, sched, lam: float, mode: str,
                   with_grad: bool = True):
    """``lam * mean_b w(t_b) * mean(eps_x - eps_f)^2`` and its gradients."""
    ex, cache_x = forward(theta_x, x_t, t, c_x, return_cache=True)
    ef, cache_f = forward(theta_f, x_t, t, c_f, return_cache=True)
    diff = (ex - ef).astype(np.float64)
    w = weight(np.asarray(t), sched, mode)
    per = np.mean(diff.reshape(diff.shape[0], -1) ** 2, axis=1)
    value = float(lam * np.mean(w * per))
    if not with_grad:
        return value, None, None
    scale = (2.0 * lam / diff.size) * w[:, None, None]
    g = (scale * diff).astype(ex.dtype)
    return value, backward(theta_x, cache_x, g), backward(theta_f, cache_f, -g)


def dual_loss(theta_x, theta_f, pseudo_batch: dict, paired_batch: dict, cfg: DualConfig,
              sched: DiffusionSchedule):
    """Total loss, gradients for both parameter sets, and the two terms.

    ``pseudo_batch`` holds ``x_t`` (already noised pseudo gestures), ``c_x``,
    ``c_f`` and ``t``. With ``lam == 0`` the alignment term is skipped, so the
    text-model gradients are exactly the phase-I ones and ``theta_f`` gets
    none.
    """
    sup, gx = loss_and_grad(theta_x, paired_batch, sched)
    if cfg.lam == 0:
        return sup, gx, None, (sup, 0.0)
    al, ax, af = alignment_term(theta_x, theta_f, pseudo_batch["x_t"], pseudo_batch["c_x"],
                                pseudo_batch["c_f"], pseudo_batch["t"], sched, cfg.lam, cfg.mode)
    total = sup + al
    if not np.isfinite(total):
        raise FloatingPointError("non-finite dual loss")
    for k in gx:
        gx[k] = gx[k] + ax[k]
    return total, gx, af, (sup, al)


# ------------------------------------------------------------ training

@dataclass
class DualResult:
    theta_x: GestureModel
    theta_f: GestureModel
    pseudo: PseudoSet
    align_losses: list = field(default_factory=list)


def fmri_stats(voxel_records) -> tuple[np.ndarray, np.ndarray]:
    v = np.vstack([np.asarray(r, dtype=np.float64) for r in voxel_records])
    return v.mean(axis=0), np.maximum(v.std(axis=0), 1e-8)


def new_f2g_model(theta_x: GestureModel, n_voxels: int, c_mean, c_std, cfg: DualConfig,
                  seed) -> GestureModel:
    """Fresh fMRI-conditioned denoiser sharing the text model's gesture space."""
    dcfg = DenoiserConfig(cond_dim=n_voxels, d_model=cfg.d_model, n_blocks=cfg.n_blocks,
                          n_feat=theta_x.x_mean.shape[0])
    params = init_params(dcfg, subseed(seed, "theta-f"))
    return GestureModel("fmri", params, theta_x.sched, theta_x.x_mean, theta_x.x_std,
                        c_mean=c_mean, c_std=c_std, adam=AdamState.fresh(params, cfg.lr),
                        config=cfg.echo(), clip_x0=theta_x.clip_x0)


def build_pseudo(f2t: F2TModels, t2g: GestureModel, unpaired_voxels, seed,
                 cfg: DualConfig) -> PseudoSet:
    pool = PseudoSet()
    for i, vox in enumerate(unpaired_voxels):
        part = make_pseudo(f2t, t2g, vox, seed, i, cfg.clip_len, cfg.stride,
                           keep_chain=cfg.pseudo_mode == "chain-intermediate")
        pool.pairs.extend(part.pairs)
        pool.skipped += part.skipped
    if pool.skipped:
        log.warning("skipped %d pseudo windows with no decoded words", pool.skipped)
    return pool


def _pseudo_arrays(theta_x: GestureModel, theta_f: GestureModel, pool: PseudoSet):
    X0 = np.stack([p.x0 for p in pool.pairs]).astype(np.float32)
    Cx = np.stack([embed_frame_text(p.words, theta_x.table) for p in pool.pairs]).astype(np.float32)
    Cf = np.stack([(p.cond_f - theta_f.c_mean) / theta_f.c_std for p in pool.pairs]).astype(np.float32)
    chains = None
    if pool.pairs[0].chain is not None:
        chains = np.stack([p.chain for p in pool.pairs]).astype(np.float32)
    return X0, Cx, Cf, chains


def alignment_batch(X0, Cx, Cf, chains, step: int, seed, batch_size: int, T: int,
                    sched: DiffusionSchedule) -> dict:
    rng = stream(seed, "dual-align", step)
    idx = rng.integers(X0.shape[0], size=batch_size)
    t = rng.integers(1, T + 1, size=batch_size)
    eps = rng.standard_normal((batch_size,) + X0.shape[1:])
    if chains is None:
        x_t = q_sample(X0[idx].astype(np.float64), t, eps, sched).astype(np.float32)
    else:
        x_t = chains[idx, t - 1]
    return {"x_t": x_t, "c_x": Cx[idx], "c_f": Cf[idx], "t": t}


def train_f2g(theta_x: GestureModel, f2t: F2TModels, t2g_clips, unpaired_voxels, cfg: DualConfig,
              seed, pseudo: PseudoSet | None = None, theta_f: GestureModel | None = None,
              callback=None) -> DualResult:
    """Algorithm-style loop over ``cfg.steps`` steps.

    ``theta_x`` is updated in place (unless ``cfg.freeze_x``) and continues
    its phase-I step counter, so its paired batches are the ones phase I
    would have drawn next. ``seed`` should therefore be the phase-I seed.
    """
    if not unpaired_voxels:
        raise ValueError("empty unpaired fMRI pool")
    if theta_x.modality != "text":
        raise ValueError("theta_x must be the text-conditioned model")
    if pseudo is None:
        pseudo = build_pseudo(f2t, theta_x, unpaired_voxels, seed, cfg)
    if not pseudo.pairs:
        raise ValueError("no pseudo pairs: every window decoded to silence")
    if theta_f is None:
        c_mean, c_std = fmri_stats(unpaired_voxels)
        theta_f = new_f2g_model(theta_x, c_mean.shape[0], c_mean, c_std, cfg, seed)
    X0, C = _stack(theta_x, t2g_clips)
    PX0, PCx, PCf, chains = _pseudo_arrays(theta_x, theta_f, pseudo)
    T = theta_x.sched.T
    result = DualResult(theta_x, theta_f, pseudo)
    for _ in range(cfg.steps):
        paired = supervised_batch(X0, C, theta_x.step, seed, cfg.batch_size, T)
        pb = None
        if cfg.lam > 0:
            pb = alignment_batch(PX0, PCx, PCf, chains, theta_f.step, seed, cfg.align_batch, T,
                                 theta_x.sched)
        total, gx, gf, (sup, al) = dual_loss(theta_x.params, theta_f.params, pb, paired, cfg,
                                             theta_x.sched)
        if not cfg.freeze_x:
            adam_step(theta_x.params, gx, theta_x.adam)
        theta_x.losses.append(sup)
        theta_x.step += 1
        if gf is not None:
            adam_step(theta_f.params, gf, theta_f.adam)
        theta_f.losses.append(al)
        theta_f.step += 1
        result.align_losses.append(al)
        if callback is not None:
            callback(result)
    return result


# ------------------------------------------------------------ generation

def fmri_condition(model: GestureModel, frames) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != model.c_mean.shape[0]:
        raise ValueError(f"fMRI frames of shape {frames.shape} do not match "
                         f"{model.c_mean.shape[0]} voxels")
    return (frames - model.c_mean) / model.c_std


def generate_from_fmri(model: GestureModel, frames, seed) -> np.ndarray:
    """Clip for frame-aligned fMRI rows ``(N, D_f)``; original coordinates."""
    if model.modality != "fmri":
        raise ValueError("checkpoint holds a text-conditioned model, not fMRI")
    return model.denormalize(model.sample(fmri_condition(model, frames), seed))


def generate_from_noise(model: GestureModel, n_frames: int, seed) -> np.ndarray:
    """Control: the fMRI model conditioned on standard-normal noise in place of
    (z-scored) fMRI."""
    cond = stream(seed, "noise-condition").standard_normal((n_frames, model.c_mean.shape[0]))
    return model.denormalize(model.sample(cond, seed))


def generate_record(model: GestureModel, voxels, seed, tr_seconds: float = 2.0,
                    fps: float = 15.0, clip_len: int = 64) -> np.ndarray:
    """Generate consecutive clips for a whole fMRI record and concatenate them."""
    frames = align.replicate_fmri(voxels, tr_seconds, fps)
    out = [generate_from_fmri(model, frames[o:o + clip_len], subseed(seed, "clip", o))
           for o in align.clip_offsets(len(frames), clip_len, clip_len)]
    return np.concatenate(out)
