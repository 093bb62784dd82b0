"""Seeded synthetic world with known ground truth.

Words follow a Markov chain; each word carries a latent code that drives
gesture poses, a semantic embedding that drives fMRI through the same
Lanczos + delay pipeline the encoding model fits (including a words-per-TR
regressor), and (through the latent of the preceding word) the number of
words spoken in each TR.

Two transition matrices exist: ``"f2t"`` (the fMRI/story side) and ``"t2g"``
(the gesture/spoken side). They share the vocabulary but not their dynamics,
which creates the domain gap the dual alignment has to bridge.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import align
from .f2t import stimulus
from .rng import stream, subseed
from .skeleton import BONES, N_KEYPOINTS, template_pose

REGIONS = ("all", "auditory", "speech", "speech+auditory", "motor")
# Voxel counts of the real regions; echoed as metadata in full-scale mode.
FULL_SCALE_REGION_DIMS = {"auditory": 1431, "speech": 498, "all": 10000}


@dataclass
class WorldSpec:
    seed: int = 0
    vocab_size: int = 64
    latent_dim: int = 8
    emb_dim: int = 16
    n_voxels: int = 64
    delays: tuple = (1, 2, 3, 4)
    fps: float = 15.0
    tr_seconds: float = 2.0
    sigma_g: float = 0.01
    sigma_f: float = 0.0
    beat_amp: float = 0.02
    beat_period: float = 10.0       # frames
    rate_base: float = 2.0
    rate_gain: float = 0.8
    rate_max: int = 3
    n_successors: int = 3
    jump_prob: float = 0.02
    tail_trs: int = 4               # silent TRs scanned after the last word
    full_scale: bool = False
    # derived, filled in __post_init__
    latents: np.ndarray = field(init=False, repr=False)
    semantic: np.ndarray = field(init=False, repr=False)
    transitions: dict = field(init=False, repr=False)
    readout: np.ndarray = field(init=False, repr=False)
    base_pose: np.ndarray = field(init=False, repr=False)
    beat_dir: np.ndarray = field(init=False, repr=False)
    rate_dir: np.ndarray = field(init=False, repr=False)
    mixing: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.sigma_g < 0 or self.sigma_f < 0:
            raise ValueError("noise scales must be non-negative")
        V, dz = self.vocab_size, self.latent_dim
        self.latents = stream(self.seed, "latents").standard_normal((V, dz))
        rs = stream(self.seed, "semantic")
        proj = rs.standard_normal((dz, self.emb_dim)) / np.sqrt(dz)
        self.semantic = self.latents @ proj + 0.5 * rs.standard_normal((V, self.emb_dim))
        self.transitions = {
            "f2t": _sparse_transitions(stream(self.seed, "transitions", "f2t"), V,
                                       self.n_successors, self.jump_prob),
            "t2g": _sparse_transitions(stream(self.seed, "transitions", "t2g"), V,
                                       self.n_successors, self.jump_prob),
        }
        rg = stream(self.seed, "gesture")
        self.base_pose = template_pose()
        self.readout = 0.12 * rg.standard_normal((dz, 2 * N_KEYPOINTS)) / np.sqrt(dz)
        bd = rg.standard_normal(2 * N_KEYPOINTS)
        self.beat_dir = bd / np.abs(bd).max()
        rr = stream(self.seed, "rate").standard_normal(dz)
        self.rate_dir = rr / np.linalg.norm(rr)
        width = len(self.delays) * (self.emb_dim + 1)   # embedding + word count
        self.mixing = {r: stream(self.seed, "mixing", r).standard_normal((width, self.n_voxels))
                       / np.sqrt(width) for r in REGIONS}

    @property
    def frames_per_tr(self) -> int:
        return align.frames_per_tr(self.fps, self.tr_seconds)

    @property
    def silence(self) -> int:
        return self.vocab_size

    def region_dims(self) -> dict:
        if self.full_scale:
            return {r: FULL_SCALE_REGION_DIMS.get(r, self.n_voxels) for r in REGIONS}
        return {r: self.n_voxels for r in REGIONS}

    def echo(self) -> dict:
        keys = ("seed", "vocab_size", "latent_dim", "emb_dim", "n_voxels", "fps",
                "tr_seconds", "sigma_g", "sigma_f", "beat_amp", "beat_period",
                "rate_base", "rate_gain", "rate_max", "n_successors", "jump_prob", "tail_trs", "full_scale")
        out = {k: getattr(self, k) for k in keys}
        out["delays"] = ",".join(str(d) for d in self.delays)
        return out


def _sparse_transitions(rng, V, n_succ, jump):
    """Each word has a few preferred successors plus a small uniform floor."""
    P = np.full((V, V), jump / V)
    for w in range(V):
        succ = rng.choice(np.delete(np.arange(V), w), size=n_succ, replace=False)
        P[w, succ] += (1.0 - jump) * rng.dirichlet(np.full(n_succ, 4.0))
    return P / P.sum(axis=1, keepdims=True)


def total_variation(P, Q) -> float:
    """Mean over rows of the total-variation distance between two chains."""
    return float(np.mean(0.5 * np.abs(np.asarray(P) - np.asarray(Q)).sum(axis=1)))


@dataclass
class WordStream:
    words: np.ndarray          # (n_words,) ids
    onsets: np.ndarray         # (n_words,) seconds
    per_tr: list               # list of per-TR word-id lists
    tr_seconds: float

    @property
    def n_tr(self) -> int:
        return len(self.per_tr)


def tr_onsets(per_tr, tr_seconds: float) -> np.ndarray:
    """Spread each TR's words uniformly inside the TR."""
    out = []
    for i, ws in enumerate(per_tr):
        m = len(ws)
        out.extend(tr_seconds * (i + (j + 0.5) / m) for j in range(m))
    return np.asarray(out, dtype=np.float64)


def word_count(spec: WorldSpec, prev_word: int) -> int:
    """Words in the next TR: rounded linear readout of the previous word's latent."""
    raw = spec.rate_base + spec.rate_gain * float(spec.latents[prev_word] @ spec.rate_dir)
    return int(np.clip(np.rint(raw), 1, spec.rate_max))


def sample_word_chain(spec: WorldSpec, length: int, seed, transition="f2t",
                      start: int | None = None) -> WordStream:
    """Markov-chain word sequence grouped into TRs with uniform in-TR onsets,
    followed by ``spec.tail_trs`` silent TRs."""
    if length < 1:
        raise ValueError("length must be >= 1")
    P = spec.transitions[transition] if isinstance(transition, str) else np.asarray(transition)
    rng = stream(seed, "word-chain")
    V = P.shape[0]
    w = int(rng.integers(V)) if start is None else int(start)
    words = [w]
    cdf = np.cumsum(P, axis=1)
    for _ in range(length - 1):
        w = int(min(np.searchsorted(cdf[w], rng.random(), side="right"), V - 1))
        words.append(w)
    per_tr = []
    i = 0
    prev = words[0]
    while i < len(words):
        m = word_count(spec, prev)
        group = words[i:i + m]
        per_tr.append(group)
        prev = group[-1]
        i += m
    per_tr.extend([] for _ in range(spec.tail_trs))
    return WordStream(np.asarray(words, dtype=np.int64), tr_onsets(per_tr, spec.tr_seconds),
                      per_tr, spec.tr_seconds)


def render_gestures(spec: WorldSpec, per_tr, seed) -> tuple[np.ndarray, np.ndarray]:
    """Gesture frames (n_frames, 98) and the frame-aligned word track."""
    track = align.replicate_word_track(per_tr, spec.frames_per_tr, spec.silence)
    z = np.vstack([spec.latents, np.zeros((1, spec.latent_dim))])  # silence row
    frames = spec.base_pose + z[track] @ spec.readout
    idx = np.arange(len(track))
    frames = frames + spec.beat_amp * np.sin(2 * np.pi * idx / spec.beat_period)[:, None] \
        * spec.beat_dir
    if spec.sigma_g > 0:
        frames = frames + spec.sigma_g * stream(seed, "gesture-noise").standard_normal(frames.shape)
    return frames, track


def stimulus_features(spec: WorldSpec, words, onsets, n_tr: int) -> np.ndarray:
    return stimulus(words, onsets, spec.semantic, n_tr, spec.delays, spec.tr_seconds)


def render_fmri(spec: WorldSpec, words, onsets, n_tr: int, region: str = "auditory",
                seed=0, sigma_f: float | None = None) -> np.ndarray:
    """Voxels = delayed Lanczos features @ region mixing + Gaussian noise."""
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}")
    sigma = spec.sigma_f if sigma_f is None else sigma_f
    vox = stimulus_features(spec, words, onsets, n_tr) @ spec.mixing[region]
    if sigma > 0:
        vox = vox + sigma * stream(seed, "fmri-noise", region).standard_normal(vox.shape)
    return vox


# ---------------------------------------------------------------- datasets

SPLITS = ("paired_f2t", "paired_t2g", "unpaired_fmri")
DEFAULT_SIZES = {"paired_f2t": 20, "paired_t2g": 16, "unpaired_fmri": 8}
DEFAULT_WORDS = {"paired_f2t": 120, "paired_t2g": 40, "unpaired_fmri": 40}


def _counts(per_tr) -> np.ndarray:
    return np.asarray([len(g) for g in per_tr], dtype=np.int64)


def make_f2t_record(spec: WorldSpec, n_words: int, seed, region="auditory") -> dict:
    ws = sample_word_chain(spec, n_words, seed, "f2t")
    vox = render_fmri(spec, ws.words, ws.onsets, ws.n_tr, region, seed)
    return {"words": ws.words, "onsets": ws.onsets, "counts": _counts(ws.per_tr),
            "voxels": vox}


def make_t2g_record(spec: WorldSpec, n_words: int, seed) -> dict:
    ws = sample_word_chain(spec, n_words, seed, "t2g")
    frames, track = render_gestures(spec, ws.per_tr, seed)
    return {"words": ws.words, "counts": _counts(ws.per_tr), "track": track,
            "gestures": frames}


def make_unpaired_record(spec: WorldSpec, n_words: int, seed, region="auditory") -> dict:
    """fMRI from the story-side chain; the hidden truth is kept under ``truth_*``
    for evaluation only and is never read by the trainers."""
    ws = sample_word_chain(spec, n_words, seed, "f2t")
    vox = render_fmri(spec, ws.words, ws.onsets, ws.n_tr, region, seed)
    frames, track = render_gestures(spec, ws.per_tr, seed)
    return {"voxels": vox, "truth_words": ws.words, "truth_counts": _counts(ws.per_tr),
            "truth_track": track, "truth_gestures": frames}


def make_datasets(spec: WorldSpec, sizes=None, seed=0, words=None,
                  region: str = "auditory") -> tuple[dict, dict]:
    """The three splits in memory plus the manifest metadata echo.

    ``paired_f2t`` and ``unpaired_fmri`` follow the story-side chain,
    ``paired_t2g`` the spoken-side chain.
    """
    sizes = {**DEFAULT_SIZES, **(sizes or {})}
    words = {**DEFAULT_WORDS, **(words or {})}
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}")
    unknown = set(sizes) - set(SPLITS)
    if unknown:
        raise ValueError(f"unknown splits {sorted(unknown)}")
    splits = {
        "paired_f2t": [make_f2t_record(spec, words["paired_f2t"],
                                       subseed(seed, "paired_f2t", i), region)
                       for i in range(sizes["paired_f2t"])],
        "paired_t2g": [make_t2g_record(spec, words["paired_t2g"], subseed(seed, "paired_t2g", i))
                       for i in range(sizes["paired_t2g"])],
        "unpaired_fmri": [make_unpaired_record(spec, words["unpaired_fmri"],
                                               subseed(seed, "unpaired_fmri", i), region)
                          for i in range(sizes["unpaired_fmri"])],
    }
    meta = {f"world.{k}": v for k, v in spec.echo().items()}
    meta.update({"seed": seed, "region": region, "voxels": spec.region_dims()[region],
                 "bones": ",".join(f"{a}-{b}" for a, b in BONES),
                 "transition_tv": f"{total_variation(spec.transitions['f2t'], spec.transitions['t2g']):.6f}"})
    for s in SPLITS:
        meta[f"size.{s}"] = sizes[s]
        meta[f"words.{s}"] = words[s]
    return splits, meta


_INT_KEYS = ("seed", "vocab_size", "latent_dim", "emb_dim", "n_voxels", "rate_max",
             "n_successors", "tail_trs")
_FLOAT_KEYS = ("fps", "tr_seconds", "sigma_g", "sigma_f", "beat_amp", "beat_period",
               "rate_base", "rate_gain", "jump_prob")


def spec_from_meta(meta: dict) -> WorldSpec:
    """Rebuild the world from a manifest's ``world.*`` echo."""
    w = {k[6:]: v for k, v in meta.items() if k.startswith("world.")}
    kw = {}
    for k in _INT_KEYS:
        if k in w:
            kw[k] = int(w[k])
    for k in _FLOAT_KEYS:
        if k in w:
            kw[k] = float(w[k])
    if "full_scale" in w:
        kw["full_scale"] = str(w["full_scale"]).lower() in ("1", "true", "yes")
    if "delays" in w:
        kw["delays"] = tuple(int(x) for x in str(w["delays"]).split(","))
    return WorldSpec(**kw)
