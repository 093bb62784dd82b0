"""Bayesian fMRI-to-text decoding.

The posterior over word sequences is scored as

    log p_LM(words) + lm-weighted Gaussian brain log-likelihood,

where the brain likelihood compares observed voxels with the encoding
model's prediction for the candidate words. Candidates are extended by
sampling from the language prior's nucleus and pruned to a beam.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .kernels import lanczos_resample
from .ridge import RidgeFit, fit_ridge, fold_slices
from .rng import stream

DEFAULT_DELAYS = (1, 2, 3, 4)
DEFAULT_ALPHAS = tuple(10.0 ** np.arange(-6, 5))


# ---------------------------------------------------------------- features

def lanczos_to_tr(onsets, embeddings, n_tr: int, tr_seconds: float = 2.0,
                  lobes: int = 3) -> np.ndarray:
    """Resample word-embedding impulses onto the TR grid ``t_i = i * tr``."""
    if tr_seconds <= 0:
        raise ValueError("tr_seconds must be positive")
    onsets = np.asarray(onsets, dtype=np.float64).reshape(-1)
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim == 1:
        emb = emb.reshape(len(onsets), -1)
    if emb.shape[0] != onsets.shape[0]:
        raise ValueError("one embedding row per onset required")
    if onsets.size and (onsets.min() < 0 or onsets.max() >= n_tr * tr_seconds):
        raise ValueError("word onsets fall outside the record")
    times = np.arange(n_tr) * tr_seconds
    return lanczos_resample(onsets, emb, times, tr_seconds, lobes)


def shift_rows(X, shift: int) -> np.ndarray:
    """Shift rows down by ``shift`` (up if negative), zero-filling the gap."""
    X = np.asarray(X)
    out = np.zeros_like(X)
    if shift > 0:
        out[shift:] = X[:-shift]
    elif shift < 0:
        out[:shift] = X[-shift:]
    else:
        out[:] = X
    return out


def build_delayed_stimulus(features, delays: Sequence[int] = DEFAULT_DELAYS) -> np.ndarray:
    """Concatenate copies of ``features`` delayed by each entry of ``delays`` TRs."""
    features = np.asarray(features, dtype=np.float64)
    if any(int(d) != d or d < 1 for d in delays):
        raise ValueError("delays must be positive integers")
    if any(d >= features.shape[0] for d in delays):
        raise ValueError(f"delay >= record length ({features.shape[0]} TRs)")
    return np.hstack([shift_rows(features, int(d)) for d in delays])


# ---------------------------------------------------------- encoding model

@dataclass
class EncodingModel:
    ridge: RidgeFit
    sigma_sq: np.ndarray
    delays: tuple = DEFAULT_DELAYS
    tr_seconds: float = 2.0
    lobes: int = 3
    rate_feature: bool = True

    @property
    def weights(self) -> np.ndarray:
        return self.ridge.weights

    @property
    def alpha(self) -> float:
        return self.ridge.alpha

    @property
    def n_voxels(self) -> int:
        return self.ridge.weights.shape[1]


def words_per_tr(onsets, n_tr: int, tr_seconds: float = 2.0) -> np.ndarray:
    """Number of word onsets falling in each TR."""
    idx = np.floor(np.asarray(onsets, dtype=np.float64) / tr_seconds).astype(np.int64)
    return np.bincount(idx[(idx >= 0) & (idx < n_tr)], minlength=n_tr).astype(np.float64)


def stimulus(words, onsets, table, n_tr, delays=DEFAULT_DELAYS, tr_seconds=2.0, lobes=3,
             rate_feature=True):
    """Delay-stacked stimulus. Each delay block holds the Lanczos-resampled
    embeddings, followed by the word count of the TR when ``rate_feature``."""
    words = np.asarray(words, dtype=np.int64)
    table = np.asarray(table, dtype=np.float64)
    if words.size and (words.min() < 0 or words.max() >= table.shape[0]):
        raise KeyError("word id outside the embedding table")
    emb = table[words] if words.size else np.zeros((0, table.shape[1]))
    feats = lanczos_to_tr(onsets, emb, n_tr, tr_seconds, lobes)
    if rate_feature:
        feats = np.hstack([feats, words_per_tr(onsets, n_tr, tr_seconds)[:, None]])
    return build_delayed_stimulus(feats, delays)


def fit_encoding(records, table, tr_seconds=2.0, delays=DEFAULT_DELAYS,
                 alpha_grid=DEFAULT_ALPHAS, folds=5, lobes=3,
                 var_floor=1e-8, rate_feature=True) -> EncodingModel:
    """Ridge map from delayed stimulus to voxels over a list of records.

    Each record is ``(words, onsets, voxels)``. Residual variance per voxel
    comes from held-out predictions of the chosen alpha and is floored at
    ``var_floor``.
    """
    Xs, Ys = [], []
    for words, onsets, vox in records:
        vox = np.asarray(vox, dtype=np.float64)
        Xs.append(stimulus(words, onsets, table, vox.shape[0], delays, tr_seconds, lobes,
                           rate_feature))
        Ys.append(vox)
    X, Y = np.vstack(Xs), np.vstack(Ys)
    ridge = fit_ridge(X, Y, alpha_grid, folds)
    resid = np.zeros_like(Y)
    for sl in fold_slices(X.shape[0], folds):
        train = np.ones(X.shape[0], dtype=bool)
        train[sl] = False
        f = fit_ridge(X[train], Y[train], [ridge.alpha])
        resid[sl] = Y[sl] - f.predict(X[sl])
    sigma_sq = np.maximum(np.mean(resid ** 2, axis=0), var_floor)
    return EncodingModel(ridge, sigma_sq, tuple(delays), tr_seconds, lobes, rate_feature)


def predict_fmri(model: EncodingModel, words, onsets, table, n_tr: int) -> np.ndarray:
    X = stimulus(words, onsets, table, n_tr, model.delays, model.tr_seconds, model.lobes,
                 model.rate_feature)
    return model.ridge.predict(X)


# ---------------------------------------------------------- word-rate model

RATE_LEADS = (1, 2, 3, 4)


def rate_features(voxels, leads=RATE_LEADS) -> np.ndarray:
    """Voxels from the TRs *after* each TR, where its words show up."""
    voxels = np.asarray(voxels, dtype=np.float64)
    return np.hstack([shift_rows(voxels, -int(l)) for l in leads])


@dataclass
class WordRateModel:
    ridge: RidgeFit
    leads: tuple = RATE_LEADS

    def predict_raw(self, voxels) -> np.ndarray:
        return self.ridge.predict(rate_features(voxels, self.leads))[:, 0]

    def predict(self, voxels) -> np.ndarray:
        return np.maximum(np.rint(self.predict_raw(voxels)), 0).astype(np.int64)


def fit_word_rate(records, alpha_grid=DEFAULT_ALPHAS, folds=5, leads=RATE_LEADS) -> WordRateModel:
    """Records are ``(voxels, counts_per_tr)`` pairs."""
    Xs, ys = [], []
    for vox, counts in records:
        vox = np.asarray(vox, dtype=np.float64)
        counts = np.asarray(counts, dtype=np.float64)
        if len(counts) != vox.shape[0]:
            raise ValueError(f"{len(counts)} counts for {vox.shape[0]} TRs")
        Xs.append(rate_features(vox, leads))
        ys.append(counts)
    return WordRateModel(fit_ridge(np.vstack(Xs), np.concatenate(ys), alpha_grid, folds),
                         tuple(leads))


def predict_word_rate(model: WordRateModel, voxels) -> np.ndarray:
    return model.predict(voxels)


# ---------------------------------------------------------- language prior

class LanguagePrior(Protocol):
    vocab_size: int

    def next_word_distribution(self, history: Sequence[int]) -> np.ndarray: ...


@dataclass
class BigramPrior:
    """Add-one smoothed bigram model.

    The empty history is a sentence start and uses smoothed first-word
    counts. ``unigram_distribution`` gives the smoothed word frequencies,
    i.e. the expected word at an arbitrary position.
    """
    counts: np.ndarray                 # (V, V) bigram counts
    unigram: np.ndarray                # (V,) counts
    starts: np.ndarray | None = None   # (V,) first-word counts
    vocab_size: int = field(init=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        self.unigram = np.asarray(self.unigram, dtype=np.float64)
        self.vocab_size = self.counts.shape[0]
        self.starts = (np.zeros(self.vocab_size) if self.starts is None
                       else np.asarray(self.starts, dtype=np.float64))
        self._probs = (self.counts + 1.0) / (self.counts.sum(axis=1, keepdims=True) + self.vocab_size)
        self._start = (self.starts + 1.0) / (self.starts.sum() + self.vocab_size)
        self._unigram = (self.unigram + 1.0) / (self.unigram.sum() + self.vocab_size)

    @classmethod
    def fit(cls, sequences, vocab_size: int) -> "BigramPrior":
        C = np.zeros((vocab_size, vocab_size))
        U = np.zeros(vocab_size)
        S = np.zeros(vocab_size)
        for seq in sequences:
            seq = np.asarray(seq, dtype=np.int64)
            np.add.at(U, seq, 1.0)
            if len(seq):
                S[seq[0]] += 1.0
            if len(seq) > 1:
                np.add.at(C, (seq[:-1], seq[1:]), 1.0)
        return cls(C, U, S)

    def next_word_distribution(self, history) -> np.ndarray:
        if len(history) == 0:
            return self._start
        return self._probs[history[-1]]

    def unigram_distribution(self) -> np.ndarray:
        return self._unigram


def filler_distribution(prior) -> np.ndarray:
    """Expected word at a not-yet-decoded position."""
    if hasattr(prior, "unigram_distribution"):
        return prior.unigram_distribution()
    return prior.next_word_distribution(())


def nucleus_set(probs, p: float = 0.9) -> np.ndarray:
    """Smallest prefix of the descending-sorted distribution with mass >= p.

    Ties are broken by ascending index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        raise ValueError("empty distribution")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("probabilities must be non-negative and sum to 1")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    order = np.argsort(-probs, kind="stable")
    mass = np.cumsum(probs[order])
    k = int(np.searchsorted(mass, p - 1e-12)) + 1
    return order[:min(k, probs.size)]


# ---------------------------------------------------------- beam decoding

@dataclass
class Candidate:
    words: tuple
    lm: float
    brain: float               # log-likelihood of rows no later word can change
    lookahead: float = 0.0     # provisional log-likelihood of the next few rows

    @property
    def score(self) -> float:
        return self.lm + self.brain

    @property
    def rank(self) -> float:
        return self.score + self.lookahead


@dataclass
class BeamState:
    candidates: list
    k: int

    def prune(self) -> None:
        self.candidates.sort(key=lambda c: (-c.rank, c.words))
        del self.candidates[self.k:]


@dataclass
class DecodedText:
    words: np.ndarray
    onsets: np.ndarray
    per_tr: list
    score: float = 0.0


class _RowPredictor:
    """Predicts single voxel rows for a candidate prefix."""

    def __init__(self, enc: EncodingModel, table):
        self.enc = enc
        self.table = np.asarray(table, dtype=np.float64)
        self.tr = enc.tr_seconds
        self.reach = enc.lobes * enc.tr_seconds
        self.delays = np.asarray(enc.delays)
        W = enc.ridge.weights
        D_e = self.table.shape[1]
        width = D_e + int(enc.rate_feature)
        self.blocks = [W[i * width:i * width + D_e] for i in range(len(enc.delays))]
        self.rate_w = [W[i * width + D_e] for i in range(len(enc.delays))] \
            if enc.rate_feature else None
        self.base = enc.ridge.intercept

    def row(self, words, onsets, r: int) -> np.ndarray:
        times = (r - self.delays) * self.tr
        pred = self.base.copy()
        if len(words) == 0:
            return pred
        on = np.asarray(onsets)
        if self.rate_w is not None:
            for i, t in enumerate(times):
                if t >= 0:
                    n = np.searchsorted(on, t + self.tr, "left") - np.searchsorted(on, t, "left")
                    pred += n * self.rate_w[i]
        lo = int(np.searchsorted(on, times.min() - self.reach, side="right"))
        if lo >= len(on):
            return pred
        feats = lanczos_resample(on[lo:], self.table[np.asarray(words[lo:])], times,
                                 self.tr, self.enc.lobes)
        for i, t in enumerate(times):
            if t >= 0:
                pred += feats[i] @ self.blocks[i]
        return pred


def perplexity(probs) -> float:
    p = probs[probs > 0]
    return float(np.exp(-np.sum(p * np.log(p))))


def _draw(rng, probs, nucleus, n: int, adaptive: bool) -> np.ndarray:
    """Up to ``n`` distinct words from the nucleus, weighted by probability.

    With ``adaptive`` the draw count grows to the prior's perplexity, so flat
    predictions (e.g. the first word) are explored more widely.
    """
    if adaptive:
        n = max(n, int(round(perplexity(probs))))
    if len(nucleus) <= n:
        return np.sort(nucleus)
    w = probs[nucleus] / probs[nucleus].sum()
    return rng.choice(nucleus, size=n, replace=False, p=w)


def decode_onsets(per_tr, tr_seconds: float) -> np.ndarray:
    out = []
    for i, ws in enumerate(per_tr):
        m = len(ws)
        out.extend(tr_seconds * (i + (j + 0.5) / m) for j in range(m))
    return np.asarray(out, dtype=np.float64)


def beam_decode(voxels, prior, enc: EncodingModel, rate: WordRateModel, table, k: int = 8,
                seed=0, n_draws: int = 4, top_p: float = 0.9, lm_weight: float = 1.0,
                lag: int = 2, counts=None, adaptive: bool = True, trace=None) -> DecodedText:
    """Decode a word sequence from an fMRI record.

    For every TR the rate model says how many words to add. Each word step
    extends every candidate with ``n_draws`` nucleus samples from the prior
    (more when the prior is flat, see ``_draw``) and adds ``lm_weight * log p``.

    Brain evidence is split in two. Rows whose prediction no later word can
    change are scored once and committed to ``Candidate.brain``, so
    ``Candidate.score`` never rises as a candidate grows. Rows up to
    ``tr + lag`` that later words may still touch are scored from the current
    prefix as a lookahead that only guides pruning to the ``k`` best.
    ``counts`` overrides the rate model. ``trace``, if a list, receives
    ``(score_before, score_after)`` for every extension and TR-end update.
    """
    voxels = np.asarray(voxels, dtype=np.float64)
    if k < 1:
        raise ValueError("beam width must be >= 1")
    if lag < 0:
        raise ValueError("lag must be >= 0")
    if voxels.ndim != 2 or voxels.shape[1] == 0:
        raise ValueError("need a (T_r, D_f) record with at least one voxel")
    if voxels.shape[1] != enc.n_voxels:
        raise ValueError(f"record has {voxels.shape[1]} voxels, encoder expects {enc.n_voxels}")
    if prior.vocab_size != np.asarray(table).shape[0]:
        raise ValueError("language prior and embedding table disagree on vocabulary size")
    n_tr = voxels.shape[0]
    if counts is None:
        counts = rate.predict(voxels)
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (n_tr,) or np.any(counts < 0):
        raise ValueError("need one non-negative word count per TR")
    if counts.sum() == 0:
        return DecodedText(np.zeros(0, dtype=np.int64), np.zeros(0), [[] for _ in range(n_tr)])
    # Counts fix every onset up front. Slots not decoded yet hold a filler
    # word whose embedding is the prior's unigram mean, so lookahead rows see
    # the expected contribution of upcoming words instead of nothing.
    table = np.asarray(table, dtype=np.float64)
    filler = table.shape[0]
    unigram = filler_distribution(prior)
    rows = _RowPredictor(enc, np.vstack([table, unigram @ table]))
    all_onsets = decode_onsets([[0] * int(c) for c in counts], enc.tr_seconds).tolist()
    n_total = len(all_onsets)
    inv2var = 0.5 / enc.sigma_sq
    rng = stream(seed, "beam-decode")
    # Row r reads onsets before (r - min_delay + lobes) * tr, so it is final
    # once TR (r - min_delay + lobes - 1) is complete.
    settle = enc.lobes - min(enc.delays) - 1

    def ll(words, r0, r1):
        padded = words + (filler,) * (n_total - len(words))
        total = 0.0
        for r in range(max(r0, 0), min(r1, n_tr)):
            diff = rows.row(padded, all_onsets, r) - voxels[r]
            total -= float(np.sum(diff * diff * inv2var))
        return total

    beam = BeamState([Candidate((), 0.0, 0.0)], k)
    boundaries = [0]
    done = 0                       # rows [0, done) are committed
    for i in range(n_tr):
        m = int(counts[i])
        final = n_tr if i == n_tr - 1 else max(done, i - settle + 1)
        for j in range(m):
            last = j == m - 1
            grown = []
            parents = {c.words: c.score for c in beam.candidates}
            for c in beam.candidates:
                probs = prior.next_word_distribution(c.words)
                for w in _draw(rng, probs, nucleus_set(probs, top_p), n_draws, adaptive):
                    words = c.words + (int(w),)
                    lm = c.lm + lm_weight * math.log(probs[w])
                    if last:
                        grown.append(Candidate(words, lm, c.brain + ll(words, done, final),
                                               ll(words, final, i + lag + 1)))
                    else:
                        grown.append(Candidate(words, lm, c.brain, ll(words, done, i + lag + 1)))
            if trace is not None:
                trace.extend((parents[c.words[:-1]], c.score) for c in grown)
            beam.candidates = grown
            beam.prune()
        if m == 0:
            for c in beam.candidates:
                before = c.score
                c.brain += ll(c.words, done, final)
                if trace is not None:
                    trace.append((before, c.score))
                c.lookahead = ll(c.words, final, i + lag + 1)
            beam.prune()
        done = final
        boundaries.append(boundaries[-1] + m)
    best = beam.candidates[0]
    words = np.asarray(best.words, dtype=np.int64)
    per_tr = [list(best.words[boundaries[i]:boundaries[i + 1]]) for i in range(n_tr)]
    return DecodedText(words, np.asarray(all_onsets, dtype=np.float64), per_tr, best.score)


def word_error_rate(ref, hyp) -> float:
    """Levenshtein distance over words divided by the reference length."""
    ref, hyp = list(ref), list(hyp)
    if not ref:
        return float(len(hyp) > 0)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1] / len(ref)


# ---------------------------------------------------------- latent -> brain

@dataclass
class PearsonResult:
    r: np.ndarray
    undefined: np.ndarray      # True where a voxel (or its prediction) is constant


def pearson_columns(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    den = np.sqrt((ac ** 2).sum(axis=0) * (bc ** 2).sum(axis=0))
    undefined = den <= 1e-12 * max(1.0, float(np.max(den, initial=0.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(undefined, 0.0, (ac * bc).sum(axis=0) / np.where(undefined, 1.0, den))
    return r, undefined


def pearson_map(latents, fmri, folds: int = 5, alpha_grid=DEFAULT_ALPHAS) -> PearsonResult:
    """Held-out Pearson r per voxel of a ridge map from latents to voxels.

    r is computed inside each held-out fold and averaged over folds. Pooling
    all held-out predictions instead would mix fold-specific offsets and
    scales into the correlation.
    """
    X = np.asarray(latents, dtype=np.float64)
    Y = np.asarray(fmri, dtype=np.float64)
    n = X.shape[0]
    if not n >= folds >= 2:
        raise ValueError("need n >= folds >= 2")
    rs, bad = [], []
    for sl in fold_slices(n, folds):
        train = np.ones(n, dtype=bool)
        train[sl] = False
        inner = max(2, min(folds, int(train.sum()) // 2))
        pred = fit_ridge(X[train], Y[train], alpha_grid, inner).predict(X[sl])
        r, undefined = pearson_columns(Y[sl], pred)
        rs.append(r)
        bad.append(undefined)
    rs, bad = np.array(rs), np.array(bad)
    undefined = bad.all(axis=0) | (np.ptp(Y, axis=0) == 0)
    with np.errstate(invalid="ignore"):
        r = np.where(bad, 0.0, rs).sum(axis=0) / np.maximum((~bad).sum(axis=0), 1)
    return PearsonResult(np.where(undefined, 0.0, r), undefined)


# ---------------------------------------------------------- bundle

@dataclass
class F2TModels:
    """Everything ``beam_decode`` needs, with its decoding settings."""
    enc: EncodingModel
    rate: WordRateModel
    prior: BigramPrior
    table: np.ndarray
    k: int = 8
    n_draws: int = 4
    top_p: float = 0.9
    lm_weight: float = 1.0
    lag: int = 2

    @property
    def vocab_size(self) -> int:
        return self.prior.vocab_size

    def decode(self, voxels, seed=0, counts=None) -> DecodedText:
        return beam_decode(voxels, self.prior, self.enc, self.rate, self.table, k=self.k,
                           seed=seed, n_draws=self.n_draws, top_p=self.top_p,
                           lm_weight=self.lm_weight, lag=self.lag, counts=counts)

    def to_arrays(self, prefix: str = "f2t") -> dict:
        p = prefix + "/"
        e, r = self.enc, self.rate
        return {
            p + "enc_w": e.ridge.weights, p + "enc_x_mean": e.ridge.x_mean,
            p + "enc_y_mean": e.ridge.y_mean, p + "enc_sigma_sq": e.sigma_sq,
            p + "enc_setup": np.array([e.ridge.alpha, e.tr_seconds, e.lobes, e.rate_feature]),
            p + "delays": np.asarray(e.delays, dtype=np.int64),
            p + "rate_w": r.ridge.weights, p + "rate_x_mean": r.ridge.x_mean,
            p + "rate_y_mean": r.ridge.y_mean, p + "rate_alpha": np.array([r.ridge.alpha]),
            p + "rate_leads": np.asarray(r.leads, dtype=np.int64),
            p + "prior_counts": self.prior.counts, p + "prior_unigram": self.prior.unigram,
            p + "prior_starts": self.prior.starts,
            p + "table": self.table,
            p + "decode": np.array([self.k, self.n_draws, self.top_p, self.lm_weight, self.lag]),
        }

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str = "f2t") -> "F2TModels":
        p = prefix + "/"
        if p + "enc_w" not in arrays:
            raise KeyError(f"no F2T models under {prefix!r}")
        a = lambda k: arrays[p + k]
        alpha, tr, lobes, rate_feature = a("enc_setup")
        enc = EncodingModel(RidgeFit(a("enc_w"), float(alpha), a("enc_x_mean"), a("enc_y_mean")),
                            a("enc_sigma_sq"), tuple(int(d) for d in a("delays")), float(tr),
                            int(lobes), bool(rate_feature))
        rate = WordRateModel(RidgeFit(a("rate_w"), float(a("rate_alpha")[0]), a("rate_x_mean"),
                                      a("rate_y_mean")), tuple(int(d) for d in a("rate_leads")))
        k, n_draws, top_p, lm_weight, lag = a("decode")
        return cls(enc, rate, BigramPrior(a("prior_counts"), a("prior_unigram"), a("prior_starts")), a("table"),
                   int(k), int(n_draws), float(top_p), float(lm_weight), int(lag))


def fit_f2t(records, table, vocab_size: int, tr_seconds: float = 2.0,
            delays=DEFAULT_DELAYS, alpha_grid=DEFAULT_ALPHAS, **decode_kw) -> F2TModels:
    """Fit encoder, word-rate model and bigram prior on paired story records
    (dicts with ``words``, ``onsets``, ``counts`` and ``voxels``)."""
    if not records:
        raise ValueError("no paired fMRI/text records")
    enc = fit_encoding([(r["words"], r["onsets"], r["voxels"]) for r in records], table,
                       tr_seconds, delays, alpha_grid)
    rate = fit_word_rate([(r["voxels"], r["counts"]) for r in records], alpha_grid)
    prior = BigramPrior.fit([r["words"] for r in records], vocab_size)
    return F2TModels(enc, rate, prior, np.asarray(table, dtype=np.float64), **decode_kw)
