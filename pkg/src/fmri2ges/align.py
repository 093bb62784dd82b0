"""Put words, fMRI TRs and gesture frames on one frame grid, then cut clips."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class FrameAlignedSequence:
    words: np.ndarray          # (N_total,) int word ids per frame
    fmri: np.ndarray           # (N_total, D_f)
    fps: float = 15.0

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if len(self.words) != len(self.fmri):
            raise ValueError("word and fMRI tracks differ in length")


def frames_per_tr(fps: float, tr_seconds: float) -> int:
    if fps <= 0 or tr_seconds <= 0:
        raise ValueError("fps and tr_seconds must be positive")
    # round before ceil so 15 * 2.0 stays 30 despite float noise
    return int(math.ceil(round(fps * tr_seconds, 9)))


def run_lengths(n_words: int, n_frames: int) -> list[int]:
    """Frame counts per word: ceil(N/W) each, trailing runs truncated to fit N.

    Every word keeps at least one frame, so when ceil(N/W) overshoots by more
    than one run (e.g. W=7, N=8) the truncation spreads over the tail.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if n_words <= 0:
        return []
    n_words = min(n_words, n_frames)
    eta = -(-n_frames // n_words)
    runs = []
    left = n_frames
    for i in range(n_words):
        r = min(eta, left - (n_words - 1 - i))
        runs.append(r)
        left -= r
    return runs


def replicate_words(words_in_tr, n_frames: int, silence: int) -> np.ndarray:
    """Frame-aligned word ids for one TR.

    Each word is repeated ceil(N/W) times in order and the final run is cut so
    the total is exactly N. An empty TR becomes N copies of ``silence``. Words
    beyond N (more words than frames) are dropped with a warning.
    """
    words = [int(w) for w in words_in_tr]
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if not words:
        return np.full(n_frames, silence, dtype=np.int64)
    if len(words) > n_frames:
        log.warning("dropping %d words that do not fit in %d frames",
                    len(words) - n_frames, n_frames)
        words = words[:n_frames]
    runs = run_lengths(len(words), n_frames)
    out = np.repeat(np.asarray(words, dtype=np.int64), runs)
    assert out.size == n_frames
    return out


def replicate_word_track(words_per_tr, n_frames: int, silence: int) -> np.ndarray:
    """Concatenate :func:`replicate_words` over a list of per-TR word groups."""
    if not words_per_tr:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([replicate_words(w, n_frames, silence) for w in words_per_tr])


def replicate_fmri(voxels, tr_seconds: float = 2.0, fps: float = 15.0) -> np.ndarray:
    """Repeat every TR row ``ceil(fps * tr)`` times."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    n = frames_per_tr(fps, tr_seconds)
    return np.repeat(np.asarray(voxels), n, axis=0)


def clip_offsets(n_total: int, clip_len: int = 64, stride: int = 16) -> list[int]:
    if clip_len < 1 or stride < 1:
        raise ValueError("clip_len and stride must be positive")
    if n_total < clip_len:
        raise ValueError(f"sequence of {n_total} frames is shorter than a clip ({clip_len})")
    return list(range(0, n_total - clip_len + 1, stride))


def clip_dataset(tracks: dict, clip_len: int = 64, stride: int = 16) -> list[dict]:
    """Slice every aligned track into windows at offsets 0, stride, 2*stride, ...

    ``tracks`` maps names to arrays sharing their first axis; the trailing
    remainder shorter than ``clip_len`` is dropped.
    """
    lengths = {len(v) for v in tracks.values()}
    if len(lengths) != 1:
        raise ValueError(f"tracks differ in length: {sorted(lengths)}")
    (n_total,) = lengths
    return [{k: np.asarray(v)[o:o + clip_len] for k, v in tracks.items()} | {"offset": o}
            for o in clip_offsets(n_total, clip_len, stride)]
