"""Pure numpy implementations of the compiled kernels in ``_native.pyx``.

Used when the extension is not built, or when ``FMRI2GES_PURE_PYTHON=1``.
Both backends must agree to float64 round-off; the test-suite checks this.
"""
from __future__ import annotations

import numpy as np


def lanczos_resample(onsets, values, times, period, window=3, block=256):
    """Lanczos-interpolate impulses at ``onsets`` onto sample ``times``.

    Kernel: sinc(d/period) * sinc(d/(window*period)) for |d| < window*period.
    Each output row is divided by its kernel mass when that mass exceeds 1,
    so densely covered constant inputs come out constant while isolated
    impulses keep their kernel-scaled amplitude.
    """
    onsets = np.ascontiguousarray(onsets, dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    times = np.ascontiguousarray(times, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != onsets.shape[0]:
        raise ValueError("values must be (n_onsets, D)")
    out = np.zeros((times.shape[0], values.shape[1]))
    if onsets.size == 0 or times.size == 0:
        return out
    if np.any(np.diff(onsets) < 0):
        order = np.argsort(onsets, kind="stable")
        onsets, values = onsets[order], values[order]
    reach = window * period
    # blocks of output times against only the onsets inside their reach,
    # so memory stays bounded for long records
    for s in range(0, times.shape[0], block):
        t = times[s:s + block]
        lo = np.searchsorted(onsets, t.min() - reach, side="left")
        hi = np.searchsorted(onsets, t.max() + reach, side="right")
        if lo == hi:
            continue
        d = (t[:, None] - onsets[None, lo:hi]) / period
        k = np.where(np.abs(d) < window, np.sinc(d) * np.sinc(d / window), 0.0)
        mass = k.sum(axis=1)
        chunk = k @ values[lo:hi]
        big = mass > 1.0
        chunk[big] /= mass[big, None]
        out[s:s + block] = chunk
    return out
