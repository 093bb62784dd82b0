"""Compare the compiled and numpy Lanczos kernels, and the kernel's share of
a full F2T fit + decode.

    python benchmarks/bench_kernels.py
"""
from __future__ import annotations

import argparse
import time
import timeit

import numpy as np

from fmri2ges import _native_py, kernels

try:
    from fmri2ges import _native
except ImportError:
    _native = None


def _case(n_words, dim, seed=0):
    rng = np.random.default_rng(seed)
    onsets = np.sort(rng.uniform(0, n_words * 0.8, n_words))
    values = rng.standard_normal((n_words, dim))
    n_tr = int(onsets[-1] // 2.0) + 5
    times = 2.0 * np.arange(n_tr) + 1.0
    return onsets, values, times, 2.0 * n_tr / n_words


def bench(repeat: int = 5) -> list[tuple]:
    rows = []
    for n_words, dim in [(120, 16), (120, 768), (2000, 16), (2000, 768), (20000, 16)]:
        on, val, tm, period = _case(n_words, dim)
        row = [n_words, dim]
        for impl in (_native_py, _native):
            if impl is None:
                row.append(float("nan"))
                continue
            n = max(1, int(0.2 / max(1e-6, timeit.timeit(
                lambda: impl.lanczos_resample(on, val, tm, period), number=1))))
            best = min(timeit.repeat(lambda: impl.lanczos_resample(on, val, tm, period),
                                     number=n, repeat=repeat)) / n
            row.append(best * 1e3)
        rows.append(tuple(row))
    return rows


def pipeline_share(impl) -> tuple[float, float]:
    """Wall time of a small F2T fit + decode and the part spent in ``impl``'s
    kernel, timed by a wrapper patched into ``fmri2ges.f2t``."""
    from fmri2ges import f2t
    from fmri2ges.synthdata import WorldSpec, make_f2t_record
    spec = WorldSpec(seed=3)
    train = [make_f2t_record(spec, 80, 100 + i) for i in range(10)]
    test = make_f2t_record(spec, 20, 500)
    spent = [0.0]

    def timed(*a, **kw):
        t0 = time.perf_counter()
        out = impl.lanczos_resample(*a, **kw)
        spent[0] += time.perf_counter() - t0
        return out

    saved = f2t.lanczos_resample
    f2t.lanczos_resample = timed
    try:
        t0 = time.perf_counter()
        models = f2t.fit_f2t(train, spec.semantic, spec.vocab_size)
        models.decode(test["voxels"], 0)
        total = time.perf_counter() - t0
    finally:
        f2t.lanczos_resample = saved
    return total, spent[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'words':>7} {'dim':>5} {'numpy ms':>10} {'cython ms':>10} {'speed-up':>9}")
    for n, d, py, cy in bench(args.repeat):
        print(f"{n:>7} {d:>5} {py:>10.3f} {cy:>10.3f} {py / cy:>8.1f}x")
    for name, impl in (("numpy", _native_py), ("cython", _native)):
        if impl is None:
            continue
        total, kern = pipeline_share(impl)
        print(f"F2T fit + decode with {name}: {total:.2f} s, of which the kernel "
              f"{kern:.3f} s ({100 * kern / total:.1f}%)")

if __name__ == "__main__":
    main()
