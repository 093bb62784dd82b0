"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL summary that is printed at the end of
the pytest run (see ``conftest.py``). Run alone with::

    pytest tests/test_acceptance.py -v
"""
import itertools
import math
import time

import numpy as np
import pytest

from fmri2ges import align, metrics
from fmri2ges.denoiser import DenoiserConfig, forward, init_params, loss_and_grad
from fmri2ges.diffusion import ddim_predict_x0, make_schedule, q_sample
from fmri2ges.dual import (DualConfig, alignment_term, generate_from_fmri, generate_from_noise,
                           make_pseudo, new_f2g_model, train_f2g)
from fmri2ges.f2t import fit_f2t, pearson_map, word_error_rate
from fmri2ges.io import (FormatError, decode_checkpoint, encode_checkpoint, read_dataset,
                         write_dataset)
from fmri2ges.rng import stream, subseed
from fmri2ges.synthdata import (WorldSpec, make_datasets, make_f2t_record,
                                make_unpaired_record)
from fmri2ges.t2g import T2GConfig, embed_frame_text, t2g_clips, to_checkpoint, train_t2g


@pytest.fixture
def record(request):
    lines = request.config.acceptance_lines

    def _record(n, ok, detail):
        lines.append(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return _record


# phase I and phase II step counts for the full pipeline run
C6_STEPS = (1500, 400)


def _params_hash(params):
    return tuple(params[k].tobytes() for k in sorted(params))


# ------------------------------------------------------------------ 1

def test_c01_diffusion_algebra(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    sched = make_schedule(50)
    worst = 0.0
    for _ in range(100):
        x0 = rng.standard_normal((8, 98))
        eps = rng.standard_normal((8, 98))
        t = int(rng.integers(1, 51))
        back = ddim_predict_x0(q_sample(x0, t, eps, sched), eps, t, sched)
        worst = max(worst, float(np.max(np.abs(back - x0))))
    bad = 0
    for _ in range(20):
        T = int(rng.integers(1, 200))
        lo = float(rng.uniform(1e-5, 0.05))
        hi = float(rng.uniform(lo, 0.99))
        s = make_schedule(T, lo, hi)
        ok = bool(np.all((s.beta > 0) & (s.beta < 1)) and np.all(np.diff(s.alpha_bar) < 0))
        ok = ok and np.allclose(s.alpha_bar, np.cumprod(1 - s.beta), rtol=0, atol=1e-15)
        ok = ok and np.all((s.alpha_bar > 0) & (s.alpha_bar < 1))
        bad += not ok
    dt = time.perf_counter() - t0
    record(1, worst < 1e-6 and bad == 0 and dt < 5,
           f"DDIM round-trip max err {worst:.1e}, {20 - bad}/20 schedules valid, {dt:.2f} s")


# ------------------------------------------------------------------ 2

def test_c02_gradient_check(record):
    t0 = time.perf_counter()
    cfg = DenoiserConfig(cond_dim=3, d_model=8, n_blocks=1)
    p = init_params(cfg, 0, dtype=np.float64)
    rng = np.random.default_rng(202)
    # the network as initialized for training, except that the output
    # projection gets a fan-in draw (at zero every upstream gradient vanishes)
    p["out_w"] = rng.standard_normal(p["out_w"].shape) / np.sqrt(cfg.d_model)
    b = {"x0": rng.standard_normal((2, 4, 98)), "cond": rng.standard_normal((2, 4, 3)),
         "t": np.array([3, 8]), "eps": rng.standard_normal((2, 4, 98))}
    sched = make_schedule(10)
    _, grads = loss_and_grad(p, b, sched)
    h, worst, n = 1e-4, 0.0, 0
    for name, arr in p.items():
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = loss_and_grad(p, b, sched)[0]
            arr[idx] = old - h
            lm = loss_and_grad(p, b, sched)[0]
            arr[idx] = old
            num, ana = (lp - lm) / (2 * h), grads[name][idx]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
            n += 1
    dt = time.perf_counter() - t0
    record(2, worst < 1e-5 and dt < 60,
           f"{n} coordinates, max relative error {worst:.1e}, {dt:.1f} s")


# ------------------------------------------------------------------ 3

def test_c03_exact_mode_alignment(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    sched = make_schedule(50)
    cfg_x, cfg_f = DenoiserConfig(cond_dim=4, d_model=8, n_blocks=1), \
        DenoiserConfig(cond_dim=6, d_model=8, n_blocks=1)
    worst = 0.0
    for draw in range(100):
        px = {k: 0.3 * rng.standard_normal(v.shape)
              for k, v in init_params(cfg_x, draw, np.float64).items()}
        pf = {k: 0.3 * rng.standard_normal(v.shape)
              for k, v in init_params(cfg_f, draw, np.float64).items()}
        x_t = rng.standard_normal((3, 6, 98))
        cx, cf = rng.standard_normal((3, 6, 4)), rng.standard_normal((3, 6, 6))
        t = rng.integers(1, 51, size=3)
        lam = float(rng.uniform(0.001, 1.0))
        value = alignment_term(px, pf, x_t, cx, cf, t, sched, lam, "exact", False)[0]
        gx = ddim_predict_x0(x_t, forward(px, x_t, t, cx), t, sched)
        gf = ddim_predict_x0(x_t, forward(pf, x_t, t, cf), t, sched)
        oracle = lam * np.mean(np.mean((gx - gf).reshape(3, -1) ** 2, axis=1))
        worst = max(worst, abs(value - oracle) / abs(oracle))
    dt = time.perf_counter() - t0
    record(3, worst < 1e-6 and dt < 5, f"max relative gap {worst:.1e} over 100 draws, {dt:.2f} s")


# ------------------------------------------------------------------ 4

def test_c04_zero_lambda_degeneracy(record):
    t0 = time.perf_counter()
    spec = WorldSpec(seed=4)
    splits, _ = make_datasets(spec, {"paired_f2t": 4, "paired_t2g": 3, "unpaired_fmri": 2}, 4,
                              words={"paired_f2t": 60, "paired_t2g": 20, "unpaired_fmri": 20})
    clips = t2g_clips(splits["paired_t2g"])
    f2t = fit_f2t(splits["paired_f2t"], spec.semantic, spec.vocab_size, k=2)
    unpaired = [r["voxels"] for r in splits["unpaired_fmri"]]
    small = dict(d_model=16, n_blocks=1, batch_size=8)
    p1, p2 = 20, 15
    cfg = T2GConfig(steps=p1 + p2, **small)

    straight = []
    train_t2g(clips, cfg, 0, vocab_size=spec.vocab_size,
              callback=lambda m: straight.append(_params_hash(m.params)))
    tx = train_t2g(clips, cfg, 0, vocab_size=spec.vocab_size, until=p1)
    two_phase = []
    dcfg = DualConfig(lam=0.0, steps=p2, **small)
    first = [_params_hash(tx.params)]
    res = train_f2g(tx, f2t, clips, unpaired, dcfg, 0,
                    callback=lambda r: two_phase.append(_params_hash(r.theta_x.params)))
    n_vox = unpaired[0].shape[1]
    fresh = new_f2g_model(tx, n_vox, np.zeros(n_vox), np.ones(n_vox), dcfg, 0)
    same_x = first[0] == straight[p1 - 1] and two_phase == straight[p1:]
    untouched = _params_hash(res.theta_f.params) == _params_hash(fresh.params)
    dt = time.perf_counter() - t0
    record(4, same_x and untouched and dt < 120,
           f"theta_x identical at {len(two_phase)}/{p2} phase-II steps: {same_x}, "
           f"theta_f untouched: {untouched}, {dt:.1f} s")


# ------------------------------------------------------------------ 5

def _wer(spec, seed):
    splits, _ = make_datasets(spec, {"paired_f2t": 20, "paired_t2g": 0, "unpaired_fmri": 0},
                              seed)
    models = fit_f2t(splits["paired_f2t"], spec.semantic, spec.vocab_size, k=8)
    edits = words = 0
    for i in range(20):
        rec = make_f2t_record(spec, 10, subseed(seed, "held-out", i))
        hyp = models.decode(rec["voxels"], subseed(seed, "decode", i)).words
        edits += word_error_rate(rec["words"], hyp) * len(rec["words"])
        words += len(rec["words"])
    return edits / words


def test_c05_f2t_closed_loop(record):
    t0 = time.perf_counter()
    clean = _wer(WorldSpec(seed=5, sigma_f=0.0), 5)
    noisy = _wer(WorldSpec(seed=5, sigma_f=0.5), 5)
    dt = time.perf_counter() - t0
    record(5, clean <= 0.10 and noisy > clean and dt < 180,
           f"WER noise-free {clean:.3f}, at sigma_f=0.5 {noisy:.3f}, {dt:.1f} s")


# ------------------------------------------------------------------ 6

@pytest.mark.slow
def test_c06_fmri_beats_noise_control(record):
    t0 = time.perf_counter()
    spec = WorldSpec(seed=0)
    splits, _ = make_datasets(spec, seed=0)
    clips = t2g_clips(splits["paired_t2g"])
    tx = train_t2g(clips, T2GConfig(steps=C6_STEPS[0]), 0, vocab_size=spec.vocab_size)
    f2t = fit_f2t(splits["paired_f2t"], spec.semantic, spec.vocab_size)
    unpaired = [r["voxels"] for r in splits["unpaired_fmri"]]
    res = train_f2g(tx, f2t, clips, unpaired, DualConfig(steps=C6_STEPS[1]), 0)
    train_time = time.perf_counter() - t0
    # held-out fMRI, decoded to text and rendered by the text model as reference
    held = [make_unpaired_record(spec, 40, subseed(0, "heldout", i))["voxels"] for i in range(2)]
    pairs = []
    for i, vox in enumerate(held):
        pairs += make_pseudo(f2t, tx, vox, 99, i, stride=64).pairs
    per_seed = []
    for s in range(5):
        ref, gen, ctl = [], [], []
        for p in pairs:
            e = subseed(s, "eval", p.record, p.offset)   # shared by all three samplers
            ref.append(tx.denormalize(tx.sample(embed_frame_text(p.words, tx.table), e)))
            gen.append(generate_from_fmri(res.theta_f, p.cond_f, e))
            ctl.append(generate_from_noise(res.theta_f, len(p.words), e))
        ref, gen, ctl = map(np.stack, (ref, gen, ctl))
        per_seed.append([metrics.mae(gen, ref), metrics.ape(gen, ref), metrics.pck(gen, ref),
                         metrics.mae(ctl, ref), metrics.ape(ctl, ref), metrics.pck(ctl, ref)])
    m = np.mean(per_seed, axis=0)
    ok = m[0] < m[3] and m[1] < m[4] and m[2] > m[5] and train_time <= 600
    record(6, ok, f"fMRI vs noise: MAE {m[0]:.5f}/{m[3]:.5f}, APE {m[1]:.5f}/{m[4]:.5f}, "
                  f"PCK {m[2]:.4f}/{m[5]:.4f} over {len(pairs)} clips x 5 seeds; "
                  f"training {train_time:.0f} s")


# ------------------------------------------------------------------ 7

def test_c07_metric_oracles(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(707)
    checks = {}
    # FGD: two sets whose sample moments are exactly constructed Gaussians sharing
    # eigenvectors, where the distance has the closed form
    # |mu1 - mu2|^2 + sum (sqrt(a_i + eps) - sqrt(b_i + eps))^2
    D, n = 6, 400
    Q, _ = np.linalg.qr(rng.standard_normal((D, D)))
    a, b = rng.uniform(0.1, 2.0, D), rng.uniform(0.1, 2.0, D)
    mu1, mu2 = rng.standard_normal(D), rng.standard_normal(D)

    def exact_set(mu, var):
        z = rng.standard_normal((n, D))
        z -= z.mean(axis=0)
        z = z @ np.linalg.inv(np.linalg.cholesky(np.cov(z, rowvar=False)).T)
        return (z * np.sqrt(var)) @ Q.T + mu

    fa, fb = exact_set(mu1, a), exact_set(mu2, b)
    closed = float(np.sum((mu1 - mu2) ** 2) + np.sum((np.sqrt(a + 1e-6) - np.sqrt(b + 1e-6)) ** 2))
    got = metrics.fgd(fa.reshape(20, 20, D), fb.reshape(20, 20, D))
    checks["fgd"] = abs(got - closed) < 1e-6
    # brute-force loops
    x = rng.standard_normal((2, 5, 98))
    y = x + 0.3 * rng.standard_normal(x.shape)
    flat = [(i, j, k) for i in range(2) for j in range(5) for k in range(98)]
    checks["mae"] = abs(metrics.mae(x, y) - sum(abs(x[i][j][k] - y[i][j][k])
                                                for i, j, k in flat) / len(flat)) < 1e-12
    dists = [math.hypot(x[i, j, 2 * q] - y[i, j, 2 * q], x[i, j, 2 * q + 1] - y[i, j, 2 * q + 1])
             for i in range(2) for j in range(5) for q in range(49)]
    checks["ape"] = abs(metrics.ape(x, y) - sum(dists) / len(dists)) < 1e-12
    hits = 0
    for i in range(2):
        for j in range(5):
            sd = math.hypot(y[i, j, 2] - y[i, j, 8], y[i, j, 3] - y[i, j, 9])
            for q in range(49):
                hits += dists[(i * 5 + j) * 49 + q] <= 0.2 * sd
    checks["pck"] = abs(metrics.pck(x, y) - hits / len(dists)) < 1e-12
    c = rng.standard_normal((4, 5, 98))
    pair = [math.sqrt(sum((c[i].ravel()[k] - c[j].ravel()[k]) ** 2 for k in range(c[0].size)))
            for i, j in itertools.combinations(range(4), 2)]
    checks["diversity"] = abs(metrics.diversity(c) - sum(pair) / len(pair)) < 1e-9
    checks["bc=1"] = abs(metrics.beat_consistency(None, [4.0, 9.0], beats=[4, 9]) - 1) < 1e-9
    checks["bc=exp(-1/2)"] = abs(metrics.beat_consistency(None, [10.0], sigma=1.5, beats=[11.5])
                                 - math.exp(-0.5)) < 1e-9
    dt = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    record(7, not failed and dt < 10,
           f"{len(checks) - len(failed)}/{len(checks)} oracles matched"
           + (f" (failed: {', '.join(failed)})" if failed else "") + f", {dt:.2f} s")


# ------------------------------------------------------------------ 8

def test_c08_run_lengths_exhaustive(record):
    bad = [(w, n) for n in range(1, 121) for w in range(1, n + 1)
           if sum(align.run_lengths(w, n)) != n or min(align.run_lengths(w, n)) < 1
           or len(align.replicate_words(list(range(w)), n, -1)) != n]
    paper_case = align.run_lengths(2, align.frames_per_tr(15, 2)) == [15, 15]
    record(8, not bad and paper_case,
           f"{120 * 121 // 2 - len(bad)}/{120 * 121 // 2} (W, N) pairs sum to N; "
           f"W=2, N=30 gives {align.run_lengths(2, 30)}")


# ------------------------------------------------------------------ 9

def test_c09_pearson_latents(record):
    n, n_vox = 200, 8
    cfg = DenoiserConfig(cond_dim=4, d_model=16, n_blocks=1)
    params = init_params(cfg, 9, dtype=np.float64)
    rng = stream(9, "acceptance", "pearson")
    x_t = rng.standard_normal((n, 8, 98))
    cond = rng.standard_normal((n, 8, 4))
    t = rng.integers(1, 51, size=n)
    _, hidden = forward(params, x_t, t, cond, return_hidden=True)
    Z = hidden.mean(axis=1)                                   # one latent vector per sample
    planted = Z @ rng.standard_normal((cfg.d_model, n_vox))
    noise = rng.standard_normal((n, n_vox))
    r = pearson_map(Z, np.hstack([planted, noise])).r
    rp, rn = r[:n_vox], r[n_vox:]
    record(9, bool(np.all(rp > 0.95) and np.all(np.abs(rn) < 0.2)),
           f"planted r min {rp.min():.4f}; noise |r| max {np.abs(rn).max():.3f} "
           f"({int(np.sum(np.abs(rn) >= 0.2))}/{n_vox} at or above 0.2)")


# ------------------------------------------------------------------ 10

def test_c10_persistence(record, tmp_path):
    spec = WorldSpec(seed=10, vocab_size=16)
    splits, meta = make_datasets(spec, {"paired_f2t": 2, "paired_t2g": 2, "unpaired_fmri": 1}, 10,
                                 words={"paired_f2t": 20, "paired_t2g": 20, "unpaired_fmri": 20})
    model = train_t2g(t2g_clips(splits["paired_t2g"]),
                      T2GConfig(steps=3, d_model=8, n_blocks=1, batch_size=4), 0,
                      vocab_size=spec.vocab_size)
    blob = encode_checkpoint(to_checkpoint({"x": model}, extra_meta={"note": "acceptance"}))
    ck_ok = encode_checkpoint(decode_checkpoint(blob)) == blob
    rejected = 0
    positions = np.linspace(0, len(blob) - 1, 64).astype(int)
    for pos in positions:
        bad = bytearray(blob)
        bad[pos] ^= 0x01
        try:
            decode_checkpoint(bytes(bad))
        except FormatError:
            rejected += 1
    write_dataset(tmp_path / "a", splits, meta)
    back, back_meta = read_dataset(tmp_path / "a")
    write_dataset(tmp_path / "b", back, back_meta)
    files = sorted(p for p in (tmp_path / "a").rglob("*") if p.is_file())
    ds_ok = all(p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()
                for p in files)
    victim = next(p for p in files if p.suffix == ".f2gb")
    raw = bytearray(victim.read_bytes())
    raw[len(raw) // 2] ^= 0x10
    victim.write_bytes(bytes(raw))
    try:
        read_dataset(tmp_path / "a")
        ds_reject = False
    except FormatError:
        ds_reject = True
    record(10, ck_ok and ds_ok and rejected == len(positions) and ds_reject,
           f"checkpoint round-trip exact: {ck_ok}, dataset ({len(files)} files) exact: {ds_ok}, "
           f"{rejected}/{len(positions)} byte flips rejected, corrupted array rejected: {ds_reject}")
