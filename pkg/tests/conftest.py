import numpy as np
import pytest

from fmri2ges.synthdata import WorldSpec, make_datasets, make_t2g_record
from fmri2ges.t2g import T2GConfig, t2g_clips, train_t2g


@pytest.fixture(scope="session")
def memorized():
    """A text model trained to memorize one synthetic clip (T=5)."""
    spec = WorldSpec(seed=0)
    rec = make_t2g_record(spec, 12, 1)
    clip = t2g_clips([rec])[0]
    bounds = np.cumsum(rec["counts"])[:-1]
    per_tr = [g.tolist() for g in np.split(rec["words"], bounds)]
    cfg = T2GConfig(T=5, d_model=128, n_blocks=1, batch_size=8, lr=1e-3, steps=5000)
    return train_t2g([clip], cfg, 0, vocab_size=spec.vocab_size), clip, per_tr


@pytest.fixture(scope="session")
def default_t2g():
    """The text model after 2000 default steps on the default synthetic data."""
    spec = WorldSpec(seed=0)
    splits, _ = make_datasets(spec, seed=0)
    clips = t2g_clips(splits["paired_t2g"])
    cfg = T2GConfig(steps=2000)
    model = train_t2g(clips, cfg, 0, vocab_size=spec.vocab_size, until=0)
    start = {k: v.copy() for k, v in model.params.items()}
    train_t2g(clips, cfg, 0, resume=model)
    return spec, model, start


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
