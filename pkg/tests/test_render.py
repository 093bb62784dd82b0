import re

import numpy as np
import pytest

from fmri2ges.render import parse_bones, render_svg
from fmri2ges.skeleton import BONES, N_KEYPOINTS, template_pose


def _clip(n=64, seed=0):
    rng = np.random.default_rng(seed)
    return np.tile(template_pose(), (n, 1)) + 0.01 * rng.standard_normal((n, 2 * N_KEYPOINTS))


def test_panel_count():
    svg = render_svg(_clip(64), every=8)
    assert svg.count('class="panel"') == 8
    assert svg.count("<line") == 8 * len(BONES)
    assert render_svg(_clip(65), every=8).count('class="panel"') == 9


def test_deterministic_bytes():
    assert render_svg(_clip(seed=3)).encode() == render_svg(_clip(seed=3)).encode()


def test_zero_clip_collapses_to_centre():
    svg = render_svg(np.zeros((16, 2 * N_KEYPOINTS)), every=8, panel=100.0)
    first = svg.split('data-frame="8"')[0]
    coords = re.findall(r'x1="([\d.]+)" y1="([\d.]+)" x2="([\d.]+)" y2="([\d.]+)"', first)
    assert coords and all(c == ("50.00", "50.00", "50.00", "50.00") for c in coords)


def test_skeleton_connected():
    # bones form one tree over all keypoints
    parent = list(range(N_KEYPOINTS))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i

    for a, b in BONES:
        parent[find(a)] = find(b)
    assert len({find(i) for i in range(N_KEYPOINTS)}) == 1


def test_bone_text_round_trip():
    text = ",".join(f"{a}-{b}" for a, b in BONES)
    assert parse_bones(text) == tuple(BONES)


@pytest.mark.parametrize("bad", [np.zeros((4, 10)), np.zeros(98), np.full((2, 98), np.nan)])
def test_malformed_input(bad):
    with pytest.raises(ValueError):
        render_svg(bad)


def test_bad_every():
    with pytest.raises(ValueError):
        render_svg(_clip(), every=0)
