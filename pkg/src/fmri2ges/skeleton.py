"""49-keypoint upper-body skeleton: 7 body joints plus two 21-joint hands.

Coordinates are (x, y) in [-1, 1] with y pointing up. Frames are flattened as
``[x0, y0, x1, y1, ...]`` (98 values).
"""
from __future__ import annotations

import numpy as np

BODY = ("neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist")
N_BODY = len(BODY)
N_HAND = 21
N_KEYPOINTS = N_BODY + 2 * N_HAND
R_SHOULDER, L_SHOULDER = 1, 4
R_WRIST, L_WRIST = 3, 6
R_HAND0, L_HAND0 = N_BODY, N_BODY + N_HAND


def _hand_bones(root: int, wrist: int) -> list[tuple[int, int]]:
    bones = [(wrist, root)]
    for finger in range(5):
        prev = root
        for j in range(4):
            k = root + 1 + 4 * finger + j
            bones.append((prev, k))
            prev = k
    return bones


BONES: tuple[tuple[int, int], ...] = tuple(
    [(0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (5, 6)]
    + _hand_bones(R_HAND0, R_WRIST) + _hand_bones(L_HAND0, L_WRIST)
)


def _hand(wrist_xy, side: float) -> np.ndarray:
    pts = [wrist_xy + np.array([0.02 * side, -0.04])]
    for finger in range(5):
        angle = np.deg2rad(-60 + 30 * finger) * side
        direction = np.array([np.sin(angle), -np.cos(angle)])
        for j in range(4):
            pts.append(pts[0] + direction * 0.025 * (j + 1))
    return np.asarray(pts)


def template_pose() -> np.ndarray:
    """Rest pose, flattened to 98 values."""
    body = np.array([
        [0.0, 0.5],                  # neck
        [-0.25, 0.4], [-0.35, 0.05], [-0.3, -0.3],   # right arm
        [0.25, 0.4], [0.35, 0.05], [0.3, -0.3],      # left arm
    ])
    pose = np.vstack([body, _hand(body[R_WRIST], -1.0), _hand(body[L_WRIST], 1.0)])
    assert pose.shape == (N_KEYPOINTS, 2)
    return pose.reshape(-1)


def as_keypoints(frames) -> np.ndarray:
    """(..., 98) -> (..., 49, 2)."""
    frames = np.asarray(frames)
    return frames.reshape(frames.shape[:-1] + (N_KEYPOINTS, 2))
