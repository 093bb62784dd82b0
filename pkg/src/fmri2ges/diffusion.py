"""Closed-form diffusion math: schedule, forward noising, reverse steps, sampling.

All arithmetic here runs in float64 regardless of the network's precision.
Step indices are 1-based (``t = 1 .. T``) to match the usual DDPM notation;
arrays on the schedule are stored 0-based, so ``beta[t - 1]`` is beta_t.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .rng import stream

# Linear DDPM endpoints are defined for T = 1000; shorter chains rescale them
# by 1000 / T so the chain still reaches (almost) pure noise.
_REF_STEPS = 1000
_REF_BETA_START = 1e-4
_REF_BETA_END = 0.02


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma_sq: np.ndarray

    def check_t(self, t) -> None:
        t_arr = np.asarray(t)
        if t_arr.size and (np.any(t_arr < 1) or np.any(t_arr > self.T)):
            raise ValueError(f"step index out of range [1, {self.T}]: {t}")

    def ab(self, t) -> np.ndarray:
        """alpha_bar at (possibly batched) 1-based step ``t``."""
        self.check_t(t)
        return self.alpha_bar[np.asarray(t, dtype=np.int64) - 1]


def default_betas(T: int) -> tuple[float, float]:
    scale = _REF_STEPS / T
    return _REF_BETA_START * scale, min(_REF_BETA_END * scale, 0.999)


def make_schedule(T: int = 50, beta_start: float | None = None,
                  beta_end: float | None = None) -> DiffusionSchedule:
    """Linear beta schedule.

    When the endpoints are omitted they default to the DDPM pair
    (1e-4, 0.02) rescaled by 1000/T.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if beta_start is None or beta_end is None:
        ds, de = default_betas(int(T))
        beta_start = ds if beta_start is None else beta_start
        beta_end = de if beta_end is None else beta_end
    if not (np.isfinite(beta_start) and np.isfinite(beta_end)):
        raise ValueError("beta endpoints must be finite")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got "
                         f"({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return DiffusionSchedule(int(T), beta, alpha, alpha_bar, beta.copy())


def _bcast(coef: np.ndarray, like: np.ndarray) -> np.ndarray:
    # per-batch coefficients broadcast over trailing (frame, feature) axes
    coef = np.asarray(coef, dtype=np.float64)
    return coef.reshape(coef.shape + (1,) * (like.ndim - coef.ndim))


def q_sample(x0, t, eps, sched: DiffusionSchedule) -> np.ndarray:
    """Draw x_t ~ q(x_t | x_0) using the supplied noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    ab = _bcast(sched.ab(t), x0)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def ddim_predict_x0(x_t, eps_hat, t, sched: DiffusionSchedule) -> np.ndarray:
    """Clean-sample estimate implied by a noise prediction (DDIM x0 step)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: x_t {x_t.shape} vs eps_hat {eps_hat.shape}")
    ab = sched.ab(t)
    assert np.all(ab > 0.0), "alpha_bar must be positive"
    ab = _bcast(ab, x_t)
    return x_t / np.sqrt(ab) - np.sqrt(1.0 - ab) * eps_hat / np.sqrt(ab)


def ancestral_step(x_t, eps_hat, t: int, noise, sched: DiffusionSchedule) -> np.ndarray:
    """One reverse step x_t -> x_{t-1} with fixed variance sigma_t^2 = beta_t."""
    sched.check_t(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if not (x_t.shape == eps_hat.shape == noise.shape):
        raise ValueError("x_t, eps_hat and noise must share a shape")
    if t == 1 and np.any(noise != 0.0):
        raise ValueError("noise must be zero at the final step t=1")
    i = t - 1
    mean = (x_t - (sched.beta[i] / np.sqrt(1.0 - sched.alpha_bar[i])) * eps_hat) \
        / np.sqrt(sched.alpha[i])
    return mean + np.sqrt(sched.sigma_sq[i]) * noise


Denoiser = Callable[[np.ndarray, int, np.ndarray], np.ndarray]


def clipped_eps(x_t, eps_hat, t: int, sched: DiffusionSchedule, bound: float) -> np.ndarray:
    """Noise estimate consistent with the x0 prediction clipped to +-bound."""
    ab = sched.alpha_bar[t - 1]
    x0 = np.clip(ddim_predict_x0(x_t, eps_hat, t, sched), -bound, bound)
    return (x_t - np.sqrt(ab) * x0) / np.sqrt(1 - ab)


def sample_loop(denoiser: Denoiser, cond, sched: DiffusionSchedule, seed,
                shape: tuple[int, ...], clip_x0: float | None = None) -> np.ndarray:
    """Run the full reverse chain from x_T ~ N(0, I).

    ``denoiser(x_t, t, cond)`` returns the noise estimate for ``x_t``.
    All randomness comes from ``seed``; the result is a pure function of
    (denoiser, cond, schedule, seed, shape).

    With ``clip_x0`` the implied x0 is clipped to ``[-clip_x0, clip_x0]`` at
    every step and the noise estimate recomputed from it before stepping.
    """
    rng = stream(seed, "sample-loop")
    x = rng.standard_normal(shape)
    for t in range(sched.T, 0, -1):
        eps_hat = np.asarray(denoiser(x, t, cond), dtype=np.float64)
        if eps_hat.shape != x.shape:
            raise ValueError(f"denoiser returned {eps_hat.shape}, expected {x.shape}")
        if clip_x0 is not None:
            eps_hat = clipped_eps(x, eps_hat, t, sched, clip_x0)
        noise = rng.standard_normal(shape) if t > 1 else np.zeros(shape)
        x = ancestral_step(x, eps_hat, t, noise, sched)
    return x
