"""Conditional noise predictor eps_theta(x_t, t, c) with cross-attention.

Each of the ``n_blocks`` residual blocks applies, in order, a frame-wise MLP,
a width-3 temporal convolution and cross-attention onto the condition
sequence. Gradients are derived by hand (no autodiff dependency) and checked
against finite differences in the test-suite.

Parameters live in a flat ``dict[str, ndarray]`` so they serialize directly
into checkpoints. Arrays are float32 for training; pass ``dtype=np.float64``
to :func:`init_params` for gradient checks.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .rng import stream

N_FEAT = 98


@dataclass(frozen=True)
class DenoiserConfig:
    cond_dim: int
    d_model: int = 128
    n_blocks: int = 2
    n_feat: int = N_FEAT
    init_std: float | None = None     # None: 1 / sqrt(fan_in) per weight


def sinusoidal_embed(t, d: int) -> np.ndarray:
    """Interleaved (sin, cos) pairs at frequencies 1 / 10000^(2i/d).

    ``t`` may be a scalar or a 1-D array; the output gains a trailing axis.
    """
    if d <= 0 or d % 2:
        raise ValueError(f"embedding width must be even and positive, got {d}")
    t = np.asarray(t, dtype=np.float64)
    freqs = 1.0 / 10000.0 ** (2.0 * np.arange(d // 2) / d)
    arg = t[..., None] * freqs
    out = np.empty(t.shape + (d,), dtype=np.float64)
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


@lru_cache(maxsize=32)
def _positions(n: int, d: int, dtype_str: str) -> np.ndarray:
    pe = sinusoidal_embed(np.arange(n), d).astype(dtype_str)
    pe.setflags(write=False)
    return pe


def param_shapes(cfg: DenoiserConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.n_feat
    shapes = {
        "in_w": (f, d), "in_b": (d,),
        "t_w1": (d, d), "t_b1": (d,), "t_w2": (d, d), "t_b2": (d,),
    }
    for l in range(cfg.n_blocks):
        p = f"b{l}."
        shapes.update({
            p + "mlp_w1": (d, 4 * d), p + "mlp_b1": (4 * d,),
            p + "mlp_w2": (4 * d, d), p + "mlp_b2": (d,),
            p + "conv_w": (3, d, d), p + "conv_b": (d,),
            p + "cond_w": (cfg.cond_dim, d), p + "cond_b": (d,),
            p + "q_w": (d, d), p + "k_w": (d, d), p + "v_w": (d, d),
            p + "o_w": (d, d), p + "o_b": (d,),
        })
    shapes.update({"out_w": (d, f), "out_b": (f,)})
    return shapes


def init_params(cfg: DenoiserConfig, seed, dtype=np.float32) -> dict[str, np.ndarray]:
    """Gaussian weights, zero biases, zero output projection.

    Weights have std ``init_std`` when set, else 1 / sqrt(fan_in) where the
    fan-in is every axis but the last.
    """
    rng = stream(seed, "denoiser-init")
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.startswith("out_") or "_b" in name.split(".")[-1]:
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            std = cfg.init_std if cfg.init_std is not None else 1.0 / np.sqrt(np.prod(shape[:-1]))
            params[name] = (std * rng.standard_normal(shape)).astype(dtype)
    return params


def config_from_params(params: dict[str, np.ndarray]) -> DenoiserConfig:
    n_feat, d = params["in_w"].shape
    n_blocks = sum(1 for k in params if k.endswith(".conv_w"))
    cond_dim = params["b0.cond_w"].shape[0] if n_blocks else 0
    return DenoiserConfig(cond_dim=cond_dim, d_model=d, n_blocks=n_blocks, n_feat=n_feat)


def silu_fwd(x):
    """Returns (silu(x), sigmoid(x)); the sigmoid is kept for the backward pass."""
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return x * s, s


def silu_bwd(x, s, g):
    return g * (s * (1.0 + x * (1.0 - s)))


def _mm(a, w):
    # (B, N, i) @ (i, j) through a single 2-D GEMM
    return (a.reshape(-1, a.shape[-1]) @ w).reshape(a.shape[:-1] + (w.shape[-1],))


def _wgrad(a, g):
    # sum over batch and frames of a^T g
    return a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])


def _batched(x, t, cond):
    x = np.asarray(x)
    cond = np.asarray(cond)
    single = x.ndim == 2
    if single:
        x, cond = x[None], cond[None]
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (x.shape[0],))
    return x, t, cond, single


def attend(Q, K, V):
    """softmax(Q K^T / sqrt(d)) V over the last two axes, d = key width.

    Returns the output rows and the attention weights.
    """
    Q, K, V = np.asarray(Q), np.asarray(K), np.asarray(V)
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ValueError(f"inconsistent attention shapes Q{Q.shape} K{K.shape} V{V.shape}")
    S = np.matmul(Q, np.swapaxes(K, -1, -2)) * np.asarray(1.0 / np.sqrt(K.shape[-1]), Q.dtype)
    if not np.all(np.isfinite(S)):
        raise FloatingPointError("non-finite attention logits")
    S = S - S.max(axis=-1, keepdims=True)
    A = np.exp(S)
    A /= A.sum(axis=-1, keepdims=True)
    return np.matmul(A, V), A


def cross_attention(hidden, cond, w_q, w_k, w_v, return_weights: bool = False):
    """Attention of ``hidden`` (N, d) onto a projected condition (M, d)."""
    hidden, cond = np.asarray(hidden), np.asarray(cond)
    if hidden.shape[-1] != w_q.shape[0] or cond.shape[-1] != w_k.shape[0] \
            or cond.shape[-1] != w_v.shape[0]:
        raise ValueError("projection shapes do not fit hidden/condition widths")
    out, A = attend(hidden @ w_q, cond @ w_k, cond @ w_v)
    return (out, A) if return_weights else out


def forward(params, x_t, t, cond, return_cache: bool = False, return_hidden: bool = False):
    """Noise estimate for ``x_t`` (``(N, 98)`` or batched ``(B, N, 98)``).

    ``cond`` is ``(M, D_c)`` or ``(B, M, D_c)``; ``t`` is a step index or one
    per batch element.
    """
    x, t, cond, single = _batched(x_t, t, cond)
    dt = params["in_w"].dtype
    x = x.astype(dt, copy=False)
    cond = cond.astype(dt, copy=False)
    d = params["in_w"].shape[1]
    if cond.shape[-1] != params["b0.cond_w"].shape[0]:
        raise ValueError(f"condition width {cond.shape[-1]} does not match "
                         f"network ({params['b0.cond_w'].shape[0]})")
    if x.shape[-1] != params["in_w"].shape[0]:
        raise ValueError(f"input width {x.shape[-1]} != {params['in_w'].shape[0]}")
    if cond.shape[0] != x.shape[0]:
        raise ValueError("batch size mismatch between x_t and cond")
    if np.any(t < 0):
        raise ValueError("step index must be non-negative")
    B, N, _ = x.shape
    M = cond.shape[1]
    scale = np.asarray(1.0 / np.sqrt(d), dtype=dt)

    e = sinusoidal_embed(t, d).astype(dt)
    a1 = e @ params["t_w1"] + params["t_b1"]
    s1, sig_a1 = silu_fwd(a1)
    temb = s1 @ params["t_w2"] + params["t_b2"]
    h = _mm(x, params["in_w"]) + params["in_b"] + temb[:, None, :] + _positions(N, d, dt.str)
    cpos = _positions(M, d, dt.str)

    blocks = []
    l = 0
    while f"b{l}.conv_w" in params:
        p = f"b{l}."
        c = {}
        # frame-wise MLP
        c["h_mlp"] = h
        u = _mm(h, params[p + "mlp_w1"]) + params[p + "mlp_b1"]
        su, c["sig_u"] = silu_fwd(u)
        c["u"], c["su"] = u, su
        h = h + _mm(su, params[p + "mlp_w2"]) + params[p + "mlp_b2"]
        # temporal convolution, zero padded, kernel 3
        hp = np.zeros((B, N + 2, d), dtype=dt)
        hp[:, 1:N + 1] = h
        cw = params[p + "conv_w"]
        cv = _mm(hp[:, 0:N], cw[0]) + _mm(hp[:, 1:N + 1], cw[1]) + _mm(hp[:, 2:N + 2], cw[2]) \
            + params[p + "conv_b"]
        scv, c["sig_cv"] = silu_fwd(cv)
        c["hp"], c["cv"] = hp, cv
        h = h + scv
        # cross-attention
        c["h_att"] = h
        cp = _mm(cond, params[p + "cond_w"]) + params[p + "cond_b"] + cpos
        Q = _mm(h, params[p + "q_w"])
        K = _mm(cp, params[p + "k_w"])
        V = _mm(cp, params[p + "v_w"])
        O, A = attend(Q, K, V)
        c.update(cp=cp, Q=Q, K=K, V=V, A=A, O=O)
        h = h + _mm(O, params[p + "o_w"]) + params[p + "o_b"]
        blocks.append(c)
        l += 1

    out = _mm(h, params["out_w"]) + params["out_b"]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite denoiser output")
    res_out = out[0] if single else out
    res_h = h[0] if single else h
    if return_cache:
        cache = dict(x=x, cond=cond, e=e, a1=a1, s1=s1, sig_a1=sig_a1, h_final=h, blocks=blocks,
                     single=single, scale=scale)
        return (res_out, cache) if not return_hidden else (res_out, res_h, cache)
    if return_hidden:
        return res_out, res_h
    return res_out


def backward(params, cache, d_out) -> dict[str, np.ndarray]:
    """Parameter gradients given dL/d(output) for a cached forward pass."""
    dt = params["in_w"].dtype
    g = np.asarray(d_out, dtype=dt)
    if cache["single"]:
        g = g[None]
    grads = {}
    h = cache["h_final"]
    grads["out_w"] = _wgrad(h, g)
    grads["out_b"] = g.sum(axis=(0, 1))
    dh = _mm(g, params["out_w"].T)
    scale = cache["scale"]
    cond = cache["cond"]

    for l in range(len(cache["blocks"]) - 1, -1, -1):
        p = f"b{l}."
        c = cache["blocks"][l]
        # cross-attention
        grads[p + "o_w"] = _wgrad(c["O"], dh)
        grads[p + "o_b"] = dh.sum(axis=(0, 1))
        dO = _mm(dh, params[p + "o_w"].T)
        A, V, Q, K = c["A"], c["V"], c["Q"], c["K"]
        dA = np.matmul(dO, V.transpose(0, 2, 1))
        dV = np.matmul(A.transpose(0, 2, 1), dO)
        dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) * scale
        dQ = np.matmul(dS, K)
        dK = np.matmul(dS.transpose(0, 2, 1), Q)
        grads[p + "q_w"] = _wgrad(c["h_att"], dQ)
        grads[p + "k_w"] = _wgrad(c["cp"], dK)
        grads[p + "v_w"] = _wgrad(c["cp"], dV)
        dcp = _mm(dK, params[p + "k_w"].T) + _mm(dV, params[p + "v_w"].T)
        grads[p + "cond_w"] = _wgrad(cond, dcp)
        grads[p + "cond_b"] = dcp.sum(axis=(0, 1))
        dh = dh + _mm(dQ, params[p + "q_w"].T)
        # temporal convolution
        N = dh.shape[1]
        dcv = silu_bwd(c["cv"], c["sig_cv"], dh)
        grads[p + "conv_b"] = dcv.sum(axis=(0, 1))
        hp = c["hp"]
        cw = params[p + "conv_w"]
        grads[p + "conv_w"] = np.stack([_wgrad(hp[:, k:k + N], dcv) for k in range(3)])
        dhp = np.zeros_like(hp)
        for k in range(3):
            dhp[:, k:k + N] += _mm(dcv, cw[k].T)
        dh = dh + dhp[:, 1:N + 1]
        # frame-wise MLP
        grads[p + "mlp_w2"] = _wgrad(c["su"], dh)
        grads[p + "mlp_b2"] = dh.sum(axis=(0, 1))
        du = silu_bwd(c["u"], c["sig_u"], _mm(dh, params[p + "mlp_w2"].T))
        grads[p + "mlp_w1"] = _wgrad(c["h_mlp"], du)
        grads[p + "mlp_b1"] = du.sum(axis=(0, 1))
        dh = dh + _mm(du, params[p + "mlp_w1"].T)

    dtemb = dh.sum(axis=1)
    grads["t_w2"] = cache["s1"].T @ dtemb
    grads["t_b2"] = dtemb.sum(axis=0)
    da1 = silu_bwd(cache["a1"], cache["sig_a1"], dtemb @ params["t_w2"].T)
    grads["t_w1"] = cache["e"].T @ da1
    grads["t_b1"] = da1.sum(axis=0)
    grads["in_w"] = _wgrad(cache["x"], dh)
    grads["in_b"] = dh.sum(axis=(0, 1))
    return {k: grads[k].astype(dt, copy=False) for k in params}


def loss_and_grad(params, batch: dict, sched):
    """MSE between true and predicted noise, with exact parameter gradients.

    ``batch`` holds ``x0 (B, N, F)``, ``cond (B, M, D_c)``, integer ``t (B,)``
    and ``eps (B, N, F)``.
    """
    from .diffusion import q_sample

    dt = params["in_w"].dtype
    x_t = q_sample(batch["x0"], batch["t"], batch["eps"], sched).astype(dt)
    eps = np.asarray(batch["eps"], dtype=dt)
    out, cache = forward(params, x_t, batch["t"], batch["cond"], return_cache=True)
    diff = out - eps
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite training loss")
    grads = backward(params, cache, (2.0 / diff.size) * diff)
    return loss, grads


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params, lr: float = 1e-4, **kw) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()}, lr=lr, **kw)


def adam_step(params, grads, state: AdamState) -> None:
    """Bias-corrected Adam update, applied in place."""
    if set(grads) != set(params):
        raise ValueError("gradient names do not match parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {k}: {g.shape} vs {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}")
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
