"""Conditional noise-prediction network, its gradients, and the Adam optimizer.

Architecture (no down- or upsampling anywhere)::

    [x_t ; WP_1 .. WP_S]  --stem conv-->  h            (C channels)
    h += Linear(sinusoid(t))                           per-channel time shift
    h += CrossAttention(query=h pixels, key/value=ctx) z_y fusion
    h += conv(silu(conv(silu(h))))                     x n_blocks residual blocks
    eps_pred = head conv(silu(h))                      1 channel

The attention context holds one token per wavelet plane; token ``s`` is the
text embedding ``z_y`` concatenated with the RMS and mean absolute value of
plane ``s``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError, InvariantError, ParameterError


@dataclass(frozen=True)
class ArchitectureConfig:
    channels: int = 16
    kernel_size: int = 3
    n_blocks: int = 2
    emb_dim: int = 16
    scales: int = 4
    time_dim: int = 32
    heads: int = 1

    def __post_init__(self):
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ParameterError("kernel_size must be odd and positive")
        if self.heads != 1:
            raise ParameterError("only single-head fusion is supported")
        if self.time_dim % 2:
            raise ParameterError("time_dim must be even")
        if min(self.channels, self.emb_dim, self.scales) < 1 or self.n_blocks < 0:
            raise ParameterError("channels, emb_dim and scales must be positive")

    @property
    def in_channels(self):
        return 1 + self.scales

    @property
    def context_dim(self):
        return self.emb_dim + 2

    def block_shapes(self):
        """Ordered ``name -> shape`` map of every parameter block."""
        c, k = self.channels, self.kernel_size
        shapes = {
            "stem.w": (c, self.in_channels, k, k),
            "stem.b": (c,),
            "time.w": (self.time_dim, c),
            "time.b": (c,),
            "fuse.wq": (c, self.emb_dim),
            "fuse.wk": (self.context_dim, self.emb_dim),
            "fuse.wv": (self.context_dim, c),
        }
        for i in range(self.n_blocks):
            shapes[f"block{i}.w1"] = (c, c, k, k)
            shapes[f"block{i}.b1"] = (c,)
            shapes[f"block{i}.w2"] = (c, c, k, k)
            shapes[f"block{i}.b2"] = (c,)
        shapes["head.w"] = (1, c, k, k)
        shapes["head.b"] = (1,)
        return shapes


def count_params(arch):
    return sum(int(np.prod(s)) for s in arch.block_shapes().values())


@dataclass
class DenoiserParams:
    arch: ArchitectureConfig
    blocks: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = self.arch.block_shapes()
        if list(self.blocks) != list(expected):
            raise InvariantError(f"parameter blocks {list(self.blocks)} do not match architecture")
        for name, shape in expected.items():
            block = self.blocks[name]
            if block.shape != shape:
                raise InvariantError(f"block {name} has shape {block.shape}, expected {shape}")
            if not np.all(np.isfinite(block)):
                raise InvariantError(f"block {name} holds non-finite values")

    def copy(self):
        return DenoiserParams(self.arch, {k: v.copy() for k, v in self.blocks.items()})

    def map(self, fn):
        return DenoiserParams(self.arch, {k: fn(v) for k, v in self.blocks.items()})

    def zeros_like(self):
        return self.map(np.zeros_like)

    def flat(self):
        return np.concatenate([v.ravel() for v in self.blocks.values()])

    def with_flat(self, vector):
        expected = sum(b.size for b in self.blocks.values())
        if len(vector) != expected:
            raise InvariantError(f"flat vector has {len(vector)} entries, expected {expected}")
        blocks, pos = {}, 0
        for name, block in self.blocks.items():
            blocks[name] = np.asarray(vector[pos:pos + block.size], dtype=np.float64).reshape(block.shape)
            pos += block.size
        return DenoiserParams(self.arch, blocks)

    def same_shapes(self, other):
        return self.arch == other.arch and all(
            a.shape == b.shape for a, b in zip(self.blocks.values(), other.blocks.values())
        )


def init_params(arch, rng):
    """He-normal conv kernels, zero biases, N(0, 1/d) projections."""
    blocks = {}
    for name, shape in arch.block_shapes().items():
        if name.endswith(".b") or name[-2:] in ("b1", "b2"):
            blocks[name] = np.zeros(shape)
        elif name.startswith("fuse."):
            blocks[name] = rng.normal(0.0, np.sqrt(1.0 / arch.emb_dim), size=shape)
        elif name == "time.w":
            blocks[name] = rng.normal(0.0, np.sqrt(1.0 / arch.time_dim), size=shape)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            blocks[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return DenoiserParams(arch, blocks)


def time_embedding(t, dim=32):
    """Sinusoidal embedding of integer steps, shape ``(len(t), dim)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def plane_stack(pyramids):
    """``(B, S, H, W)`` array of wavelet planes for a list of pyramids."""
    return np.stack([np.stack(p.planes) for p in pyramids])


def attention_context(z_y, planes):
    """Context tokens ``(B, S, d + 2)``: ``[z_y ; rms(WP_s) ; mean|WP_s|]`` per plane."""
    b, s = planes.shape[:2]
    rms = np.sqrt(np.mean(planes ** 2, axis=(2, 3)))
    mean_abs = np.mean(np.abs(planes), axis=(2, 3))
    z = np.broadcast_to(np.asarray(z_y, dtype=np.float64)[:, None, :], (b, s, z_y.shape[-1]))
    return np.concatenate([z, rms[..., None], mean_abs[..., None]], axis=-1)


def forward_graph(p, x_t, t, z_y, planes):
    """Build the batched network on the active tape.

    ``p`` maps block names to :class:`~awdiff.autodiff.Var` (or plain arrays);
    ``x_t`` is ``(B, H, W)``, ``t`` ``(B,)``, ``z_y`` ``(B, d)`` and ``planes``
    ``(B, S, H, W)``. Returns a ``(B, H, W)`` Var.
    """
    bsz, height, width = x_t.shape
    n_blocks = sum(1 for name in p if name.endswith(".w1"))
    time_dim = np.shape(getattr(p["time.w"], "value", p["time.w"]))[0]
    # channel-major activations: (C, B, H, W)
    stem_in = np.concatenate([x_t[None], planes.transpose(1, 0, 2, 3)], axis=0)

    h = ad.conv2d(stem_in, p["stem.w"], p["stem.b"])
    chans = h.shape[0]
    temb = ad.Var(time_embedding(t, time_dim)) @ p["time.w"] + p["time.b"]
    h = h + temb.transpose(1, 0).reshape(chans, bsz, 1, 1)

    ctx = attention_context(z_y, planes)
    tokens = h.reshape(chans, bsz, height * width).transpose(1, 2, 0)
    q = tokens @ p["fuse.wq"]
    k = ad.Var(ctx) @ p["fuse.wk"]
    v = ad.Var(ctx) @ p["fuse.wv"]
    scores = (q @ k.transpose(0, 2, 1)) * (1.0 / np.sqrt(q.shape[-1]))
    fused = ad.softmax(scores) @ v
    h = h + fused.transpose(2, 0, 1).reshape(chans, bsz, height, width)

    for i in range(n_blocks):
        r = ad.conv2d(ad.silu(h), p[f"block{i}.w1"], p[f"block{i}.b1"])
        r = ad.conv2d(ad.silu(r), p[f"block{i}.w2"], p[f"block{i}.b2"])
        h = h + r

    out = ad.conv2d(ad.silu(h), p["head.w"], p["head.b"])
    return out.reshape(bsz, height, width)


def _batch_inputs(x_t, t, z_y, f):
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != f.shape:
        raise InvariantError(f"x_t shape {x_t.shape} differs from feature shape {f.shape}")
    z = np.asarray(z_y.values if hasattr(z_y, "values") else z_y, dtype=np.float64)
    return x_t[None], np.array([t]), z[None], plane_stack([f])


def _check_arch(params, z, planes):
    arch = params.arch
    if z.shape[-1] != arch.emb_dim:
        raise InvariantError(f"embedding dim {z.shape[-1]} does not match architecture emb_dim {arch.emb_dim}")
    if planes.shape[1] != arch.scales:
        raise InvariantError(f"pyramid has {planes.shape[1]} planes, architecture expects {arch.scales}")


def forward(params, x_t, t, z_y, f):
    """Predict the noise in ``x_t`` at step ``t`` given text embedding and wavelet features."""
    xb, tb, zb, planes = _batch_inputs(x_t, t, z_y, f)
    _check_arch(params, zb, planes)
    out = forward_graph(params.blocks, xb, tb, zb, planes).value[0]
    if not np.all(np.isfinite(out)):
        raise DivergenceError(f"non-finite activations in denoiser at step t={t}", step=t)
    return out


def backward(params, x_t, t, z_y, f, upstream_grad):
    """Gradient of ``sum(forward(...) * upstream_grad)`` for every parameter block."""
    xb, tb, zb, planes = _batch_inputs(x_t, t, z_y, f)
    _check_arch(params, zb, planes)
    leaves = {k: ad.Var(v, requires_grad=True) for k, v in params.blocks.items()}
    with ad.Tape() as tape:
        out = forward_graph(leaves, xb, tb, zb, planes)
    tape.backward(out, seed=np.asarray(upstream_grad, dtype=np.float64)[None])
    return DenoiserParams(params.arch, {
        k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in leaves.items()
    })


# -- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    m: DenoiserParams
    v: DenoiserParams
    step: int = 0

    @classmethod
    def zeros(cls, params):
        return cls(params.zeros_like(), params.zeros_like(), 0)


def adam_step(params, grads, state, lr=1e-4, beta1=0.9, beta2=0.999, eps_hat=1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    if not params.same_shapes(grads):
        raise InvariantError("gradient blocks do not match parameter blocks")
    step = state.step + 1
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    new_p, new_m, new_v = {}, {}, {}
    for name, theta in params.blocks.items():
        g = grads.blocks[name]
        m = beta1 * state.m.blocks[name] + (1.0 - beta1) * g
        v = beta2 * state.v.blocks[name] + (1.0 - beta2) * g * g
        new_p[name] = theta - lr * (m / c1) / (np.sqrt(v / c2) + eps_hat)
        new_m[name], new_v[name] = m, v
    arch = params.arch
    return DenoiserParams(arch, new_p), AdamState(DenoiserParams(arch, new_m), DenoiserParams(arch, new_v), step)
