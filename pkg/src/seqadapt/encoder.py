"""Feature extractor: input projection, learnable positional table, stacked
multi-head self-attention layers (post-norm), temporal max-pooling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class EncoderConfig:
    timesteps: int = 45
    bands: int = 10
    d_model: int = 128
    n_layers: int = 3
    n_heads: int = 2
    d_inner: int = 128
    # 0 = single linear projection bands -> d_model; > 0 inserts an extra
    # linear stage bands -> proj_hidden -> d_model.
    proj_hidden: int = 0

    def __post_init__(self):
        for name in ("timesteps", "bands", "d_model", "n_layers", "n_heads",
                     "d_inner"):
            if getattr(self, name) < 1:
                raise ValueError(f"EncoderConfig.{name} must be >= 1")
        if self.proj_hidden < 0:
            raise ValueError("EncoderConfig.proj_hidden must be >= 0")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class LayerParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    w_ff1: Tensor
    b_ff1: Tensor
    w_ff2: Tensor
    b_ff2: Tensor
    norm1_gain: Tensor
    norm1_bias: Tensor
    norm2_gain: Tensor
    norm2_bias: Tensor


@dataclass
class EncoderParams:
    """All feature-extractor parameters; iteration order is fixed so that
    optimizers and checkpoints see a stable naming."""

    w_in: list[Tensor]          # one matrix, or two for the two-stage flag
    pos: Tensor                 # (timesteps, d_model), learnable
    layers: list[LayerParams] = field(default_factory=list)

    def named(self):
        for i, w in enumerate(self.w_in):
            yield f"w_in{i}", w
        yield "pos", self.pos
        for li, lp in enumerate(self.layers):
            for fname in ("w_q", "w_k", "w_v", "w_o", "w_ff1", "b_ff1",
                          "w_ff2", "b_ff2", "norm1_gain", "norm1_bias",
                          "norm2_gain", "norm2_bias"):
                yield f"layer{li}/{fname}", getattr(lp, fname)


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


def init_encoder_params(config: EncoderConfig,
                        rng: np.random.Generator) -> EncoderParams:
    """Weights ~ uniform(+-sqrt(1/fan_in)); biases and positional table zero,
    norm gains one."""
    if config.proj_hidden:
        w_in = [uniform_fan_in(rng, config.bands,
                                (config.bands, config.proj_hidden)),
                uniform_fan_in(rng, config.proj_hidden,
                                (config.proj_hidden, config.d_model))]
    else:
        w_in = [uniform_fan_in(rng, config.bands,
                                (config.bands, config.d_model))]
    pos = Tensor(np.zeros((config.timesteps, config.d_model)))
    d, di = config.d_model, config.d_inner
    layers = []
    for _ in range(config.n_layers):
        layers.append(LayerParams(
            w_q=uniform_fan_in(rng, d, (d, d)),
            w_k=uniform_fan_in(rng, d, (d, d)),
            w_v=uniform_fan_in(rng, d, (d, d)),
            w_o=uniform_fan_in(rng, d, (d, d)),
            w_ff1=uniform_fan_in(rng, d, (d, di)),
            b_ff1=Tensor(np.zeros(di)),
            w_ff2=uniform_fan_in(rng, di, (di, d)),
            b_ff2=Tensor(np.zeros(d)),
            norm1_gain=Tensor(np.ones(d)),
            norm1_bias=Tensor(np.zeros(d)),
            norm2_gain=Tensor(np.ones(d)),
            norm2_bias=Tensor(np.zeros(d)),
        ))
    return EncoderParams(w_in=w_in, pos=pos, layers=layers)


def param_count(config: EncoderConfig) -> int:
    """Number of trainable scalars, a pure function of the config."""
    b, t, d, di = config.bands, config.timesteps, config.d_model, config.d_inner
    if config.proj_hidden:
        n = b * config.proj_hidden + config.proj_hidden * d
    else:
        n = b * d
    n += t * d
    n += config.n_layers * (4 * d * d + d * di + di + di * d + d + 4 * d)
    return n


def embed(x: Tensor, params: EncoderParams, config: EncoderConfig) -> Tensor:
    """Project a (t, bands) sample, or a (batch, t, bands) stack, into the
    latent width and add the positional table."""
    if x.shape[-2:] != (config.timesteps, config.bands):
        raise ad.ShapeError(
            f"input shape {x.shape} does not match configured "
            f"(t={config.timesteps}, bands={config.bands})")
    h = x
    for w in params.w_in:
        h = ad.matmul(h, w)
    return ad.add(h, params.pos)


def attention(q: Tensor, k: Tensor, v: Tensor,
              return_weights: bool = False):
    """Scaled dot-product attention over the last two axes; the scale is the
    per-call key width."""
    d = q.shape[-1]
    if k.shape != q.shape or v.shape != q.shape:
        raise ad.ShapeError(
            f"attention shapes differ: {q.shape}, {k.shape}, {v.shape}")
    scores = ad.scale(ad.matmul(q, ad.transpose_last(k)), 1.0 / math.sqrt(d))
    weights = ad.softmax_rows(scores)
    out = ad.matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def multi_head(x: Tensor, layer: LayerParams, n_heads: int) -> Tensor:
    """Parallel attention heads on per-head slices of the Q/K/V projections,
    concatenated and re-projected."""
    d_model = x.shape[-1]
    d_head = d_model // n_heads
    q = ad.matmul(x, layer.w_q)
    k = ad.matmul(x, layer.w_k)
    v = ad.matmul(x, layer.w_v)
    heads = []
    for h in range(n_heads):
        s, e = h * d_head, (h + 1) * d_head
        heads.append(attention(ad.slice_last(q, s, e),
                               ad.slice_last(k, s, e),
                               ad.slice_last(v, s, e)))
    cat = heads[0] if n_heads == 1 else ad.concat_last(heads)
    return ad.matmul(cat, layer.w_o)


def encode(x: Tensor, params: EncoderParams, config: EncoderConfig) -> Tensor:
    """Full feature extractor up to the per-timestep representation."""
    h = embed(x, params, config)
    for lp in params.layers:
        attended = multi_head(h, lp, config.n_heads)
        h = ad.layer_norm(ad.add(h, attended), lp.norm1_gain, lp.norm1_bias)
        ff = ad.linear(ad.relu(ad.linear(h, lp.w_ff1, lp.b_ff1)),
                       lp.w_ff2, lp.b_ff2)
        h = ad.layer_norm(ad.add(h, ff), lp.norm2_gain, lp.norm2_bias)
    return h


def pool(encoded: Tensor) -> Tensor:
    """Collapse the temporal axis with a per-feature max."""
    token, _ = ad.max_over_axis(encoded, axis=-2)
    return token
