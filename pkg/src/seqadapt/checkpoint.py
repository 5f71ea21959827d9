"""Flat binary container for model parameters, normalization statistics and
optimizer state: header with the encoder configuration, then named float64
blocks. Round-trips are bit-exact."""

from __future__ import annotations

import struct

import numpy as np

from . import dann as dn
from . import encoder as enc
from .autodiff import Tensor

MAGIC = b"TDPT"
FORMAT_VERSION = 1

# magic + version + (t, b, d_model, n_layers, n_heads, d_inner, proj_hidden)
# + block count
_HEADER = struct.Struct("<4sIIIIIIIII")
_BLOCK_NAME = struct.Struct("<I")
_BLOCK_NDIM = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


def write_blocks(path, config: enc.EncoderConfig,
                 blocks: dict[str, np.ndarray]):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, config.timesteps,
                              config.bands, config.d_model, config.n_layers,
                              config.n_heads, config.d_inner,
                              config.proj_hidden, len(blocks)))
        for name, arr in blocks.items():
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(_BLOCK_NAME.pack(len(encoded)))
            fh.write(encoded)
            fh.write(_BLOCK_NDIM.pack(arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.astype("<f8").tobytes())


def read_blocks(path) -> tuple[enc.EncoderConfig, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from e
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    (magic, version, t, b, d_model, n_layers, n_heads, d_inner, proj_hidden,
     n_blocks) = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    config = enc.EncoderConfig(timesteps=t, bands=b, d_model=d_model,
                               n_layers=n_layers, n_heads=n_heads,
                               d_inner=d_inner, proj_hidden=proj_hidden)
    blocks: dict[str, np.ndarray] = {}
    off = _HEADER.size
    try:
        for _ in range(n_blocks):
            (name_len,) = _BLOCK_NAME.unpack_from(raw, off)
            off += _BLOCK_NAME.size
            name = raw[off:off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = _BLOCK_NDIM.unpack_from(raw, off)
            off += _BLOCK_NDIM.size
            shape = []
            for _ in range(ndim):
                (d,) = struct.unpack_from("<Q", raw, off)
                shape.append(d)
                off += 8
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype="<f8", count=count,
                                offset=off).reshape(shape).copy()
            off += count * 8
            blocks[name] = arr
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: truncated block section: {e}") from e
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return config, blocks


# ---------------------------------------------------------------------------
# parameter (de)serialization


def params_to_blocks(params: dn.DannParams) -> dict[str, np.ndarray]:
    return {name: t.values for name, t in params.named()}


def params_from_blocks(config: enc.EncoderConfig,
                       blocks: dict[str, np.ndarray]) -> dn.DannParams:
    def grab(name: str) -> Tensor:
        if name not in blocks:
            raise CheckpointError(f"missing parameter block {name!r}")
        return Tensor(blocks[name])

    n_proj = 2 if config.proj_hidden else 1
    w_in = [grab(f"feature/w_in{i}") for i in range(n_proj)]
    layers = []
    for li in range(config.n_layers):
        kwargs = {}
        for fname in ("w_q", "w_k", "w_v", "w_o", "w_ff1", "b_ff1", "w_ff2",
                      "b_ff2", "norm1_gain", "norm1_bias", "norm2_gain",
                      "norm2_bias"):
            kwargs[fname] = grab(f"feature/layer{li}/{fname}")
        layers.append(enc.LayerParams(**kwargs))
    feature = enc.EncoderParams(w_in=w_in, pos=grab("feature/pos"),
                                layers=layers)

    def head(prefix: str) -> dn.HeadParams:
        return dn.HeadParams(**{f: grab(f"{prefix}/{f}")
                                for f in ("norm_gain", "norm_bias", "w1",
                                          "b1", "w2", "b2")})

    domain = None
    if any(n.startswith("domain_head/") for n in blocks):
        domain = head("domain_head")
    return dn.DannParams(feature=feature, label=head("label_head"),
                         domain=domain)


def save_model(path, config: enc.EncoderConfig, params: dn.DannParams,
               norm_mean: np.ndarray, norm_std: np.ndarray,
               optim_blocks: dict[str, np.ndarray] | None = None):
    blocks = params_to_blocks(params)
    blocks["norm/mean"] = np.asarray(norm_mean, dtype=np.float64)
    blocks["norm/std"] = np.asarray(norm_std, dtype=np.float64)
    if optim_blocks:
        for name, arr in optim_blocks.items():
            blocks[f"optim/{name}"] = arr
    write_blocks(path, config, blocks)


def load_model(path):
    """Returns (encoder config, params, norm_mean, norm_std, optim blocks)."""
    config, blocks = read_blocks(path)
    params = params_from_blocks(config, blocks)
    for required in ("norm/mean", "norm/std"):
        if required not in blocks:
            raise CheckpointError(f"missing block {required!r}")
    optim = {name[len("optim/"):]: arr for name, arr in blocks.items()
             if name.startswith("optim/")}
    return config, params, blocks["norm/mean"], blocks["norm/std"], optim
