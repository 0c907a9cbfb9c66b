"""Transformer encoder over subsampled features, with residual adapters.

Layout: optional learned waveform frontend (3 convs, total stride 8),
a two-conv subsampling block (total stride 4), sinusoidal positions,
pre-norm transformer blocks, final layer norm. Adapters, when inserted,
sit after the conv block and after every transformer block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from .engine import Tensor


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Module:
    """Tree of named parameter Tensors; children keep insertion order."""

    def __init__(self):
        self.p: dict[str, Tensor] = {}
        self.children: dict[str, "Module"] = {}

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for k, t in self.p.items():
            out[prefix + k] = t
        for name, child in self.children.items():
            out.update(child.named_params(prefix + name + "."))
        return out

    def load_params(self, flat: dict, prefix: str = "") -> None:
        """Copy values into existing tensors; names must match exactly."""
        mine = self.named_params(prefix)
        if set(mine) != set(flat):
            missing = sorted(set(mine) - set(flat))
            extra = sorted(set(flat) - set(mine))
            raise ValueError(f"checkpoint parameter mismatch: missing={missing[:4]} extra={extra[:4]}")
        for name, t in mine.items():
            arr = np.asarray(flat[name])
            if tuple(arr.shape) != t.shape:
                raise ValueError(f"shape mismatch for '{name}': {arr.shape} vs {t.shape}")
            t.data = np.ascontiguousarray(arr.astype(t.dtype))

    def alias_from(self, other: "Module") -> None:
        """Share parameter storage with a structurally identical module."""
        if set(self.p) != set(other.p) or set(self.children) != set(other.children):
            raise ValueError("cannot alias structurally different modules")
        for k in self.p:
            self.p[k] = other.p[k]
        for name in self.children:
            self.children[name].alias_from(other.children[name])

    def shares_storage_with(self, other: "Module") -> bool:
        mine, theirs = self.named_params(), other.named_params()
        return all(mine[k] is theirs[k] for k in mine)


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.p["w"] = Tensor(xavier_uniform(rng, (d_in, d_out), d_in, d_out), requires_grad=True)
        if bias:
            self.p["b"] = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        out = E.matmul(x, self.p["w"])
        if "b" in self.p:
            out = E.add(out, self.p["b"])
        return out


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.p["g"] = Tensor(np.ones(d, dtype=np.float32), requires_grad=True)
        self.p["b"] = Tensor(np.zeros(d, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return E.layer_norm(x, self.p["g"], self.p["b"], eps=self.eps)


class Conv1d(Module):
    def __init__(self, rng, kernel: int, c_in: int, c_out: int, stride: int, padding: str):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.p["w"] = Tensor(
            xavier_uniform(rng, (kernel, c_in, c_out), kernel * c_in, kernel * c_out),
            requires_grad=True,
        )
        self.p["b"] = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return E.conv1d(x, self.p["w"], self.p["b"], stride=self.stride, padding=self.padding)


class MultiHeadAttention(Module):
    def __init__(self, rng, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError("n_heads must divide d_model")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.children["wq"] = Linear(rng, d_model, d_model)
        self.children["wk"] = Linear(rng, d_model, d_model)
        self.children["wv"] = Linear(rng, d_model, d_model)
        self.children["wo"] = Linear(rng, d_model, d_model)

    def __call__(self, x: Tensor, allowed: np.ndarray) -> Tensor:
        B, T, D = x.shape
        H, dh = self.n_heads, self.d_head

        def split(t):
            return E.transpose(E.reshape(t, (B, T, H, dh)), (0, 2, 1, 3))

        q = split(self.children["wq"](x))
        k = split(self.children["wk"](x))
        v = split(self.children["wv"](x))
        scores = E.matmul(q, E.transpose(k, (0, 1, 3, 2)))
        scores = E.mul(scores, Tensor(np.asarray(1.0 / math.sqrt(dh), dtype=x.dtype)))
        mask = np.broadcast_to(allowed[:, None, :, :], (B, H, T, T)).copy()
        empty = ~mask.any(axis=-1)  # pad query rows; give them the diagonal
        if empty.any():
            bi, hi, ti = np.nonzero(empty)
            mask[bi, hi, ti, ti] = True
        attn = E.softmax(scores, axis=-1, mask=mask)
        ctx = E.matmul(attn, v)
        ctx = E.reshape(E.transpose(ctx, (0, 2, 1, 3)), (B, T, D))
        return self.children["wo"](ctx)


class FeedForward(Module):
    def __init__(self, rng, d_model: int, d_ffn: int):
        super().__init__()
        self.children["lin1"] = Linear(rng, d_model, d_ffn)
        self.children["lin2"] = Linear(rng, d_ffn, d_model)

    def __call__(self, x: Tensor) -> Tensor:
        return self.children["lin2"](E.gelu(self.children["lin1"](x)))


class TransformerBlock(Module):
    """Pre-norm: x + attn(LN(x)), then x + ffn(LN(x))."""

    def __init__(self, rng, d_model: int, n_heads: int, d_ffn: int, ln_eps: float):
        super().__init__()
        self.children["ln1"] = LayerNorm(d_model, ln_eps)
        self.children["attn"] = MultiHeadAttention(rng, d_model, n_heads)
        self.children["ln2"] = LayerNorm(d_model, ln_eps)
        self.children["ffn"] = FeedForward(rng, d_model, d_ffn)

    def __call__(self, x: Tensor, allowed: np.ndarray) -> Tensor:
        x = E.add(x, self.children["attn"](self.children["ln1"](x), allowed))
        return E.add(x, self.children["ffn"](self.children["ln2"](x)))


class ResidualAdapter(Module):
    """y = x + up(relu(down(LN(x)))); zero up-projection is an exact no-op.

    Parameter count: 2 * d_model * d_adapter + d_adapter + 3 * d_model.
    """

    def __init__(self, rng, d_model: int, d_adapter: int, random_init: bool = False):
        super().__init__()
        self.children["ln"] = LayerNorm(d_model)
        self.children["down"] = Linear(rng, d_model, d_adapter)
        up = Linear(rng, d_adapter, d_model)
        if not random_init:
            up.p["w"].data = np.zeros_like(up.p["w"].data)
        self.children["up"] = up

    def __call__(self, x: Tensor) -> Tensor:
        h = E.relu(self.children["down"](self.children["ln"](x)))
        return E.add(x, self.children["up"](h))

    @staticmethod
    def param_count(d_model: int, d_adapter: int) -> int:
        return 2 * d_model * d_adapter + d_adapter + 3 * d_model


class ConvSubsampler(Module):
    """Two stride-2 convs with GELU; total time subsampling of 4."""

    def __init__(self, rng, d_in: int, d_model: int, kernel: int, padding: str):
        super().__init__()
        self.children["conv1"] = Conv1d(rng, kernel, d_in, d_model, stride=2, padding=padding)
        self.children["conv2"] = Conv1d(rng, kernel, d_model, d_model, stride=2, padding=padding)

    def __call__(self, x: Tensor) -> Tensor:
        return E.gelu(self.children["conv2"](E.gelu(self.children["conv1"](x))))


class WaveFrontend(Module):
    """Three stride-2 kernel-8 convs over raw samples; total stride 8."""

    def __init__(self, rng, d_model: int, padding: str):
        super().__init__()
        for i, c_in in enumerate([1, d_model, d_model]):
            self.children[f"conv{i}"] = Conv1d(rng, 8, c_in, d_model, stride=2, padding=padding)

    def __call__(self, x: Tensor) -> Tensor:
        for i in range(3):
            x = E.gelu(self.children[f"conv{i}"](x))
        return x


def sinusoidal_positions(t: int, d: int, dtype=np.float32) -> np.ndarray:
    if d % 2 != 0:
        raise ValueError("positional encoding needs an even dimension")
    pos = np.arange(t, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.zeros((t, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe.astype(dtype)


@dataclass
class EncoderConfig:
    d_input: int = 8
    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    d_ffn: int = 128
    causal: bool = True
    frontend: str = "logmel"  # or "waveform"
    conv_kernel: int = 3
    ln_eps: float = 1e-5

    def to_dict(self) -> dict:
        return {
            "d_input": self.d_input, "d_model": self.d_model, "n_heads": self.n_heads,
            "n_blocks": self.n_blocks, "d_ffn": self.d_ffn, "causal": self.causal,
            "frontend": self.frontend, "conv_kernel": self.conv_kernel, "ln_eps": self.ln_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**{k: d[k] for k in cls().to_dict()})


class Encoder(Module):
    """Backbone f: features (B, T, d_input) -> hidden states (B, T', d_model).

    T' = ceil(T / 4) for the logmel frontend (ceil(T / 32) from raw
    waveform). Valid output lengths follow the same rule per utterance.
    """

    subsample_factor = 4  # two stride-2 convs

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        pad = "causal" if config.causal else "same"
        d_conv_in = config.d_input
        if config.frontend == "waveform":
            self.children["frontend"] = WaveFrontend(rng, config.d_model, pad)
            d_conv_in = config.d_model
        elif config.frontend != "logmel":
            raise ValueError(f"unknown frontend '{config.frontend}'")
        self.children["conv"] = ConvSubsampler(rng, d_conv_in, config.d_model, config.conv_kernel, pad)
        for i in range(config.n_blocks):
            self.children[f"block{i}"] = TransformerBlock(
                rng, config.d_model, config.n_heads, config.d_ffn, config.ln_eps
            )
        self.children["final_ln"] = LayerNorm(config.d_model, config.ln_eps)
        self.adapters_inserted = False
        self.d_adapter = 0

    # -- adapters ----------------------------------------------------------

    def insert_adapters(self, d_adapter: int, rng: np.random.Generator,
                        random_init: bool = False) -> None:
        """One adapter after the conv block plus one after each transformer block."""
        if self.adapters_inserted:
            raise RuntimeError("adapters already present")
        for i in range(self.config.n_blocks + 1):
            self.children[f"adapter{i}"] = ResidualAdapter(
                rng, self.config.d_model, d_adapter, random_init=random_init
            )
        self.adapters_inserted = True
        self.d_adapter = d_adapter

    def reinit_adapters(self, rng: np.random.Generator) -> None:
        if not self.adapters_inserted:
            raise RuntimeError("no adapters to reinitialize")
        for i in range(self.config.n_blocks + 1):
            self.children[f"adapter{i}"] = ResidualAdapter(
                rng, self.config.d_model, self.d_adapter, random_init=True
            )

    def adapter_params(self) -> dict:
        return {k: v for k, v in self.named_params().items() if k.startswith("adapter")}

    def backbone_params(self) -> dict:
        return {k: v for k, v in self.named_params().items() if not k.startswith("adapter")}

    # -- forward -----------------------------------------------------------

    def out_length(self, n: int) -> int:
        stride = 32 if self.config.frontend == "waveform" else 4
        return -(-n // stride)

    def encode_latents(self, feats, lengths):
        """Frontend + conv block only (no adapter); returns (latents, out_lengths)."""
        x = feats if isinstance(feats, Tensor) else Tensor(np.asarray(feats, dtype=np.float32))
        if x.ndim != 3:
            raise ValueError("encoder expects (batch, time, dim) input")
        if "frontend" in self.children:
            x = self.children["frontend"](x)
        z = self.children["conv"](x)
        out_lengths = np.array([self.out_length(int(n)) for n in np.asarray(lengths)])
        return z, out_lengths

    def contextualize(self, latents: Tensor, out_lengths: np.ndarray) -> Tensor:
        """Conv adapter, positions, transformer blocks (+adapters), final LN."""
        z = latents
        if self.adapters_inserted:
            z = self.children["adapter0"](z)
        B, T, D = z.shape
        z = E.add(z, Tensor(sinusoidal_positions(T, D, dtype=z.dtype)))
        allowed = self.attention_mask(T, out_lengths)
        for i in range(self.config.n_blocks):
            z = self.children[f"block{i}"](z, allowed)
            if self.adapters_inserted:
                z = self.children[f"adapter{i + 1}"](z)
        return self.children["final_ln"](z)

    def __call__(self, feats, lengths):
        z, out_lengths = self.encode_latents(feats, lengths)
        return self.contextualize(z, out_lengths), out_lengths

    def attention_mask(self, t: int, out_lengths: np.ndarray) -> np.ndarray:
        """allowed[b, i, j]: query i may attend key j (True = allowed)."""
        key_ok = np.arange(t)[None, None, :] < np.asarray(out_lengths)[:, None, None]
        if self.config.causal:
            tri = np.tril(np.ones((t, t), dtype=bool))
            return key_ok & tri[None, :, :]
        return np.broadcast_to(key_ok, (len(out_lengths), t, t)).copy()


def build_encoder(config: EncoderConfig, seed: int) -> Encoder:
    return Encoder(config, np.random.default_rng([seed, 0xE0C0DE]))
