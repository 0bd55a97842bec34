"""Transformer noise predictor over gene patches.

The expression vector is zero-padded to a multiple of the patch size, split
into contiguous patches and linearly embedded as tokens with learned absolute
positions. The timestep goes through a sinusoidal table and a two-layer GELU
MLP; the result conditions every block through adaptive layer norm (shift and
scale of the normalized input, plus a zero-initialized residual gate), and
conditions the final layer norm before the token-wise projection back to
patch values.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tc
from .errors import InputError, ShapeMismatch, StepOutOfRange
from .rng import Xoshiro256
from .tensor import Tensor


@dataclass(frozen=True)
class DenoiserConfig:
    n_genes: int
    patch_size: int = 4
    hidden_size: int = 128
    n_blocks: int = 6
    n_heads: int = 8
    mlp_ratio: float = 4.0

    def __post_init__(self):
        for name in ("n_genes", "patch_size", "hidden_size", "n_heads"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.n_blocks < 0:
            raise InputError("n_blocks must be >= 0")
        if self.hidden_size % self.n_heads:
            raise InputError(f"hidden_size {self.hidden_size} not divisible by n_heads {self.n_heads}")
        if self.mlp_hidden < 1:
            raise InputError("mlp_ratio too small")

    @property
    def t_embed_dim(self) -> int:
        return self.hidden_size

    @property
    def n_tokens(self) -> int:
        return -(-self.n_genes // self.patch_size)

    @property
    def padded_genes(self) -> int:
        return self.n_tokens * self.patch_size

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.hidden_size * self.mlp_ratio))

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(cfg: DenoiserConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map; fixes the parameter layout of a config."""
    p, h, L, m = cfg.patch_size, cfg.hidden_size, cfg.n_tokens, cfg.mlp_hidden
    shapes = {
        "patch.w": (p, h), "patch.b": (h,), "pos": (L, h),
        "temb.w1": (h, h), "temb.b1": (h,), "temb.w2": (h, h), "temb.b2": (h,),
    }
    for i in range(cfg.n_blocks):
        k = f"block{i}."
        shapes.update({
            k + "mod.w": (h, 4 * h), k + "mod.b": (4 * h,),
            k + "gate.w": (h, 2 * h), k + "gate.b": (2 * h,),
            k + "qkv.w": (h, 3 * h), k + "qkv.b": (3 * h,),
            k + "proj.w": (h, h), k + "proj.b": (h,),
            k + "mlp.w1": (h, m), k + "mlp.b1": (m,),
            k + "mlp.w2": (m, h), k + "mlp.b2": (h,),
        })
    shapes.update({"final.mod.w": (h, 2 * h), "final.mod.b": (2 * h,),
                   "final.w": (h, p), "final.b": (p,)})
    return shapes


def parameter_count(cfg: DenoiserConfig) -> int:
    p, h, L, m, N = cfg.patch_size, cfg.hidden_size, cfg.n_tokens, cfg.mlp_hidden, cfg.n_blocks
    per_block = (h * 4 * h + 4 * h) + (h * 2 * h + 2 * h) + (h * 3 * h + 3 * h) + (h * h + h) \
        + (h * m + m) + (m * h + h)
    return (p * h + h) + L * h + 2 * (h * h + h) + N * per_block + (h * 2 * h + 2 * h) + (h * p + p)


def timestep_sinusoid(t, dim: int) -> np.ndarray:
    """Sinusoidal features ``[sin(t w_i), cos(t w_i)]`` with ``w_i = 10000^(-2i/dim)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / dim)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((t.size, 1))], axis=1)
    return emb


def _modulate(xn: Tensor, shift: Tensor, scale: Tensor, n_tokens: int) -> Tensor:
    return xn + xn * tc.expand(scale, 1, n_tokens) + tc.expand(shift, 1, n_tokens)


class DenoiserModel:
    """Noise predictor ``eps_theta(x_t, t)``; parameters live in ``self.params``."""

    def __init__(self, config: DenoiserConfig, n_timesteps: int = 1000, seed: int = 0,
                 params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.n_timesteps = int(n_timesteps)
        shapes = parameter_shapes(config)
        if params is None:
            params = self._init_params(shapes, Xoshiro256(seed))
        if list(params) != list(shapes):
            raise InputError("parameter names do not match the configuration layout")
        self.params: dict[str, Tensor] = {}
        for name, shape in shapes.items():
            arr = np.asarray(params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeMismatch(f"parameter {name}: expected {shape}, got {arr.shape}")
            self.params[name] = Tensor(arr, requires_grad=True, name=name)

    @staticmethod
    def _init_params(shapes, rng: Xoshiro256) -> dict[str, np.ndarray]:
        out = {}
        for name, shape in shapes.items():
            if name == "pos":
                out[name] = 0.02 * rng.normal(shape)
            elif ".gate." in name or len(shape) == 1:
                out[name] = np.zeros(shape)
            else:
                out[name] = rng.normal(shape) / math.sqrt(shape[0])
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    # -- pieces -----------------------------------------------------------
    def patchify(self, x: np.ndarray) -> Tensor:
        """``(B, n)`` -> ``(B, n_tokens, h)`` token embeddings (no positions)."""
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != cfg.n_genes:
            raise ShapeMismatch(f"expected input (batch, {cfg.n_genes}), got {x.shape}")
        pad = cfg.padded_genes - cfg.n_genes
        if pad:
            x = np.pad(x, ((0, 0), (0, pad)))
        patches = Tensor(x.reshape(x.shape[0], cfg.n_tokens, cfg.patch_size))
        return tc.linear(patches, self.params["patch.w"], self.params["patch.b"])

    def unpatchify(self, out: Tensor) -> Tensor:
        """``(B, n_tokens, p)`` -> ``(B, n)``, dropping the padded tail."""
        cfg = self.config
        flat = out.reshape(out.shape[0], cfg.padded_genes)
        return flat[:, :cfg.n_genes] if cfg.padded_genes != cfg.n_genes else flat

    def _check_t(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t))
        if t.ndim != 1 or not np.all(t == np.round(t)):
            raise InputError("timesteps must be integers")
        if t.min() < 1 or t.max() > self.n_timesteps:
            raise StepOutOfRange(f"timesteps must lie in [1, {self.n_timesteps}]")
        return t.astype(np.int64)

    def embed_timestep(self, t) -> Tensor:
        """``(B,)`` timesteps -> ``(B, h)`` conditioning vectors."""
        t = self._check_t(t)
        P = self.params
        s = Tensor(timestep_sinusoid(t, self.config.t_embed_dim))
        hdn = tc.gelu(tc.linear(s, P["temb.w1"], P["temb.b1"]))
        return tc.linear(hdn, P["temb.w2"], P["temb.b2"])

    def attention(self, x: Tensor, i: int) -> Tensor:
        cfg, P = self.config, self.params
        B, L, h = x.shape
        H = cfg.n_heads
        dh = h // H
        qkv = tc.linear(x, P[f"block{i}.qkv.w"], P[f"block{i}.qkv.b"])
        qkv = qkv.reshape(B, L, 3, H, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = tc.scale(q @ k.transpose(0, 1, 3, 2), 1.0 / math.sqrt(dh))
        ctx = (tc.softmax(scores) @ v).transpose(0, 2, 1, 3).reshape(B, L, h)
        return tc.linear(ctx, P[f"block{i}.proj.w"], P[f"block{i}.proj.b"])

    def block(self, x: Tensor, c_act: Tensor, i: int) -> Tensor:
        P, h, L = self.params, self.config.hidden_size, x.shape[1]
        k = f"block{i}."
        mod = tc.linear(c_act, P[k + "mod.w"], P[k + "mod.b"])
        gate = tc.linear(c_act, P[k + "gate.w"], P[k + "gate.b"])
        shift1, scale1 = mod[:, 0:h], mod[:, h:2 * h]
        shift2, scale2 = mod[:, 2 * h:3 * h], mod[:, 3 * h:4 * h]
        gate1, gate2 = gate[:, 0:h], gate[:, h:2 * h]
        a = self.attention(_modulate(tc.layernorm(x), shift1, scale1, L), i)
        x = x + tc.expand(gate1, 1, L) * a
        hm = _modulate(tc.layernorm(x), shift2, scale2, L)
        hm = tc.gelu(tc.linear(hm, P[k + "mlp.w1"], P[k + "mlp.b1"]))
        hm = tc.linear(hm, P[k + "mlp.w2"], P[k + "mlp.b2"])
        return x + tc.expand(gate2, 1, L) * hm

    def forward(self, x_t, t) -> Tensor:
        """Predicted noise, same shape as ``x_t`` (batch, n_genes)."""
        cfg, P = self.config, self.params
        x_t = np.asarray(x_t.data if isinstance(x_t, Tensor) else x_t, dtype=np.float64)
        t = self._check_t(t)
        if t.shape[0] != x_t.shape[0]:
            raise ShapeMismatch(f"{t.shape[0]} timesteps for a batch of {x_t.shape[0]}")
        x = self.patchify(x_t) + P["pos"]
        c_act = tc.gelu(self.embed_timestep(t))
        for i in range(cfg.n_blocks):
            x = self.block(x, c_act, i)
        h, L = cfg.hidden_size, cfg.n_tokens
        fm = tc.linear(c_act, P["final.mod.w"], P["final.mod.b"])
        x = _modulate(tc.layernorm(x), fm[:, 0:h], fm[:, h:2 * h], L)
        return self.unpatchify(tc.linear(x, P["final.w"], P["final.b"]))

    __call__ = forward

    def predict(self, x_t, t) -> np.ndarray:
        """Inference-only forward returning a numpy array."""
        with tc.no_grad():
            return self.forward(x_t, t).data
