"""Perceiver encoder: a short learnable query sequence cross-attends over the
input tokens, self-attends among itself, and is refined by an MLP, repeated
num_layers times (optionally with shared weights), then projected from the
model dimension to the bottleneck dimension.

Cost is linear in input length because input tokens appear only as keys and
values of the cross-attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from daep import autograd as ag
from daep.autograd import Tensor
from daep.errors import ValidationError
from daep.nn import AttentionBlock, LayerNorm, Linear, MlpBlock, Module, ModuleList, Parameter
from daep.tokenizer import TokenSequence


@dataclass
class EncoderConfig:
    bottleneck_len: int
    bottleneck_dim: int
    num_layers: int
    d_model: int
    num_heads: int
    share_weights: bool = False
    mlp_ratio: float = 2.0

    def __post_init__(self):
        for name in ("bottleneck_len", "bottleneck_dim", "num_layers", "d_model", "num_heads"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.d_model % self.num_heads != 0:
            raise ValidationError("d_model must be divisible by num_heads")


class EncoderLayer(Module):
    """[cross-attention over inputs -> self-attention -> MLP], pre-norm."""

    def __init__(self, rng, d_model: int, num_heads: int, mlp_ratio: float,
                 input_self_attention: bool = False):
        super().__init__()
        if input_self_attention:
            self.input_attn = AttentionBlock(rng, d_model, num_heads)
        else:
            self.input_attn = None
        self.cross = AttentionBlock(rng, d_model, num_heads)
        self.self_attn = AttentionBlock(rng, d_model, num_heads)
        self.mlp = MlpBlock(rng, d_model, mlp_ratio)

    def __call__(self, x: Tensor, kv: Tensor) -> tuple[Tensor, Tensor]:
        if self.input_attn is not None:
            kv = self.input_attn(kv)
        x = self.cross(x, kv)
        x = self.self_attn(x)
        x = self.mlp(x)
        return x, kv


class PerceiverEncoder(Module):
    """Variable-length token sequence -> fixed (bottleneck_len x out_dim) latent.

    With project_out=False the final projection is skipped and the refined
    bottleneck tokens are returned at the model dimension (used as the first
    stage of the multimodal encoder). input_self_attention lets the input
    tokens attend to themselves before each cross-attention (the multimodal
    mixer variant).
    """

    def __init__(self, rng, cfg: EncoderConfig, project_out: bool = True,
                 out_dim: int | None = None, input_self_attention: bool = False):
        super().__init__()
        self.cfg = cfg
        self.project_out = project_out
        self.queries = Parameter(
            rng.normal(0.0, 1.0, size=(cfg.bottleneck_len, cfg.d_model)) / np.sqrt(cfg.d_model)
        )
        n_unique = 1 if cfg.share_weights else cfg.num_layers
        self.layers = ModuleList([
            EncoderLayer(rng, cfg.d_model, cfg.num_heads, cfg.mlp_ratio, input_self_attention)
            for _ in range(n_unique)
        ])
        self.ln_out = LayerNorm(cfg.d_model)
        if project_out:
            self.out_proj = Linear(rng, cfg.d_model, out_dim or cfg.bottleneck_dim)

    def encode(self, toks: TokenSequence | Tensor) -> Tensor:
        kv = toks.tokens if isinstance(toks, TokenSequence) else ag.as_tensor(toks)
        if kv.shape[0] == 0:
            raise ValidationError("cannot encode an empty token sequence")
        if kv.shape[-1] != self.cfg.d_model:
            raise ValidationError("token width must equal the encoder d_model")
        x = self.queries
        for i in range(self.cfg.num_layers):
            layer = self.layers[i % len(self.layers)]
            x, kv = layer(x, kv)
        x = self.ln_out(x)
        if self.project_out:
            x = self.out_proj(x)
        return x

    __call__ = encode


def count_flops(cfg: EncoderConfig, input_len: int) -> int:
    """Analytic matmul-FLOP count of one encode() forward; affine in
    input_len. Counts 2*m*n*k per matrix product, matching the instrumented
    counter in daep.autograd (biases and norms excluded)."""
    bl, dm = cfg.bottleneck_len, cfg.d_model
    hidden = max(1, int(round(dm * cfg.mlp_ratio)))
    L = input_len
    per_layer = 0
    # cross-attention: q projection + k/v projections + scores/mix + output
    per_layer += 2 * bl * dm * dm
    per_layer += 2 * (2 * L * dm * dm)
    per_layer += 4 * bl * L * dm
    per_layer += 2 * bl * dm * dm
    # self-attention among bottleneck tokens (independent of input_len)
    per_layer += 4 * (2 * bl * dm * dm)
    per_layer += 4 * bl * bl * dm
    # MLP
    per_layer += 4 * bl * dm * hidden
    total = cfg.num_layers * per_layer
    total += 2 * bl * dm * cfg.bottleneck_dim  # final projection
    return total
