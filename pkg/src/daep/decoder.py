"""Perceiver-IO decoder.

Keys/Values are the conditioning set: tokenized data (noisy values for the
score model, mask-substituted tokens for the masked decoder, or nothing for
the VAE), the latent tokens projected back to the model dimension, and, for
the score model only, one diffusion-time token. With hidden_seq_len > 0 a
learnable hidden sequence cross-attends the conditioning set and self-attends
(repeated num_layers times) before positional query tokens read it out via a
final cross-attention; with hidden_seq_len = 0 the query tokens attend the
conditioning set directly (the single-stage variant for short sequences).
Output is one scalar per query location. Queries never attend each other, so
decoding is exactly equivariant per query.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from daep import autograd as ag
from daep.autograd import Tensor
from daep.encoder import EncoderLayer
from daep.errors import ValidationError
from daep.nn import (
    AttentionBlock,
    LayerNorm,
    Linear,
    MlpBlock,
    Module,
    ModuleList,
    Parameter,
)
from daep.tokenizer import Tokenizer, TokenizerConfig, TokenSequence, sinusoidal_embed


@dataclass
class DecoderConfig:
    num_layers: int
    d_model: int
    num_heads: int
    bottleneck_dim: int
    hidden_seq_len: int = 0  # 0 selects the single-stage variant
    share_weights: bool = False
    time_embed_dim: int = 64
    mlp_ratio: float = 2.0

    def __post_init__(self):
        if self.hidden_seq_len < 0:
            raise ValidationError("hidden_seq_len must be >= 0")
        if self.d_model % self.num_heads != 0:
            raise ValidationError("d_model must be divisible by num_heads")
        if self.time_embed_dim % 2 != 0:
            raise ValidationError("time_embed_dim must be even")


class TimeEmbed(Module):
    """Sinusoidal features of the diffusion step through a 2-layer MLP; yields
    one conditioning token."""

    def __init__(self, rng, time_embed_dim: int, d_model: int):
        super().__init__()
        self.dim = time_embed_dim
        self.fc1 = Linear(rng, time_embed_dim, d_model)
        self.fc2 = Linear(rng, d_model, d_model)

    def __call__(self, t: int) -> Tensor:
        if t < 1:
            raise ValidationError("diffusion step t must be >= 1")
        feats = sinusoidal_embed(np.asarray([float(t)]), self.dim)
        return self.fc2(ag.gelu(self.fc1(ag.as_tensor(feats))))


class SingleStageLayer(Module):
    """Cross-attention of the queries into the conditioning set plus MLP;
    no self-attention among queries."""

    def __init__(self, rng, d_model: int, num_heads: int, mlp_ratio: float):
        super().__init__()
        self.attn = AttentionBlock(rng, d_model, num_heads)
        self.mlp = MlpBlock(rng, d_model, mlp_ratio)

    def __call__(self, x: Tensor, kv: Tensor) -> Tensor:
        return self.mlp(self.attn(x, kv))


class PerceiverIODecoder(Module):
    def __init__(self, rng, cfg: DecoderConfig, tok_cfg: TokenizerConfig,
                 with_time: bool, with_values: bool):
        super().__init__()
        if tok_cfg.d_model != cfg.d_model:
            raise ValidationError("tokenizer and decoder d_model must match")
        self.cfg = cfg
        self.tok = Tokenizer(
            rng,
            TokenizerConfig(
                d_model=tok_cfg.d_model,
                d_embed=tok_cfg.d_embed,
                pos_sin_dim=tok_cfg.pos_sin_dim,
                num_channels=tok_cfg.num_channels,
                position_scale=tok_cfg.position_scale,
                metadata_kinds={},  # decoders never consume metadata
                value_pathway=with_values,
            ),
        )
        self.latent_proj = Linear(rng, cfg.bottleneck_dim, cfg.d_model)
        self.time_embed = TimeEmbed(rng, cfg.time_embed_dim, cfg.d_model) if with_time else None
        n_unique = 1 if cfg.share_weights else cfg.num_layers
        if cfg.hidden_seq_len > 0:
            self.hidden = Parameter(
                rng.normal(0.0, 1.0, size=(cfg.hidden_seq_len, cfg.d_model))
                / np.sqrt(cfg.d_model)
            )
            self.layers = ModuleList([
                EncoderLayer(rng, cfg.d_model, cfg.num_heads, cfg.mlp_ratio)
                for _ in range(n_unique)
            ])
            self.out_attn = AttentionBlock(rng, cfg.d_model, cfg.num_heads)
            self.out_mlp = MlpBlock(rng, cfg.d_model, cfg.mlp_ratio)
        else:
            self.layers = ModuleList([
                SingleStageLayer(rng, cfg.d_model, cfg.num_heads, cfg.mlp_ratio)
                for _ in range(n_unique)
            ])
        self.ln_out = LayerNorm(cfg.d_model)
        self.head = Linear(rng, cfg.d_model, 1)

    # -- conditioning set ----------------------------------------------------

    def _latent_tokens(self, latent) -> Tensor:
        latent = ag.as_tensor(latent)
        if latent.ndim != 2 or latent.shape[1] != self.cfg.bottleneck_dim:
            raise ValidationError(
                f"latent must be (len, {self.cfg.bottleneck_dim}), got {latent.shape}"
            )
        return self.latent_proj(latent)

    def _pipeline(self, kv: Tensor, queries: Tensor) -> Tensor:
        if self.cfg.hidden_seq_len > 0:
            h = self.hidden
            for i in range(self.cfg.num_layers):
                h, kv = self.layers[i % len(self.layers)](h, kv)
            out = self.out_mlp(self.out_attn(queries, h))
        else:
            out = queries
            for i in range(self.cfg.num_layers):
                out = self.layers[i % len(self.layers)](out, kv)
        y = self.head(self.ln_out(out))
        return ag.reshape(y, (-1,))

    # -- public entry points ---------------------------------------------------

    def score_forward(self, noisy_values, query_positions, query_channels, latent, t: int) -> Tensor:
        """Noise prediction at every query location given the noisy values
        there, the conditioning latent, and the diffusion step."""
        if self.time_embed is None:
            raise ValidationError("this decoder was built without diffusion-time conditioning")
        if not (len(noisy_values) == len(query_positions) == len(query_channels)):
            raise ValidationError("score input arrays must share one length")
        data_toks = self.tok.tokenize_values(noisy_values, query_positions, query_channels)
        kv = ag.concat(
            [data_toks.tokens, self._latent_tokens(latent), self.time_embed(t)], axis=0
        )
        queries = self.tok.query_tokens(query_positions, query_channels).tokens
        return self._pipeline(kv, queries)

    def masked_decode(self, toks: TokenSequence, latent, query_positions, query_channels) -> Tensor:
        """Predict values at masked locations from the full mask-substituted
        token sequence plus the latent; no diffusion-time token."""
        if len(query_positions) != len(query_channels):
            raise ValidationError("query positions and channels must have equal length")
        if len(query_positions) == 0:
            return ag.as_tensor(np.zeros(0))
        kv = ag.concat([toks.tokens, self._latent_tokens(latent)], axis=0)
        queries = self.tok.query_tokens(query_positions, query_channels).tokens
        return self._pipeline(kv, queries)

    def decode_from_latent(self, latent, query_positions, query_channels) -> Tensor:
        """Predict values at query locations from the latent alone (the VAE
        reconstruction path)."""
        kv = self._latent_tokens(latent)
        queries = self.tok.query_tokens(query_positions, query_channels).tokens
        return self._pipeline(kv, queries)
