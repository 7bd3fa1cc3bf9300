"""Measurement-to-token conversion.

Each measurement becomes one model-dimension token: value through a linear
projection, continuous position through fixed sinusoidal features and a small
MLP, channel through an embedding table, all concatenated and jointly
projected. Metadata entries become extra appended tokens. Masking swaps a
token's value content for a learnable mask token while keeping its positional
content available to the decoder.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from daep import autograd as ag
from daep.autograd import Tensor
from daep.errors import ValidationError
from daep.nn import Embedding, Linear, Module, Parameter
from daep.seqdata import Manifest, MaskSplit, MeasurementSequence


class TokenKind(enum.IntEnum):
    MEASUREMENT = 0
    METADATA = 1
    MASK = 2
    CONDITIONING = 3
    TIME = 4


@dataclass
class TokenSequence:
    """Token matrix plus per-token provenance."""

    tokens: Tensor  # (L, d_model)
    kinds: np.ndarray  # (L,) TokenKind values
    source_idx: np.ndarray  # (L,) index into the source sequence, -1 if none
    positions: np.ndarray  # (L,) position per token, nan if none
    channels: np.ndarray  # (L,) channel per token, -1 if none

    def __post_init__(self):
        L = self.tokens.shape[0]
        if L < 1:
            raise ValidationError("a TokenSequence needs at least one token")
        for name in ("kinds", "source_idx", "positions", "channels"):
            if len(getattr(self, name)) != L:
                raise ValidationError(f"{name} length must equal token count {L}")

    def __len__(self) -> int:
        return self.tokens.shape[0]


def sinusoidal_embed(position, dim: int) -> np.ndarray:
    """Interleaved sin/cos features at geometrically spaced frequencies
    (base 10000). position may be a scalar or a vector; output has shape
    (..., dim). Parameter-free and unit-bounded."""
    if dim < 2 or dim % 2 != 0:
        raise ValidationError("sinusoidal_embed dim must be even and >= 2")
    pos = np.asarray(position, dtype=np.float64)
    half = dim // 2
    freqs = np.power(10000.0, -2.0 * np.arange(half) / dim)
    ang = pos[..., None] * freqs
    out = np.empty(pos.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


@dataclass
class TokenizerConfig:
    d_model: int
    d_embed: int = 32
    pos_sin_dim: int = 32
    num_channels: int = 1
    position_scale: float = 100.0  # spreads z-scored coordinates across the sinusoid bands
    metadata_kinds: dict[str, int | str] = field(default_factory=dict)
    value_pathway: bool = True

    @staticmethod
    def from_manifest(manifest: Manifest, d_model: int, **kw) -> "TokenizerConfig":
        return TokenizerConfig(
            d_model=d_model,
            num_channels=manifest.num_channels,
            metadata_kinds=dict(manifest.metadata_kinds),
            **kw,
        )


class Tokenizer(Module):
    """Learnable maps from measurements and metadata to d_model tokens."""

    def __init__(self, rng, cfg: TokenizerConfig):
        super().__init__()
        self.cfg = cfg
        d_e = cfg.d_embed
        if cfg.value_pathway:
            self.value_projection = Linear(rng, 1, d_e)
        self.position_fc1 = Linear(rng, cfg.pos_sin_dim, d_e)
        self.position_fc2 = Linear(rng, d_e, d_e)
        self.channel_table = Embedding(rng, cfg.num_channels, d_e)
        self.joint_projection = Linear(rng, 3 * d_e, cfg.d_model)
        self.mask_token = Parameter(rng.normal(0.0, 0.02, size=(cfg.d_model,)))
        for key, kind in cfg.metadata_kinds.items():
            if kind == "real":
                setattr(self, f"meta_key_{key}", Parameter(rng.normal(0.0, 0.02, size=(cfg.d_model,))))
            else:
                setattr(self, f"meta_table_{key}", Embedding(rng, int(kind), cfg.d_model))
        if any(k == "real" for k in cfg.metadata_kinds.values()):
            self.real_meta_projection = Linear(rng, d_e, cfg.d_model)

    # -- embedding pathways -------------------------------------------------

    def _position_embed(self, positions: np.ndarray) -> Tensor:
        feats = sinusoidal_embed(positions * self.cfg.position_scale, self.cfg.pos_sin_dim)
        return self.position_fc2(ag.gelu(self.position_fc1(ag.as_tensor(feats))))

    def _check_channels(self, channels: np.ndarray):
        channels = np.asarray(channels)
        if channels.size and (channels.min() < 0 or channels.max() >= self.cfg.num_channels):
            raise ValidationError(
                f"channel id out of range [0, {self.cfg.num_channels})"
            )

    def _measurement_tokens(self, values, positions, channels) -> Tensor:
        self._check_channels(channels)
        n = len(positions)
        if values is None:
            v_emb = ag.as_tensor(np.zeros((n, self.cfg.d_embed)))
        else:
            if not self.cfg.value_pathway:
                raise ValidationError("this tokenizer was built without a value pathway")
            v = np.asarray(values, dtype=np.float64).reshape(n, 1)
            v_emb = self.value_projection(ag.as_tensor(v))
        p_emb = self._position_embed(np.asarray(positions, dtype=np.float64))
        c_emb = self.channel_table(np.asarray(channels, dtype=np.int64))
        return self.joint_projection(ag.concat([v_emb, p_emb, c_emb], axis=1))

    def _metadata_token(self, key: str, value) -> Tensor:
        kind = self.cfg.metadata_kinds.get(key)
        if kind is None:
            raise ValidationError(f"metadata key {key!r} not declared in the manifest")
        if kind == "real":
            feats = sinusoidal_embed(np.asarray([float(value)]), self.cfg.pos_sin_dim)
            emb = self.position_fc2(ag.gelu(self.position_fc1(ag.as_tensor(feats))))
            key_vec = getattr(self, f"meta_key_{key}")
            return ag.add(self.real_meta_projection(emb), ag.reshape(key_vec, (1, -1)))
        vid = int(value)
        if not 0 <= vid < int(kind):
            raise ValidationError(f"metadata {key!r} id {vid} outside vocabulary [0, {kind})")
        return getattr(self, f"meta_table_{key}")(np.asarray([vid]))

    # -- public operations ---------------------------------------------------

    def tokenize(self, seq: MeasurementSequence) -> TokenSequence:
        """One token per measurement plus one per metadata entry."""
        n = len(seq)
        parts = [self._measurement_tokens(seq.values, seq.positions, seq.channels)]
        for key, value in seq.metadata:
            parts.append(self._metadata_token(key, value))
        m = len(seq.metadata)
        tokens = ag.concat(parts, axis=0) if m else parts[0]
        return TokenSequence(
            tokens=tokens,
            kinds=np.concatenate([
                np.full(n, TokenKind.MEASUREMENT, dtype=np.int8),
                np.full(m, TokenKind.METADATA, dtype=np.int8),
            ]),
            source_idx=np.concatenate([np.arange(n, dtype=np.int64), np.full(m, -1)]),
            positions=np.concatenate([seq.positions, np.full(m, np.nan)]),
            channels=np.concatenate([seq.channels, np.full(m, -1, dtype=np.int64)]),
        )

    def tokenize_values(self, values, positions, channels) -> TokenSequence:
        """Measurement tokens for raw arrays (no metadata); used by decoders
        to tokenize noisy values at query locations."""
        n = len(positions)
        return TokenSequence(
            tokens=self._measurement_tokens(values, positions, channels),
            kinds=np.full(n, TokenKind.MEASUREMENT, dtype=np.int8),
            source_idx=np.arange(n, dtype=np.int64),
            positions=np.asarray(positions, dtype=np.float64),
            channels=np.asarray(channels, dtype=np.int64),
        )

    def query_tokens(self, positions, channels) -> TokenSequence:
        """Tokens carrying positional and channel content only (no values)."""
        if len(positions) != len(channels):
            raise ValidationError("query positions and channels must have equal length")
        n = len(positions)
        return TokenSequence(
            tokens=self._measurement_tokens(None, positions, channels),
            kinds=np.full(n, TokenKind.MEASUREMENT, dtype=np.int8),
            source_idx=np.arange(n, dtype=np.int64),
            positions=np.asarray(positions, dtype=np.float64),
            channels=np.asarray(channels, dtype=np.int64),
        )

    def apply_mask_tokens(self, toks: TokenSequence, split: MaskSplit) -> TokenSequence:
        """Replace masked measurement tokens by mask_token plus that
        location's positional/channel content; the value content is hidden."""
        L = len(toks)
        masked = np.asarray(split.masked_idx, dtype=np.int64)
        if masked.size == 0:
            return toks
        if masked.min() < 0 or masked.max() >= L:
            raise ValidationError("mask index out of token range")
        if np.any(toks.kinds[masked] != TokenKind.MEASUREMENT):
            raise ValidationError("mask indices must reference measurement tokens")
        repl = ag.add(
            self.query_tokens(toks.positions[masked], toks.channels[masked]).tokens,
            ag.reshape(self.mask_token, (1, -1)),
        )
        keep = np.ones((L, 1))
        keep[masked] = 0.0
        scatter = np.zeros((L, masked.size))
        scatter[masked, np.arange(masked.size)] = 1.0
        tokens = ag.add(ag.mul(toks.tokens, keep), ag.matmul(ag.as_tensor(scatter), repl))
        kinds = toks.kinds.copy()
        kinds[masked] = TokenKind.MASK
        return TokenSequence(
            tokens=tokens,
            kinds=kinds,
            source_idx=toks.source_idx.copy(),
            positions=toks.positions.copy(),
            channels=toks.channels.copy(),
        )
