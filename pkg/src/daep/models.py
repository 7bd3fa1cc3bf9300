"""Composite models: shared-backbone assemblies of tokenizer, encoder and
decoder for the three training objectives, plus their inference helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from daep import autograd as ag
from daep.autograd import Tensor
from daep.baselines import VaeEncoder, maep_predictions
from daep.decoder import DecoderConfig, PerceiverIODecoder
from daep.diffusion import NoiseSchedule, ddim_sample
from daep.encoder import EncoderConfig, PerceiverEncoder
from daep.errors import ValidationError
from daep.nn import Module
from daep.seqdata import MeasurementSequence, make_mask
from daep.tokenizer import Tokenizer, TokenizerConfig
from daep.utils import rng_from


@dataclass
class ModelSpec:
    tokenizer: TokenizerConfig
    encoder: EncoderConfig
    decoder: DecoderConfig

    def __post_init__(self):
        if isinstance(self.tokenizer, dict):
            self.tokenizer = TokenizerConfig(**self.tokenizer)
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if isinstance(self.decoder, dict):
            self.decoder = DecoderConfig(**self.decoder)
        if self.tokenizer.d_model != self.encoder.d_model:
            raise ValidationError("tokenizer and encoder d_model must match")
        if self.decoder.bottleneck_dim != self.encoder.bottleneck_dim:
            raise ValidationError("decoder bottleneck_dim must match the encoder")


class DaepModel(Module):
    """Deterministic Perceiver encoder + conditional diffusion decoder."""

    objective = "daep"

    def __init__(self, rng, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.tokenizer = Tokenizer(rng, spec.tokenizer)
        self.encoder = PerceiverEncoder(rng, spec.encoder)
        self.decoder = PerceiverIODecoder(
            rng, spec.decoder, spec.tokenizer, with_time=True, with_values=True
        )

    def encode(self, seq: MeasurementSequence) -> Tensor:
        return self.encoder.encode(self.tokenizer.tokenize(seq))

    def reconstruct(self, seq: MeasurementSequence, sched: NoiseSchedule,
                    num_steps: int, seed: int) -> np.ndarray:
        with ag.no_grad():
            latent = self.encode(seq).data
        return ddim_sample(
            self.decoder, latent, seq.positions, seq.channels, sched, num_steps, seed
        )


class MaepModel(Module):
    """Perceiver encoder over unmasked tokens + direct masked decoder."""

    objective = "maep"

    def __init__(self, rng, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.tokenizer = Tokenizer(rng, spec.tokenizer)
        self.encoder = PerceiverEncoder(rng, spec.encoder)
        self.decoder = PerceiverIODecoder(
            rng, spec.decoder, spec.tokenizer, with_time=False, with_values=False
        )

    def encode(self, seq: MeasurementSequence) -> Tensor:
        """Latent with every measurement unmasked (the probing protocol)."""
        return self.encoder.encode(self.tokenizer.tokenize(seq))

    def reconstruct(self, seq: MeasurementSequence, seed: int,
                    unmasked_fraction: float = 0.1) -> np.ndarray:
        """Reconstruction benchmark protocol: the latent sees the full data,
        the decoder gets unmasked_fraction of tokens in the clear and predicts
        the rest; given values pass through at the unmasked locations."""
        split = make_mask(seq, 1.0 - unmasked_fraction, seed)
        with ag.no_grad():
            latent = self.encode(seq)
            masked_toks = self.tokenizer.apply_mask_tokens(self.tokenizer.tokenize(seq), split)
            pred_masked = self.decoder.masked_decode(
                masked_toks, latent,
                seq.positions[split.masked_idx], seq.channels[split.masked_idx],
            ).data
        out = seq.values.copy()
        out[split.masked_idx] = pred_masked
        return out

    def predict_masked(self, seq, split) -> np.ndarray:
        return maep_predictions(self, seq, split)


class VaeModel(Module):
    """Gaussian Perceiver encoder + direct decoder from the latent alone."""

    objective = "vae"

    def __init__(self, rng, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.tokenizer = Tokenizer(rng, spec.tokenizer)
        self.encoder = VaeEncoder(rng, spec.encoder)
        self.decoder = PerceiverIODecoder(
            rng, spec.decoder, spec.tokenizer, with_time=False, with_values=False
        )

    def encode(self, seq: MeasurementSequence) -> Tensor:
        """Posterior mean (the deterministic latent used for eval/probing)."""
        return self.encoder.encode(self.tokenizer.tokenize(seq)).mean

    def reconstruct(self, seq: MeasurementSequence) -> np.ndarray:
        with ag.no_grad():
            z = self.encode(seq)
            pred = self.decoder.decode_from_latent(z, seq.positions, seq.channels)
        return pred.data


OBJECTIVES = {"daep": DaepModel, "maep": MaepModel, "vae": VaeModel}


def build_model(objective: str, spec: ModelSpec, init_seed: int):
    if objective not in OBJECTIVES:
        raise ValidationError(f"unknown objective {objective!r}")
    rng = rng_from(init_seed, "init", objective)
    return OBJECTIVES[objective](rng, spec)
