"""Late-mixing multimodal encoder with modality dropping.

Each present modality is tokenized and encoded by its own first-stage
Perceiver into a fixed token count at the model dimension; a learnable
modality embedding is added to all of that modality's tokens; the sequences
are concatenated and a second Perceiver (the mixer, whose input tokens also
attend to themselves) produces one bottleneck latent. Decoding runs a
modality-specific diffusion decoder, which is what enables cross-modality
inference: encode one modality, decode another.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from daep import autograd as ag
from daep.autograd import Tensor
from daep.decoder import DecoderConfig, PerceiverIODecoder
from daep.diffusion import NoiseSchedule, ddim_sample, ddpm_loss
from daep.encoder import EncoderConfig, PerceiverEncoder
from daep.errors import ValidationError
from daep.nn import Module, ModuleList, Parameter
from daep.seqdata import MeasurementSequence
from daep.tokenizer import Tokenizer, TokenizerConfig
from daep.utils import rng_from


@dataclass
class ModalitySpec:
    modality_id: int
    tokenizer: TokenizerConfig
    first_stage: EncoderConfig  # bottleneck_len = token count after encoding
    decoder: DecoderConfig

    def __post_init__(self):
        if isinstance(self.tokenizer, dict):
            self.tokenizer = TokenizerConfig(**self.tokenizer)
        if isinstance(self.first_stage, dict):
            self.first_stage = EncoderConfig(**self.first_stage)
        if isinstance(self.decoder, dict):
            self.decoder = DecoderConfig(**self.decoder)


@dataclass
class MultimodalSpec:
    modalities: list[ModalitySpec]
    mixer: EncoderConfig

    def __post_init__(self):
        self.modalities = [
            m if isinstance(m, ModalitySpec) else ModalitySpec(**m) for m in self.modalities
        ]
        if isinstance(self.mixer, dict):
            self.mixer = EncoderConfig(**self.mixer)
        ids = sorted(m.modality_id for m in self.modalities)
        if ids != list(range(len(ids))):
            raise ValidationError("modality ids must be unique and dense from 0")
        for m in self.modalities:
            if m.first_stage.d_model != self.mixer.d_model:
                raise ValidationError("first-stage and mixer d_model must match")
            if m.decoder.bottleneck_dim != self.mixer.bottleneck_dim:
                raise ValidationError("modality decoder bottleneck_dim must match the mixer")


def drop_modalities(present, p: float, rng_seed: int) -> set[int]:
    """Drop each present modality independently with probability p; if the
    draw empties the set, retain one uniformly random modality instead."""
    present = sorted(present)
    if not present:
        raise ValidationError("drop_modalities needs a nonempty modality set")
    if not 0.0 <= p < 1.0:
        raise ValidationError("drop probability must be in [0, 1)")
    rng = rng_from(rng_seed, "drop_modalities")
    kept = [m for m in present if rng.random() >= p]
    if not kept:
        kept = [present[int(rng.integers(len(present)))]]
    return set(kept)


class MultimodalDaep(Module):
    objective = "multimodal_daep"

    def __init__(self, rng, spec: MultimodalSpec):
        super().__init__()
        self.spec = spec
        mods = sorted(spec.modalities, key=lambda m: m.modality_id)
        self.tokenizers = ModuleList([Tokenizer(rng, m.tokenizer) for m in mods])
        self.first_stages = ModuleList(
            [PerceiverEncoder(rng, m.first_stage, project_out=False) for m in mods]
        )
        self.decoders = ModuleList([
            PerceiverIODecoder(rng, m.decoder, m.tokenizer, with_time=True, with_values=True)
            for m in mods
        ])
        d_model = spec.mixer.d_model
        self.modality_embedding = Parameter(rng.normal(0.0, 0.02, size=(len(mods), d_model)))
        self.mixer = PerceiverEncoder(rng, spec.mixer, input_self_attention=True)

    @property
    def num_modalities(self) -> int:
        return len(self.spec.modalities)

    def _check_modality(self, modality_id: int):
        if not 0 <= modality_id < self.num_modalities:
            raise ValidationError(f"unknown modality {modality_id}")

    def encode_multimodal(self, inputs: dict[int, MeasurementSequence | None]) -> Tensor:
        """Fixed-shape bottleneck latent from any nonempty modality subset."""
        present = sorted(m for m, s in inputs.items() if s is not None)
        if not present:
            raise ValidationError("encode_multimodal needs at least one modality present")
        parts = []
        for m in present:
            self._check_modality(m)
            toks = self.tokenizers[m].tokenize(inputs[m])
            first = self.first_stages[m].encode(toks)
            emb = self.modality_embedding[np.asarray([m])]
            parts.append(ag.add(first, emb))
        mixer_in = ag.concat(parts, axis=0) if len(parts) > 1 else parts[0]
        return self.mixer.encode(mixer_in)

    def decode_modality(self, latent, modality_id: int, query_positions, query_channels,
                        sched: NoiseSchedule, num_steps: int, seed: int) -> np.ndarray:
        self._check_modality(modality_id)
        return ddim_sample(
            self.decoders[modality_id], latent, query_positions, query_channels,
            sched, num_steps, seed,
        )

    def loss(self, event: dict[int, MeasurementSequence], sched: NoiseSchedule,
             rng_seed: int) -> Tensor:
        """Sum of per-present-modality diffusion losses from the shared
        latent; absent modalities contribute exactly zero gradient."""
        latent = self.encode_multimodal(event)
        total = None
        for m in sorted(k for k, s in event.items() if s is not None):
            term = ddpm_loss(self.decoders[m], event[m], latent, sched,
                             rng_seed=rng_from(rng_seed, "mm_loss", m).integers(2**31))
            total = term if total is None else total + term
        return total
