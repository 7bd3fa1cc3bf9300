"""The beta-VAE baseline head/objective and the masked-autoencoder objective.

Both reuse the Perceiver backbone: the VAE widens the encoder's final
projection to emit per-token mean and log-variance; the masked objective
encodes only the unmasked measurements and scores the decoder at the masked
locations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from daep import autograd as ag
from daep.autograd import Tensor
from daep.encoder import EncoderConfig, PerceiverEncoder
from daep.errors import ValidationError
from daep.seqdata import MaskSplit, MeasurementSequence
from daep.nn import Module
from daep.utils import rng_from


@dataclass
class VaeConfig:
    beta: float = 0.1

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError("beta must be >= 0")


@dataclass
class GaussianLatent:
    mean: Tensor
    log_variance: Tensor


class VaeEncoder(Module):
    """Perceiver encoder trunk whose final projection emits 2 x bottleneck_dim
    per token, split into mean and log-variance."""

    def __init__(self, rng, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = PerceiverEncoder(rng, cfg, project_out=True, out_dim=2 * cfg.bottleneck_dim)

    def encode(self, toks) -> GaussianLatent:
        out = self.trunk.encode(toks)
        bd = self.cfg.bottleneck_dim
        return GaussianLatent(
            mean=out[:, :bd],
            log_variance=out[:, bd:],
        )

    __call__ = encode


def kl_to_unit_gaussian(glat: GaussianLatent) -> Tensor:
    """Closed-form KL(N(mu, sigma^2) || N(0, 1)), averaged per latent element:
    0.5 (mu^2 + sigma^2 - 1 - log sigma^2)."""
    mu, logvar = glat.mean, glat.log_variance
    per_elem = 0.5 * (mu * mu + ag.exp(logvar) - 1.0 - logvar)
    return per_elem.mean()


def reparameterize(glat: GaussianLatent, rng_seed: int) -> Tensor:
    """z = mean + exp(logvar / 2) * eps with per-element noise."""
    eps = rng_from(rng_seed, "vae_reparam").standard_normal(glat.mean.shape)
    return glat.mean + ag.exp(0.5 * glat.log_variance) * ag.as_tensor(eps)


def vae_loss(model, seq: MeasurementSequence, cfg: VaeConfig,
             rng_seed: int) -> tuple[Tensor, Tensor, Tensor]:
    """(total, recon, kl): reparameterized reconstruction at all measurement
    positions plus beta-weighted KL. total = recon + beta * kl exactly."""
    toks = model.tokenizer.tokenize(seq)
    glat = model.encoder.encode(toks)
    z = reparameterize(glat, rng_seed)
    pred = model.decoder.decode_from_latent(z, seq.positions, seq.channels)
    recon = ag.mse(pred, ag.as_tensor(seq.values))
    kl = kl_to_unit_gaussian(glat)
    total = recon + cfg.beta * kl
    return total, recon, kl


def maep_loss(model, seq: MeasurementSequence, split: MaskSplit) -> Tensor:
    """Masked-reconstruction MSE.

    The latent encodes the unmasked measurements only (plus metadata tokens,
    which are never masked); the decoder sees the full token sequence with
    mask substitutions and is queried at the masked locations.
    """
    split.validate(len(seq))
    if split.masked_idx.size == 0:
        raise ValidationError("maep_loss needs a nonempty masked set")
    if split.unmasked_idx.size == 0:
        raise ValidationError("maep_loss needs a nonempty unmasked set")
    visible = seq.subset(split.unmasked_idx)
    latent = model.encoder.encode(model.tokenizer.tokenize(visible))
    full = model.tokenizer.tokenize(seq)
    masked_toks = model.tokenizer.apply_mask_tokens(full, split)
    pred = model.decoder.masked_decode(
        masked_toks,
        latent,
        seq.positions[split.masked_idx],
        seq.channels[split.masked_idx],
    )
    target = ag.as_tensor(seq.values[split.masked_idx])
    return ag.mse(pred, target)


def maep_predictions(model, seq: MeasurementSequence, split: MaskSplit) -> np.ndarray:
    """Model values at masked locations (inference path, no graph)."""
    with ag.no_grad():
        visible = seq.subset(split.unmasked_idx)
        latent = model.encoder.encode(model.tokenizer.tokenize(visible))
        masked_toks = model.tokenizer.apply_mask_tokens(model.tokenizer.tokenize(seq), split)
        pred = model.decoder.masked_decode(
            masked_toks,
            latent,
            seq.positions[split.masked_idx],
            seq.channels[split.masked_idx],
        )
    return pred.data
