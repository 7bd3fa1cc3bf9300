"""Forward noising, the noise-prediction training objective, and the
deterministic DDIM sampler.

The schedule is the linear-beta default; training draws one uniform step per
sequence and noises the z-scored values only (positions and channels are
never noised). Sampling strides the schedule uniformly and runs the fully
deterministic (eta = 0) DDIM update, so a fixed starting-noise seed pins the
whole trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from daep import autograd as ag
from daep.autograd import Tensor
from daep.errors import ValidationError
from daep.seqdata import MeasurementSequence
from daep.utils import rng_from


@dataclass
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction at step t, with alpha_bar(0) = 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValidationError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValidationError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T)
    alphas = 1.0 - betas
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


@dataclass
class DiffusionDraw:
    x0: np.ndarray
    t: int
    epsilon: np.ndarray
    xt: np.ndarray


def forward_noise(x0: np.ndarray, t: int, sched: NoiseSchedule, rng_seed: int) -> DiffusionDraw:
    """Noise x0 to step t: xt = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    if not 1 <= t <= sched.T:
        raise ValidationError(f"t must be in [1, {sched.T}]")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng_from(rng_seed, "forward_noise").standard_normal(x0.shape)
    ab = sched.alpha_bar(t)
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return DiffusionDraw(x0=x0, t=t, epsilon=eps, xt=xt)


def recover_x0(xt: np.ndarray, t: int, epsilon: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Invert the noising identity given the exact noise."""
    ab = sched.alpha_bar(t)
    return (xt - np.sqrt(1.0 - ab) * epsilon) / np.sqrt(ab)


def ddpm_loss(model, seq: MeasurementSequence, latent, sched: NoiseSchedule,
              rng_seed: int) -> Tensor:
    """Noise-prediction MSE at a uniformly drawn step.

    model is a score decoder exposing score_forward; latent must be the
    encoder output of the clean sequence so the loss trains encoder and
    decoder end to end.
    """
    rng = rng_from(rng_seed, "ddpm")
    t = int(rng.integers(1, sched.T + 1))
    eps = rng.standard_normal(len(seq))
    ab = sched.alpha_bar(t)
    xt = np.sqrt(ab) * seq.values + np.sqrt(1.0 - ab) * eps
    eps_hat = model.score_forward(xt, seq.positions, seq.channels, latent, t)
    return ag.mse(eps_hat, ag.as_tensor(eps))


def ddim_steps(T: int, num_steps: int) -> list[int]:
    """Uniform stride over step indices: floor((i+1) T / num_steps), strictly
    increasing with last element T."""
    if not 1 <= num_steps <= T:
        raise ValidationError("num_steps must be in [1, T]")
    return [((i + 1) * T) // num_steps for i in range(num_steps)]


def ddim_sample(model, latent, query_positions, query_channels, sched: NoiseSchedule,
                num_steps: int, x_T_seed: int) -> np.ndarray:
    """Deterministic DDIM: exactly num_steps model evaluations from a seeded
    x_T down to the x0 estimate at the query locations."""
    times = ddim_steps(sched.T, num_steps)
    nq = len(query_positions)
    x = rng_from(x_T_seed, "ddim_xT").standard_normal(nq)
    latent = ag.as_tensor(latent)
    with ag.no_grad():
        for i in range(len(times) - 1, -1, -1):
            t = times[i]
            t_prev = times[i - 1] if i > 0 else 0
            eps_hat = model.score_forward(x, query_positions, query_channels, latent, t).data
            ab_t = sched.alpha_bar(t)
            ab_p = sched.alpha_bar(t_prev)
            x0 = (x - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
            x = np.sqrt(ab_p) * x0 + np.sqrt(1.0 - ab_p) * eps_hat
    return x
