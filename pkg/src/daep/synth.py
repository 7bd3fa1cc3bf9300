"""Synthetic sequence families for desk-scale experiments.

Three unimodal families (each with >= 2 latent classes for probing) plus a
paired two-modality family whose modalities share latent parameters, standing
in for real survey data. Generation is deterministic given the seed; the
closed-form generators are exposed so tests can check produced values against
them directly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from daep.errors import FormatError, ValidationError
from daep.seqdata import Manifest, MeasurementSequence, _record_to_sequence, sequence_to_record
from daep.utils import rng_from

FAMILIES = ("damped_sinusoid", "gaussian_pulse_mix", "spectral_lines")

# Per-class absorption-line centers for the spectral_lines family.
SPECTRAL_LINE_CENTERS = {
    0: (4500.0, 6100.0, 7800.0),
    1: (4900.0, 6600.0, 8300.0),
    2: (5300.0, 5900.0, 8700.0),
}
SPECTRAL_RANGE = (4000.0, 9000.0)


@dataclass
class SpectralParams:
    class_id: int
    continuum: tuple[float, float, float]  # a0 + a1*u + a2*u^2, u in [-1, 1]
    depths: tuple[float, ...]  # fractional line depths
    widths: tuple[float, ...]  # gaussian sigma per line (position units)

    @property
    def centers(self) -> tuple[float, ...]:
        return SPECTRAL_LINE_CENTERS[self.class_id]


def spectral_truth(params: SpectralParams, positions: np.ndarray) -> np.ndarray:
    """Noise-free spectrum: smooth continuum minus narrow gaussian lines."""
    lo, hi = SPECTRAL_RANGE
    u = (positions - 0.5 * (lo + hi)) / (0.5 * (hi - lo))
    a0, a1, a2 = params.continuum
    cont = a0 + a1 * u + a2 * u * u
    out = cont.copy()
    for mu, depth, sigma in zip(params.centers, params.depths, params.widths):
        c_at = a0 + a1 * ((mu - 0.5 * (lo + hi)) / (0.5 * (hi - lo)))
        out -= depth * abs(c_at) * np.exp(-0.5 * ((positions - mu) / sigma) ** 2)
    return out


def _draw_spectral_params(rng: np.random.Generator, num_classes: int = 3) -> SpectralParams:
    class_id = int(rng.integers(num_classes))
    continuum = (
        float(rng.uniform(5.0, 15.0)),
        float(rng.uniform(-3.0, 3.0)),
        float(rng.uniform(-2.0, 2.0)),
    )
    n_lines = len(SPECTRAL_LINE_CENTERS[class_id])
    depths = tuple(float(rng.uniform(0.35, 0.7)) for _ in range(n_lines))
    widths = tuple(float(rng.uniform(70.0, 120.0)) for _ in range(n_lines))
    return SpectralParams(class_id, continuum, depths, widths)


@dataclass
class PulseParams:
    class_id: int  # 0 = single pulse, 1 = double pulse
    amplitude: float
    center: float
    rise: float
    decay: float
    second_delay: float
    second_scale: float
    channel_scales: tuple[float, ...]


def pulse_truth(params: PulseParams, positions: np.ndarray, channels: np.ndarray) -> np.ndarray:
    """Asymmetric gaussian pulse(s) with per-channel amplitude factors."""

    def one(t0, amp):
        sig = np.where(positions < t0, params.rise, params.decay)
        return amp * np.exp(-0.5 * ((positions - t0) / sig) ** 2)

    out = one(params.center, params.amplitude)
    if params.class_id == 1:
        out = out + one(
            params.center + params.second_delay,
            params.second_scale * params.amplitude,
        )
    return out * np.asarray(params.channel_scales)[channels]


def _draw_pulse_params(rng: np.random.Generator, num_channels: int) -> PulseParams:
    return PulseParams(
        class_id=int(rng.integers(2)),
        amplitude=float(rng.uniform(2.0, 5.0)),
        center=float(rng.uniform(-5.0, 5.0)),
        rise=float(rng.uniform(5.0, 10.0)),
        decay=float(rng.uniform(15.0, 30.0)),
        second_delay=float(rng.uniform(20.0, 40.0)),
        second_scale=float(rng.uniform(0.4, 0.7)),
        channel_scales=tuple(float(rng.uniform(0.7, 1.3)) for _ in range(num_channels)),
    )


@dataclass
class SinusoidParams:
    class_id: int
    amplitude: float
    frequency: float
    phase: float
    decay: float
    baseline: float
    channel_scales: tuple[float, ...]


def sinusoid_truth(params: SinusoidParams, positions: np.ndarray, channels: np.ndarray) -> np.ndarray:
    env = params.amplitude * np.exp(-positions / params.decay)
    wave = np.sin(2.0 * np.pi * params.frequency * positions + params.phase)
    return params.baseline + env * wave * np.asarray(params.channel_scales)[channels]


def _draw_sinusoid_params(rng: np.random.Generator, num_channels: int) -> SinusoidParams:
    class_id = int(rng.integers(2))
    freq = float(rng.uniform(0.05, 0.08)) if class_id == 0 else float(rng.uniform(0.12, 0.18))
    return SinusoidParams(
        class_id=class_id,
        amplitude=float(rng.uniform(1.0, 3.0)),
        frequency=freq,
        phase=float(rng.uniform(0.0, 2.0 * np.pi)),
        decay=float(rng.uniform(40.0, 120.0)),
        baseline=float(rng.uniform(-1.0, 1.0)),
        channel_scales=tuple(float(rng.uniform(0.7, 1.3)) for _ in range(num_channels)),
    )


def _sorted_positions(rng, n, lo, hi):
    return np.sort(rng.uniform(lo, hi, size=n))


def synth_generate(
    family: str,
    n_sequences: int,
    length_range: tuple[int, int],
    num_channels: int,
    rng_seed: int,
    noise_sigma: float = 0.1,
) -> list[MeasurementSequence]:
    seqs, _ = synth_generate_with_params(
        family, n_sequences, length_range, num_channels, rng_seed, noise_sigma
    )
    return seqs


def synth_generate_with_params(
    family: str,
    n_sequences: int,
    length_range: tuple[int, int],
    num_channels: int,
    rng_seed: int,
    noise_sigma: float = 0.1,
):
    """Like synth_generate but also returns the per-sequence latent params."""
    if family not in FAMILIES:
        raise ValidationError(f"unknown family {family!r}; choose from {FAMILIES}")
    lo, hi = length_range
    if not (1 <= lo <= hi):
        raise ValidationError("length_range must satisfy 1 <= lo <= hi")
    if n_sequences < 1:
        raise ValidationError("n_sequences must be >= 1")
    seqs, params_out = [], []
    for i in range(n_sequences):
        rng = rng_from(rng_seed, "synth", family, i)
        n = int(rng.integers(lo, hi + 1))
        if family == "spectral_lines":
            params = _draw_spectral_params(rng)
            positions = _sorted_positions(rng, n, *SPECTRAL_RANGE)
            channels = np.zeros(n, dtype=np.int64)
            truth = spectral_truth(params, positions)
        elif family == "gaussian_pulse_mix":
            params = _draw_pulse_params(rng, num_channels)
            positions = _sorted_positions(rng, n, -30.0, 70.0)
            channels = rng.integers(num_channels, size=n)
            truth = pulse_truth(params, positions, channels)
        else:
            params = _draw_sinusoid_params(rng, num_channels)
            positions = _sorted_positions(rng, n, 0.0, 100.0)
            channels = rng.integers(num_channels, size=n)
            truth = sinusoid_truth(params, positions, channels)
        values = truth + rng.standard_normal(n) * noise_sigma
        seqs.append(
            MeasurementSequence(
                values=values,
                positions=positions,
                channels=channels,
                uncertainties=np.full(n, noise_sigma),
                label=params.class_id,
            )
        )
        params_out.append(params)
    return seqs, params_out


def synth_manifest(family: str, num_channels: int) -> Manifest:
    if family == "spectral_lines":
        return Manifest(num_channels=1, channel_names=["spec"])
    names = [f"band{i}" for i in range(num_channels)]
    return Manifest(num_channels=num_channels, channel_names=names)


# ---------------------------------------------------------------------------
# Paired two-modality events (photometry <-> spectra with shared parameters)

PHOTOMETRY, SPECTRA = 0, 1
PAIRED_PHASES = (-10.0, 0.0, 10.0, 20.0, 30.0)


def _paired_spectral_params(pp: PulseParams, phase: float) -> SpectralParams:
    """Spectrum parameters fully determined by the shared pulse parameters
    and the observation phase, so the cross-modal task is learnable."""
    fade = float(np.exp(-max(phase, 0.0) / 40.0))
    a0 = 2.0 + pp.amplitude * fade
    a1 = -1.0 + 0.06 * phase
    a2 = 0.5 * (pp.rise - 7.5) / 2.5
    depth = 0.3 + 0.4 * (pp.decay - 15.0) / 15.0
    width = 90.0 + 2.0 * phase
    n_lines = len(SPECTRAL_LINE_CENTERS[pp.class_id])
    return SpectralParams(
        class_id=pp.class_id,
        continuum=(a0, a1, a2),
        depths=tuple(depth for _ in range(n_lines)),
        widths=tuple(width for _ in range(n_lines)),
    )


def synth_generate_paired(
    n_events: int,
    rng_seed: int,
    photometry_length: tuple[int, int] = (40, 80),
    spectra_length: tuple[int, int] = (60, 120),
    num_photometry_channels: int = 2,
    noise_sigma: float = 0.05,
) -> list[dict[int, MeasurementSequence]]:
    """Events with a photometry sequence and one spectrum taken at a phase
    from PAIRED_PHASES. The spectrum's channel id is its phase index, so
    decoding a given phase is a channel-conditional query."""
    if n_events < 1:
        raise ValidationError("n_events must be >= 1")
    events = []
    for i in range(n_events):
        rng = rng_from(rng_seed, "synth_paired", i)
        pp = _draw_pulse_params(rng, num_photometry_channels)
        pp = dataclasses.replace(pp, center=0.0)  # events are peak-aligned
        n_p = int(rng.integers(*photometry_length, endpoint=True))
        t = _sorted_positions(rng, n_p, -30.0, 70.0)
        ch = rng.integers(num_photometry_channels, size=n_p)
        photo = MeasurementSequence(
            values=pulse_truth(pp, t, ch) + rng.standard_normal(n_p) * noise_sigma,
            positions=t,
            channels=ch,
            uncertainties=np.full(n_p, noise_sigma),
            label=pp.class_id,
        )
        phase_idx = int(rng.integers(len(PAIRED_PHASES)))
        phase = PAIRED_PHASES[phase_idx]
        sp = _paired_spectral_params(pp, phase)
        n_s = int(rng.integers(*spectra_length, endpoint=True))
        wl = _sorted_positions(rng, n_s, *SPECTRAL_RANGE)
        spec = MeasurementSequence(
            values=spectral_truth(sp, wl) + rng.standard_normal(n_s) * noise_sigma,
            positions=wl,
            channels=np.full(n_s, phase_idx, dtype=np.int64),
            uncertainties=np.full(n_s, noise_sigma),
            metadata=[("phase", phase)],
            label=pp.class_id,
        )
        events.append({PHOTOMETRY: photo, SPECTRA: spec})
    return events


def paired_manifests(num_photometry_channels: int = 2) -> dict[int, Manifest]:
    return {
        PHOTOMETRY: Manifest(
            num_channels=num_photometry_channels,
            channel_names=[f"band{i}" for i in range(num_photometry_channels)],
        ),
        SPECTRA: Manifest(
            num_channels=len(PAIRED_PHASES),
            channel_names=[f"phase{p:+.0f}" for p in PAIRED_PHASES],
            metadata_kinds={"phase": "real"},
        ),
    }


def save_paired_dataset(events: list[dict[int, MeasurementSequence]], path):
    """One record per (event, modality): the unimodal record format plus a
    record-level group id and a modality id."""
    with open(path, "w") as f:
        for group, event in enumerate(events):
            for modality, seq in sorted(event.items()):
                rec = sequence_to_record(seq)
                rec["group"] = group
                rec["modality"] = int(modality)
                f.write(json.dumps(rec) + "\n")


def load_paired_dataset(path) -> list[dict[int, MeasurementSequence]]:
    groups: dict[int, dict[int, MeasurementSequence]] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path} line {lineno}: invalid JSON ({e.msg})") from e
            if "group" not in rec or "modality" not in rec:
                raise FormatError(f"{path} line {lineno}: paired records need group and modality")
            seq = _record_to_sequence(rec, f"{path} line {lineno}")
            groups.setdefault(int(rec["group"]), {})[int(rec["modality"])] = seq
    return [groups[g] for g in sorted(groups)]
