"""Data model, file I/O, preprocessing and masking for irregular sequences.

A dataset is a JSON-lines file (one record per line) accompanied by a JSON
manifest declaring channel count/names and metadata vocabularies. All
operations here are pure given an explicit seed and never mutate their input
sequence.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from daep import kernels
from daep.errors import EmptySequenceError, FormatError, ValidationError
from daep.utils import rng_from

VALUE_TRANSFORMS = ("arcsinh", "log10", "identity")


@dataclass
class MeasurementSequence:
    """Ragged record of (value, position, channel) measurements plus metadata.

    positions carry the continuous part of the sampling coordinate (time,
    wavelength); channels the discrete part (band id). metadata is a list of
    (key, value) pairs where value is a categorical id (int) or a real.
    """

    values: np.ndarray
    positions: np.ndarray
    channels: np.ndarray
    uncertainties: np.ndarray | None = None
    metadata: list[tuple[str, float | int]] = field(default_factory=list)
    label: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.channels = np.asarray(self.channels, dtype=np.int64)
        if self.uncertainties is not None:
            self.uncertainties = np.asarray(self.uncertainties, dtype=np.float64)
        n = len(self.values)
        if n < 1:
            raise EmptySequenceError("a sequence needs at least one measurement")
        for name in ("positions", "channels", "uncertainties"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ValidationError(
                    f"{name} has length {len(arr)}, expected {n} to match values"
                )
        if not np.all(np.isfinite(self.positions)):
            raise ValidationError("positions must be finite")
        if self.channels.size and self.channels.min() < 0:
            raise ValidationError("channel ids must be non-negative")
        keys = [k for k, _ in self.metadata]
        if len(keys) != len(set(keys)):
            raise ValidationError("metadata keys must be unique")

    def __len__(self) -> int:
        return len(self.values)

    def subset(self, idx: np.ndarray) -> "MeasurementSequence":
        """New sequence keeping the given measurement indices (metadata kept)."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            raise EmptySequenceError("subset would leave no measurements")
        return MeasurementSequence(
            values=self.values[idx],
            positions=self.positions[idx],
            channels=self.channels[idx],
            uncertainties=None if self.uncertainties is None else self.uncertainties[idx],
            metadata=list(self.metadata),
            label=self.label,
        )

    def replace(self, **kw) -> "MeasurementSequence":
        return dataclasses.replace(self, **kw)


@dataclass
class MaskSplit:
    """Disjoint covering partition of measurement indices."""

    masked_idx: np.ndarray
    unmasked_idx: np.ndarray
    adjusted: bool = False

    def __post_init__(self):
        self.masked_idx = np.asarray(self.masked_idx, dtype=np.int64)
        self.unmasked_idx = np.asarray(self.unmasked_idx, dtype=np.int64)

    def validate(self, n: int):
        union = np.concatenate([self.masked_idx, self.unmasked_idx])
        if len(np.unique(union)) != n or len(union) != n:
            raise ValidationError("mask split must be a disjoint cover of 0..N-1")


@dataclass
class ZscoreStats:
    value_mean: float
    value_std: float
    position_mean: float
    position_std: float

    def __post_init__(self):
        if self.value_std <= 0 or self.position_std <= 0:
            raise ValidationError("z-score std must be positive")


@dataclass
class PreprocessSpec:
    """Deterministic preprocessing recipe; stats are fit on the training split
    only and travel with the checkpoint so inference never refits."""

    sigma_cut: float = 3.0
    value_transform: str = "arcsinh"
    zscore_stats: ZscoreStats | None = None
    median_filter_width: int = 0
    peak_align: bool = False

    def __post_init__(self):
        if self.value_transform not in VALUE_TRANSFORMS:
            raise ValidationError(f"unknown value_transform {self.value_transform!r}")
        if self.median_filter_width != 0 and self.median_filter_width % 2 == 0:
            raise ValidationError("median_filter_width must be 0 or odd")
        if isinstance(self.zscore_stats, dict):
            self.zscore_stats = ZscoreStats(**self.zscore_stats)


@dataclass
class Manifest:
    """Dataset-level declaration of channels and metadata vocabularies.

    metadata_kinds maps key -> "real" or an int vocabulary size (categorical).
    """

    num_channels: int
    channel_names: list[str] = field(default_factory=list)
    metadata_kinds: dict[str, int | str] = field(default_factory=dict)

    def __post_init__(self):
        if self.num_channels < 1:
            raise ValidationError("num_channels must be >= 1")
        if self.channel_names and len(self.channel_names) != self.num_channels:
            raise ValidationError("channel_names length must equal num_channels")

    def save(self, path):
        with open(path, "w") as f:
            json.dump(dataclasses.asdict(self), f, indent=2)
            f.write("\n")

    @staticmethod
    def load(path) -> "Manifest":
        with open(path) as f:
            raw = json.load(f)
        return Manifest(**raw)


# ---------------------------------------------------------------------------
# File I/O


def _record_to_sequence(rec: dict, where: str) -> MeasurementSequence:
    if "values" not in rec or "positions" not in rec:
        raise FormatError(f"{where}: record must contain 'values' and 'positions'")
    values = rec["values"]
    metadata = [(k, v) for k, v in rec.get("metadata", {}).items()]
    try:
        return MeasurementSequence(
            values=values,
            positions=rec["positions"],
            channels=rec.get("channels", [0] * len(values)),
            uncertainties=rec.get("uncertainties"),
            metadata=metadata,
            label=rec.get("label"),
        )
    except ValidationError as e:
        raise ValidationError(f"{where}: {e}") from e


def load_dataset(path, format: str = "jsonl") -> list[MeasurementSequence]:
    """Read one MeasurementSequence per line; ragged lengths preserved."""
    if format != "jsonl":
        raise ValidationError(f"unknown dataset format {format!r}")
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path} line {lineno}: invalid JSON ({e.msg})") from e
            out.append(_record_to_sequence(rec, f"{path} line {lineno}"))
    return out


def sequence_to_record(seq: MeasurementSequence) -> dict:
    rec = {
        "values": seq.values.tolist(),
        "positions": seq.positions.tolist(),
        "channels": seq.channels.tolist(),
    }
    if seq.uncertainties is not None:
        rec["uncertainties"] = seq.uncertainties.tolist()
    if seq.metadata:
        rec["metadata"] = {k: v for k, v in seq.metadata}
    if seq.label is not None:
        rec["label"] = int(seq.label)
    return rec


def save_dataset(seqs: list[MeasurementSequence], path):
    with open(path, "w") as f:
        for seq in seqs:
            f.write(json.dumps(sequence_to_record(seq)) + "\n")


# ---------------------------------------------------------------------------
# Preprocessing


def quality_cut(seq: MeasurementSequence, k: float) -> MeasurementSequence:
    """Keep measurements whose |value| exceeds k times their uncertainty."""
    if seq.uncertainties is None:
        raise ValidationError("quality_cut requires per-measurement uncertainties")
    if k <= 0:
        raise ValidationError("quality_cut threshold k must be positive")
    keep = np.abs(seq.values) > k * seq.uncertainties
    if not keep.any():
        raise EmptySequenceError("quality cut removed every measurement")
    return seq.subset(np.nonzero(keep)[0])


def apply_value_transform(values: np.ndarray, transform: str) -> np.ndarray:
    if transform == "identity":
        return values.copy()
    if transform == "arcsinh":
        return np.arcsinh(values)
    if transform == "log10":
        if np.any(values <= 0):
            raise ValidationError("log10 transform requires strictly positive values")
        return np.log10(values)
    raise ValidationError(f"unknown value_transform {transform!r}")


def invert_value_transform(values: np.ndarray, transform: str) -> np.ndarray:
    if transform == "identity":
        return values.copy()
    if transform == "arcsinh":
        return np.sinh(values)
    if transform == "log10":
        return np.power(10.0, values)
    raise ValidationError(f"unknown value_transform {transform!r}")


def fit_zscore_stats(train_seqs: list[MeasurementSequence], transform: str) -> ZscoreStats:
    """Global mean/std of transformed values and of positions over the
    training split (pooled over every measurement)."""
    values = np.concatenate([apply_value_transform(s.values, transform) for s in train_seqs])
    positions = np.concatenate([s.positions for s in train_seqs])
    v_std = float(values.std())
    p_std = float(positions.std())
    if v_std == 0 or p_std == 0:
        raise ValidationError("degenerate training split: zero variance")
    return ZscoreStats(float(values.mean()), v_std, float(positions.mean()), p_std)


def preprocess(seq: MeasurementSequence, spec: PreprocessSpec) -> MeasurementSequence:
    """Transform values elementwise, z-score values and positions with the
    stored training stats, then median-filter values in position order."""
    if spec.zscore_stats is None:
        raise ValidationError("preprocess needs fitted zscore_stats")
    st = spec.zscore_stats
    values = apply_value_transform(seq.values, spec.value_transform)
    values = (values - st.value_mean) / st.value_std
    positions = (seq.positions - st.position_mean) / st.position_std
    uncertainties = seq.uncertainties
    if uncertainties is not None:
        scale = np.abs(_transform_slope(seq.values, spec.value_transform))
        uncertainties = uncertainties * scale / st.value_std
    if spec.median_filter_width > 0:
        order = np.argsort(positions, kind="stable")
        filtered = kernels.median_filter(
            np.ascontiguousarray(values[order]), spec.median_filter_width
        )
        values = values.copy()
        values[order] = filtered
    return seq.replace(values=values, positions=positions, uncertainties=uncertainties)


def _transform_slope(values: np.ndarray, transform: str) -> np.ndarray:
    # First-order error propagation for the uncertainty column.
    if transform == "identity":
        return np.ones_like(values)
    if transform == "arcsinh":
        return 1.0 / np.sqrt(1.0 + values**2)
    if transform == "log10":
        return 1.0 / (values * math.log(10.0))
    raise ValidationError(f"unknown value_transform {transform!r}")


def inverse_preprocess_values(values: np.ndarray, spec: PreprocessSpec) -> np.ndarray:
    """Undo z-scoring and the value transform (exact up to fp round-trip)."""
    if spec.zscore_stats is None:
        raise ValidationError("inverse_preprocess needs fitted zscore_stats")
    st = spec.zscore_stats
    return invert_value_transform(values * st.value_std + st.value_mean, spec.value_transform)


def inverse_preprocess_positions(positions: np.ndarray, spec: PreprocessSpec) -> np.ndarray:
    st = spec.zscore_stats
    return positions * st.position_std + st.position_mean


# ---------------------------------------------------------------------------
# Peak alignment


@dataclass
class AlignResult:
    sequence: MeasurementSequence
    shift: float
    exclude: bool  # no reference measurement on both sides of the peak


def align_peak(seq: MeasurementSequence, reference_channel: int) -> AlignResult:
    """Shift positions so the reference channel's estimated peak sits at 0.

    Peak = discrete argmax refined by a quadratic through its neighbours. A
    sequence whose reference channel lacks measurements both before and after
    the peak is flagged for exclusion.
    """
    ref = np.nonzero(seq.channels == reference_channel)[0]
    if len(ref) < 3:
        raise ValidationError(
            f"align_peak needs >= 3 measurements in channel {reference_channel}"
        )
    t = seq.positions[ref]
    v = seq.values[ref]
    order = np.argsort(t, kind="stable")
    t, v = t[order], v[order]
    i = int(np.argmax(v))
    if i == 0 or i == len(v) - 1:
        peak = float(t[i])
        exclude = True
    else:
        peak = _quadratic_vertex(t[i - 1 : i + 2], v[i - 1 : i + 2])
        peak = float(np.clip(peak, t[i - 1], t[i + 1]))
        exclude = False
    shifted = seq.replace(positions=seq.positions - peak)
    return AlignResult(sequence=shifted, shift=-peak, exclude=exclude)


def _quadratic_vertex(t3: np.ndarray, v3: np.ndarray) -> float:
    a, b, _ = np.polyfit(t3, v3, 2)
    if a >= 0:  # degenerate: not a local max, keep the discrete argmax
        return float(t3[1])
    return float(-b / (2.0 * a))


# ---------------------------------------------------------------------------
# Masking and augmentation


def make_mask(seq: MeasurementSequence, ratio: float, rng_seed: int) -> MaskSplit:
    """Uniform random mask over measurement tokens; |masked| = round(ratio*N),
    adjusted to leave at least one index on each side."""
    n = len(seq)
    if not 0.0 < ratio < 1.0:
        raise ValidationError("mask ratio must be in (0, 1)")
    if n < 2:
        raise ValidationError("make_mask needs at least 2 measurements")
    n_mask = int(round(ratio * n))
    adjusted = False
    if n_mask < 1:
        n_mask, adjusted = 1, True
    elif n_mask > n - 1:
        n_mask, adjusted = n - 1, True
    rng = rng_from(rng_seed, "make_mask")
    perm = rng.permutation(n)
    return MaskSplit(
        masked_idx=np.sort(perm[:n_mask]),
        unmasked_idx=np.sort(perm[n_mask:]),
        adjusted=adjusted,
    )


def augment(
    seq: MeasurementSequence,
    folds: int,
    noise_scale: float,
    drop_ratio: float,
    rng_seed: int,
) -> list[MeasurementSequence]:
    """folds copies of seq; all but the first get value noise of scale
    noise_scale * uncertainty (or noise_scale flat) and a random drop of
    drop_ratio of the measurements (never below 2 kept)."""
    if folds < 1:
        raise ValidationError("folds must be >= 1")
    out = [seq]
    for fold in range(1, folds):
        rng = rng_from(rng_seed, "augment", fold)
        scale = noise_scale * (seq.uncertainties if seq.uncertainties is not None else 1.0)
        values = seq.values + rng.standard_normal(len(seq)) * scale
        copy = seq.replace(values=values)
        n_drop = int(round(drop_ratio * len(seq)))
        n_keep = max(2, len(seq) - n_drop)
        if n_keep < len(seq):
            keep = np.sort(rng.choice(len(seq), size=n_keep, replace=False))
            copy = copy.subset(keep)
        out.append(copy)
    return out
