"""Reconstruction metrics, residual tables, linear probing, and
cross-modality confidence-interval evaluation."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.linear_model import LogisticRegression

from daep.errors import ValidationError
from daep.seqdata import MeasurementSequence
from daep.utils import rng_from


def reconstruction_error(true: MeasurementSequence, pred: np.ndarray) -> float:
    """Per-event mean absolute residual on (z-scored) values."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != true.values.shape:
        raise ValidationError(
            f"prediction length {pred.shape} != sequence length {true.values.shape}"
        )
    return float(np.mean(np.abs(pred - true.values)))


def aggregate_reconstruction_error(per_event: list[float]) -> tuple[float, float]:
    """Mean and std of per-event errors (the table convention: averaged over
    events)."""
    arr = np.asarray(per_event, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass
class ResidualTable:
    """Rows of (event id, position, channel, true, predicted, residual) with
    residual = predicted - true exactly."""

    rows: list[tuple] = field(default_factory=list)

    def add_event(self, event_id: int, seq: MeasurementSequence, pred: np.ndarray):
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape != seq.values.shape:
            raise ValidationError("prediction length mismatch")
        for p, c, t, y in zip(seq.positions, seq.channels, seq.values, pred):
            self.rows.append((event_id, float(p), int(c), float(t), float(y), float(y - t)))

    def positions(self) -> np.ndarray:
        return np.asarray([r[1] for r in self.rows])

    def residuals(self) -> np.ndarray:
        return np.asarray([r[5] for r in self.rows])

    def write_csv(self, path, header_comment: str | None = None):
        with open(path, "w", newline="") as f:
            if header_comment:
                f.write(f"# {header_comment}\n")
            w = csv.writer(f)
            w.writerow(["event_id", "position", "channel", "true", "predicted", "residual"])
            w.writerows(self.rows)

    @staticmethod
    def read_csv(path) -> "ResidualTable":
        table = ResidualTable()
        with open(path) as f:
            rows = [r for r in csv.reader(l for l in f if not l.startswith("#"))]
        for r in rows[1:]:
            table.rows.append((int(r[0]), float(r[1]), int(r[2]), float(r[3]),
                               float(r[4]), float(r[5])))
        return table


def mean_abs_residual_near(positions: np.ndarray, residuals: np.ndarray,
                           centers, halfwidth: float) -> float:
    """Mean |residual| over points within halfwidth of any given center
    (feature-localized error, e.g. at known line centers)."""
    positions = np.asarray(positions)
    residuals = np.asarray(residuals)
    mask = np.zeros(len(positions), dtype=bool)
    for c in centers:
        mask |= np.abs(positions - c) <= halfwidth
    if not mask.any():
        raise ValidationError("no residuals fall inside the requested windows")
    return float(np.mean(np.abs(residuals[mask])))


# ---------------------------------------------------------------------------
# Classification metrics and linear probing


def macro_f1(predictions, labels, num_classes: int) -> float:
    """Unweighted mean of per-class F1; a class absent from both predictions
    and labels contributes 0."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError("labels out of range")
    f1s = []
    for c in range(num_classes):
        tp = int(np.sum((predictions == c) & (labels == c)))
        fp = int(np.sum((predictions == c) & (labels != c)))
        fn = int(np.sum((predictions != c) & (labels == c)))
        denom = 2 * tp + fp + fn
        f1s.append(0.0 if denom == 0 else 2.0 * tp / denom)
    return float(np.mean(f1s))


@dataclass
class ProbeReport:
    accuracy: float
    accuracy_std: float
    macro_f1: float
    macro_f1_std: float
    per_split_accuracy: list[float]
    per_split_f1: list[float]
    num_splits: int
    split_fraction: float


def linear_probe(latents, labels, num_splits: int = 10, split_fraction: float = 0.3,
                 seed: int = 0, l2_strength: float = 0.0) -> ProbeReport:
    """Multinomial logistic probe on frozen flattened latents.

    Per split: fit on split_fraction of the items, evaluate accuracy and
    macro F1 on the rest; report mean/std over the splits. Unregularized by
    default; l2_strength > 0 adds an L2 penalty of that weight.
    """
    X = np.stack([np.asarray(l, dtype=np.float64).ravel() for l in latents])
    y = np.asarray(labels, dtype=np.int64)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValidationError("linear_probe needs at least 2 classes")
    if not 0.0 < split_fraction < 1.0:
        raise ValidationError("split_fraction must be in (0, 1)")
    n = len(y)
    n_train = max(len(classes), int(round(split_fraction * n)))
    accs, f1s = [], []
    num_classes = int(classes.max()) + 1
    for s in range(num_splits):
        rng = rng_from(seed, "probe_split", s)
        perm = rng.permutation(n)
        train, test = perm[:n_train], perm[n_train:]
        if len(np.unique(y[train])) < 2:  # resample a degenerate draw
            perm = rng.permutation(n)
            train, test = perm[:n_train], perm[n_train:]
        if l2_strength > 0:
            clf = LogisticRegression(penalty="l2", C=1.0 / l2_strength, tol=1e-6, max_iter=5000)
        else:
            clf = LogisticRegression(penalty=None, tol=1e-6, max_iter=5000)
        clf.fit(X[train], y[train])
        pred = clf.predict(X[test])
        accs.append(float(np.mean(pred == y[test])))
        f1s.append(macro_f1(pred, y[test], num_classes))
    accs_a, f1s_a = np.asarray(accs), np.asarray(f1s)
    return ProbeReport(
        accuracy=float(accs_a.mean()),
        accuracy_std=float(accs_a.std()),
        macro_f1=float(f1s_a.mean()),
        macro_f1_std=float(f1s_a.std()),
        per_split_accuracy=accs,
        per_split_f1=f1s,
        num_splits=num_splits,
        split_fraction=split_fraction,
    )


# ---------------------------------------------------------------------------
# Cross-modality evaluation


@dataclass
class CiBin:
    label: str
    mse: float
    count: int


@dataclass
class CiReport:
    nominal_level: float
    num_draws: int
    overall_mse: float
    coverage: float
    mean_width: float
    bins: list[CiBin]

    def __post_init__(self):
        if not 0.0 <= self.coverage <= 1.0:
            raise ValidationError("coverage must lie in [0, 1]")


def crossmodal_eval(model, events, source_modality: int, target_modality: int,
                    sched, num_steps: int, nominal_level: float = 0.9,
                    num_draws: int = 32, seed: int = 0) -> CiReport:
    """Encode the source modality only, draw num_draws DDIM decodings of the
    target with independent starting noise, and score the per-query mean
    (MSE) and the equal-tailed empirical interval (coverage, width).

    MSE is binned by the target records' "phase" metadata when present,
    otherwise by position deciles. model must expose encode_multimodal and
    decode_modality.
    """
    events = [e for e in events
              if e.get(source_modality) is not None and e.get(target_modality) is not None]
    if not events:
        raise ValidationError("crossmodal_eval needs events with both modalities present")
    if num_draws < 1:
        raise ValidationError("num_draws must be >= 1")
    if num_draws == 1:
        warnings.warn("num_draws=1 gives degenerate zero-width intervals", stacklevel=2)
    alpha = 1.0 - nominal_level
    sq_err, covered, widths = [], [], []
    bin_keys, bin_sq = [], []
    for ei, event in enumerate(events):
        target = event[target_modality]
        latent = model.encode_multimodal({source_modality: event[source_modality]})
        if hasattr(latent, "data"):
            latent = latent.data
        draws = np.stack([
            model.decode_modality(
                latent, target_modality, target.positions, target.channels,
                sched, num_steps, int(rng_from(seed, "cm_draw", ei, d).integers(2**62)),
            )
            for d in range(num_draws)
        ])
        point = draws.mean(axis=0)
        lo = np.quantile(draws, alpha / 2.0, axis=0)
        hi = np.quantile(draws, 1.0 - alpha / 2.0, axis=0)
        sq = (point - target.values) ** 2
        sq_err.append(sq)
        covered.append((target.values >= lo) & (target.values <= hi))
        widths.append(hi - lo)
        phase = dict(target.metadata).get("phase")
        key = f"phase={phase:+.0f}" if phase is not None else None
        bin_keys.append((key, target.positions))
        bin_sq.append(sq)
    sq_all = np.concatenate(sq_err)
    report_bins = _bin_mse(bin_keys, bin_sq)
    return CiReport(
        nominal_level=nominal_level,
        num_draws=num_draws,
        overall_mse=float(sq_all.mean()),
        coverage=float(np.concatenate(covered).mean()),
        mean_width=float(np.concatenate(widths).mean()),
        bins=report_bins,
    )


def _bin_mse(bin_keys, bin_sq) -> list[CiBin]:
    if all(k is not None for k, _ in bin_keys):
        agg: dict[str, list[np.ndarray]] = {}
        for (key, _), sq in zip(bin_keys, bin_sq):
            agg.setdefault(key, []).append(sq)
        return [
            CiBin(label=k, mse=float(np.concatenate(v).mean()),
                  count=int(sum(len(x) for x in v)))
            for k, v in sorted(agg.items())
        ]
    pos = np.concatenate([p for _, p in bin_keys])
    sq = np.concatenate(bin_sq)
    edges = np.quantile(pos, np.linspace(0, 1, 11))
    bins = []
    for i in range(10):
        lo, hi = edges[i], edges[i + 1]
        m = (pos >= lo) & (pos <= hi if i == 9 else pos < hi)
        if m.any():
            bins.append(CiBin(label=f"pos[{lo:.3g},{hi:.3g})", mse=float(sq[m].mean()),
                              count=int(m.sum())))
    return bins


class KnownNoiseHarness:
    """Calibration harness: a stand-in 'model' whose decodings are the known
    truth function plus noise of known scale, so nominal CI coverage is the
    ground truth for the CI machinery."""

    def __init__(self, sigma: float, seed: int = 0):
        self.sigma = sigma
        self.seed = seed

    @staticmethod
    def truth(positions, channels):
        return np.sin(3.0 * np.asarray(positions)) + 0.3 * np.asarray(channels)

    def make_events(self, n_events: int, n_queries: int,
                    source_modality: int = 0, target_modality: int = 1):
        events = []
        for i in range(n_events):
            rng = rng_from(self.seed, "harness_event", i)
            pos = np.sort(rng.uniform(-2.0, 2.0, size=n_queries))
            ch = rng.integers(2, size=n_queries)
            truth = self.truth(pos, ch)
            target = MeasurementSequence(
                values=truth + self.sigma * rng.standard_normal(n_queries),
                positions=pos, channels=ch,
            )
            source = MeasurementSequence(
                values=truth.copy(), positions=pos, channels=ch,
            )
            events.append({source_modality: source, target_modality: target})
        return events

    def encode_multimodal(self, inputs):
        return np.zeros((1, 1))

    def decode_modality(self, latent, modality_id, query_positions, query_channels,
                        sched, num_steps, seed):
        rng = rng_from(seed, "harness_draw")
        truth = self.truth(query_positions, query_channels)
        return truth + self.sigma * rng.standard_normal(len(truth))
