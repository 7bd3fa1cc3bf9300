"""Training loops, experiment configuration, and checkpointing.

Ragged batches are handled by per-sequence forwards with gradient
accumulation (averaged before each Adam step), so no padding is ever needed.
Runs are deterministic given the config seed in single-threaded execution:
every random draw (shuffling, masking, diffusion steps, modality dropping)
derives from named sub-streams of that one seed. A non-finite loss aborts the
run with a diagnostic snapshot on disk.
"""

from __future__ import annotations

import dataclasses
import json
import tempfile
import zipfile
from dataclasses import dataclass, field

import numpy as np

from daep.baselines import VaeConfig, maep_loss, vae_loss
from daep.diffusion import NoiseSchedule, ddpm_loss, make_schedule
from daep.errors import DivergenceError, FormatError, ValidationError
from daep.models import ModelSpec, build_model
from daep.multimodal import MultimodalDaep, MultimodalSpec, drop_modalities
from daep.optim import Adam
from daep.seqdata import MeasurementSequence, PreprocessSpec, augment, make_mask
from daep.utils import rng_from

CHECKPOINT_VERSION = 1
OBJECTIVE_DEFAULT_EPOCHS = {"daep": 2000, "maep": 2000, "vae": 200}


@dataclass
class AugmentSpec:
    folds: int = 5
    noise_scale: float = 1.0
    drop_ratio: float = 0.1


@dataclass
class TrainConfig:
    objective: str
    learning_rate: float = 2.5e-4
    epochs: int | None = None  # None resolves to the per-objective default
    batch_size: int = 16
    seed: int = 0
    mask_ratio: float = 0.75  # maep only
    beta: float = 0.1  # vae only
    augmentation: AugmentSpec | None = None
    modality_drop_p: float = 0.2  # multimodal only
    multimodal: bool = False
    diffusion_T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.objective not in ("daep", "maep", "vae"):
            raise ValidationError(f"unknown objective {self.objective!r}")
        if self.multimodal and self.objective != "daep":
            raise ValidationError("multimodal training currently supports the daep objective")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.epochs is None:
            self.epochs = OBJECTIVE_DEFAULT_EPOCHS[self.objective]
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if isinstance(self.augmentation, (list, tuple)):
            self.augmentation = AugmentSpec(*self.augmentation)
        elif isinstance(self.augmentation, dict):
            self.augmentation = AugmentSpec(**self.augmentation)


def _visit_seed(root: int, *keys) -> int:
    return int(rng_from(root, "visit", *keys).integers(2**62))


def _snapshot_divergence(model, history, epoch) -> str:
    fd, path = tempfile.mkstemp(prefix="daep-diverged-", suffix=".npz")
    import os

    os.close(fd)
    state = model.state_dict()
    arrays = {f"param/{k}": v for k, v in state.items()}
    arrays["__history__"] = np.asarray(json.dumps(history))
    arrays["__epoch__"] = np.asarray([epoch])
    np.savez(path, **arrays)
    return path


def train(dataset, cfg: TrainConfig, model_spec, model=None):
    """Train a model on the dataset; returns (model, history).

    dataset is a list of MeasurementSequence, or a list of
    {modality_id: MeasurementSequence} events when cfg.multimodal. Pass an
    existing model to continue training it.
    """
    if not dataset:
        raise ValidationError("dataset must be nonempty")
    if model is None:
        if cfg.multimodal:
            if not isinstance(model_spec, MultimodalSpec):
                raise ValidationError("multimodal training needs a MultimodalSpec")
            model = MultimodalDaep(rng_from(cfg.seed, "init", "multimodal"), model_spec)
        else:
            model = build_model(cfg.objective, model_spec, cfg.seed)

    if cfg.augmentation is not None and not cfg.multimodal:
        aug = cfg.augmentation
        expanded = []
        for i, seq in enumerate(dataset):
            expanded.extend(
                augment(seq, aug.folds, aug.noise_scale, aug.drop_ratio,
                        _visit_seed(cfg.seed, "augment", i))
            )
        dataset = expanded

    sched = make_schedule(cfg.diffusion_T, cfg.beta_start, cfg.beta_end)
    vae_cfg = VaeConfig(beta=cfg.beta)
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    history: list[dict] = []
    n = len(dataset)

    for epoch in range(cfg.epochs):
        order = rng_from(cfg.seed, "shuffle", epoch).permutation(n)
        sums = {"loss": 0.0, "recon": 0.0, "kl": 0.0}
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            opt.zero_grad()
            for idx in batch:
                item = dataset[int(idx)]
                seed_i = _visit_seed(cfg.seed, epoch, int(idx))
                loss = _objective_loss(model, item, cfg, sched, vae_cfg, seed_i, sums)
                if not np.isfinite(loss.data):
                    path = _snapshot_divergence(model, history, epoch)
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}; snapshot at {path}", path
                    )
                loss.backward()
            inv = 1.0 / len(batch)
            for p in opt.params:
                if p.grad is not None:
                    p.grad = p.grad * inv
            opt.step()
        entry = {"epoch": epoch, "loss": sums["loss"] / n}
        if cfg.objective == "vae" and not cfg.multimodal:
            entry["recon"] = sums["recon"] / n
            entry["kl"] = sums["kl"] / n
        history.append(entry)
    return model, history


def _objective_loss(model, item, cfg, sched, vae_cfg, seed_i, sums):
    if cfg.multimodal:
        kept = drop_modalities(sorted(item.keys()), cfg.modality_drop_p, seed_i)
        loss = model.loss({m: item[m] for m in kept}, sched, seed_i)
        sums["loss"] += float(loss.data)
        return loss
    if cfg.objective == "daep":
        latent = model.encode(item)
        loss = ddpm_loss(model.decoder, item, latent, sched, seed_i)
        sums["loss"] += float(loss.data)
        return loss
    if cfg.objective == "maep":
        split = make_mask(item, cfg.mask_ratio, seed_i)
        loss = maep_loss(model, item, split)
        sums["loss"] += float(loss.data)
        return loss
    total, recon, kl = vae_loss(model, item, vae_cfg, seed_i)
    sums["loss"] += float(total.data)
    sums["recon"] += float(recon.data)
    sums["kl"] += float(kl.data)
    return total


# ---------------------------------------------------------------------------
# Checkpointing


@dataclass
class Checkpoint:
    objective: str
    multimodal: bool
    model_spec: dict
    train_config: dict
    state: dict[str, np.ndarray]
    preprocess: dict | None = None
    manifest: dict | None = None
    epoch: int = 0
    adam_state: dict[str, np.ndarray] | None = None
    version: int = CHECKPOINT_VERSION

    def build_model(self):
        """Reconstruct the model and load its parameters exactly."""
        if self.multimodal:
            spec = MultimodalSpec(**self.model_spec)
            model = MultimodalDaep(rng_from(0, "rebuild"), spec)
        else:
            spec = ModelSpec(**self.model_spec)
            model = build_model(self.objective, spec, init_seed=0)
        model.load_state_dict(self.state)
        return model

    def preprocess_spec(self) -> PreprocessSpec | None:
        return None if self.preprocess is None else PreprocessSpec(**self.preprocess)

    def schedule(self) -> NoiseSchedule:
        tc = self.train_config
        return make_schedule(tc["diffusion_T"], tc["beta_start"], tc["beta_end"])


def make_checkpoint(model, cfg: TrainConfig, model_spec, epoch: int,
                    preprocess: PreprocessSpec | None = None, manifest: dict | None = None,
                    opt: Adam | None = None) -> Checkpoint:
    return Checkpoint(
        objective=cfg.objective,
        multimodal=cfg.multimodal,
        model_spec=dataclasses.asdict(model_spec),
        train_config=dataclasses.asdict(cfg),
        state=model.state_dict(),
        preprocess=None if preprocess is None else dataclasses.asdict(preprocess),
        manifest=manifest,
        epoch=epoch,
        adam_state=None if opt is None else opt.state_arrays(),
    )


def save_checkpoint(ckpt: Checkpoint, path):
    """Single npz container; arrays stored little-endian, metadata as one
    JSON header carrying the format version."""
    meta = {
        "format_version": ckpt.version,
        "objective": ckpt.objective,
        "multimodal": ckpt.multimodal,
        "model_spec": ckpt.model_spec,
        "train_config": ckpt.train_config,
        "preprocess": ckpt.preprocess,
        "manifest": ckpt.manifest,
        "epoch": ckpt.epoch,
    }
    arrays = {"__meta__": np.asarray(json.dumps(meta))}
    for k, v in ckpt.state.items():
        arrays[f"param/{k}"] = np.ascontiguousarray(v, dtype="<f8")
    if ckpt.adam_state is not None:
        for k, v in ckpt.adam_state.items():
            dtype = "<i8" if v.dtype.kind == "i" else "<f8"
            arrays[f"adam/{k}"] = np.ascontiguousarray(v, dtype=dtype)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path, expect_objective: str | None = None) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as z:
            if "__meta__" not in z:
                raise FormatError(f"{path}: not a daep checkpoint (missing header)")
            meta = json.loads(str(z["__meta__"]))
            state = {k[len("param/"):]: z[k].astype(np.float64) for k in z.files
                     if k.startswith("param/")}
            adam = {k[len("adam/"):]: z[k] for k in z.files if k.startswith("adam/")}
    except (zipfile.BadZipFile, OSError, ValueError, KeyError) as e:
        raise FormatError(f"{path}: corrupt or truncated checkpoint ({e})") from e
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValidationError(
            f"{path}: checkpoint format version {version} != supported {CHECKPOINT_VERSION}"
        )
    if expect_objective is not None and meta["objective"] != expect_objective:
        raise ValidationError(
            f"{path}: checkpoint objective {meta['objective']!r} does not match "
            f"requested {expect_objective!r}"
        )
    return Checkpoint(
        objective=meta["objective"],
        multimodal=meta["multimodal"],
        model_spec=meta["model_spec"],
        train_config=meta["train_config"],
        state=state,
        preprocess=meta.get("preprocess"),
        manifest=meta.get("manifest"),
        epoch=meta.get("epoch", 0),
        adam_state=adam or None,
        version=version,
    )


# ---------------------------------------------------------------------------
# Experiment configuration files


def load_config(path) -> dict:
    """Key-value tree from a YAML or JSON file."""
    text = open(path).read()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        obj = yaml.safe_load(text)
    else:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid config ({e.msg})") from e
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: config root must be a mapping")
    return obj


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply dotted key=value overrides; values parse as JSON when possible."""
    out = json.loads(json.dumps(config))
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} must look like key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ValidationError(f"override {key!r} references unknown config key {part!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ValidationError(f"override {key!r} references unknown config key {parts[-1]!r}")
        node[parts[-1]] = value
    return out
