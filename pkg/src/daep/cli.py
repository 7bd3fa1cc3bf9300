"""Command-line surface: prepare, synth, train, reconstruct, probe,
crossmodal, report.

All randomness flows from the single --seed flag through named sub-streams
and the seed is recorded in every output header. Outputs are deterministic
given identical inputs and seeds (no timestamps), and no subcommand mutates
its inputs. Exit codes: 0 success, 2 validation, 3 runtime, 4 numeric
divergence. --data/--manifest default into $DAEP_DATA_DIR when omitted.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from daep import evalkit, seqdata, synth
from daep.diffusion import make_schedule
from daep.errors import DaepError, DivergenceError, ValidationError
from daep.evalkit import ResidualTable, aggregate_reconstruction_error, reconstruction_error
from daep.models import ModelSpec, build_model
from daep.multimodal import MultimodalSpec
from daep.seqdata import Manifest, PreprocessSpec, load_dataset, preprocess, save_dataset
from daep.tokenizer import TokenizerConfig
from daep.trainer import (
    Checkpoint,
    TrainConfig,
    apply_overrides,
    load_checkpoint,
    load_config,
    make_checkpoint,
    save_checkpoint,
    train,
)
from daep.utils import rng_from


def _data_default(name: str):
    base = os.environ.get("DAEP_DATA_DIR")
    return str(Path(base) / name) if base else None


def _write_json(path, payload: dict):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.paired:
        events = synth.synth_generate_paired(
            args.n, args.seed, noise_sigma=args.noise_sigma
        )
        synth.save_paired_dataset(events, out / "paired.jsonl")
        manifests = synth.paired_manifests()
        _write_json(out / "manifest.json", {
            "seed": args.seed, "command": "synth --paired", "n_events": args.n,
            "modalities": {str(m): dataclasses.asdict(mf) for m, mf in manifests.items()},
        })
        print(f"wrote {args.n} paired events to {out / 'paired.jsonl'}")
        return 0
    seqs = synth.synth_generate(
        args.family, args.n, (args.length_min, args.length_max),
        args.num_channels, args.seed, noise_sigma=args.noise_sigma,
    )
    save_dataset(seqs, out / "data.jsonl")
    manifest = synth.synth_manifest(args.family, args.num_channels)
    manifest.save(out / "manifest.json")
    _write_json(out / "synth.json", {
        "seed": args.seed, "command": "synth", "family": args.family,
        "n_sequences": args.n, "length_range": [args.length_min, args.length_max],
    })
    print(f"wrote {len(seqs)} sequences to {out / 'data.jsonl'}")
    return 0


# ---------------------------------------------------------------------------
# prepare


def _prepare_split(seqs, args):
    spec = PreprocessSpec(
        sigma_cut=args.sigma_cut,
        value_transform=args.value_transform,
        median_filter_width=args.median_filter,
        peak_align=args.peak_align,
    )
    kept = []
    excluded = 0
    for seq in seqs:
        if args.sigma_cut > 0 and seq.uncertainties is not None:
            try:
                seq = seqdata.quality_cut(seq, args.sigma_cut)
            except seqdata.EmptySequenceError:
                excluded += 1
                continue
        if args.peak_align:
            try:
                result = seqdata.align_peak(seq, args.reference_channel)
            except ValidationError:
                excluded += 1
                continue
            if result.exclude:
                excluded += 1
                continue
            seq = result.sequence
        kept.append(seq)
    if not kept:
        raise ValidationError("preprocessing excluded every sequence")
    spec.zscore_stats = seqdata.fit_zscore_stats(kept, spec.value_transform)
    return [preprocess(s, spec) for s in kept], spec, excluded


def cmd_prepare(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.paired:
        events = synth.load_paired_dataset(args.data)
        by_mod: dict[int, list] = {}
        for ev in events:
            for m, seq in ev.items():
                by_mod.setdefault(m, []).append((ev, m, seq))
        specs = {}
        for m, items in sorted(by_mod.items()):
            processed, spec, _ = _prepare_split([s for _, _, s in items], args)
            specs[str(m)] = dataclasses.asdict(spec)
            for (ev, mod, _), new in zip(items, processed):
                ev[mod] = new
        synth.save_paired_dataset(events, out / "preprocessed.jsonl")
        _write_json(out / "preprocess.json", {
            "seed": args.seed, "command": "prepare --paired", "modalities": specs,
        })
        print(f"wrote {len(events)} preprocessed events to {out / 'preprocessed.jsonl'}")
        return 0
    seqs = load_dataset(args.data)
    processed, spec, excluded = _prepare_split(seqs, args)
    save_dataset(processed, out / "preprocessed.jsonl")
    _write_json(out / "preprocess.json", {
        "seed": args.seed, "command": "prepare",
        "spec": dataclasses.asdict(spec), "n_input": len(seqs),
        "n_kept": len(processed), "n_excluded": excluded,
    })
    print(f"wrote {len(processed)} preprocessed sequences to {out / 'preprocessed.jsonl'}"
          f" ({excluded} excluded)")
    return 0


# ---------------------------------------------------------------------------
# train


def _model_spec_from_config(config: dict, manifest: Manifest | None) -> ModelSpec:
    model = json.loads(json.dumps(config["model"]))
    tok = model["tokenizer"]
    if manifest is not None:
        tok.setdefault("num_channels", manifest.num_channels)
        tok.setdefault("metadata_kinds", manifest.metadata_kinds)
    return ModelSpec(**model)


def _multimodal_spec_from_config(config: dict) -> MultimodalSpec:
    return MultimodalSpec(**json.loads(json.dumps(config["multimodal"])))


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.override:
        config = apply_overrides(config, args.override)
    train_dict = dict(config.get("train", {}))
    if args.seed is not None:
        train_dict["seed"] = args.seed
    cfg = TrainConfig(**train_dict)

    data_cfg = config.get("data", {})
    data_path = args.data or data_cfg.get("path") or _data_default("data.jsonl")
    if data_path is None:
        raise ValidationError("no dataset given: pass --data or set data.path / DAEP_DATA_DIR")
    manifest_path = args.manifest or data_cfg.get("manifest") or _data_default("manifest.json")

    preprocess_dict = None
    pp_path = data_cfg.get("preprocess")
    if pp_path:
        pp = load_config(pp_path)
        preprocess_dict = pp.get("spec", pp.get("modalities"))

    if cfg.multimodal:
        dataset = synth.load_paired_dataset(data_path)
        spec = _multimodal_spec_from_config(config)
        manifest_dict = None
    else:
        dataset = load_dataset(data_path)
        manifest = Manifest.load(manifest_path) if manifest_path and Path(manifest_path).exists() else None
        spec = _model_spec_from_config(config, manifest)
        manifest_dict = None if manifest is None else dataclasses.asdict(manifest)

    model, history = train(dataset, cfg, spec)
    ckpt = make_checkpoint(model, cfg, spec, epoch=cfg.epochs, manifest=manifest_dict)
    if preprocess_dict is not None:
        ckpt.preprocess = preprocess_dict if not cfg.multimodal else None
    save_checkpoint(ckpt, args.out)

    history_path = args.history or str(Path(args.out).with_suffix(".history.csv"))
    with open(history_path, "w") as f:
        f.write(f"# seed={cfg.seed} objective={cfg.objective}\n")
        keys = list(history[0].keys())
        f.write(",".join(keys) + "\n")
        for row in history:
            f.write(",".join(str(row[k]) for k in keys) + "\n")
    print(f"trained {cfg.objective} for {cfg.epochs} epochs; "
          f"final loss {history[-1]['loss']:.6f}; checkpoint at {args.out}")
    return 0


# ---------------------------------------------------------------------------
# reconstruct


def _reconstruct_one(model, objective, seq, sched, args, seed):
    if objective == "daep":
        return model.reconstruct(seq, sched, args.num_steps, seed)
    if objective == "maep":
        return model.reconstruct(seq, seed, unmasked_fraction=args.unmasked_fraction)
    return model.reconstruct(seq)


def cmd_reconstruct(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.multimodal:
        raise ValidationError("reconstruct expects a unimodal checkpoint; use crossmodal")
    model = ckpt.build_model()
    dataset = load_dataset(args.data)
    _check_dataset_matches(ckpt, dataset, args.data)
    sched = ckpt.schedule()
    out = Path(args.out)
    (out / "events").mkdir(parents=True, exist_ok=True)
    table = ResidualTable()
    per_event = []
    limit = len(dataset) if args.limit is None else min(args.limit, len(dataset))
    for i in range(limit):
        seq = dataset[i]
        pred = _reconstruct_one(model, ckpt.objective, seq, sched, args,
                                seed=int(rng_from(args.seed, "reconstruct", i).integers(2**62)))
        table.add_event(i, seq, pred)
        per_event.append(reconstruction_error(seq, pred))
        with open(out / "events" / f"event_{i:05d}.csv", "w") as f:
            f.write(f"# seed={args.seed} event={i}\nposition,channel,true,predicted\n")
            for p, c, t, y in zip(seq.positions, seq.channels, seq.values, pred):
                f.write(f"{p},{c},{t},{y}\n")
    mean, std = aggregate_reconstruction_error(per_event)
    table.write_csv(out / "residuals.csv", header_comment=f"seed={args.seed}")
    _write_json(out / "summary.json", {
        "seed": args.seed, "command": "reconstruct", "objective": ckpt.objective,
        "n_events": limit, "abs_error_mean": mean, "abs_error_std": std,
        "per_event": per_event,
    })
    print(f"reconstruction abs error {mean:.4f} ({std:.4f}) over {limit} events")
    return 0


def _check_dataset_matches(ckpt: Checkpoint, dataset, path):
    spec = ModelSpec(**ckpt.model_spec)
    num_ch = spec.tokenizer.num_channels
    for i, seq in enumerate(dataset):
        if seq.channels.size and seq.channels.max() >= num_ch:
            raise ValidationError(
                f"{path} record {i}: channel id {int(seq.channels.max())} exceeds the "
                f"checkpoint's num_channels={num_ch} (dataset/checkpoint mismatch)"
            )
        for key, _ in seq.metadata:
            if key not in spec.tokenizer.metadata_kinds:
                raise ValidationError(
                    f"{path} record {i}: metadata key {key!r} unknown to the checkpoint"
                )


# ---------------------------------------------------------------------------
# probe


def cmd_probe(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.multimodal:
        raise ValidationError("probe expects a unimodal checkpoint")
    model = ckpt.build_model()
    if args.untrained:
        model = build_model(ckpt.objective, ModelSpec(**ckpt.model_spec), init_seed=args.seed + 1)
    dataset = load_dataset(args.data)
    labels = [seq.label for seq in dataset]
    if any(l is None for l in labels):
        raise ValidationError("probe requires labels on every sequence")
    from daep import autograd as ag

    with ag.no_grad():
        latents = [model.encode(seq).data for seq in dataset]
    report = evalkit.linear_probe(
        latents, labels, num_splits=args.splits, split_fraction=args.fraction,
        seed=args.seed, l2_strength=args.l2,
    )
    _write_json(args.out, {
        "seed": args.seed, "command": "probe", "objective": ckpt.objective,
        "untrained": bool(args.untrained), **dataclasses.asdict(report),
    })
    print(f"probe accuracy {report.accuracy:.3f} ({report.accuracy_std:.3f}), "
          f"macro F1 {report.macro_f1:.3f} ({report.macro_f1_std:.3f}) "
          f"over {report.num_splits} splits")
    return 0


# ---------------------------------------------------------------------------
# crossmodal


def cmd_crossmodal(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if not ckpt.multimodal:
        raise ValidationError("crossmodal expects a multimodal checkpoint")
    model = ckpt.build_model()
    events = synth.load_paired_dataset(args.data)
    sched = ckpt.schedule()
    report = evalkit.crossmodal_eval(
        model, events, args.source, args.target, sched, args.num_steps,
        nominal_level=args.level, num_draws=args.draws, seed=args.seed,
    )
    _write_json(args.out, {
        "seed": args.seed, "command": "crossmodal",
        "source_modality": args.source, "target_modality": args.target,
        "nominal_level": report.nominal_level, "num_draws": report.num_draws,
        "overall_mse": report.overall_mse, "coverage": report.coverage,
        "mean_width": report.mean_width,
        "bins": [dataclasses.asdict(b) for b in report.bins],
    })
    print(f"crossmodal MSE {report.overall_mse:.4f}, coverage {report.coverage:.3f}, "
          f"mean CI width {report.mean_width:.4f}")
    return 0


# ---------------------------------------------------------------------------
# report


def _fmt_row(cols, widths):
    return "  ".join(str(c).ljust(w) for c, w in zip(cols, widths))


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    payload: dict = {"seed": args.seed, "command": "report"}
    if args.reconstruction:
        rows = []
        for path in args.reconstruction:
            s = json.load(open(path))
            name = s.get("label", s.get("objective", Path(path).stem))
            rows.append((name, f"{s['abs_error_mean']:.4f} ({s['abs_error_std']:.4f})"))
        widths = [max(len(str(r[i])) for r in rows + [("method", "abs. reconstruction error")])
                  for i in range(2)]
        lines.append("Reconstruction (mean abs. error over events, std in parens)")
        lines.append(_fmt_row(("method", "abs. reconstruction error"), widths))
        lines.extend(_fmt_row(r, widths) for r in rows)
        lines.append("")
        payload["reconstruction"] = [dict(method=r[0], abs_error=r[1]) for r in rows]
    if args.probe:
        rows = []
        for path in args.probe:
            s = json.load(open(path))
            name = s.get("label", s.get("objective", Path(path).stem))
            if s.get("untrained"):
                name += " (untrained)"
            rows.append((name, f"{s['accuracy']:.3f} ({s['accuracy_std']:.3f})",
                         f"{s['macro_f1']:.3f} ({s['macro_f1_std']:.3f})"))
        header = ("method", "probe accuracy", "probe macro F1")
        widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(3)]
        lines.append(f"Linear probing (mean over splits, std in parens)")
        lines.append(_fmt_row(header, widths))
        lines.extend(_fmt_row(r, widths) for r in rows)
        lines.append("")
        payload["probe"] = [dict(method=r[0], accuracy=r[1], macro_f1=r[2]) for r in rows]
    if args.crossmodal:
        for path in args.crossmodal:
            s = json.load(open(path))
            lines.append(f"Cross-modality inference ({Path(path).stem}): "
                         f"MSE {s['overall_mse']:.4f}, {int(s['nominal_level']*100)}% CI "
                         f"coverage {s['coverage']:.3f}, mean width {s['mean_width']:.4f}")
            header = ("bin", "MSE", "n")
            rows = [(b["label"], f"{b['mse']:.4f}", b["count"]) for b in s["bins"]]
            widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(3)]
            lines.append(_fmt_row(header, widths))
            lines.extend(_fmt_row(r, widths) for r in rows)
            lines.append("")
        payload["crossmodal"] = [json.load(open(p)) for p in args.crossmodal]
    if not lines:
        raise ValidationError("report needs at least one input (--reconstruction/--probe/--crossmodal)")
    text = f"# seed={args.seed}\n" + "\n".join(lines)
    (out / "report.txt").write_text(text)
    _write_json(out / "report.json", payload)
    print(text)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="daep", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--family", choices=synth.FAMILIES, default="spectral_lines")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--length-min", type=int, default=60)
    sp.add_argument("--length-max", type=int, default=120)
    sp.add_argument("--num-channels", type=int, default=1)
    sp.add_argument("--noise-sigma", type=float, default=0.1)
    sp.add_argument("--paired", action="store_true", help="paired two-modality events")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    pp = sub.add_parser("prepare", help="quality-cut, align, fit stats, preprocess")
    pp.add_argument("--data", default=_data_default("data.jsonl"))
    pp.add_argument("--manifest", default=_data_default("manifest.json"))
    pp.add_argument("--out", required=True)
    pp.add_argument("--value-transform", choices=seqdata.VALUE_TRANSFORMS, default="arcsinh")
    pp.add_argument("--sigma-cut", type=float, default=3.0)
    pp.add_argument("--median-filter", type=int, default=0)
    pp.add_argument("--peak-align", action="store_true")
    pp.add_argument("--reference-channel", type=int, default=0)
    pp.add_argument("--paired", action="store_true")
    pp.set_defaults(func=cmd_prepare)

    tp = sub.add_parser("train", help="train a model from a config file")
    tp.add_argument("--config", required=True)
    tp.add_argument("--data", default=None)
    tp.add_argument("--manifest", default=None)
    tp.add_argument("--out", required=True)
    tp.add_argument("--history", default=None)
    tp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    tp.set_defaults(func=cmd_train)

    rp = sub.add_parser("reconstruct", help="reconstruct a dataset from a checkpoint")
    rp.add_argument("--checkpoint", required=True)
    rp.add_argument("--data", default=_data_default("data.jsonl"))
    rp.add_argument("--out", required=True)
    rp.add_argument("--num-steps", type=int, default=200)
    rp.add_argument("--unmasked-fraction", type=float, default=0.1)
    rp.add_argument("--limit", type=int, default=None)
    rp.set_defaults(func=cmd_reconstruct)

    qp = sub.add_parser("probe", help="linear probing of frozen latents")
    qp.add_argument("--checkpoint", required=True)
    qp.add_argument("--data", default=_data_default("data.jsonl"))
    qp.add_argument("--out", required=True)
    qp.add_argument("--splits", type=int, default=10)
    qp.add_argument("--fraction", type=float, default=0.3)
    qp.add_argument("--l2", type=float, default=0.0)
    qp.add_argument("--untrained", action="store_true",
                    help="probe a randomly initialized model of the same shape")
    qp.set_defaults(func=cmd_probe)

    cp = sub.add_parser("crossmodal", help="cross-modality inference evaluation")
    cp.add_argument("--checkpoint", required=True)
    cp.add_argument("--data", default=_data_default("paired.jsonl"))
    cp.add_argument("--out", required=True)
    cp.add_argument("--source", type=int, default=0)
    cp.add_argument("--target", type=int, default=1)
    cp.add_argument("--draws", type=int, default=32)
    cp.add_argument("--level", type=float, default=0.9)
    cp.add_argument("--num-steps", type=int, default=50)
    cp.set_defaults(func=cmd_crossmodal)

    gp = sub.add_parser("report", help="aggregate results into summary tables")
    gp.add_argument("--reconstruction", nargs="*", default=[])
    gp.add_argument("--probe", nargs="*", default=[])
    gp.add_argument("--crossmodal", nargs="*", default=[])
    gp.add_argument("--out", required=True)
    gp.set_defaults(func=cmd_report)

    for sub_p in (sp, pp, tp, rp, qp, cp, gp):
        sub_p.add_argument("--seed", type=int, default=None if sub_p is tp else 0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"daep-error category=divergence detail={e}", file=sys.stderr)
        return 4
    except ValidationError as e:
        print(f"daep-error category=validation detail={e}", file=sys.stderr)
        return 2
    except (DaepError, OSError, KeyError, TypeError) as e:
        print(f"daep-error category=runtime detail={type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
