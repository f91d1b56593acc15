"""Command-line entry point: generate / train / evaluate / mitigate.

Every command persists its resolved configuration next to its outputs, so a
run is fully determined by that file plus the dataset it points at.  Paths
are always taken from arguments; nothing depends on the working directory.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import dataset as dataset_mod
from . import fcn as fcn_mod
from . import metrics as metrics_mod
from . import mitigate as mitigate_mod
from . import train as train_mod
from .config import (
    dump_kv,
    experiment_to_kv,
    load_experiment_config,
)
from .errors import ArimError, ConfigError
from .spectral import range_fft

RESOLVED_NAME = "resolved-config.cfg"
CHECKPOINT_NAME = "checkpoint.fcnw"
STATE_NAME = "train-state.bin"
LOG_NAME = "training-log.csv"


def _write_resolved(out_dir: Path, command: str, kv: dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, **kv}
    (out_dir / RESOLVED_NAME).write_text(dump_kv(payload))


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from exc


def cmd_generate(args) -> int:
    exp = load_experiment_config(args.config)
    manifest = dataset_mod.DatasetManifest(
        generation=exp.generation,
        stft=exp.stft,
        base_seed=args.seed,
        sample_count=args.samples,
        split={},
    )
    out_dir = Path(args.out)
    if args.ood_interferers:
        counts = _int_list(args.ood_interferers)
        manifest = dataset_mod.generate_ood_testset(manifest, counts, args.samples, out_dir)
    else:
        manifest = dataset_mod.generate_dataset(manifest, out_dir)
        if args.validation_fraction > 0:
            manifest = dataset_mod.split_dataset(manifest, args.validation_fraction, args.seed)
            dataset_mod.save_manifest(manifest, out_dir)
    kv = experiment_to_kv(load_experiment_config(args.config))
    kv.update(
        samples=str(args.samples),
        seed=str(args.seed),
        out=str(out_dir),
        ood_interferers=args.ood_interferers or "none",
        validation_fraction=repr(args.validation_fraction),
    )
    _write_resolved(out_dir, "generate", kv)
    split = manifest.split
    print(
        f"generated {manifest.sample_count} samples under {out_dir} "
        f"(seed {manifest.base_seed}; train {len(split.get('train', []))}, "
        f"validation {len(split.get('validation', []))}, test {len(split.get('test', []))})"
    )
    return 0


def _arch_from_args(args, manifest) -> fcn_mod.ArchConfig:
    frames = manifest.stft.frame_count(manifest.radar.samples_per_chirp)
    kwargs = dict(input_frames=frames, n_fft=manifest.stft.n_fft,
                  capacity_scale=args.capacity)
    if args.channels:
        kwargs["block_channels"] = tuple(_int_list(args.channels))
    if args.kernels:
        kwargs["block_kernel_sizes"] = tuple(_int_list(args.kernels))
    if args.convs_per_block:
        kwargs["convs_per_block"] = tuple(_int_list(args.convs_per_block))
        n = len(kwargs["convs_per_block"])
        kwargs["pool_after_block"] = tuple([True] * (n - 1) + [False])
    return fcn_mod.ArchConfig(**kwargs)


def _train_kv(args, cfg: train_mod.TrainConfig) -> dict[str, str]:
    return {
        "data": str(args.data),
        "out": str(args.out),
        "regime": cfg.regime,
        "epochs_stage1": str(cfg.epochs_stage1),
        "epochs_stage2": str(cfg.epochs_stage2),
        "batch_size": str(cfg.batch_size),
        "learning_rate": repr(cfg.learning_rate),
        "weight_decay": repr(cfg.weight_decay),
        "adam_beta1": repr(cfg.adam_beta1),
        "adam_beta2": repr(cfg.adam_beta2),
        "adam_eps": repr(cfg.adam_eps),
        "early_stop_patience": str(cfg.early_stop_patience),
        "dropout_rate": repr(cfg.dropout_rate),
        "noise_reduction_ratio": repr(cfg.noise_reduction_ratio),
        "loss_lambda": repr(args.loss_lambda),
        "seed": str(cfg.seed),
        "capacity": repr(args.capacity),
        "channels": args.channels or "default",
        "kernels": args.kernels or "default",
        "convs_per_block": args.convs_per_block or "default",
    }


def cmd_train(args) -> int:
    manifest = dataset_mod.load_manifest(args.data)
    data = train_mod.TrainingData(manifest)
    cfg = train_mod.TrainConfig(
        epochs_stage1=args.epochs1,
        epochs_stage2=args.epochs2,
        batch_size=args.batch,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        early_stop_patience=args.patience,
        regime=args.regime,
        dropout_rate=args.rate,
        noise_reduction_ratio=args.r,
        seed=args.seed,
    )
    loss_cfg = train_mod.LossConfig(reim_weight=args.loss_lambda)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    arch = _arch_from_args(args, manifest)
    model = fcn_mod.build_fcn(arch, np.random.default_rng(args.seed))

    state = None
    prior_rows: list[train_mod.EpochRow] = []
    state_path = out_dir / STATE_NAME
    if args.resume:
        state = train_mod.load_train_state(model, state_path)
        log_path = out_dir / LOG_NAME
        if log_path.exists():
            prior_rows = _read_log_rows(log_path)

    def on_epoch(model_, state_, row):
        train_mod.save_train_state(model_, state_, state_path)

    result = train_mod.train(
        model, data, cfg, loss_cfg=loss_cfg, on_epoch=on_epoch, state=state
    )
    train_mod.save_train_state(model, result.state, state_path)
    rows = prior_rows + result.log
    (out_dir / LOG_NAME).write_text(
        train_mod.TrainResult(model=model, log=rows, mask=result.mask).log_csv()
    )
    fcn_mod.save_checkpoint(model, out_dir / CHECKPOINT_NAME)
    _write_resolved(out_dir, "train", _train_kv(args, cfg))
    last = rows[-1] if rows else None
    print(
        f"trained {cfg.regime} for {len(rows)} epochs -> {out_dir / CHECKPOINT_NAME}"
        + (f" (final train loss {last.train_loss:.6g})" if last else "")
    )
    return 0


def _read_log_rows(path: Path) -> list[train_mod.EpochRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                train_mod.EpochRow(
                    epoch=int(rec["epoch"]),
                    stage=int(rec["stage"]),
                    train_loss=float(rec["train_loss"]),
                    val_loss=float(rec["val_loss"]),
                    masked_fraction=float(rec["masked_fraction"]),
                    wall_seconds=float(rec["wall_seconds"]),
                )
            )
    return rows


def _method_callables(specs: str, manifest, zero_cfg):
    """Parse 'oracle,zeroing,fcn:<checkpoint>' into named callables."""
    n_fft = manifest.stft.n_fft
    out = []
    for spec in specs.split(","):
        spec = spec.strip()
        if not spec:
            continue
        if spec == "oracle":
            out.append(("oracle", lambda s: mitigate_mod.oracle_profile(s, n_fft)))
        elif spec == "zeroing":
            out.append(
                ("zeroing", lambda s: mitigate_mod.zero_mitigate(s.interfered_signal, zero_cfg, n_fft))
            )
        elif spec.startswith("fcn:"):
            model = fcn_mod.load_checkpoint(spec[4:])
            out.append(
                ("fcn", lambda s, m=model: mitigate_mod.model_mitigate(m, s.interfered_signal, manifest.stft))
            )
        else:
            raise ConfigError(f"unknown method {spec!r}")
    if not out:
        raise ConfigError("no methods requested")
    return out


def cmd_evaluate(args) -> int:
    manifest = dataset_mod.load_manifest(args.data)
    indices = manifest.split.get(args.split, [])
    if args.split == "all":
        indices = list(range(manifest.sample_count))
    if not indices:
        raise ConfigError(f"split {args.split!r} is empty")
    zero_cfg = mitigate_mod.ZeroingConfig(
        detection_factor=args.zero_factor, guard_samples=args.zero_guard
    )
    out_dir = Path(args.out)
    failures = 0
    for name, method in _method_callables(args.methods, manifest, zero_cfg):
        report = metrics_mod.evaluate(
            manifest, method, name, indices,
            tolerance_bins=args.tolerance_bins, guard_bins=args.guard_bins,
        )
        metrics_mod.write_report(report, out_dir, name, group_by_n_int=args.group_by == "n-int")
        _write_roc_csv(report, manifest, name, out_dir, method)
        failures += len(report.failures)
        agg = report.aggregate()
        print(
            f"{name}: n={len(report.records)} auc={agg['auc']:.4f} "
            f"mae_amp={agg['mae_amp_db']:.4f} dB mae_phase={agg['mae_phase_deg']:.4f} deg "
            f"delta_snr={agg['delta_snr_db']:.4f} dB failures={len(report.failures)}"
        )
        for idx, msg in report.failures:
            print(f"  sample {idx} failed: {msg}", file=sys.stderr)
    kv = {
        "data": str(args.data),
        "out": str(args.out),
        "methods": args.methods,
        "split": args.split,
        "zero_factor": repr(args.zero_factor),
        "zero_guard": str(args.zero_guard),
        "tolerance_bins": str(args.tolerance_bins),
        "guard_bins": str(args.guard_bins),
        "group_by": args.group_by or "none",
    }
    _write_resolved(out_dir, "evaluate", kv)
    return 0 if failures == 0 else 1


# pooled ROC curves stay representative with a slice of the dataset
ROC_SAMPLE_CAP = 200


def _write_roc_csv(report, manifest, name, out_dir, method) -> None:
    pooled = []
    n_fft = manifest.stft.n_fft
    for rec in report.records[:ROC_SAMPLE_CAP]:
        sample = dataset_mod.read_sample(manifest, rec.index)
        tb = metrics_mod.target_bins(sample.targets, manifest.radar, n_fft)
        result = method(sample)
        truth = metrics_mod.positive_bin_mask(n_fft, tb, 1)
        pooled.append((np.abs(result.magnitude), truth))
    if pooled:
        (Path(out_dir) / f"{name}-roc.csv").write_text(metrics_mod.roc_curve_csv(pooled))


def cmd_mitigate(args) -> int:
    if args.record:
        sample = dataset_mod.read_record(args.record)
        exp = load_experiment_config(args.config)
        stft_cfg = exp.stft
    else:
        manifest = dataset_mod.load_manifest(args.data)
        sample = dataset_mod.read_sample(manifest, args.index)
        stft_cfg = manifest.stft
    n_fft = stft_cfg.n_fft
    zero_cfg = mitigate_mod.ZeroingConfig(
        detection_factor=args.zero_factor, guard_samples=args.zero_guard
    )
    if args.method == "oracle":
        result = mitigate_mod.oracle_profile(sample, n_fft)
    elif args.method == "zeroing":
        result = mitigate_mod.zero_mitigate(sample.interfered_signal, zero_cfg, n_fft)
    elif args.method.startswith("fcn:"):
        model = fcn_mod.load_checkpoint(args.method[4:])
        result = mitigate_mod.model_mitigate(model, sample.interfered_signal, stft_cfg)
    else:
        raise ConfigError(f"unknown method {args.method!r}")
    before = range_fft(sample.interfered_signal, n_fft)
    out_path = Path(args.out)
    if out_path.parent and not out_path.parent.exists():
        out_path.parent.mkdir(parents=True, exist_ok=True)
    floor = metrics_mod.MAG_FLOOR
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["bin", "before_magnitude_db", "before_phase_deg",
             "after_magnitude_db", "after_phase_deg"]
        )
        after_mag = np.abs(result.magnitude)
        for b in range(n_fft):
            writer.writerow([
                b,
                f"{20 * np.log10(max(abs(before[b]), floor)):.6f}",
                f"{np.degrees(np.angle(before[b])):.6f}",
                f"{20 * np.log10(max(after_mag[b], floor)):.6f}",
                f"{np.degrees(np.angle(result.profile[b])):.6f}",
            ])
    print(f"wrote {n_fft}-bin before/after profile ({result.method}) to {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arim",
        description="FMCW radar interference mitigation: data, training, evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a dataset")
    gen.add_argument("--config", default="desk", help="builtin name (desk/paper) or path")
    gen.add_argument("--out", required=True)
    gen.add_argument("--samples", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--ood-interferers", default="",
                     help="comma-separated interferer counts; forces an all-test set")
    gen.add_argument("--validation-fraction", type=float, default=0.0)
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train an FCN on a generated dataset")
    tr.add_argument("--data", required=True, help="dataset directory (with manifest.json)")
    tr.add_argument("--out", required=True)
    tr.add_argument("--regime", choices=train_mod.REGIMES, default="conventional")
    tr.add_argument("--r", type=float, default=0.3, help="noise reduction ratio (wenort)")
    tr.add_argument("--rate", type=float, default=0.25, help="dropout rate")
    tr.add_argument("--capacity", type=float, default=1.0)
    tr.add_argument("--channels", default="", help="per-block channel counts, e.g. 32,64,96,128")
    tr.add_argument("--kernels", default="", help="per-block kernel sides, e.g. 13,9,5,5")
    tr.add_argument("--convs-per-block", default="", help="e.g. 3,3,2,2")
    tr.add_argument("--epochs1", type=int, default=100)
    tr.add_argument("--epochs2", type=int, default=20)
    tr.add_argument("--batch", type=int, default=16)
    tr.add_argument("--lr", type=float, default=5e-5)
    tr.add_argument("--weight-decay", type=float, default=1e-5)
    tr.add_argument("--patience", type=int, default=10)
    tr.add_argument("--loss-lambda", type=float, default=10.0)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--resume", action="store_true",
                    help="continue from the last epoch's train-state file")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="evaluate mitigation methods")
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--methods", required=True,
                    help="comma-separated: oracle, zeroing, fcn:<checkpoint>")
    ev.add_argument("--split", default="test", choices=("train", "validation", "test", "all"))
    ev.add_argument("--group-by", default="", choices=("", "n-int"))
    ev.add_argument("--zero-factor", type=float, default=4.0)
    ev.add_argument("--zero-guard", type=int, default=2)
    ev.add_argument("--tolerance-bins", type=int, default=1)
    ev.add_argument("--guard-bins", type=int, default=4)
    ev.set_defaults(func=cmd_evaluate)

    mi = sub.add_parser("mitigate", help="write before/after profiles for one sample")
    src = mi.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset directory; pair with --index")
    src.add_argument("--record", help="path to one record file; pair with --config")
    mi.add_argument("--index", type=int, default=0)
    mi.add_argument("--config", default="desk")
    mi.add_argument("--method", required=True, help="oracle, zeroing or fcn:<checkpoint>")
    mi.add_argument("--out", required=True, help="output CSV path")
    mi.add_argument("--zero-factor", type=float, default=4.0)
    mi.add_argument("--zero-guard", type=int, default=2)
    mi.set_defaults(func=cmd_mitigate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ArimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
