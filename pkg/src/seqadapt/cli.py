"""Command-line surface: generate / train / evaluate / gap / project /
gradcheck, all reproducible from a flat key-value config plus overrides."""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import analysis as an
from . import dann as dn
from . import data as dt
from . import encoder as enc
from . import metrics as mx
from . import optim as op
from . import trainer as tr
from . import verify


CONFIG_SCHEMA: dict[str, type] = {
    "gen.n_classes": int,
    "gen.samples_per_class": int,
    "gen.timesteps": int,
    "gen.bands": int,
    "gen.seed": int,
    "gen.gain": float,
    "gen.offset": float,
    "gen.time_shift": int,
    "gen.noise_std": float,
    "train.mode": str,
    "train.batch_size": int,
    "train.seed": int,
    "train.source": str,
    "train.target": str,
    "encoder.d_model": int,
    "encoder.n_layers": int,
    "encoder.n_heads": int,
    "encoder.d_inner": int,
    "encoder.proj_hidden": int,
    "head.hidden": int,
    "schedules.base_lr": float,
    "schedules.lr_decay": float,
    "schedules.lambda_max": float,
    "schedules.gamma": float,
    "schedules.epochs": int,
    "eval.feature_subset": int,
    "eval.subset_seed": int,
    "gap.sigma": float,
}

DEFAULTS: dict[str, object] = {
    "gen.n_classes": 5,
    "gen.samples_per_class": 400,
    "gen.timesteps": 16,
    "gen.bands": 4,
    "gen.seed": 0,
    "gen.gain": 1.15,
    "gen.offset": 0.1,
    "gen.time_shift": 2,
    "gen.noise_std": 0.05,
    "train.mode": "baseline",
    "train.batch_size": 256,
    "train.seed": 0,
    "encoder.d_model": 128,
    "encoder.n_layers": 3,
    "encoder.n_heads": 2,
    "encoder.d_inner": 128,
    "encoder.proj_hidden": 0,
    "head.hidden": 128,
    "schedules.base_lr": 0.001,
    "schedules.lr_decay": 0.99,
    "schedules.lambda_max": 0.2,
    "schedules.gamma": 10.0,
    "schedules.epochs": 250,
    "eval.feature_subset": 10000,
    "eval.subset_seed": 0,
}


class CliError(RuntimeError):
    pass


def parse_config_file(path) -> dict[str, object]:
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise CliError(f"cannot read config {path}: {e}") from e
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value")
        key, _, raw = line.partition("=")
        values[key.strip()] = raw.strip()
    return values


def resolve_config(file_path, overrides: list[str]) -> dict[str, object]:
    """Defaults, then config file, then --set overrides; unknown keys are
    rejected."""
    merged = dict(DEFAULTS)
    raw: dict[str, str] = {}
    if file_path:
        raw.update(parse_config_file(file_path))
    for item in overrides or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        raw[key.strip()] = val.strip()
    for key, val in raw.items():
        if key not in CONFIG_SCHEMA:
            raise CliError(f"unknown config key {key!r}")
        try:
            merged[key] = CONFIG_SCHEMA[key](val)
        except ValueError as e:
            raise CliError(f"bad value for {key}: {e}") from e
    return merged


def write_snapshot(run_dir, config: dict[str, object]):
    with open(os.path.join(run_dir, "resolved-config.txt"), "w",
              encoding="utf-8") as fh:
        for key in sorted(config):
            fh.write(f"{key}={config[key]}\n")


def make_run_dir(args, command: str, seed: int) -> str:
    if args.out:
        run_dir = args.out
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = f"{command}-{stamp}-s{seed}"
    os.makedirs(run_dir, exist_ok=True)
    return run_dir


# ---------------------------------------------------------------------------
# feature dump interchange


def save_features(path, features: np.ndarray, domains, labels):
    d = features.shape[1]
    header = "domain,class," + ",".join(f"f{i}" for i in range(d))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for dom, lab, row in zip(domains, labels, features):
            vals = ",".join(repr(float(v)) for v in row)
            fh.write(f"{int(dom)},{int(lab)},{vals}\n")


def load_features(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as e:
        raise CliError(f"cannot read features {path}: {e}") from e
    if len(lines) < 2 or not lines[0].startswith("domain,class,"):
        raise CliError(f"{path}: not a feature dump")
    domains, labels, rows = [], [], []
    for line in lines[1:]:
        parts = line.split(",")
        domains.append(int(parts[0]))
        labels.append(int(parts[1]))
        rows.append([float(v) for v in parts[2:]])
    return (np.asarray(rows, dtype=np.float64),
            np.asarray(domains, dtype=np.int64),
            np.asarray(labels, dtype=np.int64))


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    config = resolve_config(args.config, args.set)
    run_dir = make_run_dir(args, "generate", config["gen.seed"])
    gen = dt.GeneratorConfig(
        n_classes=config["gen.n_classes"],
        samples_per_class=config["gen.samples_per_class"],
        timesteps=config["gen.timesteps"],
        bands=config["gen.bands"],
        seed=config["gen.seed"],
        shift=dt.DomainShift(gain=config["gen.gain"],
                             offset=config["gen.offset"],
                             time_shift=config["gen.time_shift"],
                             noise_std=config["gen.noise_std"]))
    source, target = dt.generate(gen)
    dt.save(source, os.path.join(run_dir, "source.tdds"))
    dt.save(target, os.path.join(run_dir, "target.tdds"))
    write_snapshot(run_dir, config)
    print(f"source: {len(source)} samples -> {run_dir}/source.tdds")
    print(f"target: {len(target)} samples -> {run_dir}/target.tdds")
    return 0


def _train_config(config: dict[str, object], source: dt.Dataset,
                  out_dir: str) -> tr.TrainConfig:
    encoder = enc.EncoderConfig(
        timesteps=source.timesteps, bands=source.bands,
        d_model=config["encoder.d_model"],
        n_layers=config["encoder.n_layers"],
        n_heads=config["encoder.n_heads"],
        d_inner=config["encoder.d_inner"],
        proj_hidden=config["encoder.proj_hidden"])
    head = dn.HeadConfig(hidden=config["head.hidden"],
                         classes=source.n_classes)
    schedules = op.Schedules(
        base_lr=config["schedules.base_lr"],
        lr_decay=config["schedules.lr_decay"],
        lambda_max=config["schedules.lambda_max"],
        gamma=config["schedules.gamma"],
        epochs=config["schedules.epochs"])
    return tr.TrainConfig(
        mode=config["train.mode"], batch_size=config["train.batch_size"],
        seed=config["train.seed"], encoder=encoder, head=head,
        schedules=schedules, source_path=config.get("train.source"),
        target_path=config.get("train.target"), out_dir=out_dir)


def cmd_train(args) -> int:
    config = resolve_config(args.config, args.set)
    if args.source:
        config["train.source"] = args.source
    if args.target:
        config["train.target"] = args.target
    if args.mode:
        config["train.mode"] = args.mode
    if args.seed is not None:
        config["train.seed"] = args.seed
    if "train.source" not in config:
        raise CliError("train needs a source dataset (--source)")
    source = dt.load(config["train.source"])
    target = None
    if config["train.mode"] == "dann":
        if "train.target" not in config:
            raise CliError("dann mode needs a target dataset (--target)")
        target = dt.load(config["train.target"])

    run_dir = make_run_dir(args, "train", config["train.seed"])
    sweep = [float(v) for v in args.sweep_lambda.split(",")] \
        if args.sweep_lambda else None
    if sweep is None:
        write_snapshot(run_dir, config)
        train_config = _train_config(config, source, run_dir)
        _, log = tr.train(train_config, source, target)
        last = log.records[-1]
        print(f"trained {config['train.mode']} for {len(log.records)} "
              f"epochs; final train accuracy {last.acc_train:.4f}")
        print(f"outputs in {run_dir}")
        return 0
    for lam_max in sweep:
        sub_config = dict(config)
        sub_config["schedules.lambda_max"] = lam_max
        sub_dir = os.path.join(run_dir, f"lambda-{lam_max:g}")
        os.makedirs(sub_dir, exist_ok=True)
        write_snapshot(sub_dir, sub_config)
        train_config = _train_config(sub_config, source, sub_dir)
        _, log = tr.train(train_config, source, target)
        print(f"lambda_max={lam_max:g}: final train accuracy "
              f"{log.records[-1].acc_train:.4f} -> {sub_dir}")
    return 0


def cmd_evaluate(args) -> int:
    config = resolve_config(args.config, args.set)
    model = tr.Model.load(args.checkpoint)
    dataset = dt.load(args.dataset)
    run_dir = make_run_dir(args, "evaluate", config["eval.subset_seed"])
    cm, record, features = tr.evaluate(
        model, dataset, feature_subset=config["eval.feature_subset"],
        subset_seed=config["eval.subset_seed"])
    write_snapshot(run_dir, config)
    report = mx.format_report(record)
    with open(os.path.join(run_dir, "metrics.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(report)
    with open(os.path.join(run_dir, "metrics.csv"), "w",
              encoding="utf-8") as fh:
        fh.write("accuracy,macro_f1,kappa,n\n" + mx.csv_row(record) + "\n")
    np.savetxt(os.path.join(run_dir, "confusion.csv"), cm, fmt="%d",
               delimiter=",")
    if len(features):
        indices = tr.feature_subset_indices(
            len(dataset), config["eval.feature_subset"],
            config["eval.subset_seed"])
        save_features(os.path.join(run_dir, "features.csv"), features,
                      np.full(len(features), dataset.domain_id),
                      dataset.labels[indices].astype(np.int64))
    print(report, end="")
    print(f"outputs in {run_dir}")
    return 0


def cmd_gap(args) -> int:
    config = resolve_config(args.config, args.set)
    feats_a, dom_a, lab_a = load_features(args.features_a)
    feats_b, dom_b, lab_b = load_features(args.features_b)
    kernel = an.KernelConfig(sigma=config["gap.sigma"], mode="fixed") \
        if "gap.sigma" in config else an.KernelConfig()
    report = an.domain_gap_report(feats_a, feats_b, kernel)
    run_dir = make_run_dir(args, "gap", 0)
    write_snapshot(run_dir, config)
    kv = report.key_values()
    with open(os.path.join(run_dir, "gap.txt"), "w", encoding="utf-8") as fh:
        for k, v in kv.items():
            fh.write(f"{k}={v}\n")
    with open(os.path.join(run_dir, "gap.csv"), "w", encoding="utf-8") as fh:
        fh.write(",".join(kv) + "\n")
        fh.write(",".join(str(v) for v in kv.values()) + "\n")
    labels = np.concatenate([lab_a, lab_b])
    for dims, proj in ((2, report.projection_2d), (3, report.projection_3d)):
        with open(os.path.join(run_dir, f"projection-{dims}d.csv"), "w",
                  encoding="utf-8") as fh:
            fh.write(an.projection_csv(proj, report.domains, labels))
    print(f"mmd={report.mmd!r} sigma={report.sigma!r} "
          f"({report.sigma_mode})")
    print(f"outputs in {run_dir}")
    return 0


def cmd_project(args) -> int:
    config = resolve_config(args.config, args.set)
    features, domains, labels = load_features(args.features)
    projected, explained = an.pca_project(features, args.dims)
    run_dir = make_run_dir(args, "project", 0)
    write_snapshot(run_dir, config)
    with open(os.path.join(run_dir, "projection.csv"), "w",
              encoding="utf-8") as fh:
        fh.write(an.projection_csv(projected, domains, labels))
    print("explained variance: "
          + ", ".join(f"{v:.4f}" for v in explained))
    print(f"outputs in {run_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    results = verify.run_suite()
    ok = True
    for name, err, passed in results:
        print(f"{'PASS' if passed else 'FAIL'} {name}: "
              f"max rel err {err:.3e}")
        ok = ok and passed
    print("gradient check " + ("passed" if ok else "FAILED"))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqadapt",
        description="Domain-adversarial transformer for multi-spectral "
                    "time-series classification")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
        p.add_argument("--out", help="run directory (default: "
                                     "<command>-<timestamp>-s<seed>)")

    p = sub.add_parser("generate", help="write a synthetic source/target pair")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a classifier or adversarial pair")
    common(p)
    p.add_argument("--source", help="source dataset path")
    p.add_argument("--target", help="target dataset path (dann mode)")
    p.add_argument("--mode", choices=["baseline", "dann"])
    p.add_argument("--seed", type=int)
    p.add_argument("--sweep-lambda", metavar="V1,V2,...",
                   help="train once per adversarial plateau value")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics + feature dump for a "
                                        "checkpoint on a dataset")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gap", help="MMD + joint PCA between two feature dumps")
    common(p)
    p.add_argument("--features-a", required=True)
    p.add_argument("--features-b", required=True)
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("project", help="PCA-project one feature dump")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--dims", type=int, choices=[2, 3], default=2)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("gradcheck", help="finite-difference check of the op "
                                         "suite and full model")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, tr.TrainingAborted) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
