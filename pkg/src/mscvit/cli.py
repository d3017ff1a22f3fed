"""Command-line entry points: train, eval, inspect, gradcheck.

Exit codes: 0 success, 1 failed gradient check, 2 configuration error,
3 data or checkpoint error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import data as D
from .checkpoint import CheckpointError
from .gradcheck import TOLERANCE, run_suite
from .model import (
    ConfigError,
    apply_overrides,
    build_model,
    config_to_text,
    count_params,
    estimate_flops,
    load_config,
    param_breakdown,
    variant_config,
)
from .train import (
    TrainConfig,
    checkpoint_config,
    evaluate_top1,
    load_checkpoint,
    train_epochs,
)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3

DATASET_CLASSES = {"cifar10": 10, "cifar100": 100}
_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


class DataError(Exception):
    pass


def _split_overrides(pairs):
    model, train = {}, {}
    for item in pairs or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key = key.strip()
        if key.startswith("train."):
            train[key[len("train."):]] = value.strip()
        else:
            model[key] = value.strip()
    return model, train


def _train_config(args, overrides):
    fields = {}
    for key, raw in overrides.items():
        if key not in _TRAIN_KEYS or key in ("betas",):
            raise ConfigError(f"unknown config key 'train.{key}'")
        default = getattr(TrainConfig, key)
        kind = type(default)
        if kind is bool:
            fields[key] = raw.lower() in ("on", "true", "1", "yes")
        else:
            try:
                fields[key] = kind(raw)
            except ValueError:
                raise ConfigError(f"bad value {raw!r} for train.{key}") from None
    if args.epochs is not None:
        fields["epochs"] = args.epochs
    if args.batch_size is not None:
        fields["batch_size"] = args.batch_size
    fields["seed"] = args.seed
    epochs = fields.get("epochs", TrainConfig.epochs)
    if "warmup_epochs" not in fields:
        # short runs keep the warmup below the run length
        fields["warmup_epochs"] = min(TrainConfig.warmup_epochs, epochs - 1)
    try:
        return TrainConfig(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _model_config(args, num_classes):
    res = args.res
    if args.config:
        try:
            cfg = load_config(args.config, variant_config(args.variant, res, num_classes))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    else:
        cfg = variant_config(args.variant, res, num_classes)
    flags = {}
    if getattr(args, "attention", None):
        flags["attention"] = args.attention
    for name in ("use_pe", "lfe", "cff"):
        value = getattr(args, name, None)
        if value is not None:
            flags[name] = value
    model_over, _ = _split_overrides(getattr(args, "set", None))
    if "num_classes" not in model_over:
        model_over["num_classes"] = str(num_classes)
    merged = {**flags, **model_over}
    return apply_overrides(cfg, merged)


def _load_dataset(args):
    name = args.dataset
    if name == "synth":
        train = D.synth_dataset(args.synth_classes, args.synth_per_class, seed=args.seed)
        test = D.synth_dataset(args.synth_classes, max(1, args.synth_per_class // 4), seed=args.seed + 1)
        return train, test, args.synth_classes
    if not args.data_dir or not os.path.isdir(args.data_dir):
        raise DataError(f"data directory not found: {args.data_dir!r}")
    try:
        if name == "cifar10":
            train, test = D.load_cifar10(args.data_dir)
        else:
            train, test = D.load_cifar100(args.data_dir)
    except FileNotFoundError as exc:
        raise DataError(f"missing dataset file: {exc.filename}") from None
    except D.DataFormatError as exc:
        raise DataError(str(exc)) from None
    if args.subset:
        train = D.subset(train, args.subset, seed=args.seed)
    return train, test, DATASET_CLASSES[name]


def _echo_config(args, text):
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "config.txt"), "w") as fh:
            fh.write(text)
    else:
        sys.stderr.write("".join(f"# {line}\n" for line in text.splitlines()))


def cmd_train(args):
    _, train_over = _split_overrides(args.set)
    tcfg = _train_config(args, train_over)
    train, test, classes = _load_dataset(args)
    cfg = _model_config(args, classes)
    if cfg.num_classes != classes:
        raise ConfigError(f"model has {cfg.num_classes} classes, dataset {args.dataset} has {classes}")
    echo = config_to_text(cfg) + "".join(
        f"train.{k} = {v}\n" for k, v in dataclasses.asdict(tcfg).items()
    )
    _echo_config(args, echo)
    model = build_model(cfg, seed=args.seed)
    print(f"training {cfg.variant} at {cfg.resolution}px on {len(train)} images, "
          f"{count_params(model):,} parameters", flush=True)

    def log(rec):
        print(json.dumps(rec), flush=True)

    train_epochs(model, train, test, tcfg, out_dir=args.out, log=log)
    return EXIT_OK


def cmd_eval(args):
    if not args.checkpoint or not os.path.isfile(args.checkpoint):
        raise DataError(f"checkpoint not found: {args.checkpoint!r}")
    try:
        cfg = checkpoint_config(args.checkpoint)
    except CheckpointError as exc:
        raise DataError(str(exc)) from None
    _, test, classes = _load_dataset(args)
    if classes != cfg.num_classes:
        raise ConfigError(
            f"checkpoint model predicts {cfg.num_classes} classes, dataset {args.dataset} has {classes}"
        )
    _echo_config(args, config_to_text(cfg))
    model = build_model(cfg, seed=args.seed)
    try:
        load_checkpoint(model, args.checkpoint)
    except CheckpointError as exc:
        raise DataError(str(exc)) from None
    acc = evaluate_top1(model, test)
    print(json.dumps({"test_top1": acc, "images": len(test)}))
    return EXIT_OK


def _format_report(cfg, model, report):
    lines = [
        f"variant {cfg.variant}  resolution {cfg.resolution}  attention {cfg.attention}  "
        f"classes {cfg.num_classes}",
        f"dims {list(cfg.dims)}",
        f"depths {cfg.depths}",
        "",
        f"{'part':8s} {'res':>5s} {'dim':>5s} {'depth':>5s} {'R':>9s} {'params':>12s} "
        f"{'MFLOPs':>10s} {'MHSA':>10s} {'LMSSA':>10s} {'attn':>10s}",
    ]
    breakdown = param_breakdown(model)
    lines.append(f"{'stem':8s} {cfg.resolution // 2:5d} {cfg.stem_width:5d} {'':5s} {'':9s} "
                 f"{breakdown['stem']:12,d} {report.stem_macs / 1e6:10.2f}")
    for i, (s, r) in enumerate(zip(cfg.stages, cfg.stage_resolutions()), start=1):
        rs = ",".join(str(x) for x in s.reductions)
        lines.append(
            f"{'stage' + str(i):8s} {r:5d} {s.dim:5d} {s.depth:5d} {rs:>9s} "
            f"{breakdown[f'stage{i}']:12,d} {report.stage_macs(i) / 1e6:10.2f} "
            f"{report.stage_mhsa(i) / 1e6:10.2f} {report.stage_lmssa(i) / 1e6:10.2f} "
            f"{report.stage_attention(i) / 1e6:10.2f}"
        )
    lines.append(f"{'head':8s} {'':5s} {cfg.dims[-1]:5d} {'':5s} {'':9s} "
                 f"{breakdown['head']:12,d} {report.head_macs / 1e6:10.2f}")
    lines += [
        "",
        f"total params {report.params:,} ({report.params / 1e6:.2f}M)",
        f"total GFLOPs {report.gflops:.3f} (one multiply-accumulate = one FLOP)",
        f"attention MFLOPs {report.attention_macs / 1e6:.2f} vs analytic LMSSA "
        f"{report.lmssa_total / 1e6:.2f} ({100 * (report.attention_macs / report.lmssa_total - 1):+.2f}%)",
    ]
    return lines


def cmd_inspect(args):
    cfg = _model_config(args, args.num_classes)
    model = build_model(cfg, seed=args.seed)
    report = estimate_flops(model)
    lines = _format_report(cfg, model, report)
    if cfg.attention == "normal":
        light = count_params(build_model(cfg.replace(attention="lightweight"), seed=args.seed))
        gap = 100 * (report.params / light - 1)
        lines.append(f"normal attention: {report.params / 1e6:.2f}M vs lightweight "
                     f"{light / 1e6:.2f}M params ({gap:+.1f}%)")
    print("\n".join(lines))
    _echo_config(args, config_to_text(cfg))
    return EXIT_OK


def cmd_gradcheck(args):
    failed = []

    def report(res):
        status = "ok" if res.passed else "FAIL"
        print(f"{res.name:30s} max rel err {res.error:.2e}  {res.seconds:6.2f}s  {status}", flush=True)
        if not res.passed:
            failed.append(res.name)

    run_suite(seed=args.seed, include_ops=not args.blocks_only, report=report)
    if failed:
        print(f"{len(failed)} check(s) at or above {TOLERANCE:g}: {', '.join(failed)}")
        return EXIT_CHECK
    print(f"all checks below {TOLERANCE:g}")
    return EXIT_OK


def _add_model_flags(p, res_default=32):
    p.add_argument("--variant", default="t", choices=["t", "xs", "s"])
    p.add_argument("--res", type=int, default=res_default, choices=[224, 32])
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field, e.g. stage2.Ck=5 or train.base_lr=1e-3")
    p.add_argument("--attention", choices=["lightweight", "normal"])
    p.add_argument("--use-pe", dest="use_pe", choices=["on", "off"])
    p.add_argument("--lfe", choices=["on", "off"])
    p.add_argument("--cff", choices=["on", "off"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")


def _add_data_flags(p):
    p.add_argument("--dataset", default="synth", choices=["cifar10", "cifar100", "synth"])
    p.add_argument("--data-dir")
    p.add_argument("--subset", type=int, help="train on a seeded subset of this many images")
    p.add_argument("--synth-classes", type=int, default=4)
    p.add_argument("--synth-per-class", type=int, default=64)


def build_parser():
    parser = argparse.ArgumentParser(prog="mscvit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_model_flags(p)
    _add_data_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1 accuracy of a checkpoint on a test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_data_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="per-stage parameter and FLOP table")
    _add_model_flags(p, res_default=224)
    p.add_argument("--num-classes", type=int, default=1000)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every op and block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--blocks-only", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
