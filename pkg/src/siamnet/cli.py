"""Command-line front door: split generation, training, evaluation,
gradient checking, filter export, synthetic data.

Exit codes: 0 success, 1 usage, 2 data/protocol, 3 numerical failure.
Every run echoes its effective configuration to
<out-dir>/<command>_config.json; rerunning with --config <that file>
reproduces the run.
"""

import argparse
import json
import os
import sys
from pathlib import Path

from . import dataio, evaluate, gradcheck, network, synth, trainer, viz
from .errors import (
    DataError,
    DimensionError,
    NumericalError,
    UsageError,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_MODE_NAMES = {"general": "general", "specific": "view_specific"}


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(message)


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("SIAMNET_THREADS", "1")))
    except ValueError:
        return 1


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(args) -> None:
    effective = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    path = _out_dir(args) / f"{args.command}_config.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(effective, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _net_config(args) -> network.NetConfig:
    return network.NetConfig(
        image_w=args.image_width,
        c1_channels=args.c1_channels,
        c3_channels=args.c3_channels,
        feature_dim=args.feature_dim,
    )


def cmd_split(args) -> int:
    _require(args, "manifest")
    rows = dataio.read_manifest_rows(args.manifest)
    out = _out_dir(args)
    for repeat in range(args.repeats):
        spec = dataio.SplitSpec(args.protocol, repeat=repeat, seed=args.seed)
        train, probe, gallery = dataio.make_split(rows, spec)
        path = out / f"split_{repeat:02d}.csv"
        dataio.write_split_csv(path, train, probe, gallery)
        print(f"wrote {path} (train={len({r.subject_id for r in train})} subjects, "
              f"probe={len(probe)}, gallery={len(gallery)})")
    _echo_config(args)
    return EXIT_OK


def cmd_train(args) -> int:
    _require(args, "manifest", "split", "model_out")
    dataset = dataio.load_manifest(args.manifest, width=args.image_width,
                                   threads=args.threads)
    train_subjects, _, _ = dataio.read_split_csv(args.split)
    train_set = [im for im in dataset if im.subject_id in train_subjects]
    if args.mirror:
        train_set = dataio.augment_with_mirrors(train_set)
    config = trainer.TrainConfig(
        alpha=args.alpha, beta=args.beta, negative_cost=args.neg_cost,
        batch_size=args.batch_size, epochs=args.epochs,
        learning_rate=args.lr, momentum=args.momentum,
        weight_decay=args.weight_decay, seed=args.seed,
        cost_kind=args.cost, mode=_MODE_NAMES[args.mode])
    out = _out_dir(args)

    def log(rec):
        dev = "" if rec.dev_cost is None else f" dev={rec.dev_cost:.6f}"
        print(f"epoch {rec.epoch}: cost={rec.train_cost:.6f}{dev} "
              f"({rec.seconds:.1f}s)")

    params, records = trainer.train(config, train_set,
                                    net_config=_net_config(args), log=log)
    network.save(params, args.model_out)
    trainer.write_epoch_csv(out / args.epoch_csv, records)
    print(f"wrote {args.model_out} and {out / args.epoch_csv}")
    _echo_config(args)
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args, "models", "manifest", "split")
    models = [network.load(p) for p in args.models.split(",")]
    dataset = dataio.load_manifest(args.manifest, width=args.image_width,
                                   threads=args.threads)
    out = _out_dir(args)
    curves = []
    for si, split_path in enumerate(args.split):
        _, probe, gallery = dataio.resolve_split(dataset, split_path)
        table = evaluate.score_set(models, probe, gallery,
                                   use_mirror_fusion=args.mirror_fusion,
                                   threads=args.threads)
        if args.dump_scores:
            evaluate.write_score_csv(out / f"scores_split_{si}.csv", table)
        curves.append(evaluate.cmc(table))
    agg = evaluate.aggregate_splits(curves)
    evaluate.write_cmc_csv(out / args.cmc_out, agg)
    shown = ", ".join(f"rank-{k}={agg.rate(k):.4f}"
                      for k in (1, 5, 10) if k <= len(agg.rates))
    print(f"wrote {out / args.cmc_out}; {shown}")
    _echo_config(args)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results, passed = gradcheck.run_suite(args.module, args.trials, args.seed)
    worst_name, worst_margin = None, -1.0
    for name, err, thr in results:
        status = "PASS" if err < thr else "FAIL"
        print(f"{name:32s} max_rel_err={err:.3e} threshold={thr:.0e} {status}")
        if err / thr > worst_margin:
            worst_name, worst_margin = name, err / thr
    _echo_config(args)
    if not passed:
        print(f"worst offender: {worst_name}", file=sys.stderr)
        raise NumericalError(f"gradient check failed: {worst_name}")
    return EXIT_OK


def cmd_filters(args) -> int:
    _require(args, "model")
    params = network.load(args.model)
    out = _out_dir(args) / args.out
    viz.save_filter_grid(params, out)
    print(f"wrote {out}")
    _echo_config(args)
    return EXIT_OK


def cmd_synth(args) -> int:
    manifest = synth.write_synthetic_dataset(
        _out_dir(args), n_subjects=args.subjects, seed=args.seed,
        height=args.height, width=args.width)
    print(f"wrote {manifest}")
    _echo_config(args)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help="worker threads for data loading/scoring "
                             "(default: $SIAMNET_THREADS or 1)")
    common.add_argument("--out-dir", default=".")
    common.add_argument("--config", default=None,
                        help="JSON config echo file to take defaults from")

    parser = _Parser(prog="siamnet")
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {}

    p = sub.add_parser("split", parents=[common],
                       help="generate train/probe/gallery split files")
    p.add_argument("--manifest")
    p.add_argument("--protocol", choices=("viper_style", "prid_style"),
                   default="viper_style")
    p.add_argument("--repeats", type=int, default=11)
    p.set_defaults(func=cmd_split)
    parsers["split"] = p

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--cost", choices=("deviance", "fisher"), default="deviance")
    p.add_argument("--mode", choices=("general", "specific"), default="general")
    p.add_argument("--neg-cost", type=float, default=2.0)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=180)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--model-out")
    p.add_argument("--epoch-csv", default="train_epochs.csv")
    p.add_argument("--mirror", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--image-width", type=int, choices=(40, 48), default=48)
    p.add_argument("--c1-channels", type=int, default=64)
    p.add_argument("--c3-channels", type=int, default=64)
    p.add_argument("--feature-dim", type=int, default=500)
    p.set_defaults(func=cmd_train)
    parsers["train"] = p

    p = sub.add_parser("eval", parents=[common], help="score splits and emit CMC")
    p.add_argument("--models", help="comma-separated model files (summed)")
    p.add_argument("--manifest")
    p.add_argument("--split", nargs="+")
    p.add_argument("--mirror-fusion", action=argparse.BooleanOptionalAction,
                   default=True)
    p.add_argument("--image-width", type=int, choices=(40, 48), default=48)
    p.add_argument("--cmc-out", default="cmc.csv")
    p.add_argument("--dump-scores", action="store_true")
    p.set_defaults(func=cmd_eval)
    parsers["eval"] = p

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference verification suites")
    p.add_argument("--module", choices=("layers", "pairwise", "fullnet"),
                   default="pairwise")
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    parsers["gradcheck"] = p

    p = sub.add_parser("filters", parents=[common],
                       help="export the C1 filter grid as PNG")
    p.add_argument("--model")
    p.add_argument("--out", default="filters.png")
    p.set_defaults(func=cmd_filters)
    parsers["filters"] = p

    p = sub.add_parser("synth", parents=[common],
                       help="write a synthetic two-camera dataset")
    p.add_argument("--subjects", type=int, default=40)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=48)
    p.set_defaults(func=cmd_synth)
    parsers["synth"] = p

    return parser, parsers


def _parse(argv):
    parser, parsers = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"bad config file {args.config}: {exc}") from exc
        command = loaded.pop("command", args.command)
        if command != args.command:
            raise UsageError(
                f"config file is for {command!r}, not {args.command!r}")
        parsers[command].set_defaults(**loaded)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = _parse(argv)
        return args.func(args)
    except _ArgumentError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
