"""Command-line entry point.

Subcommands: train, eval, ablate, sweep-alpha, synth, export-weights, bench.
Exit codes: 0 success, 2 usage/config, 3 I/O or data, 4 integrity,
5 divergence.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import FIELDS, TrainConfig, _coerce, config_to_dict, env_overrides, \
    parse_config_file, resolve_config
from .data import load_dataset
from .errors import ConfigError, DivergenceError, GenerationError, IntegrityError, \
    ParseError
from .synthetic import generate_synthetic, load_spec, write_dataset
from .training import bench, evaluate, export_agb_weights, frequency_baseline, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INTEGRITY = 4
EXIT_DIVERGENCE = 5

DEFAULT_ALPHA_GRID = (1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 0.1)


def _add_config_flags(parser):
    for name, f in FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if isinstance(f.default, bool):
            parser.add_argument(flag, dest=name, default=None,
                                type=str, metavar="BOOL")
        else:
            parser.add_argument(flag, dest=name, default=None,
                                type=type(f.default))


def _flag_values(args):
    values = {}
    for name, f in FIELDS.items():
        raw = getattr(args, name, None)
        if raw is None:
            continue
        values[name] = _coerce(name, raw) if isinstance(f.default, bool) else raw
    return values


def _resolve(args):
    file_values = parse_config_file(args.config) if args.config else None
    return resolve_config(file_values, env_overrides(), _flag_values(args))


def _fingerprint(data_dir):
    lines = []
    for split in ("train", "valid", "test"):
        path = os.path.join(data_dir, f"{split}.txt")
        digest = hashlib.sha256()
        with open(path, "rb") as fh:
            digest.update(fh.read())
        lines.append(f"{split}:{os.path.getsize(path)}:{digest.hexdigest()}")
    return ";".join(lines)


def _new_run_dir(path):
    if os.path.exists(path):
        raise FileExistsError(f"run directory already exists: {path}")
    os.makedirs(path)
    return path


def _write_manifest(run_dir, cfg, data_dir):
    lines = ["format=lgre-run-manifest-1",
             f"tool_version={__version__}",
             f"data_dir={os.path.abspath(data_dir)}",
             f"dataset_fingerprint={_fingerprint(data_dir)}",
             "checkpoint=checkpoint",
             "epoch_log=epochs.jsonl"]
    lines += [f"config.{k}={v}" for k, v in sorted(config_to_dict(cfg).items())]
    with open(os.path.join(run_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    cfg_values, data_dir = {}, None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("config."):
                key, _, raw = line[len("config."):].partition("=")
                if key not in FIELDS:
                    raise ConfigError(f"manifest has unknown config key {key!r}")
                cfg_values[key] = _coerce(key, raw)
            elif line.startswith("data_dir="):
                data_dir = line.partition("=")[2]
    if data_dir is None:
        raise ConfigError(f"manifest {path} is missing data_dir")
    return TrainConfig(**cfg_values).validate(), data_dir


def _vocab_sizes(dataset):
    v = dataset.vocab
    return {"entity": len(v.entity), "relation": len(v.relation),
            "timestamp": len(v.timestamp), "year": len(v.year),
            "month": len(v.month), "day": len(v.day)}


def _print_report(report, header):
    print(header)
    print(f"  {'':10s} {'MRR':>8s} {'H@1':>8s} {'H@3':>8s} {'H@10':>8s} {'n':>8s}")
    print(f"  {'overall':10s} {report.mrr:8.4f} {report.hits1:8.4f} "
          f"{report.hits3:8.4f} {report.hits10:8.4f} {report.count:8d}")
    for direction, m in report.by_direction.items():
        print(f"  {direction:10s} {m['mrr']:8.4f} {m['hits1']:8.4f} "
              f"{m['hits3']:8.4f} {m['hits10']:8.4f} {m['count']:8d}")


def cmd_train(args):
    if args.from_manifest:
        cfg, data_dir = read_manifest(args.from_manifest)
    else:
        if not args.data:
            raise ConfigError("train needs --data (or --from-manifest)")
        cfg, data_dir = _resolve(args), args.data
    dataset = load_dataset(data_dir, cfg.granularity)
    run_dir = _new_run_dir(args.run_dir)
    _write_manifest(run_dir, cfg, data_dir)
    result = train(cfg, dataset, run_dir=run_dir, quiet=args.quiet)
    print(f"run directory: {run_dir}")
    if result.records:
        last = result.records[-1]
        print(f"epochs: {len(result.records)}, final total loss {last['total']:.6f}, "
              f"best validation MRR {result.best_val_mrr:.4f}")
    else:
        print("epochs: 0 (initialized checkpoint written)")
    return EXIT_OK


def cmd_eval(args):
    params, cfg, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data, cfg.granularity)
    filter_mode = args.filter or cfg.eval_filter
    report = evaluate(params, cfg, dataset, split=args.split,
                      filter_mode=filter_mode, workers=args.workers)
    _print_report(report, f"split={args.split} filter={filter_mode}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
    if args.ranks_csv:
        with open(args.ranks_csv, "w", encoding="utf-8") as fh:
            fh.write("rank,direction\n")
            for rank, direction in zip(report.ranks, report.directions):
                fh.write(f"{rank},{direction}\n")
    return EXIT_OK


ABLATION_VARIANTS = ("full", "no_ru", "no_agb", "no_tl")


def cmd_ablate(args):
    base = _resolve(args)
    dataset = load_dataset(args.data, base.granularity)
    run_dir = _new_run_dir(args.run_dir)
    results = {}
    for variant in ABLATION_VARIANTS:
        cfg = dataclasses.replace(base, no_ru=False, no_agb=False, no_tl=False)
        if variant != "full":
            cfg = dataclasses.replace(cfg, **{variant: True})
        sub = os.path.join(run_dir, variant)
        os.makedirs(sub)
        _write_manifest(sub, cfg, args.data)
        try:
            outcome = train(cfg, dataset, run_dir=sub, quiet=True)
        except DivergenceError as exc:
            print(f"variant {variant} diverged: {exc}", file=sys.stderr)
            continue
        report = evaluate(outcome.best_params, cfg, dataset, split=args.split,
                          filter_mode=cfg.eval_filter)
        results[variant] = report
    if len(results) < 2:
        raise ConfigError(
            f"only {len(results)} variant(s) completed; need at least 2 to tabulate")
    print(f"{'variant':10s} {'MRR':>8s} {'H@1':>8s} {'H@3':>8s}")
    for variant in ABLATION_VARIANTS:
        if variant in results:
            r = results[variant]
            print(f"{variant:10s} {r.mrr:8.4f} {r.hits1:8.4f} {r.hits3:8.4f}")
    with open(os.path.join(run_dir, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump({v: r.to_dict() for v, r in results.items()}, fh, indent=2)
    return EXIT_OK


def cmd_sweep_alpha(args):
    if args.alphas is not None:
        try:
            grid = [float(a) for a in args.alphas.split(",") if a.strip() != ""]
        except ValueError as exc:
            raise ConfigError(f"bad --alphas list {args.alphas!r}") from exc
    else:
        grid = list(DEFAULT_ALPHA_GRID)
    if not grid:
        raise ConfigError("alpha grid is empty")
    base = _resolve(args)
    dataset = load_dataset(args.data, base.granularity)
    run_dir = _new_run_dir(args.run_dir)
    rows = []
    for alpha in grid:
        cfg = dataclasses.replace(base, alpha=alpha)
        sub = os.path.join(run_dir, f"alpha={alpha:g}")
        os.makedirs(sub)
        _write_manifest(sub, cfg, args.data)
        outcome = train(cfg, dataset, run_dir=sub, quiet=True)
        val = evaluate(outcome.best_params, cfg, dataset, split="valid",
                       filter_mode=cfg.eval_filter).mrr
        rows.append({"alpha": alpha, "val_mrr": val})
    best = max(range(len(rows)), key=lambda i: rows[i]["val_mrr"])
    print(f"{'alpha':>10s} {'val MRR':>10s}")
    for i, row in enumerate(rows):
        marker = "  <- best" if i == best else ""
        print(f"{row['alpha']:10g} {row['val_mrr']:10.4f}{marker}")
    with open(os.path.join(run_dir, "sweep.json"), "w", encoding="utf-8") as fh:
        json.dump({"rows": rows, "best_alpha": rows[best]["alpha"]}, fh, indent=2)
    return EXIT_OK


def cmd_synth(args):
    spec = load_spec(args.spec)
    rows, rules = generate_synthetic(spec, args.seed)
    write_dataset(args.out, rows, rules)
    print(f"wrote {len(rows)} facts to {args.out} "
          f"(train/valid/test + rules.txt)")
    return EXIT_OK


def cmd_export_weights(args):
    params, cfg, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data, cfg.granularity)
    export_agb_weights(params, cfg, dataset, args.split, args.out)
    print(f"wrote granularity weights to {args.out}")
    return EXIT_OK


def cmd_bench(args):
    cfg = _resolve(args)
    dataset = load_dataset(args.data, cfg.granularity)
    report = bench(cfg, dataset, steps=args.steps)
    print(f"{'batch':>8s} {'sec/step':>12s}")
    for row in report["rows"]:
        print(f"{row['batch_size']:8d} {row['seconds_per_step']:12.6f}")
    print(f"growth exponent: {report['growth_exponent']:.3f} "
          "(about 1.0 means linear in batch size)")
    print(f"parameter count: {report['parameter_count']}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lgre",
        description="Temporal knowledge graph completion with multi-granularity "
                    "time representations")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--data", help="dataset directory (train/valid/test.txt)")
    p_train.add_argument("--config", help="flat key=value config file")
    p_train.add_argument("--run-dir", required=True)
    p_train.add_argument("--from-manifest", help="reproduce a previous run")
    p_train.add_argument("--quiet", action="store_true", default=False)
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p_eval.add_argument("--filter", choices=("raw", "static", "time_aware"))
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.add_argument("--json", help="write the full report as JSON")
    p_eval.add_argument("--ranks-csv", help="write per-query ranks as CSV")
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="train full/no_ru/no_agb/no_tl and compare")
    p_ablate.add_argument("--data", required=True)
    p_ablate.add_argument("--config")
    p_ablate.add_argument("--run-dir", required=True)
    p_ablate.add_argument("--split", default="test", choices=("train", "valid", "test"))
    _add_config_flags(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_sweep = sub.add_parser("sweep-alpha", help="grid search the temporal coefficient")
    p_sweep.add_argument("--data", required=True)
    p_sweep.add_argument("--config")
    p_sweep.add_argument("--run-dir", required=True)
    p_sweep.add_argument("--alphas", help="comma-separated values; default grid")
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep_alpha)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--spec", required=True)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth)

    p_export = sub.add_parser("export-weights", help="dump per-query granularity weights")
    p_export.add_argument("--checkpoint", required=True)
    p_export.add_argument("--data", required=True)
    p_export.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p_export.add_argument("--out", required=True)
    p_export.set_defaults(func=cmd_export_weights)

    p_bench = sub.add_parser("bench", help="time training steps across batch sizes")
    p_bench.add_argument("--data", required=True)
    p_bench.add_argument("--config")
    p_bench.add_argument("--steps", type=int, default=5)
    p_bench.add_argument("--json")
    _add_config_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except IntegrityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
