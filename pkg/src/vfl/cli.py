"""
Command line entry point: ``vfl <subcommand> ...``.

Exit codes are a stable contract: 0 success, 2 configuration or input error,
3 numerical failure (non-finite loss or gradient).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import os
import sys
from pathlib import Path
from typing import Dict, List, Sequence

from .config import (ConfigError, RunConfig, config_from_items, dataset_config_from_items,
                     parse_kv)
from .data import QUESTION_TYPES, evaluate_model, generate_dataset, save_dataset, split, \
    write_eval_csv
from .experiments import (ResultsWriter, checkpoint_arch, default_jobs, expand,
                          dataset_dims, load_records, predictor, preset_configs, run_one,
                          train, write_checkpoint)
from .models import assign_parameters, load_checkpoint
from .training import TrainingError, build_system, write_loss_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
CATEGORIES = ("all",) + QUESTION_TYPES


class InputError(ValueError):
    """Bad input file or flag combination (exit 2)."""


def _read_items(path) -> Dict[str, str]:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_kv(fh.read())
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None


def _run_config(args) -> RunConfig:
    cfg = config_from_items(_read_items(args.config))
    if getattr(args, "metric", None):
        cfg = cfg.replace(metric=args.metric).validate()
    return cfg


def _print_breakdown(b, header="validation") -> None:
    print(f"{header}: all={b.all:.2f} yes_no={b.yes_no:.2f} number={b.number:.2f} "
          f"other={b.other:.2f}")


# ------------------------------------------------------------------ commands
def cmd_gen_data(args) -> int:
    cfg = dataset_config_from_items(_read_items(args.config))
    records = generate_dataset(cfg)
    out = args.out or "dataset.jsonl"
    save_dataset(records, out)
    counts = {t: 0 for t in QUESTION_TYPES}
    for r in records:
        counts[r.question_type] += 1
    print(f"records: {len(records)}")
    for t in QUESTION_TYPES:
        print(f"{t}: {counts[t]}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    result = train(cfg)
    write_checkpoint(result, out / "model.ckpt")
    write_loss_csv(result.loss_rows, out / "loss.csv", result.loss_header)
    print(f"method={cfg.method} steps={cfg.steps} seed={cfg.seed}")
    if result.breakdown is not None:
        write_eval_csv(result.breakdown, out / "eval.csv")
        _print_breakdown(result.breakdown)
    print(f"wrote {out / 'model.ckpt'} and {out / 'loss.csv'}")
    return EXIT_OK


def _system_from_checkpoint(path):
    ckpt = load_checkpoint(path)
    cfg = config_from_items(parse_kv(ckpt.config_text), apply_env=False)
    if ckpt.arch != checkpoint_arch(cfg):
        raise InputError(f"checkpoint arch {ckpt.arch!r} does not match its stored config")
    records = load_records(cfg)
    if cfg.dataset:
        d_i, vocab, K = dataset_dims(records)
        vocab, K = max(vocab, cfg.data.vocab), max(K, cfg.data.K)
    else:
        d_i, vocab, K = cfg.data.d_i, cfg.data.vocab, cfg.data.K
    system = build_system(cfg, d_i, vocab, K)
    assign_parameters(system.parameters(), ckpt.tensors)
    return cfg, system, records


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise InputError("eval needs --checkpoint")
    cfg, system, records = _system_from_checkpoint(args.checkpoint)
    if args.config:
        # evaluate on a different dataset than the one the model was trained on
        other = config_from_items(_read_items(args.config))
        records = load_records(other)
    metric = args.metric or cfg.metric
    _, valid = split(records, cfg.valid_fraction)
    if not valid:
        raise InputError("validation split is empty")
    b = evaluate_model(predictor(system, cfg.seed), valid, metric)
    _print_breakdown(b, f"validation ({metric})")
    if args.out:
        write_eval_csv(b, args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def _parse_seeds(text: str | None) -> List[int] | None:
    if not text:
        return None
    try:
        seeds = [int(s) for s in text.replace(" ", "").split(",") if s]
    except ValueError:
        raise InputError(f"--seeds must be comma-separated integers, got {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise InputError("--seeds must list non-negative integers")
    return seeds


def ablation_configs(items: Dict[str, str], preset: str | None = None):
    """Configs and seeds described by an ablation file.

    Plain keys set the base config.  ``grid.<key> = a | b | c`` adds an axis
    to the cross product; ``preset = table1`` starts from a built-in grid;
    ``seeds = 0,1,2`` sets the seed list.
    """
    items = dict(items)
    seeds = _parse_seeds(items.pop("seeds", None))
    preset = preset or items.pop("preset", None)
    items.pop("preset", None)
    axes = {k[5:]: [v.strip() for v in raw.split("|") if v.strip()]
            for k, raw in items.items() if k.startswith("grid.")}
    base_items = {k: v for k, v in items.items() if not k.startswith("grid.")}
    for key, values in axes.items():
        if not values:
            raise ConfigError(f"grid.{key}", "axis has no values")
    base = config_from_items(base_items, apply_env=False)
    starts = preset_configs(preset, base) if preset else [base]
    configs = []
    for start in starts:
        for combo in itertools.product(*axes.values()):
            changes = dict(zip(axes.keys(), combo))
            configs.append(config_from_items(changes, base=start, apply_env=False))
    if not configs:
        raise ConfigError("grid", "ablation is empty")
    return configs, seeds


def cmd_ablate(args) -> int:
    items = _read_items(args.config)
    if not items and not args.preset:
        raise InputError("ablate needs --config or --preset")
    configs, file_seeds = ablation_configs(items, args.preset)
    if args.metric:
        configs = [c.replace(metric=args.metric).validate() for c in configs]
    seeds = _parse_seeds(args.seeds) or file_seeds
    if seeds is None:
        env = os.environ.get("VFL_SEED")
        seeds = [int(env)] if env else [configs[0].seed]
    runs = expand(configs, seeds)
    out = args.out or "results.csv"
    sink = ResultsWriter(out)
    jobs = args.jobs if args.jobs is not None else default_jobs()
    if jobs < 1:
        raise InputError("--jobs must be at least 1")
    print(f"{len(runs)} runs ({len(configs)} configs x {len(seeds)} seeds), {jobs} worker(s)")
    if jobs == 1 or len(runs) == 1:
        rows = map(run_one, runs)
        pool = None
    else:
        from concurrent.futures import ProcessPoolExecutor
        pool = ProcessPoolExecutor(max_workers=jobs)
        rows = pool.map(run_one, runs)
    try:
        for i, row in enumerate(rows, start=1):
            sink.append(row)
            score = f"{row['all']:.2f}" if row["status"] == "ok" else row["status"]
            print(f"[{i}/{len(runs)}] {row['method']} {row['arch']} {row['noise']} "
                  f"{row['init']} G={row['pretrain_G']} D={row['pretrain_D']} "
                  f"{row['combiner']} seed={row['seed']}: {score}")
    finally:
        if pool is not None:
            pool.shutdown()
    print(f"wrote {out}")
    return EXIT_OK


def _row_label(row: Dict[str, str]) -> str:
    parts = [row["method"]]
    for key, tag in (("arch", ""), ("noise", ""), ("init", ""), ("pretrain_G", "G"),
                     ("pretrain_D", "D"), ("combiner", "")):
        value = row.get(key, "-")
        if value not in ("-", ""):
            parts.append(f"{tag}{value}")
    parts.append(f"s{row['seed']}")
    return "-".join(parts)


def read_results(path) -> List[Dict[str, str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    needed = ("method", "seed") + CATEGORIES
    missing = [c for c in needed if c not in header]
    if not header:
        raise InputError(f"{path} is empty")
    if missing:
        raise InputError(f"{path} lacks columns: {', '.join(missing)}")
    if not rows:
        raise InputError(f"{path} has no result rows")
    return rows


def cmd_plot_data(args) -> int:
    if not args.results:
        raise InputError("plot-data needs a results CSV")
    rows = read_results(args.results)
    out = Path(args.out or "plots")
    out.mkdir(parents=True, exist_ok=True)
    for cat in CATEGORIES:
        path = out / f"{cat}.dat"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# index label {cat}\n")
            for i, row in enumerate(rows):
                value = row[cat] if row[cat] != "" else "NaN"
                fh.write(f'{i} "{_row_label(row)}" {value}\n')
        print(f"wrote {path}")
    for loss_path in args.loss or []:
        try:
            with open(loss_path, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                header = next(reader, None)
                body = list(reader)
        except OSError as exc:
            raise InputError(f"cannot read {loss_path}: {exc.strerror}") from None
        if not header or header[0] != "step":
            raise InputError(f"{loss_path} is not a loss log (first column must be 'step')")
        path = out / f"loss_{Path(loss_path).stem}.dat"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# " + " ".join(header) + "\n")
            for line in body:
                fh.write(" ".join(line) + "\n")
        print(f"wrote {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_gradient_suite, summarize
    seeds = _parse_seeds(args.seeds) or list(range(20))
    results = run_gradient_suite(seeds)
    worst = summarize(results)
    for name, err in worst.items():
        flag = "ok" if err < TOLERANCE else "FAIL"
        print(f"{flag:4s} {name:36s} max rel err {err:.2e}")
    failed = [n for n, e in worst.items() if not e < TOLERANCE]
    print(f"{len(worst) - len(failed)}/{len(worst)} components pass over {len(seeds)} seeds")
    return EXIT_OK if not failed else EXIT_NUMERIC


# --------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vfl", description=__doc__.strip().splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset (JSONL)")
    g.add_argument("--config", help="key = value dataset config")
    g.add_argument("--out", help="output path (default dataset.jsonl)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one configured model")
    t.add_argument("--config", help="key = value run config")
    t.add_argument("--out", help="output directory (default ./run)")
    t.add_argument("--metric", choices=("strict", "official"))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on its validation split")
    e.add_argument("--checkpoint", help="checkpoint written by train")
    e.add_argument("--config", help="optional config naming a different dataset")
    e.add_argument("--out", help="write the breakdown CSV here")
    e.add_argument("--metric", choices=("strict", "official"))
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run a grid of configs and seeds")
    a.add_argument("--config", help="ablation file (base keys, grid.<key> = a | b)")
    a.add_argument("--preset", choices=("table1", "table2"))
    a.add_argument("--seeds", help="comma-separated seeds, e.g. 0,1,2")
    a.add_argument("--jobs", type=int, help="worker processes (default: CPU count)")
    a.add_argument("--out", help="results CSV (default results.csv)")
    a.add_argument("--metric", choices=("strict", "official"))
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("plot-data", help="gnuplot data files from a results CSV")
    d.add_argument("results", nargs="?", help="results CSV from ablate")
    d.add_argument("--config", dest="results_flag", help=argparse.SUPPRESS)
    d.add_argument("--loss", action="append", help="loss CSV to convert (repeatable)")
    d.add_argument("--out", help="output directory (default ./plots)")
    d.set_defaults(func=cmd_plot_data)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    c.add_argument("--seeds", help="comma-separated seeds (default 0..19)")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "results_flag", None) and not getattr(args, "results", None):
        args.results = args.results_flag
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"numerical failure: {exc}; last good step {exc.last_good_step}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
