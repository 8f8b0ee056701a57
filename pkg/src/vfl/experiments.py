"""
Single runs and ablation grids.

``run(config)`` trains the configured method on the training head of the
dataset and scores it on the validation tail.  ``run_grid`` maps that over a
list of configs and seeds, optionally in a process pool, and returns rows in
grid order so the results CSV is reproducible.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .config import RunConfig
from .data import (Batch, EvalBreakdown, evaluate_model, generate_dataset, load_dataset, split,
                   to_batch)
from .models import parameter_count, save_checkpoint
from .training import (PretrainPlan, TrainingError, build_system, fit_attention, fit_autoencoder,
                       fit_classifier, pretrain_discriminator, pretrain_generator, train_gan)

RESULT_COLUMNS = ("method", "arch", "noise", "init", "pretrain_G", "pretrain_D", "combiner",
                  "all", "yes_no", "number", "other", "seed", "steps", "wall_ms", "status")


@dataclass
class RunResult:
    config: RunConfig
    system: object
    loss_rows: list
    loss_header: tuple
    breakdown: EvalBreakdown | None
    pretrain_logs: dict = field(default_factory=dict)


def load_records(config: RunConfig):
    if config.dataset:
        return load_dataset(config.dataset)
    return generate_dataset(config.data)


def dataset_dims(records) -> tuple:
    """``(d_i, vocab, K)`` implied by a record list."""
    d_i = records[0].image_features.size
    vocab = max(max(r.question_tokens, default=0) for r in records) + 1
    K = max(max(r.human_answers) for r in records) + 1
    return d_i, vocab, K


def predictor(system, rng_seed: int):
    """Record list -> score array, with a fixed noise stream for stochastic generators."""
    def forward(records):
        return system.predict(to_batch(records), np.random.default_rng([rng_seed, 99]))
    return forward


def train(config: RunConfig, records=None) -> RunResult:
    config.validate()
    records = load_records(config) if records is None else records
    train_recs, valid_recs = split(records, config.valid_fraction)
    if config.dataset:
        d_i, vocab, K = dataset_dims(records)
        vocab, K = max(vocab, config.data.vocab), max(K, config.data.K)
    else:
        d_i, vocab, K = config.data.d_i, config.data.vocab, config.data.K
    batch = to_batch(train_recs)
    rng = np.random.default_rng([config.seed, 7])
    system = build_system(config, d_i, vocab, K)
    logs = {}

    if config.method == "g_classifier":
        rows = [(s, l, 0) for s, l in fit_classifier(system, batch, config, rng)]
        header = ("step", "task_loss", "saturation_count")
    elif config.method == "gan":
        plan = PretrainPlan.from_config(config)
        if plan.pretrain_g:
            logs["generator"] = pretrain_generator(system, batch, plan, config, rng)
        if plan.pretrain_d:
            logs["discriminator"] = pretrain_discriminator(system, batch, plan, config, rng)
        rows = train_gan(system, batch, config, rng).losses
        header = ("step", "L_D", "L_G", "saturation_count")
    elif config.method == "autoencoder":
        rows = [(s, tot, 0) for s, tot, _ in fit_autoencoder(system, batch, config, rng)]
        header = ("step", "task_loss", "saturation_count")
    else:
        rows = [(s, l, 0) for s, l in fit_attention(system, batch, config, rng)]
        header = ("step", "task_loss", "saturation_count")

    breakdown = None
    if valid_recs:
        breakdown = evaluate_model(predictor(system, config.seed), valid_recs, config.metric)
    return RunResult(config, system, rows, header, breakdown, logs)


def checkpoint_arch(config: RunConfig) -> str:
    if config.method in ("g_classifier", "gan"):
        return f"{config.method}:{config.arch}:{config.fusion_strategy}:{config.noise}"
    if config.method == "attention":
        return f"attention:{config.combiner}"
    return "autoencoder"


def write_checkpoint(result: RunResult, path) -> None:
    cfg = result.config
    dims = (cfg.data.d_i, cfg.data.K, cfg.d_q, cfg.d_f, cfg.z_dim, cfg.d_s,
            parameter_count(result.system))
    save_checkpoint(path, result.system.parameters(), checkpoint_arch(cfg), dims, cfg.init,
                    cfg.seed, cfg.to_text())


# ------------------------------------------------------------------------ grid
def _label_fields(cfg: RunConfig) -> dict:
    generator_like = cfg.method in ("g_classifier", "gan")
    return {
        "method": cfg.method,
        "arch": cfg.arch if generator_like else "-",
        "noise": cfg.noise if generator_like else "-",
        "init": cfg.init,
        "pretrain_G": int(cfg.pretrain_g) if cfg.method == "gan" else "-",
        "pretrain_D": int(cfg.pretrain_d) if cfg.method == "gan" else "-",
        "combiner": cfg.combiner if cfg.method == "attention" else "-",
    }


def run_one(cfg: RunConfig) -> dict:
    row = _label_fields(cfg)
    row.update(seed=cfg.seed, steps=cfg.steps)
    start = time.perf_counter()
    try:
        result = train(cfg)
        b = result.breakdown
        row.update(all=b.all, yes_no=b.yes_no, number=b.number, other=b.other, status="ok")
    except TrainingError as exc:
        row.update(all="", yes_no="", number="", other="", status=f"numerical: {exc}")
    except Exception as exc:  # noqa: BLE001 - a failed run must not stop the grid
        row.update(all="", yes_no="", number="", other="", status=f"error: {exc}")
    row["wall_ms"] = int(round(1000 * (time.perf_counter() - start)))
    return row


def expand(configs: Sequence[RunConfig], seeds: Sequence[int]) -> List[RunConfig]:
    return [c.replace(seed=int(s)).validate() for c in configs for s in seeds]


def run_grid(configs: Sequence[RunConfig], seeds: Sequence[int], jobs: int = 1) -> List[dict]:
    runs = expand(configs, seeds)
    if jobs <= 1 or len(runs) <= 1:
        return [run_one(c) for c in runs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_one, runs))


def format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


class ResultsWriter:
    """Append-only CSV sink with the fixed results schema."""

    def __init__(self, path):
        self.path = path
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(RESULT_COLUMNS)

    def append(self, row: dict) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([format_cell(row.get(c, "")) for c in RESULT_COLUMNS])


def write_results(rows: Sequence[dict], path) -> None:
    sink = ResultsWriter(path)
    for row in rows:
        sink.append(row)


# --------------------------------------------------------------------- presets
def preset_configs(name: str, base: RunConfig) -> List[RunConfig]:
    """Built-in grids mirroring the method table and the pretraining table."""
    if name == "table1":
        gan = dict(method="gan", pretrain_g=True, pretrain_d=False)
        return [
            base.replace(method="g_classifier", arch="simp", noise="N0", init="I1"),
            base.replace(method="g_classifier", arch="full", noise="N1", init="I1"),
            base.replace(method="g_classifier", arch="full", noise="N2", init="I2"),
            base.replace(arch="simp", noise="N0", init="I2", **gan),
            base.replace(arch="full", noise="N2", init="I1", **gan),
            base.replace(method="autoencoder"),
            base.replace(method="attention", combiner="addition"),
            base.replace(method="attention", combiner="mcb"),
        ]
    if name == "table2":
        gan = base.replace(method="gan", arch="full", noise="N2", init="I1")
        return [
            gan.replace(pretrain_g=False, pretrain_d=False),
            gan.replace(pretrain_g=True, pretrain_d=False),
            gan.replace(pretrain_g=False, pretrain_d=True),
            gan.replace(pretrain_g=True, pretrain_d=True),
        ]
    raise ValueError(f"unknown preset {name!r}; expected table1 or table2")


def default_jobs() -> int:
    return os.cpu_count() or 1
