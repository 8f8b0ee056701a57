"""
Synthetic VQA-style records, JSONL persistence and the consensus metric.

A hidden world fixes, per seed, cluster centres for each image region, a set
of question templates (each looking at one region) and an answer table per
question type.  A record's latent answer is ``table[type][cluster of the
template's region, template]``; a ``prior_skew`` fraction of records has its
ground truth overwritten by the type's modal answer, which plays the role of a
language prior.  Ten simulated annotators then answer around the ground truth.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, Sequence

import numpy as np

QUESTION_TYPES = ("yes_no", "number", "other")
N_HUMANS = 10
CONSENSUS = 3
METRIC_MODES = ("strict", "official")


@dataclass(eq=False)
class VqaRecord:
    image_features: np.ndarray
    question_tokens: tuple
    human_answers: tuple
    question_type: str
    ground_truth: int

    def __post_init__(self):
        self.image_features = np.asarray(self.image_features, dtype=np.float64)
        self.question_tokens = tuple(int(t) for t in self.question_tokens)
        self.human_answers = tuple(int(a) for a in self.human_answers)
        self.ground_truth = int(self.ground_truth)
        if len(self.human_answers) != N_HUMANS:
            raise ValueError(f"expected {N_HUMANS} human answers, got {len(self.human_answers)}")
        if self.question_type not in QUESTION_TYPES:
            raise ValueError(f"unknown question type {self.question_type!r}")
        if self.ground_truth not in self.human_answers:
            raise ValueError("ground truth must appear among the human answers")

    def __eq__(self, other):
        return (isinstance(other, VqaRecord)
                and np.array_equal(self.image_features, other.image_features)
                and self.question_tokens == other.question_tokens
                and self.human_answers == other.human_answers
                and self.question_type == other.question_type
                and self.ground_truth == other.ground_truth)


@dataclass(frozen=True)
class DatasetConfig:
    n_records: int = 5000
    d_i: int = 32
    vocab: int = 64
    K: int = 32
    type_mix: tuple = (0.4, 0.3, 0.3)
    prior_skew: float = 0.2
    annotator_agreement: float = 0.8
    seed: int = 0
    n_regions: int = 4
    region_clusters: int = 5
    templates_per_type: int = 6
    feature_noise: float = 0.5
    number_answers: int = 8

    def validate(self) -> "DatasetConfig":
        mix = tuple(float(p) for p in self.type_mix)
        if len(mix) != 3 or any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-9:
            raise ValueError(f"type mix must be three non-negative proportions summing to 1, got {mix}")
        if not 0.0 <= self.prior_skew <= 1.0:
            raise ValueError("prior skew must lie in [0, 1]")
        if not 0.0 <= self.annotator_agreement <= 1.0:
            raise ValueError("annotator agreement must lie in [0, 1]")
        if self.n_records < 0:
            raise ValueError("n_records must be non-negative")
        if self.d_i % self.n_regions:
            raise ValueError("d_i must be divisible by n_regions")
        if self.K < 2 + self.number_answers + 2:
            raise ValueError(f"K must be at least {4 + self.number_answers}")
        if self.vocab < 8:
            raise ValueError("vocab must be at least 8")
        return self

    # answer-id layout: yes/no first, then the digits, then everything else
    def answer_sets(self) -> dict:
        n = self.number_answers
        return {
            "yes_no": np.arange(0, 2),
            "number": np.arange(2, 2 + n),
            "other": np.arange(2 + n, self.K),
        }

    def modal_answer(self, qtype: str) -> int:
        # "yes", the digit 2, and the first "other" answer
        digit_two = 2 + min(2, self.number_answers - 1)
        return {"yes_no": 0, "number": digit_two, "other": 2 + self.number_answers}[qtype]


@dataclass
class World:
    centres: np.ndarray                 # (regions, clusters, d_i / regions)
    templates: dict                     # type -> list of (tokens, region)
    tables: dict                        # type -> (clusters, templates) answer ids


def build_world(config: DatasetConfig) -> World:
    rng = np.random.default_rng([config.seed, 0x5EED])
    d_r = config.d_i // config.n_regions
    centres = rng.normal(size=(config.n_regions, config.region_clusters, d_r))
    templates, tables = {}, {}
    for ti, qtype in enumerate(QUESTION_TYPES):
        rows = []
        for _ in range(config.templates_per_type):
            length = int(rng.integers(3, 7))
            body = rng.integers(4, config.vocab, size=length - 1)
            rows.append(((1 + ti,) + tuple(int(t) for t in body), int(rng.integers(config.n_regions))))
        templates[qtype] = rows
        answers = config.answer_sets()[qtype]
        modal = config.modal_answer(qtype)
        pool = answers if len(answers) <= 2 else answers[answers != modal]
        tables[qtype] = rng.choice(pool, size=(config.region_clusters, config.templates_per_type))
    return World(centres, templates, tables)


def _annotate(gt: int, qtype: str, config: DatasetConfig, rng) -> list:
    answers = config.answer_sets()[qtype]
    humans = [gt if rng.random() < config.annotator_agreement else int(rng.choice(answers))
              for _ in range(N_HUMANS)]
    # the ground truth must remain a mode; ties resolve in its favour
    while True:
        values, counts = np.unique(humans, return_counts=True)
        gt_count = humans.count(gt)
        worst = int(values[np.argmax(counts)])
        if counts.max() <= gt_count:
            return humans
        humans[humans.index(worst)] = gt


def generate_dataset(config: DatasetConfig) -> List[VqaRecord]:
    """Deterministic synthetic dataset; record ``i`` uses the stream ``(seed, i)``."""
    config.validate()
    world = build_world(config)
    mix = np.asarray(config.type_mix, dtype=np.float64)
    records = []
    for i in range(config.n_records):
        rng = np.random.default_rng([config.seed, i])
        qtype = QUESTION_TYPES[int(rng.choice(3, p=mix))]
        t = int(rng.integers(config.templates_per_type))
        tokens, region = world.templates[qtype][t]
        clusters = rng.integers(config.region_clusters, size=config.n_regions)
        feats = world.centres[np.arange(config.n_regions), clusters]
        feats = feats + config.feature_noise * rng.normal(size=feats.shape)
        latent = int(world.tables[qtype][clusters[region], t])
        gt = config.modal_answer(qtype) if rng.random() < config.prior_skew else latent
        humans = _annotate(gt, qtype, config, rng)
        records.append(VqaRecord(feats.reshape(-1), tokens, humans, qtype, gt))
    return records


# ----------------------------------------------------------------- persistence
def save_dataset(records: Iterable[VqaRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "img": [float(v) for v in r.image_features],
                "q": list(r.question_tokens),
                "humans": list(r.human_answers),
                "type": r.question_type,
                "gt": r.ground_truth,
            }) + "\n")


def load_dataset(path) -> List[VqaRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(VqaRecord(obj["img"], obj["q"], obj["humans"], obj["type"], obj["gt"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: malformed record on line {lineno}: {exc}") from None
    return records


def persist_dataset(records, path, direction: str = "save"):
    if direction == "save":
        save_dataset(records, path)
        return None
    if direction == "load":
        return load_dataset(path)
    raise ValueError(f"direction must be 'save' or 'load', got {direction!r}")


# ---------------------------------------------------------------------- arrays
@dataclass
class Batch:
    images: np.ndarray
    tokens: np.ndarray
    lengths: np.ndarray
    answers: np.ndarray
    humans: np.ndarray
    types: np.ndarray

    def __len__(self):
        return len(self.answers)

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx)
        return Batch(self.images[idx], self.tokens[idx], self.lengths[idx],
                     self.answers[idx], self.humans[idx], self.types[idx])


def to_batch(records: Sequence[VqaRecord]) -> Batch:
    n = len(records)
    width = max((len(r.question_tokens) for r in records), default=0)
    tokens = np.zeros((n, width), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for i, r in enumerate(records):
        tokens[i, :len(r.question_tokens)] = r.question_tokens
        lengths[i] = len(r.question_tokens)
    d_i = records[0].image_features.size if records else 0
    return Batch(
        images=np.array([r.image_features for r in records]).reshape(n, d_i),
        tokens=tokens,
        lengths=lengths,
        answers=np.array([r.ground_truth for r in records], dtype=np.int64),
        humans=np.array([r.human_answers for r in records], dtype=np.int64).reshape(n, N_HUMANS),
        types=np.array([QUESTION_TYPES.index(r.question_type) for r in records], dtype=np.int64),
    )


def split(records: Sequence[VqaRecord], valid_fraction: float = 0.2):
    """Training head and validation tail (the last ``valid_fraction`` of records)."""
    cut = len(records) - int(round(valid_fraction * len(records)))
    return list(records[:cut]), list(records[cut:])


# ---------------------------------------------------------------------- metric
def vqa_score(predicted: int, human_answers: Sequence[int], mode: str = "strict") -> float:
    if len(human_answers) != N_HUMANS:
        raise ValueError(f"expected {N_HUMANS} human answers, got {len(human_answers)}")
    matches = sum(1 for a in human_answers if a == predicted)
    if mode == "strict":
        return 1.0 if matches >= CONSENSUS else 0.0
    if mode == "official":
        return min(matches / CONSENSUS, 1.0)
    raise ValueError(f"unknown metric mode {mode!r}")


def batch_scores(predicted: np.ndarray, humans: np.ndarray, mode: str = "strict") -> np.ndarray:
    matches = (humans == np.asarray(predicted)[:, None]).sum(axis=1)
    if mode == "strict":
        return (matches >= CONSENSUS).astype(np.float64)
    if mode == "official":
        return np.minimum(matches / CONSENSUS, 1.0)
    raise ValueError(f"unknown metric mode {mode!r}")


@dataclass
class EvalBreakdown:
    all: float
    yes_no: float
    number: float
    other: float
    counts: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"all": self.all, "yes_no": self.yes_no, "number": self.number, "other": self.other}


def evaluate_model(forward_fn: Callable, records: Sequence[VqaRecord],
                   mode: str = "strict") -> EvalBreakdown:
    """Score ``argmax(forward_fn(records))`` per question type, on a 0-100 scale.

    ``forward_fn`` maps a list of records to an ``(n, K)`` score array.
    """
    if not records:
        raise ValueError("cannot evaluate on an empty dataset")
    scores = np.asarray(forward_fn(records))
    batch = to_batch(records)
    per_record = batch_scores(scores.argmax(axis=1), batch.humans, mode)
    out, counts = {}, {}
    for ti, qtype in enumerate(QUESTION_TYPES):
        sel = batch.types == ti
        counts[qtype] = int(sel.sum())
        out[qtype] = 100.0 * float(per_record[sel].mean()) if sel.any() else 0.0
    return EvalBreakdown(100.0 * float(per_record.mean()), counts=counts, **out)


def write_eval_csv(breakdown: EvalBreakdown, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["type", "score", "count"])
        total = sum(breakdown.counts.values()) if breakdown.counts else ""
        w.writerow(["all", repr(breakdown.all), total])
        for qtype in QUESTION_TYPES:
            w.writerow([qtype, repr(getattr(breakdown, qtype)), breakdown.counts.get(qtype, "")])
