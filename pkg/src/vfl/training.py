"""
Trainers: the GAN-CLS loop with its ablation switches, generator and
discriminator pretraining, and the autoencoder and co-attention trainers.

Every objective is stored as a quantity to *minimise*.  The GAN-CLS terms
``L_D`` and ``L_G`` are log-likelihoods both players want to raise, so by
default each player descends the negation of its term; ``literal_sign=True``
descends the terms as written instead.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import Batch, VqaRecord, to_batch
from .models import (AttentionSystem, AutoencoderSystem, ClassifierSystem, DiscriminatorSpec,
                     GeneratorSpec, autoencoder_forward, discriminator_forward,
                     generator_forward)
from .nn import InitMode, sgd_step
from .tensor import NonFiniteError, Tensor

SATURATION_EPS = 1e-7


class TrainingError(RuntimeError):
    """Training hit a non-finite loss; ``last_good_step`` is the last clean step."""

    def __init__(self, message: str, last_good_step: int):
        super().__init__(message)
        self.last_good_step = last_good_step


@dataclass
class PretrainPlan:
    pretrain_g: bool = False
    pretrain_d: bool = False
    g_input_noise_std: float = 0.1
    d_input_noise_std: float = 0.1
    pretrain_steps: int = 1000

    def __post_init__(self):
        if self.g_input_noise_std < 0 or self.d_input_noise_std < 0:
            raise ValueError("pretraining noise stds must be non-negative")

    @classmethod
    def from_config(cls, config: RunConfig) -> "PretrainPlan":
        return cls(config.pretrain_g, config.pretrain_d, config.g_noise_std,
                   config.d_noise_std, config.pretrain_steps)


@dataclass
class GanClsState:
    system: ClassifierSystem
    alpha: float
    rng: np.random.Generator
    step: int = 0
    losses: List[tuple] = field(default_factory=list)   # (step, L_D, L_G, saturated)


# -------------------------------------------------------------------- helpers
def one_hot(labels: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((len(labels), K))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def real_targets(labels: np.ndarray, K: int, smoothing: float = 0.0) -> np.ndarray:
    """One-hot answers, optionally smoothed towards the uniform distribution."""
    return (1.0 - smoothing) * one_hot(labels, K) + smoothing / K


def cross_entropy(scores: Tensor, labels: np.ndarray) -> Tensor:
    logp = T.log_softmax(scores, axis=-1)
    picked = logp[np.arange(len(labels)), np.asarray(labels)]
    return -picked.mean()


def minibatch(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(n, size=min(size, n), replace=False)


def _finite(value: float, what: str, step: int) -> float:
    if not np.isfinite(value):
        raise TrainingError(f"{what} became non-finite at step {step}", step - 1)
    return value


def _descend(params: Sequence[Tensor], alpha: float, step: int) -> None:
    try:
        sgd_step(params, alpha)
    except NonFiniteError as exc:
        raise TrainingError(f"{exc} at step {step}", step - 1) from None


def _zero(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def sample_mismatched(answers: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Index map pairing each answer with another record's (image, question).

    ``perm[i] != i`` and ``answers[perm[i]] != answers[i]`` for every ``i``.
    When no answer covers more than half the batch the map is a permutation
    (a cyclic shift over answer-sorted indices); otherwise partners are drawn
    independently among the records with a different answer.
    """
    answers = np.asarray(answers)
    n = len(answers)
    if n < 2:
        raise ValueError("mismatched sampling needs a batch of at least 2")
    values, counts = np.unique(answers, return_counts=True)
    if len(values) == 1:
        raise ValueError("all answers in the batch are identical; no mismatch exists")
    if counts.max() * 2 <= n:
        groups = [rng.permutation(np.flatnonzero(answers == v)) for v in rng.permutation(values)]
        order = np.concatenate(groups)
        shift = int(counts.max())
        perm = np.empty(n, dtype=np.int64)
        perm[order] = order[(np.arange(n) + shift) % n]
        return perm
    perm = np.empty(n, dtype=np.int64)
    for i in range(n):
        perm[i] = rng.choice(np.flatnonzero(answers != answers[i]))
    return perm


def gan_losses(s_r: Tensor, s_w: Tensor, s_f: Tensor):
    """Batch-mean ``L_D = log s_r + (log(1 - s_w) + log(1 - s_f)) / 2`` and ``L_G = log s_f``.

    Scores are clamped to ``[eps, 1 - eps]`` first; the number of clamped
    entries is returned as the saturation count.
    """
    lo, hi = SATURATION_EPS, 1.0 - SATURATION_EPS
    saturated = int(sum(((s.data < lo) | (s.data > hi)).sum() for s in (s_r, s_w, s_f)))
    s_r, s_w, s_f = (T.clamp(s, lo, hi) for s in (s_r, s_w, s_f))
    loss_d = (T.log(s_r) + 0.5 * (T.log(1.0 - s_w) + T.log(1.0 - s_f))).mean()
    loss_g = T.log(s_f).mean()
    return loss_d, loss_g, saturated


def noise_schedule(start: float, step: int, total: int) -> float:
    """Linear decay from ``start`` to 0 over ``total`` steps."""
    if total <= 0:
        return start
    return start * max(0.0, 1.0 - step / total)


# ----------------------------------------------------------------- system setup
def build_classifier_system(config: RunConfig, d_i: int, vocab: int, K: int,
                            with_discriminator: bool) -> ClassifierSystem:
    init = InitMode(config.init, config.seed)
    gen = GeneratorSpec(config.arch, config.noise, config.z_dim, K, init, config.g_hidden,
                        config.dropout, config.layernorm)
    disc = None
    if with_discriminator:
        disc = DiscriminatorSpec(config.disc_hidden, config.condition_source, config.d_noise_std,
                                 init, config.dropout, config.layernorm)
    return ClassifierSystem(d_i, vocab, gen, config.fusion_strategy, config.d_embed, config.d_q,
                            config.d_f, config.d_s, disc, config.seed)


def build_system(config: RunConfig, d_i: int, vocab: int, K: int):
    if config.method in ("g_classifier", "gan"):
        return build_classifier_system(config, d_i, vocab, K, config.method == "gan")
    if config.method == "autoencoder":
        return AutoencoderSystem(d_i, vocab, K, config.code_dim, config.d_embed, config.d_q,
                                 config.head_hidden, config.init, config.seed)
    return AttentionSystem(d_i, vocab, K, config.data.n_regions, config.combiner,
                           config.d_embed, config.attn_hidden, config.d_s,
                           config.head_hidden[0], config.init, config.seed)


# --------------------------------------------------------------------- GAN-CLS
def gan_cls_step(state: GanClsState, batch: Batch, config: RunConfig):
    """One discriminator and one generator update; returns ``(L_D, L_G)``.

    Both gradients are taken at the parameters the step started from, so the
    generator update sees the same ``s_f`` that entered ``L_D``.  The encoder
    (RNN and fusion) is trained only through the generator objective.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    system, rng = state.system, state.rng
    disc = system.discriminator
    K = system.generator.spec.K
    sigma = noise_schedule(config.d_noise_std, state.step, config.steps)

    fused, raw = system.encode(batch)
    h = system.condition(fused, raw)
    h_hat = h[sample_mismatched(batch.answers, rng)]
    x_real = Tensor(real_targets(batch.answers, K, config.real_smoothing))
    x_fake = generator_forward(system.generator, fused, rng, train=True)

    s_r = discriminator_forward(disc, x_real, h.detach(), rng, True, sigma)
    s_w = discriminator_forward(disc, x_real, h_hat.detach(), rng, True, sigma)
    if config.softmax_scores:
        x_fake = T.softmax(x_fake)
    s_f = discriminator_forward(disc, x_fake, h.detach(), rng, True, sigma)
    loss_d, loss_g, saturated = gan_losses(s_r, s_w, s_f)

    sign = 1.0 if config.literal_sign else -1.0
    d_params = disc.parameters()
    g_params = system.generator_parameters()
    _zero(system.parameters())
    (sign * loss_d).backward()
    d_grads = [p.grad for p in d_params]
    _zero(system.parameters())
    (sign * loss_g).backward()
    g_grads = [p.grad for p in g_params]

    state.step += 1
    ld = _finite(float(loss_d.data), "L_D", state.step)
    lg = _finite(float(loss_g.data), "L_G", state.step)
    for params, grads in ((d_params, d_grads), (g_params, g_grads)):
        for p, g in zip(params, grads):
            p.grad = g
        _descend(params, state.alpha, state.step)
    _zero(system.parameters())
    state.losses.append((state.step, ld, lg, saturated))
    return ld, lg


def train_gan(system: ClassifierSystem, train: Batch, config: RunConfig,
              rng: np.random.Generator) -> GanClsState:
    state = GanClsState(system, config.alpha, rng)
    for _ in range(config.steps):
        idx = minibatch(len(train), config.batch, rng)
        sub = train.take(idx)
        if len(np.unique(sub.answers)) < 2:
            idx = minibatch(len(train), config.batch, rng)
            sub = train.take(idx)
        gan_cls_step(state, sub, config)
    return state


# ------------------------------------------------------------------ pretraining
def pretrain_generator(system: ClassifierSystem, train: Batch, plan: PretrainPlan,
                       config: RunConfig, rng: np.random.Generator,
                       steps: int | None = None) -> List[tuple]:
    """Softmax-classifier training of encoder + generator.

    Gaussian noise of ``plan.g_input_noise_std`` is added to the fused
    embedding at every step.  Returns ``[(step, cross_entropy), ...]``.
    """
    steps = plan.pretrain_steps if steps is None else steps
    params = system.generator_parameters()
    log = []
    for step in range(1, steps + 1):
        sub = train.take(minibatch(len(train), config.batch, rng))
        fused, _ = system.encode(sub)
        if plan.g_input_noise_std > 0:
            fused = fused + plan.g_input_noise_std * rng.standard_normal(fused.shape)
        scores = generator_forward(system.generator, fused, rng, train=True)
        loss = cross_entropy(scores, sub.answers)
        _zero(params)
        loss.backward()
        log.append((step, _finite(float(loss.data), "cross-entropy", step)))
        _descend(params, config.alpha, step)
    _zero(params)
    return log


def discriminator_pair_loss(system: ClassifierSystem, sub: Batch, rng, noise_std: float,
                            smoothing: float = 0.0):
    """Binary cross-entropy of D on (true answer, matched) vs (true answer, mismatched)."""
    fused, raw = system.encode(sub)
    h = system.condition(fused, raw).detach()
    h_hat = Tensor(h.data[sample_mismatched(sub.answers, rng)])
    x = Tensor(real_targets(sub.answers, system.generator.spec.K, smoothing))
    disc = system.discriminator
    s_match = T.clamp(discriminator_forward(disc, x, h, rng, True, noise_std),
                      SATURATION_EPS, 1 - SATURATION_EPS)
    s_mis = T.clamp(discriminator_forward(disc, x, h_hat, rng, True, noise_std),
                    SATURATION_EPS, 1 - SATURATION_EPS)
    return -(T.log(s_match) + T.log(1.0 - s_mis)).mean()


def pretrain_discriminator(system: ClassifierSystem, train: Batch, plan: PretrainPlan,
                           config: RunConfig, rng: np.random.Generator,
                           steps: int | None = None) -> List[tuple]:
    steps = plan.pretrain_steps if steps is None else steps
    params = system.discriminator.parameters()
    log = []
    for step in range(1, steps + 1):
        sub = train.take(minibatch(len(train), config.batch, rng))
        if len(np.unique(sub.answers)) < 2:
            continue
        loss = discriminator_pair_loss(system, sub, rng, plan.d_input_noise_std,
                                      config.real_smoothing)
        _zero(system.parameters())
        loss.backward()
        log.append((step, _finite(float(loss.data), "discriminator loss", step)))
        _descend(params, config.alpha, step)
    _zero(system.parameters())
    return log


def discriminator_ranking(system: ClassifierSystem, held_out: Batch,
                          rng: np.random.Generator) -> float:
    """Fraction of records whose matched pair outscores its mismatched pair (eval mode).

    Ties count half, so a discriminator that cannot tell the pairs apart
    scores 0.5 whether or not its outputs have saturated.
    """
    fused, raw = system.encode(held_out)
    h = system.condition(fused, raw).data
    perm = sample_mismatched(held_out.answers, rng)
    x = one_hot(held_out.answers, system.generator.spec.K)
    disc = system.discriminator
    s_match = discriminator_forward(disc, x, h).data
    s_mis = discriminator_forward(disc, x, h[perm]).data
    return float(np.mean(s_match > s_mis) + 0.5 * np.mean(s_match == s_mis))


# ------------------------------------------------------------------ autoencoder
def autoencoder_losses(system: AutoencoderSystem, sub: Batch, ae_lambda: float, rng=None,
                       train: bool = True):
    x, code, recon, scores = system.forward(sub, train=train, rng=rng)
    diff = recon - x.detach()
    recon_loss = (diff * diff).mean()
    if ae_lambda == 0:
        return recon_loss, recon_loss, scores
    ce = cross_entropy(scores, sub.answers)
    return recon_loss + ae_lambda * ce, recon_loss, scores


def train_autoencoder_vqa(train_records, config: RunConfig, vocab: int | None = None,
                          K: int | None = None, rng: np.random.Generator | None = None):
    """Returns ``(system, log)`` with log rows ``(step, total, reconstruction)``."""
    train = train_records if isinstance(train_records, Batch) else to_batch(train_records)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    system = AutoencoderSystem(train.images.shape[1], vocab or config.data.vocab,
                               K or config.data.K, config.code_dim, config.d_embed, config.d_q,
                               config.head_hidden, config.init, config.seed)
    log = fit_autoencoder(system, train, config, rng)
    return system, log


def fit_autoencoder(system: AutoencoderSystem, train: Batch, config: RunConfig, rng,
                    steps: int | None = None) -> List[tuple]:
    params = system.parameters()
    log = []
    for step in range(1, (config.steps if steps is None else steps) + 1):
        sub = train.take(minibatch(len(train), config.batch, rng))
        total, recon, _ = autoencoder_losses(system, sub, config.ae_lambda, rng)
        _zero(params)
        total.backward()
        log.append((step, _finite(float(total.data), "autoencoder loss", step),
                    float(recon.data)))
        _descend(params, config.alpha, step)
    _zero(params)
    return log


# -------------------------------------------------------------------- attention
def train_attention(train_records, config: RunConfig, combiner: str | None = None,
                    vocab: int | None = None, K: int | None = None,
                    rng: np.random.Generator | None = None):
    """Returns ``(system, log)`` with log rows ``(step, cross_entropy)``."""
    train = train_records if isinstance(train_records, Batch) else to_batch(train_records)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    system = AttentionSystem(train.images.shape[1], vocab or config.data.vocab,
                             K or config.data.K, config.data.n_regions,
                             combiner or config.combiner, config.d_embed, config.attn_hidden,
                             config.d_s, config.head_hidden[0], config.init, config.seed)
    log = fit_attention(system, train, config, rng)
    return system, log


def fit_attention(system: AttentionSystem, train: Batch, config: RunConfig, rng,
                  steps: int | None = None, on_step=None) -> List[tuple]:
    params = system.parameters()
    log = []
    for step in range(1, (config.steps if steps is None else steps) + 1):
        sub = train.take(minibatch(len(train), config.batch, rng))
        word_w, region_w, scores = system.forward(sub)
        if on_step is not None:
            on_step(word_w.data, region_w.data)
        loss = cross_entropy(scores, sub.answers)
        _zero(params)
        loss.backward()
        log.append((step, _finite(float(loss.data), "cross-entropy", step)))
        _descend(params, config.alpha, step)
    _zero(params)
    return log


def fit_classifier(system: ClassifierSystem, train: Batch, config: RunConfig, rng,
                   steps: int | None = None) -> List[tuple]:
    """The no-discriminator baseline: plain softmax-classifier training."""
    plan = PretrainPlan(g_input_noise_std=0.0)
    return pretrain_generator(system, train, plan, config, rng,
                              config.steps if steps is None else steps)


def write_loss_csv(rows: Sequence[tuple], path, header: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
