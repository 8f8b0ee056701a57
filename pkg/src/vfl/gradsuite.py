"""
Finite-difference checks for every layer, fusion strategy and model.

Each case builds a small random instance from a seed and returns
``(loss_fn, params)``; the loss is a fixed random projection of the output so
that every output coordinate contributes to the gradient.  Stochastic parts
(dropout, generator noise, discriminator input noise) are reseeded inside the
loss so repeated evaluations see the same draws.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from . import tensor as T
from .data import DatasetConfig, generate_dataset, to_batch
from .fusion import FullFusion, MCBFusion, SimpleFusion
from .models import (AttentionSystem, AutoencoderSystem, ClassifierSystem, CoAttention,
                     DiscriminatorSpec, GeneratorSpec, coattention_forward,
                     discriminator_forward, generator_forward)
from .nn import (Dropout, InitMode, LayerNorm, Linear, QuestionEncoder, ReLU, Sigmoid, Softmax,
                 Tanh, gradcheck, mlp)
from .signal import SketchPlan
from .tensor import Tensor

STEP = 1e-5
TOLERANCE = 1e-4


def _dense_plan(d: int, d_s: int, rng) -> SketchPlan:
    # every bucket receives at least one input, so no convolution output is
    # structurally zero (signed sqrt has no derivative there)
    h = rng.permutation(np.arange(d) % d_s)
    return SketchPlan(d, d_s, h, rng.choice([-1.0, 1.0], size=d))


def _leaf(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _layer_case(layer_factory):
    def build(seed):
        rng = np.random.default_rng(seed)
        x = _leaf(rng, 3, 5)
        layer = layer_factory(rng)
        w = rng.standard_normal((3, layer_out(layer, 5)))

        def loss():
            return T.tsum(layer.forward(x, train=True, rng=np.random.default_rng(seed))
                          * Tensor(w))
        return loss, [x] + layer.parameters()
    return build


def layer_out(layer, d_in):
    return layer.weight.shape[0] if isinstance(layer, Linear) else d_in


def _rnn(seed):
    rng = np.random.default_rng(seed)
    enc = QuestionEncoder(7, 3, 4, "I2", rng)
    tokens = rng.integers(0, 7, size=(3, 4))
    lengths = np.array([4, 2, 0])
    w = rng.standard_normal((3, 4))
    return (lambda: T.tsum(enc.forward(tokens, lengths) * Tensor(w))), enc.parameters()


def _fusion(kind):
    def build(seed):
        rng = np.random.default_rng(seed)
        v_img, v_q = _leaf(rng, 2, 5), _leaf(rng, 2, 4)
        if kind == "simple":
            f = SimpleFusion(5, 4, 6, "I2", rng)
        elif kind == "full":
            f = FullFusion(5, 4, 6, "I2", rng)
        else:
            f = MCBFusion(5, 4, 4, seed)
            f.plan1, f.plan2 = _dense_plan(5, 4, rng), _dense_plan(4, 4, rng)
        w = rng.standard_normal((2, f.out_dim))
        return (lambda: T.tsum(f.forward(v_img, v_q) * Tensor(w))), [v_img, v_q] + f.parameters()
    return build


def _generator(arch, noise):
    def build(seed):
        rng = np.random.default_rng(seed)
        spec = GeneratorSpec(arch, noise, noise_dim=3, K=5, init=InitMode("I2", seed),
                             hidden=(6, 6, 6), dropout=0.1)
        from .models import Generator
        gen = Generator(spec, 4, rng)
        fused = _leaf(rng, 3, 4)
        w = rng.standard_normal((3, 5))

        def loss():
            out = generator_forward(gen, fused, np.random.default_rng(seed), train=True)
            return T.tsum(out * Tensor(w))
        return loss, [fused] + gen.parameters()
    return build


def _discriminator(seed):
    rng = np.random.default_rng(seed)
    from .models import Discriminator
    disc = Discriminator(DiscriminatorSpec((6, 5), init=InitMode("I2", seed)), 4, 3, rng)
    answer, cond = _leaf(rng, 3, 4), _leaf(rng, 3, 3)

    def loss():
        s = discriminator_forward(disc, answer, cond, np.random.default_rng(seed), True, 0.1)
        return T.tsum(T.log(s))
    return loss, [answer, cond] + disc.parameters()


def _toy_batch(seed, n=3, d_i=4, vocab=8, K=6, n_regions=2):
    cfg = DatasetConfig(n_records=n, d_i=d_i, vocab=vocab, K=K, n_regions=n_regions,
                        number_answers=2, seed=seed)
    return to_batch(generate_dataset(cfg))


def _gan_system(fusion):
    def build(seed):
        from .training import gan_losses, one_hot
        batch = _toy_batch(seed)
        spec = GeneratorSpec("full", "N2", K=6, init=InitMode("I2", seed), hidden=(4, 4, 4))
        dspec = DiscriminatorSpec((4, 3), init=InitMode("I2", seed))
        system = ClassifierSystem(4, 8, spec, fusion, d_embed=2, d_q=3, d_f=4, d_s=8,
                                  disc_spec=dspec, seed=seed)
        perm = np.roll(np.arange(len(batch)), 1)
        real = Tensor(one_hot(batch.answers, 6))

        def loss():
            rng = np.random.default_rng(seed)
            fused, raw = system.encode(batch)
            fake = T.softmax(generator_forward(system.generator, fused, rng, train=True))
            s_r = discriminator_forward(system.discriminator, real, fused, rng, True, 0.1)
            s_w = discriminator_forward(system.discriminator, real, fused[perm], rng, True, 0.1)
            s_f = discriminator_forward(system.discriminator, fake, fused, rng, True, 0.1)
            loss_d, loss_g, _ = gan_losses(s_r, s_w, s_f)
            return loss_d + loss_g
        return loss, system.parameters()
    return build


def _autoencoder(seed):
    from .training import cross_entropy
    batch = _toy_batch(seed)
    system = AutoencoderSystem(4, 8, 6, code_dim=3, d_embed=2, d_q=3, head_hidden=(4,),
                               init="I2", seed=seed)
    # the reconstruction target is a constant of the graph, so hold it fixed
    target = system.features(batch).data

    def loss():
        x, _, recon, scores = system.forward(batch)
        diff = recon - Tensor(target)
        return (diff * diff).mean() + cross_entropy(scores, batch.answers)
    return loss, system.parameters()


def _coattention(combiner):
    def build(seed):
        rng = np.random.default_rng(seed)
        model = CoAttention(3, 4, 4, 5, combiner, d_s=4, head_hidden=5, init="I2",
                            rng=rng, seed=seed)
        if combiner == "mcb":
            model.plan_q, model.plan_v = _dense_plan(4, 4, rng), _dense_plan(4, 4, rng)
        words, regions = _leaf(rng, 2, 3, 3), _leaf(rng, 2, 2, 4)
        mask = np.array([[True, True, True], [True, True, False]])
        w = rng.standard_normal((2, 5))

        def loss():
            _, _, scores = coattention_forward(model, words, regions, word_mask=mask)
            return T.tsum(scores * Tensor(w))
        return loss, [words, regions] + model.parameters()
    return build


def _attention_system(combiner):
    def build(seed):
        from .training import cross_entropy
        batch = _toy_batch(seed)
        system = AttentionSystem(4, 8, 6, 2, combiner, d_embed=2, d_hidden=4, d_s=4,
                                 head_hidden=4, init="I2", seed=seed)
        if combiner == "mcb":
            rng = np.random.default_rng(seed)
            system.model.plan_q, system.model.plan_v = _dense_plan(4, 4, rng), _dense_plan(4, 4, rng)
        return (lambda: cross_entropy(system.forward(batch)[2], batch.answers)), \
            system.parameters()
    return build


def _jitter(params, seed):
    # zero-initialised biases can park a ReLU exactly on its kink
    rng = np.random.default_rng([seed, 17])
    for p in params:
        if not np.any(p.data):
            p.data = 0.1 * rng.standard_normal(p.shape)


def _smallest_sqrt_input(loss_fn) -> float:
    seen = []
    original = T.signed_sqrt

    def spy(a, eps=1e-12):
        seen.append(float(np.abs(a.data).min()))
        return original(a, eps)
    T.signed_sqrt = spy
    try:
        loss_fn()
    finally:
        T.signed_sqrt = original
    return min(seen, default=np.inf)


def _clear_of_origin(builder, margin=1e-2, tries=50):
    """Redraw an MCB instance until no signed-sqrt input sits near zero.

    sign(x) sqrt(|x|) has unbounded curvature at the origin, so a central
    difference with step 1e-5 is only a faithful oracle where |x| >> 1e-5.
    """
    def build(seed):
        for k in range(tries):
            sub = seed if k == 0 else int(np.random.default_rng([seed, k]).integers(2 ** 31))
            loss_fn, params = builder(sub)
            _jitter(params, seed)
            if _smallest_sqrt_input(loss_fn) >= margin:
                break
        return loss_fn, params
    return build


CASES: Dict[str, Callable] = {
    "layer/linear": _layer_case(lambda rng: Linear(5, 4, "I2", rng)),
    "layer/tanh": _layer_case(lambda rng: Tanh()),
    "layer/relu": _layer_case(lambda rng: ReLU()),
    "layer/sigmoid": _layer_case(lambda rng: Sigmoid()),
    "layer/softmax": _layer_case(lambda rng: Softmax()),
    "layer/layernorm": _layer_case(lambda rng: LayerNorm()),
    "layer/dropout": _layer_case(lambda rng: Dropout(0.3)),
    "layer/mlp": _layer_case(lambda rng: mlp([5, 6, 6, 5], "I2", rng, 0.1, True)),
    "layer/rnn-cell": _rnn,
    "fusion/simple": _fusion("simple"),
    "fusion/full": _fusion("full"),
    "fusion/mcb": _clear_of_origin(_fusion("mcb")),
    "model/generator-simp-N0": _generator("simp", "N0"),
    "model/generator-full-N0": _generator("full", "N0"),
    "model/generator-full-N1": _generator("full", "N1"),
    "model/generator-full-N2": _generator("full", "N2"),
    "model/discriminator": _discriminator,
    "model/gan-cls-full": _gan_system("full"),
    "model/autoencoder": _autoencoder,
    "model/coattention-addition": _coattention("addition"),
    "model/coattention-mcb": _clear_of_origin(_coattention("mcb")),
    "model/attention-system-addition": _attention_system("addition"),
    "model/attention-system-mcb": _clear_of_origin(_attention_system("mcb")),
}


@dataclass
class CheckResult:
    name: str
    seed: int
    error: float

    @property
    def ok(self) -> bool:
        return self.error < TOLERANCE


def run_gradient_suite(seeds: Sequence[int] = range(20), names: Sequence[str] | None = None,
                       eps: float = STEP) -> List[CheckResult]:
    out = []
    for name in (names or CASES):
        for seed in seeds:
            loss_fn, params = CASES[name](int(seed))
            _jitter(params, int(seed))
            out.append(CheckResult(name, int(seed), gradcheck(loss_fn, params, eps)))
    return out


def summarize(results: Sequence[CheckResult]) -> Dict[str, float]:
    worst: Dict[str, float] = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.error)
    return worst


if __name__ == "__main__":
    start = time.perf_counter()
    res = run_gradient_suite()
    for name, err in summarize(res).items():
        print(f"{name:36s} {err:.2e}")
    print(f"{time.perf_counter() - start:.1f}s")
