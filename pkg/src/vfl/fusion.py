"""
Ways of turning an image vector and a question vector into one joint vector.

``simple``: two tanh projections multiplied element-wise.
``full``:   the product concatenated with a gated attention vector, then tanh.
``mcb``:    compact bilinear pooling (count sketch + circular convolution),
            signed square root, L2 normalisation.
"""

from __future__ import annotations

from typing import List

import numpy as np

from . import signal
from . import tensor as T
from .nn import Linear, Module, ShapeError
from .signal import SketchPlan
from .tensor import Tensor

STRATEGIES = ("simple", "full", "mcb")


def _project(layer: Linear, x: Tensor) -> Tensor:
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"projection expects dim {layer.in_dim}, got {x.shape[-1]}")
    return T.tanh(layer(x))


def fuse_simple(v_img, v_q, params: "SimpleFusion") -> Tensor:
    """``tanh(W_i v_img + b_i) * tanh(W_q v_q + b_q)``."""
    v_img, v_q = T.as_tensor(v_img), T.as_tensor(v_q)
    if v_img.size == 0 or v_q.size == 0:
        raise ShapeError("fusion inputs must be non-empty")
    return _project(params.img, v_img) * _project(params.q, v_q)


def fuse_full(v_img, v_q, params: "FullFusion") -> Tensor:
    """Product of the projections plus a sigmoid-gated sum, squashed by tanh.

    ``u, v`` are the tanh projections, ``p = u * v`` and
    ``a = sigmoid(W_a [u; v]) * (u + v)``; the output is ``tanh(W_o [p; a])``.
    """
    v_img, v_q = T.as_tensor(v_img), T.as_tensor(v_q)
    if v_img.size == 0 or v_q.size == 0:
        raise ShapeError("fusion inputs must be non-empty")
    u = _project(params.img, v_img)
    v = _project(params.q, v_q)
    gate = T.sigmoid(params.gate(T.concat([u, v], axis=-1)))
    attended = gate * (u + v)
    return T.tanh(params.out(T.concat([u * v, attended], axis=-1)))


def mcb_pool(v_img, v_q, plan1: SketchPlan, plan2: SketchPlan) -> Tensor:
    """Compact bilinear pooling before normalisation."""
    if plan1.sketch_dim != plan2.sketch_dim:
        raise ValueError(f"plans disagree on sketch_dim: {plan1.sketch_dim} vs {plan2.sketch_dim}")
    return signal.convolve(signal.sketch(v_img, plan1), signal.sketch(v_q, plan2))


def fuse_mcb(v_img, v_q, plan1: SketchPlan, plan2: SketchPlan) -> Tensor:
    return T.l2_normalize(T.signed_sqrt(mcb_pool(v_img, v_q, plan1, plan2)))


class SimpleFusion(Module):
    strategy = "simple"

    def __init__(self, d_img: int, d_q: int, d_f: int, init: str = "I1",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.img = Linear(d_img, d_f, init, rng)
        self.q = Linear(d_q, d_f, init, rng)
        self.out_dim = d_f

    def parameters(self) -> List[Tensor]:
        return self.img.parameters() + self.q.parameters()

    def forward(self, v_img, v_q):
        return fuse_simple(v_img, v_q, self)


class FullFusion(Module):
    strategy = "full"

    def __init__(self, d_img: int, d_q: int, d_f: int, init: str = "I1",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.img = Linear(d_img, d_f, init, rng)
        self.q = Linear(d_q, d_f, init, rng)
        self.gate = Linear(2 * d_f, d_f, init, rng)
        self.out = Linear(2 * d_f, d_f, init, rng)
        self.out_dim = d_f

    def parameters(self):
        return (self.img.parameters() + self.q.parameters()
                + self.gate.parameters() + self.out.parameters())

    def forward(self, v_img, v_q):
        return fuse_full(v_img, v_q, self)


class MCBFusion(Module):
    """Parameter-free pooling with hashes fixed by ``seed``."""

    strategy = "mcb"

    def __init__(self, d_img: int, d_q: int, d_s: int = 128, seed: int = 0):
        self.plan1 = SketchPlan.random(d_img, d_s, seed)
        self.plan2 = SketchPlan.random(d_q, d_s, seed + 1)
        self.out_dim = d_s

    def forward(self, v_img, v_q):
        return fuse_mcb(v_img, v_q, self.plan1, self.plan2)


def make_fusion(strategy: str, d_img: int, d_q: int, d_f: int, d_s: int, init: str,
                rng: np.random.Generator, seed: int = 0) -> Module:
    if strategy == "simple":
        return SimpleFusion(d_img, d_q, d_f, init, rng)
    if strategy == "full":
        return FullFusion(d_img, d_q, d_f, init, rng)
    if strategy == "mcb":
        return MCBFusion(d_img, d_q, d_s, seed)
    raise ValueError(f"unknown fusion strategy {strategy!r}; expected one of {STRATEGIES}")
