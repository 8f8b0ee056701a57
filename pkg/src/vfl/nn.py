"""
Layers, initializers, the SGD update and the Elman question encoder.

Weights are stored ``(out_features, in_features)`` and applied as
``x @ W.T + b`` so that a batch lives on the leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import tensor as T
from .tensor import NonFiniteError, Tensor

INIT_TAGS = ("I1", "I2")
# the literal 0.02 starves deep ReLU stacks under plain SGD; I1 keeps the
# clipped-Gaussian shape but scales sigma with fan-in (pass std=0.02 to opt out)
I1_FIXED_STD = 0.02


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class InitMode:
    tag: str = "I1"
    seed: int = 0

    def __post_init__(self):
        if self.tag not in INIT_TAGS:
            raise ValueError(f"unknown init tag {self.tag!r}; expected one of {INIT_TAGS}")
        if self.seed < 0:
            raise ValueError("init seed must be unsigned")


def i1_std(fan_in: int) -> float:
    return float(np.sqrt(2.0 / fan_in))


def init_weights(shape: tuple, tag: str, rng: np.random.Generator,
                 std: float | None = None) -> np.ndarray:
    """Draw a weight matrix of ``shape = (fan_out, fan_in)``.

    I1 is N(0, sigma) with draws clipped to two standard deviations, where
    ``sigma = sqrt(2 / fan_in)`` unless ``std`` fixes it.  I2 is the Glorot
    uniform on ``[-a, a]`` with ``a = sqrt(6 / (fan_in + fan_out))``.
    """
    if any(int(d) <= 0 for d in shape):
        raise ValueError(f"dims must be positive, got {shape}")
    fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
    if tag == "I1":
        sigma = i1_std(fan_in) if std is None else float(std)
        return np.clip(rng.normal(0.0, sigma, size=shape), -2 * sigma, 2 * sigma)
    if tag == "I2":
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=shape)
    raise ValueError(f"unknown init tag {tag!r}")


@dataclass
class LayerParams:
    weights: Tensor
    bias: Tensor
    kind: str = "linear"


def init_params(dims: Sequence[int], mode: InitMode) -> LayerParams:
    """Fresh linear-layer parameters for ``dims = (fan_in, fan_out)``."""
    fan_in, fan_out = (int(d) for d in dims)
    rng = np.random.default_rng(mode.seed)
    w = init_weights((fan_out, fan_in), mode.tag, rng)
    return LayerParams(Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True))


# ---------------------------------------------------------------------- layers
class Module:
    kind = "module"
    in_dim: int | None = None

    def parameters(self) -> List[Tensor]:
        return []

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, x, **kwargs):
        return self.forward(x, **kwargs)

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError


class Linear(Module):
    kind = "linear"

    def __init__(self, in_dim: int, out_dim: int, init: str = "I1",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = Tensor(init_weights((out_dim, in_dim), init, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    @classmethod
    def from_params(cls, params: LayerParams) -> "Linear":
        layer = cls.__new__(cls)
        layer.weight, layer.bias = params.weights, params.bias
        layer.out_dim, layer.in_dim = params.weights.shape
        return layer

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x, train=False, rng=None):
        return T.linear(x, self.weight, self.bias)


class Tanh(Module):
    kind = "tanh"

    def forward(self, x, train=False, rng=None):
        return T.tanh(x)


class ReLU(Module):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        return T.relu(x)


class Sigmoid(Module):
    kind = "sigmoid"

    def forward(self, x, train=False, rng=None):
        return T.sigmoid(x)


class Softmax(Module):
    kind = "softmax"

    def forward(self, x, train=False, rng=None):
        return T.softmax(x, axis=-1)


class LayerNorm(Module):
    kind = "layernorm"

    def forward(self, x, train=False, rng=None):
        return T.layer_norm(x)


class Dropout(Module):
    """Inverted dropout; the identity outside training."""

    kind = "dropout"

    def __init__(self, rate: float = 0.1):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        keep = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * keep


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    @property
    def in_dim(self):
        for layer in self.layers:
            if layer.in_dim is not None:
                return layer.in_dim
        return None

    def forward(self, x, train=False, rng=None):
        return forward(self.layers, x, train=train, rng=rng)


def forward(layers: Sequence[Module], x, train: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Run ``x`` through ``layers``; dropout only acts when ``train`` is set."""
    x = T.as_tensor(x)
    for i, layer in enumerate(layers):
        if layer.in_dim is not None and x.shape[-1] != layer.in_dim:
            raise ShapeError(f"layer {i} ({layer.kind}) expects input dim {layer.in_dim}, "
                             f"got {x.shape[-1]}")
        x = layer.forward(x, train=train, rng=rng)
    return x


def mlp(dims: Sequence[int], init: str, rng: np.random.Generator, dropout: float = 0.0,
        layernorm: bool = False, final_activation: Module | None = None) -> Sequential:
    """ReLU hidden layers then a linear output layer."""
    layers: List[Module] = []
    for i in range(len(dims) - 1):
        layers.append(Linear(dims[i], dims[i + 1], init, rng))
        if i < len(dims) - 2:
            if layernorm:
                layers.append(LayerNorm())
            layers.append(ReLU())
            if dropout:
                layers.append(Dropout(dropout))
    if final_activation is not None:
        layers.append(final_activation)
    return Sequential(*layers)


# ------------------------------------------------------------------- optimizer
def sgd_step(params: Sequence[Tensor], alpha: float, grads: Sequence[np.ndarray] | None = None):
    """Plain gradient descent: ``p <- p - alpha * grad``.

    Parameters without a gradient are left alone.  Arrays are rebound, never
    written in place, so graphs recorded before the update stay valid.
    """
    if grads is None:
        grads = [p.grad for p in params]
    for p, g in zip(params, grads):
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {p.name or p.shape}")
        if alpha:
            p.data = p.data - alpha * g
    return params


# ------------------------------------------------------------------ recurrence
class RNNCell(Module):
    """Elman cell ``h' = tanh(W_x e + W_h h + b)``."""

    kind = "rnn-cell"

    def __init__(self, in_dim: int, hidden_dim: int, init: str = "I1",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.hidden_dim = in_dim, hidden_dim
        self.w_x = Tensor(init_weights((hidden_dim, in_dim), init, rng), requires_grad=True)
        self.w_h = Tensor(init_weights((hidden_dim, hidden_dim), init, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(hidden_dim), requires_grad=True)

    def parameters(self):
        return [self.w_x, self.w_h, self.bias]

    def step(self, e: Tensor, h: Tensor) -> Tensor:
        return T.tanh(T.linear(e, self.w_x, self.bias) + T.linear(h, self.w_h))


def _check_tokens(tokens: np.ndarray, vocab: int, lengths=None):
    for row, seq in enumerate(np.atleast_2d(tokens)):
        n = len(seq) if lengths is None else lengths[row]
        for pos in range(n):
            if not 0 <= seq[pos] < vocab:
                where = f"position {pos}" if lengths is None else f"row {row} position {pos}"
                raise ValueError(f"token {int(seq[pos])} at {where} outside vocabulary of {vocab}")


def rnn_encode(tokens: Sequence[int], embed: Tensor, cell: RNNCell) -> Tensor:
    """Final hidden state of the Elman recurrence over one token sequence."""
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    _check_tokens(tokens, embed.shape[0])
    h = Tensor(np.zeros(cell.hidden_dim))
    for tok in tokens:
        h = cell.step(T.take_rows(embed, tok), h)
    return h


def rnn_encode_batch(tokens: np.ndarray, lengths: np.ndarray, embed: Tensor,
                     cell: RNNCell) -> Tensor:
    """Padded-batch version of :func:`rnn_encode`; returns ``(batch, hidden)``.

    Rows stop updating once their own length is exhausted.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    _check_tokens(tokens, embed.shape[0], lengths)
    batch = tokens.shape[0]
    h = Tensor(np.zeros((batch, cell.hidden_dim)))
    for t in range(tokens.shape[1] if tokens.ndim == 2 else 0):
        live = (lengths > t)[:, None].astype(np.float64)
        if not live.any():
            break
        safe = np.where(lengths > t, tokens[:, t], 0)
        h_new = cell.step(T.take_rows(embed, safe), h)
        h = h_new * live + h * (1.0 - live)
    return h


class QuestionEncoder(Module):
    """Token embedding table plus an Elman cell."""

    def __init__(self, vocab: int, embed_dim: int, hidden_dim: int, init: str = "I1",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.vocab = vocab
        self.embed = Tensor(init_weights((vocab, embed_dim), init, rng), requires_grad=True)
        self.cell = RNNCell(embed_dim, hidden_dim, init, rng)
        self.hidden_dim = hidden_dim

    def parameters(self):
        return [self.embed] + self.cell.parameters()

    def forward(self, tokens, lengths=None, train=False, rng=None):
        tokens = np.asarray(tokens)
        if lengths is None:
            return rnn_encode(tokens, self.embed, self.cell)
        return rnn_encode_batch(tokens, lengths, self.embed, self.cell)


# ------------------------------------------------------------------- gradcheck
def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-10)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(loss_fn, param: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar ``loss_fn()`` w.r.t. ``param``."""
    out = np.zeros_like(param.data)
    base = param.data
    flat = base.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += eps
        param.data = bumped.reshape(base.shape)
        hi = float(loss_fn().data)
        bumped[i] -= 2 * eps
        param.data = bumped.reshape(base.shape)
        lo = float(loss_fn().data)
        out.reshape(-1)[i] = (hi - lo) / (2 * eps)
    param.data = base
    return out


def gradcheck(loss_fn, params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Worst relative error between analytic and finite-difference gradients.

    ``loss_fn`` must rebuild the graph from scratch and be deterministic (reseed
    any dropout / noise rng inside it).
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        worst = max(worst, relative_error(a, numeric_grad(loss_fn, p, eps)))
    return worst
