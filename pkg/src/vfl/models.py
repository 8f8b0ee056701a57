"""
Generators, the matching-aware discriminator, the autoencoder classifier and
the co-attention classifier, plus end-to-end "systems" that own the question
encoder and map a :class:`~vfl.data.Batch` to answer scores.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from . import tensor as T
from .fusion import fuse_mcb, make_fusion
from .nn import (InitMode, Linear, Module, QuestionEncoder, Sequential, ShapeError,
                 init_weights, mlp)
from .signal import SketchPlan
from .tensor import Tensor

NOISE_MODES = ("N0", "N1", "N2")
ARCHS = ("simp", "full")
COMBINERS = ("addition", "mcb")
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class GeneratorSpec:
    arch: str = "full"
    noise_mode: str = "N0"
    noise_dim: int = 16
    K: int = 32
    init: InitMode = field(default_factory=InitMode)
    hidden: tuple = (256, 256, 256)
    dropout: float = 0.1
    layernorm: bool = False

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown generator arch {self.arch!r}")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"unknown noise mode {self.noise_mode!r}")


@dataclass(frozen=True)
class DiscriminatorSpec:
    hidden: tuple = (256, 128)
    condition_source: str = "fused"
    input_noise_std: float = 0.1
    init: InitMode = field(default_factory=InitMode)
    dropout: float = 0.1
    layernorm: bool = False

    def __post_init__(self):
        if self.condition_source not in ("fused", "raw-concat"):
            raise ValueError(f"unknown condition source {self.condition_source!r}")
        if self.input_noise_std < 0:
            raise ValueError("discriminator input noise must be non-negative")


class Generator(Module):
    def __init__(self, spec: GeneratorSpec, d_f: int, rng: np.random.Generator):
        self.spec = spec
        self.d_f = d_f
        self.in_dim = d_f + spec.noise_dim if spec.noise_mode == "N1" else d_f
        if spec.arch == "simp":
            self.net = Sequential(Linear(self.in_dim, spec.K, spec.init.tag, rng))
        else:
            dims = [self.in_dim, *spec.hidden, spec.K]
            self.net = mlp(dims, spec.init.tag, rng, spec.dropout, spec.layernorm)

    def parameters(self):
        return self.net.parameters()

    def forward(self, fused, rng=None, train=False):
        return generator_forward(self, fused, rng, train)


def generator_forward(gen: Generator, fused, rng: np.random.Generator | None = None,
                      train: bool = False) -> Tensor:
    """Answer scores from a fused embedding, with noise entering per the mode.

    N0 feeds the embedding alone, N1 appends ``z ~ N(0, 1)^Z``, N2 adds
    ``z ~ N(0, 1)^{d_f}`` to the embedding.
    """
    fused = T.as_tensor(fused)
    if fused.shape[-1] != gen.d_f:
        raise ShapeError(f"generator expects fused dim {gen.d_f}, got {fused.shape[-1]}")
    mode = gen.spec.noise_mode
    if mode != "N0" and rng is None:
        raise ValueError(f"noise mode {mode} needs an rng")
    if mode == "N1":
        z = rng.standard_normal(fused.shape[:-1] + (gen.spec.noise_dim,))
        x = T.concat([fused, Tensor(z)], axis=-1)
    elif mode == "N2":
        x = fused + rng.standard_normal(fused.shape)
    else:
        x = fused
    return gen.net.forward(x, train=train, rng=rng)


class Discriminator(Module):
    def __init__(self, spec: DiscriminatorSpec, K: int, d_cond: int, rng: np.random.Generator):
        self.spec = spec
        self.K, self.d_cond = K, d_cond
        self.in_dim = K + d_cond
        self.net = mlp([self.in_dim, *spec.hidden, 1], spec.init.tag, rng,
                       spec.dropout, spec.layernorm)

    def parameters(self):
        return self.net.parameters()

    def forward(self, answer, condition, rng=None, train=False, noise_std=None):
        return discriminator_forward(self, answer, condition, rng, train, noise_std)


def discriminator_forward(disc: Discriminator, answer, condition,
                          rng: np.random.Generator | None = None, train: bool = False,
                          noise_std: float | None = None) -> Tensor:
    """Probability that (answer, condition) is a real, matching pair.

    Gaussian noise of ``noise_std`` (default: the spec's) is added to the whole
    input in train mode only.  Output has shape ``answer.shape[:-1]`` and lies
    strictly inside (0, 1).
    """
    answer, condition = T.as_tensor(answer), T.as_tensor(condition)
    if answer.shape[-1] != disc.K or condition.shape[-1] != disc.d_cond:
        raise ShapeError(f"discriminator expects answer dim {disc.K} and condition dim "
                         f"{disc.d_cond}, got {answer.shape[-1]} and {condition.shape[-1]}")
    x = T.concat([answer, condition], axis=-1)
    std = disc.spec.input_noise_std if noise_std is None else noise_std
    if train and std > 0:
        x = x + std * rng.standard_normal(x.shape)
    logit = disc.net.forward(x, train=train, rng=rng)
    prob = T.clamp(T.sigmoid(logit), PROB_FLOOR, 1.0 - PROB_FLOOR)
    return T.reshape(prob, prob.shape[:-1])


# ----------------------------------------------------------------- autoencoder
class AutoencoderClassifier(Module):
    """Tanh bottleneck, linear decoder, and a ReLU classifier head on the code."""

    def __init__(self, d_in: int, code_dim: int, K: int, head_hidden=(64,),
                 init: str = "I1", rng: np.random.Generator | None = None, dropout: float = 0.0):
        if not 0 < code_dim < d_in:
            raise ValueError(f"code dim must be in (0, {d_in}), got {code_dim}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_in, self.code_dim, self.K = d_in, code_dim, K
        self.encoder = Linear(d_in, code_dim, init, rng)
        self.decoder = Linear(code_dim, d_in, init, rng)
        self.head = mlp([code_dim, *head_hidden, K], init, rng, dropout)

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters() + self.head.parameters()

    def head_parameters(self):
        return self.head.parameters()

    def forward(self, x, train=False, rng=None):
        return autoencoder_forward(self, x, train, rng)


def autoencoder_forward(params: AutoencoderClassifier, concat_features, train=False, rng=None):
    """Returns ``(code, reconstruction, scores)``."""
    x = T.as_tensor(concat_features)
    if x.shape[-1] != params.d_in:
        raise ShapeError(f"autoencoder expects dim {params.d_in}, got {x.shape[-1]}")
    code = T.tanh(params.encoder(x))
    recon = params.decoder(code)
    scores = params.head.forward(code, train=train, rng=rng)
    return code, recon, scores


# ---------------------------------------------------------------- co-attention
class CoAttention(Module):
    """Single-hop parallel co-attention over words and image regions.

    Each (word, region) pair is combined, by ``tanh(q + v)`` or by MCB pooling,
    and scored against a learned vector.  Averaging that affinity grid over
    the other modality gives the attention logits of each side.
    """

    def __init__(self, d_word: int, d_region: int, d_hidden: int, K: int,
                 combiner: str = "addition", d_s: int = 128, head_hidden: int = 64,
                 init: str = "I1", rng: np.random.Generator | None = None, seed: int = 0):
        if combiner not in COMBINERS:
            raise ValueError(f"unknown combiner {combiner!r}; expected one of {COMBINERS}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.combiner = combiner
        self.d_word, self.d_region, self.K = d_word, d_region, K
        self.word_proj = Linear(d_word, d_hidden, init, rng)
        self.region_proj = Linear(d_region, d_hidden, init, rng)
        d_c = d_hidden if combiner == "addition" else d_s
        self.affinity = Tensor(init_weights((1, d_c), init, rng).reshape(-1), requires_grad=True)
        self.head = mlp([d_c, head_hidden, K], init, rng)
        if combiner == "mcb":
            self.plan_q = SketchPlan.random(d_hidden, d_s, seed)
            self.plan_v = SketchPlan.random(d_hidden, d_s, seed + 1)

    def parameters(self):
        return (self.word_proj.parameters() + self.region_proj.parameters()
                + [self.affinity] + self.head.parameters())

    def combine(self, q: Tensor, v: Tensor) -> Tensor:
        if self.combiner == "addition":
            return T.tanh(q + v)
        return fuse_mcb(q, v, self.plan_q, self.plan_v)

    def forward(self, q_word_feats, img_region_feats, word_mask=None, train=False, rng=None):
        return coattention_forward(self, q_word_feats, img_region_feats, word_mask=word_mask)


def _masked_softmax(logits: Tensor, mask: np.ndarray | None) -> Tensor:
    if mask is None:
        return T.softmax(logits, axis=-1)
    return T.softmax(T.where_mask(logits, mask, -1e30), axis=-1)


def coattention_forward(params: CoAttention, q_word_feats, img_region_feats,
                        combiner: str | None = None, word_mask: np.ndarray | None = None):
    """Returns ``(word_weights, region_weights, scores)``.

    Inputs are ``(T, d_word)`` / ``(R, d_region)`` for one example or carry a
    leading batch axis; ``word_mask`` marks real (non-padding) words.
    """
    if combiner is not None and combiner != params.combiner:
        raise ValueError(f"model was built for combiner {params.combiner!r}")
    q = T.as_tensor(q_word_feats) if not isinstance(q_word_feats, (list, tuple)) \
        else T.stack(list(q_word_feats), axis=0)
    v = T.as_tensor(img_region_feats) if not isinstance(img_region_feats, (list, tuple)) \
        else T.stack(list(img_region_feats), axis=0)
    single = q.ndim == 2
    if single:
        q = T.reshape(q, (1,) + q.shape)
        v = T.reshape(v, (1,) + v.shape)
        if word_mask is not None:
            word_mask = np.asarray(word_mask)[None]
    if q.shape[1] == 0 or v.shape[1] == 0:
        raise ShapeError("co-attention needs at least one word and one region")
    if q.shape[-1] != params.d_word or v.shape[-1] != params.d_region:
        raise ShapeError(f"co-attention expects word dim {params.d_word} and region dim "
                         f"{params.d_region}, got {q.shape[-1]} and {v.shape[-1]}")
    n_words, n_regions = q.shape[1], v.shape[1]
    if word_mask is None:
        word_mask = np.ones(q.shape[:2], dtype=bool)
    word_mask = np.asarray(word_mask, dtype=bool)

    qh = T.tanh(params.word_proj(q))                       # (B, T, d)
    vh = T.tanh(params.region_proj(v))                     # (B, R, d)
    qb = T.reshape(qh, (qh.shape[0], n_words, 1, qh.shape[2]))
    vb = T.reshape(vh, (vh.shape[0], 1, n_regions, vh.shape[2]))
    pairs = params.combine(qb, vb)                         # (B, T, R, d_c)
    affinity = pairs @ params.affinity                     # (B, T, R)

    wm = word_mask.astype(np.float64)
    n_live = wm.sum(axis=1, keepdims=True)
    region_logits = (affinity * wm[:, :, None]).sum(axis=1) * (1.0 / n_live)
    word_logits = affinity.mean(axis=2)
    region_w = _masked_softmax(region_logits, None)
    word_w = _masked_softmax(word_logits, word_mask)

    q_att = (qh * T.reshape(word_w, word_w.shape + (1,))).sum(axis=1)
    v_att = (vh * T.reshape(region_w, region_w.shape + (1,))).sum(axis=1)
    scores = params.head.forward(params.combine(q_att, v_att))
    if single:
        return word_w[0], region_w[0], scores[0]
    return word_w, region_w, scores


# -------------------------------------------------------------------- systems
class ClassifierSystem(Module):
    """Question encoder, fusion and generator; optionally a discriminator.

    Trained on its own this is the classifier baseline; with a discriminator
    attached it is the GAN.
    """

    def __init__(self, d_i: int, vocab: int, gen_spec: GeneratorSpec, fusion: str = "full",
                 d_embed: int = 16, d_q: int = 32, d_f: int = 64, d_s: int = 128,
                 disc_spec: DiscriminatorSpec | None = None, seed: int = 0):
        rng = np.random.default_rng([seed, 1])
        tag = gen_spec.init.tag
        self.encoder = QuestionEncoder(vocab, d_embed, d_q, tag, rng)
        self.fusion = make_fusion(fusion, d_i, d_q, d_f, d_s, tag, rng, seed)
        self.d_i, self.d_q = d_i, d_q
        self.generator = Generator(gen_spec, self.fusion.out_dim, rng)
        self.discriminator = None
        if disc_spec is not None:
            d_cond = self.fusion.out_dim if disc_spec.condition_source == "fused" else d_i + d_q
            self.discriminator = Discriminator(disc_spec, gen_spec.K, d_cond, rng)

    def encoder_parameters(self) -> List[Tensor]:
        return self.encoder.parameters() + self.fusion.parameters()

    def generator_parameters(self) -> List[Tensor]:
        return self.encoder_parameters() + self.generator.parameters()

    def parameters(self):
        disc = self.discriminator.parameters() if self.discriminator else []
        return self.generator_parameters() + disc

    def encode(self, batch):
        """``(fused, raw_concat)`` for a batch."""
        v_q = self.encoder.forward(batch.tokens, batch.lengths)
        v_img = Tensor(batch.images)
        return self.fusion.forward(v_img, v_q), T.concat([v_img, v_q], axis=-1)

    def condition(self, fused: Tensor, raw: Tensor) -> Tensor:
        if self.discriminator.spec.condition_source == "fused":
            return fused
        return raw

    def scores(self, batch, rng=None, train=False) -> Tensor:
        fused, _ = self.encode(batch)
        return generator_forward(self.generator, fused, rng, train)

    def predict(self, batch, rng=None) -> np.ndarray:
        return self.scores(batch, rng, train=False).data


class AutoencoderSystem(Module):
    def __init__(self, d_i: int, vocab: int, K: int, code_dim: int = 16, d_embed: int = 16,
                 d_q: int = 32, head_hidden=(64,), init: str = "I1", seed: int = 0):
        rng = np.random.default_rng([seed, 2])
        self.encoder = QuestionEncoder(vocab, d_embed, d_q, init, rng)
        self.model = AutoencoderClassifier(d_i + d_q, code_dim, K, head_hidden, init, rng)

    def parameters(self):
        return self.encoder.parameters() + self.model.parameters()

    def features(self, batch) -> Tensor:
        v_q = self.encoder.forward(batch.tokens, batch.lengths)
        return T.concat([Tensor(batch.images), v_q], axis=-1)

    def forward(self, batch, train=False, rng=None):
        x = self.features(batch)
        return (x,) + autoencoder_forward(self.model, x, train, rng)

    def predict(self, batch, rng=None) -> np.ndarray:
        return self.forward(batch)[3].data


class AttentionSystem(Module):
    """Word embeddings and image regions fed to :class:`CoAttention`."""

    def __init__(self, d_i: int, vocab: int, K: int, n_regions: int = 4,
                 combiner: str = "addition", d_embed: int = 16, d_hidden: int = 32,
                 d_s: int = 128, head_hidden: int = 64, init: str = "I1", seed: int = 0):
        if d_i % n_regions:
            raise ValueError("image dim must split evenly into regions")
        rng = np.random.default_rng([seed, 3])
        self.n_regions = n_regions
        self.embed = Tensor(init_weights((vocab, d_embed), init, rng), requires_grad=True)
        # regions are anonymous feature slices; a learned offset tells them apart
        self.position = Tensor(init_weights((n_regions, d_i // n_regions), init, rng),
                               requires_grad=True)
        self.model = CoAttention(d_embed, d_i // n_regions, d_hidden, K, combiner, d_s,
                                 head_hidden, init, rng, seed)

    def parameters(self):
        return [self.embed, self.position] + self.model.parameters()

    def forward(self, batch, train=False, rng=None):
        words = T.take_rows(self.embed, batch.tokens)
        mask = np.arange(batch.tokens.shape[1])[None, :] < batch.lengths[:, None]
        regions = T.add(Tensor(batch.images.reshape(len(batch), self.n_regions, -1)), self.position)
        return coattention_forward(self.model, words, regions, word_mask=mask)

    def predict(self, batch, rng=None) -> np.ndarray:
        return self.forward(batch)[2].data


def parameter_count(module: Module) -> int:
    return int(sum(p.size for p in module.parameters()))


# ------------------------------------------------------------------ checkpoints
CHECKPOINT_MAGIC = b"VFLCKPT\x00"
CHECKPOINT_VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(path, params: Sequence[Tensor], arch: str, dims: Sequence[int],
                    init: str, seed: int, config_text: str = "") -> None:
    """Little-endian record: header, then every tensor in declaration order."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(_pack_str(arch))
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}q", *(int(d) for d in dims)))
        fh.write(_pack_str(init))
        fh.write(struct.pack("<Q", int(seed)))
        fh.write(_pack_str(config_text))
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            fh.write(struct.pack("<I", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}Q", *p.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    arch: str
    dims: list
    init: str
    seed: int
    config_text: str
    tensors: list


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise ValueError(f"{path}: truncated checkpoint")
        out = struct.unpack_from(fmt, buf, pos)
        pos += size
        return out

    def take_str():
        nonlocal pos
        (n,) = take("<I")
        s = buf[pos:pos + n].decode("utf-8")
        pos += n
        return s

    if buf[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    (version,) = take("<I")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    arch = take_str()
    (nd,) = take("<I")
    dims = list(take(f"<{nd}q"))
    init = take_str()
    (seed,) = take("<Q")
    config_text = take_str()
    (count,) = take("<I")
    tensors = []
    for _ in range(count):
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q")
        n = int(np.prod(shape)) if ndim else 1
        flat = take(f"<{n}d")
        tensors.append(np.array(flat, dtype=np.float64).reshape(shape))
    return Checkpoint(arch, dims, init, seed, config_text, tensors)


def assign_parameters(params: Sequence[Tensor], arrays: Sequence[np.ndarray]) -> None:
    if len(params) != len(arrays):
        raise ValueError(f"checkpoint holds {len(arrays)} tensors, model has {len(params)}")
    for p, a in zip(params, arrays):
        if p.shape != a.shape:
            raise ValueError(f"checkpoint tensor shape {a.shape} != parameter shape {p.shape}")
        p.data = a.copy()
