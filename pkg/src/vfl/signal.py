"""
Radix-2 FFT, circular convolution and count sketch.

These are the numerical pieces of compact bilinear pooling: two count sketches
convolved circularly equal the count sketch of the outer product under the
combined hash, so the FFT gives the pooled vector in O(n log n).

All transforms act on the last axis and broadcast over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import Tensor, _node, _unbroadcast, as_tensor


def is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@lru_cache(maxsize=None)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(m: int, sign: int) -> np.ndarray:
    return np.exp(sign * 1j * np.pi * np.arange(m) / m)


def fft(x, inverse: bool = False) -> np.ndarray:
    """Iterative decimation-in-time FFT along the last axis.

    The forward transform is the unnormalised DFT ``X[k] = sum x[j] e^{-2 pi i jk/n}``;
    the inverse divides by ``n`` so that ``fft(fft(x), inverse=True) == x``.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    lead = x.shape[:-1]
    sign = 1 if inverse else -1
    x = x[..., _bit_reversal(n)]
    m = 1
    while m < n:
        blocks = x.reshape(*lead, n // (2 * m), 2, m)
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * _twiddles(m, sign)
        out = np.empty_like(blocks)
        np.add(even, odd, out=out[..., 0, :])
        np.subtract(even, odd, out=out[..., 1, :])
        x = out.reshape(*lead, n)
        m *= 2
    return x / n if inverse else x


def ifft(x) -> np.ndarray:
    return fft(x, inverse=True)


def fft_real(x) -> np.ndarray:
    """Spectrum of real signals, two per complex transform.

    Rows are packed as ``x[2k] + i x[2k+1]`` and separated afterwards with the
    conjugate symmetry of real-signal spectra.
    """
    x = np.asarray(x, dtype=np.float64)
    lead, n = x.shape[:-1], x.shape[-1]
    rows = x.reshape(-1, n)
    m = rows.shape[0]
    if m < 2:
        return fft(x)
    if m % 2:
        rows = np.concatenate([rows, np.zeros((1, n))])
    z = fft(rows[0::2] + 1j * rows[1::2])
    zr = np.conj(z[:, (-np.arange(n)) % n])
    out = np.empty((rows.shape[0], n), dtype=np.complex128)
    out[0::2] = 0.5 * (z + zr)
    out[1::2] = -0.5j * (z - zr)
    return out[:m].reshape(*lead, n)


def ifft_real(spec) -> np.ndarray:
    """Inverse transform of conjugate-symmetric spectra, returning the real signals."""
    spec = np.asarray(spec, dtype=np.complex128)
    lead, n = spec.shape[:-1], spec.shape[-1]
    rows = spec.reshape(-1, n)
    m = rows.shape[0]
    if m < 2:
        return ifft(spec).real
    if m % 2:
        rows = np.concatenate([rows, np.zeros((1, n), dtype=np.complex128)])
    z = ifft(rows[0::2] + 1j * rows[1::2])
    out = np.empty((rows.shape[0], n))
    out[0::2] = z.real
    out[1::2] = z.imag
    return out[:m].reshape(*lead, n)


def naive_dft(x, inverse: bool = False) -> np.ndarray:
    """O(n^2) reference DFT, any length."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    sign = 1 if inverse else -1
    w = np.exp(sign * 2j * np.pi * np.outer(k, k) / n)
    out = x @ w.T
    return out / n if inverse else out


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"length mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    if not is_power_of_two(a.shape[-1]):
        raise ValueError(f"length must be a power of two, got {a.shape[-1]}")


def circular_convolve(a, b) -> np.ndarray:
    """``out[k] = sum_j a[j] b[(k - j) mod n]`` computed through the FFT."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    return ifft(fft(a) * fft(b)).real


def circular_correlate(g, b) -> np.ndarray:
    """Adjoint of ``a -> circular_convolve(a, b)``: ``out[j] = sum_k g[k] b[(k - j) mod n]``."""
    g = np.asarray(g, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(g, b)
    return ifft(fft(g) * np.conj(fft(b))).real


def direct_circular_convolve(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = len(a)
    return np.array([sum(a[j] * b[(k - j) % n] for j in range(n)) for k in range(n)])


# ---------------------------------------------------------------- count sketch
@dataclass(frozen=True, eq=False)
class SketchPlan:
    """Fixed hash tables of a count sketch ``R^d -> R^{d_s}``."""

    input_dim: int
    sketch_dim: int
    index_hash: np.ndarray
    sign_hash: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if not is_power_of_two(self.sketch_dim):
            raise ValueError(f"sketch_dim must be a power of two, got {self.sketch_dim}")
        h = np.asarray(self.index_hash, dtype=np.int64)
        s = np.asarray(self.sign_hash, dtype=np.float64)
        if h.shape != (self.input_dim,) or s.shape != (self.input_dim,):
            raise ValueError("hash tables must have length input_dim")
        if h.size and (h.min() < 0 or h.max() >= self.sketch_dim):
            raise ValueError("index hash out of range")
        if not np.all(np.abs(s) == 1):
            raise ValueError("sign hash must be +-1")
        object.__setattr__(self, "index_hash", h)
        object.__setattr__(self, "sign_hash", s)

    @classmethod
    def random(cls, input_dim: int, sketch_dim: int, seed: int) -> "SketchPlan":
        rng = np.random.default_rng(seed)
        h = rng.integers(0, sketch_dim, size=input_dim)
        s = rng.choice([-1.0, 1.0], size=input_dim)
        return cls(input_dim, sketch_dim, h, s, seed)

    def matrix(self) -> np.ndarray:
        """Dense ``(input_dim, sketch_dim)`` matrix so that ``sketch = x @ M``."""
        m = np.zeros((self.input_dim, self.sketch_dim))
        m[np.arange(self.input_dim), self.index_hash] = self.sign_hash
        return m

    def __eq__(self, other):
        return (isinstance(other, SketchPlan)
                and self.input_dim == other.input_dim
                and self.sketch_dim == other.sketch_dim
                and np.array_equal(self.index_hash, other.index_hash)
                and np.array_equal(self.sign_hash, other.sign_hash))


def product_plan(p1: SketchPlan, p2: SketchPlan) -> SketchPlan:
    """Plan on the row-major flattened outer product ``x (x) y``.

    ``h(i, j) = (h1(i) + h2(j)) mod d_s`` and ``s(i, j) = s1(i) s2(j)``.
    """
    if p1.sketch_dim != p2.sketch_dim:
        raise ValueError("plans must share sketch_dim")
    d_s = p1.sketch_dim
    h = (p1.index_hash[:, None] + p2.index_hash[None, :]) % d_s
    s = p1.sign_hash[:, None] * p2.sign_hash[None, :]
    return SketchPlan(p1.input_dim * p2.input_dim, d_s, h.reshape(-1), s.reshape(-1))


def count_sketch(x, plan: SketchPlan) -> np.ndarray:
    """``out[h(i)] += s(i) x[i]`` along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != plan.input_dim:
        raise ValueError(f"input dim {x.shape[-1]} != plan input dim {plan.input_dim}")
    out = np.zeros(x.shape[:-1] + (plan.sketch_dim,))
    np.add.at(np.moveaxis(out, -1, 0), plan.index_hash, np.moveaxis(x * plan.sign_hash, -1, 0))
    return out


# ------------------------------------------------------ differentiable wrappers
def sketch(x: Tensor, plan: SketchPlan) -> Tensor:
    """Count sketch as a tracked op; the backward pass is the transposed map."""
    x = as_tensor(x)
    if x.shape[-1] != plan.input_dim:
        raise ValueError(f"input dim {x.shape[-1]} != plan input dim {plan.input_dim}")
    h, s = plan.index_hash, plan.sign_hash
    return _node(count_sketch(x.data, plan), (x,), lambda g: (g[..., h] * s,))


def convolve(a: Tensor, b: Tensor) -> Tensor:
    """Tracked circular convolution with broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a.data, b.data)
    fa, fb = fft_real(a.data), fft_real(b.data)
    out = ifft_real(fa * fb)
    sa, sb = a.shape, b.shape

    def back(g):
        # reduce broadcast axes in the frequency domain, before the inverse transform
        fg = fft_real(g)
        ga = ifft_real(_unbroadcast(fg * np.conj(fb), sa))
        gb = ifft_real(_unbroadcast(fg * np.conj(fa), sb))
        return ga, gb

    return _node(out, (a, b), back)
