#!/usr/bin/env python3
# FFT, circular convolution, count sketch, and compact bilinear pooling.

import numpy as np

from vfl.fusion import MCBFusion
from vfl.signal import (SketchPlan, circular_convolve, count_sketch, fft, ifft, naive_dft,
                        product_plan)

rng = np.random.default_rng(0)

# the radix-2 transform against the O(n^2) definition
x = rng.standard_normal(64)
print("fft vs dft   ", np.abs(fft(x) - naive_dft(x)).max())
print("round trip   ", np.abs(ifft(fft(x)) - x).max())

# convolution in the frequency domain
print("[1,1] * [1,1] =", circular_convolve([1, 1], [1, 1]))

# a count sketch hashes each coordinate into a bucket with a random sign
plan = SketchPlan.random(8, 4, seed=1)
print("buckets", plan.index_hash, "signs", plan.sign_hash)
print("sketch of e_0..e_7 rows\n", count_sketch(np.eye(8), plan))

# sketch of an outer product = convolution of the two sketches
p1, p2 = SketchPlan.random(6, 16, 2), SketchPlan.random(5, 16, 3)
a, b = rng.standard_normal(6), rng.standard_normal(5)
lhs = count_sketch(np.outer(a, b).ravel(), product_plan(p1, p2))
rhs = circular_convolve(count_sketch(a, p1), count_sketch(b, p2))
print("sketch theorem gap", np.abs(lhs - rhs).max())

# inner products survive sketching on average
u, v = rng.standard_normal((2, 32))
est = [count_sketch(u, p) @ count_sketch(v, p) for p in (SketchPlan.random(32, 64, s)
                                                          for s in range(300))]
print(f"<u,v> = {u @ v:.3f}, mean sketched estimate {np.mean(est):.3f}")

# MCB fusion: sketch, convolve, signed square root, unit length
mcb = MCBFusion(d_img=32, d_q=16, d_s=128, seed=0)
fused = mcb.forward(rng.standard_normal((3, 32)), rng.standard_normal((3, 16))).data
print("fused shape", fused.shape, "norms", np.linalg.norm(fused, axis=1).round(6))
