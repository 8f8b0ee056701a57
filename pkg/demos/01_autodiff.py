#!/usr/bin/env python3
# A tour of the autodiff core: tensors, layers, gradients, one SGD loop.

import numpy as np

from vfl import tensor as T
from vfl.nn import Linear, QuestionEncoder, gradcheck, mlp, sgd_step
from vfl.tensor import Tensor

# a leaf tensor records gradients; everything built from it is traced
w = Tensor([0.5, -1.0], requires_grad=True)
x = Tensor([2.0, 3.0])
y = T.tsum(T.tanh(w * x))
y.backward()
print("y =", y.data, "dy/dw =", w.grad)

# the same number by hand: d tanh(u)/du = 1 - tanh(u)^2
print("by hand       ", (1 - np.tanh(w.data * x.data) ** 2) * x.data)

# a small ReLU network and its gradient check against central differences
rng = np.random.default_rng(42)
net = mlp([4, 8, 8, 3], "I2", rng)
batch = Tensor(rng.standard_normal((5, 4)))
proj = Tensor(rng.standard_normal((5, 3)))
err = gradcheck(lambda: T.tsum(net.forward(batch) * proj), net.parameters())
print(f"mlp gradcheck relative error {err:.2e}")

# fit y = 3x - 1 with one linear layer
layer = Linear(1, 1, "I2", rng)
xs = rng.uniform(-1, 1, size=(64, 1))
ys = 3 * xs - 1
for step in range(300):
    diff = layer(Tensor(xs)) - Tensor(ys)
    loss = (diff * diff).mean()
    for p in layer.parameters():
        p.grad = None
    loss.backward()
    sgd_step(layer.parameters(), 0.3)
print("fitted weight", layer.weight.data.ravel(), "bias", layer.bias.data)

# question encoder: embeddings + Elman recurrence, padded batches allowed
enc = QuestionEncoder(vocab=10, embed_dim=4, hidden_dim=6, init="I2", rng=rng)
tokens = np.array([[1, 2, 3], [4, 5, 0]])
print("question features\n", enc.forward(tokens, lengths=np.array([3, 2])).data.round(3))
