"""
Tape autodiff and Adam on a toy regression
==========================================

Every model in edgecal is built from a handful of differentiable numpy
primitives recorded on a tape. This demo fits a two-layer network by hand,
checks one gradient against central differences, and steps Adam.
"""

import numpy as np

from edgecal import tensor as T
from edgecal.tensor import AdamState, Tape, adam_step, backward

rng = np.random.default_rng(0)
x = rng.uniform(-2, 2, size=(200, 1))
y = np.sin(2 * x) + 0.1 * rng.normal(size=x.shape)

params = {
    "W1": rng.normal(size=(1, 32)) * 0.5,
    "b1": np.zeros((1, 32)),
    "W2": rng.normal(size=(32, 1)) * 0.2,
    "b2": np.zeros((1, 1)),
}


def loss_of(p):
    tape = Tape()
    w = tape.watch_all(p)
    hidden = T.relu(x @ w["W1"] + w["b1"])
    err = hidden @ w["W2"] + w["b2"] - y
    return tape, T.mean(err * err)


# %%
# Gradient check
# --------------
# Perturb one weight both ways and compare with the tape's answer.

tape, loss = loss_of(params)
grads = backward(loss, tape)
eps = 1e-6
bumped = {k: v.copy() for k, v in params.items()}
bumped["W2"][3, 0] += eps
up = loss_of(bumped)[1].item()
bumped["W2"][3, 0] -= 2 * eps
down = loss_of(bumped)[1].item()
print(f"tape dL/dW2[3] = {grads['W2'][3, 0]:.8f}, central difference = {(up - down) / (2 * eps):.8f}")

# %%
# Training with Adam
# ------------------

state = AdamState()
for step in range(1, 2001):
    tape, loss = loss_of(params)
    params = adam_step(params, backward(loss, tape), state, lr=0.01)
    if step in (1, 10, 100, 500, 2000):
        print(f"step {step:4d}  mse {loss.item():.4f}")
