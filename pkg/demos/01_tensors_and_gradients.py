"""A first look at the tape-based tensor core.

Builds a two-layer computation by hand, runs the backward pass, and checks
one weight's gradient against a finite difference.  Ends by running a slice
of the packaged finite-difference suite over every layer kind.
"""

import numpy as np

from asnet import Graph, backward
from asnet.gradcheck import run_suite
from asnet.tensor import linear, make_param, mse, tanh

rng = np.random.default_rng(0)

# parameters: a 3 -> 4 layer followed by a 4 -> 1 readout
w1 = make_param(rng.normal(size=(4, 3)))
b1 = make_param(np.zeros(4))
w2 = make_param(rng.normal(size=(1, 4)))

x = rng.normal(size=3)
target = np.array([0.25])


def loss_value():
    with Graph():
        h = tanh(linear(make_param(x), w1, b1))
        out = linear(h, w2)
        return mse(out, target)


# forward + backward on the tape
with Graph() as g:
    h = tanh(linear(make_param(x), w1, b1))
    out = linear(h, w2)
    loss = mse(out, target)
    backward(loss, g)

print(f"loss            {loss.data.item():.6f}")
print(f"dL/dw2          {w2.grad.round(6)}")

# finite-difference check on one entry of w1
i, j = 2, 1
eps = 1e-6
keep = w1.data[i, j]
w1.data[i, j] = keep + eps
up = loss_value().data.item()
w1.data[i, j] = keep - eps
down = loss_value().data.item()
w1.data[i, j] = keep

numeric = (up - down) / (2 * eps)
print(f"dL/dw1[{i},{j}]     tape {w1.grad[i, j]:.8f}  numeric {numeric:.8f}")

# the same idea, applied systematically to every layer in the package
print()
print("finite-difference suite, 2 instances per case:")
for r in run_suite(instances_per_case=2):
    print(f"  {r.name:<24} max rel err {r.max_rel_error:.2e}")
