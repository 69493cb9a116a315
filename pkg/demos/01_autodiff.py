"""
Reverse-mode gradients on a tiny graph
======================================

Builds a small expression from ``Value`` leaves, runs ``backward`` and
compares the result with central finite differences.
"""

import numpy as np

from evrwkv.tensor import Value, check_gradients, conv2d

rng = np.random.default_rng(0)

# a 3x3 convolution followed by a sigmoid and a mean, the same shape of
# computation that sits inside every block of the model
x = Value(rng.normal(size=(2, 6, 6)), requires_grad=True)
w = Value(rng.normal(size=(4, 2, 3, 3)), requires_grad=True)
b = Value(np.zeros(4), requires_grad=True)

loss = conv2d(x, w, b, pad=1).sigmoid().mean()
loss.backward()
print("loss", float(loss.data))
print("dL/dw[0, 0]:\n", np.round(w.grad[0, 0], 5))

# the finite-difference oracle perturbs each entry by +-1e-6
report = check_gradients(lambda p: conv2d(p["x"], p["w"], p["b"], pad=1).sigmoid().mean(),
                         {"x": x, "w": w, "b": b})
for name, err in report.items():
    print(f"max relative error for {name}: {err:.1e}")
