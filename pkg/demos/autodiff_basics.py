"""Tour of the numpy tensor core: build a small computation, run reverse-mode
backprop, verify a gradient against central finite differences, and round-trip
a tensor through the flat binary format."""

import tempfile
from pathlib import Path

import numpy as np

from vitbench import (Tensor, finite_difference_check, gelu, layer_norm,
                      load_tensor, matmul, no_grad, save_tensor, softmax)


def main():
    rng = np.random.default_rng(0)

    # forward: project, normalize, softmax, then read out class 0's mean
    # log-probability (a cross-entropy against the all-zeros labeling)
    x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    w = Tensor(rng.standard_normal((6, 3)) * 0.5, requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    gamma = Tensor(np.ones(3), requires_grad=True)
    beta = Tensor(np.zeros(3), requires_grad=True)

    def loss():
        h = layer_norm(matmul(x, w) + b, gamma, beta)
        return -(softmax(h)[:, 0].log().mean())

    y = loss()
    print(f"forward value: {y.item():.6f}")

    y.backward()
    for name, t in [("x", x), ("w", w), ("gamma", gamma)]:
        print(f"grad wrt {name}: shape {t.grad.shape}, "
              f"mean abs {np.abs(t.grad).mean():.3e}")

    # gradients accumulate until zeroed
    before = w.grad.copy()
    loss().backward()
    print(f"second backward accumulates: {np.allclose(w.grad, 2 * before)}")

    # analytic vs numeric gradient of a scalar pipeline
    def f(t):
        return gelu(matmul(t, w)).sum()

    err = finite_difference_check(f, x, h=1e-5)
    print(f"finite-difference max relative error: {err:.2e}")

    # no_grad: inference without graph building
    with no_grad():
        silent = matmul(x, w) + b
    print(f"tracked under no_grad: {silent.requires_grad}")

    # flat binary round trip
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "weights.tnsr"
        save_tensor(path, w)
        again = load_tensor(path)
    print(f"save/load round trip exact: {np.array_equal(w.data, again.data)}")


if __name__ == "__main__":
    main()
