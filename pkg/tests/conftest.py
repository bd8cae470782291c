import itertools

import numpy as np
import pytest

from gridverify import netmodel
from gridverify.dualopt import ConstrainedProblem
from gridverify.relax import Box


def random_net(rng, n_in, hidden, n_out, w_scale=1.0, b_scale=0.3):
    """Dense net with ReLU hidden layers and an affine output layer."""
    dims = [n_in] + list(hidden) + [n_out]
    layers = []
    for i in range(len(dims) - 1):
        w = rng.normal(0.0, w_scale / np.sqrt(dims[i]), (dims[i + 1], dims[i]))
        b = rng.normal(0.0, b_scale, dims[i + 1])
        mask = (
            np.ones(dims[i + 1], dtype=bool)
            if i < len(dims) - 2
            else np.zeros(dims[i + 1], dtype=bool)
        )
        layers.append(netmodel.Layer(w, b, mask))
    return netmodel.DenseNN.from_layers(layers)


def corner_min(a, eps):
    """Brute-force min of a.x over the inf-ball by corner enumeration."""
    a = np.asarray(a, dtype=np.float64)
    best = np.inf
    for signs in itertools.product((-eps, eps), repeat=a.size):
        best = min(best, float(np.dot(a, signs)))
    return best


def sample_min(nn, box, c, rng, n=2000):
    """Sampled minimum of c . nn(x) over the box (an upper reference)."""
    xs = box.sample(rng, n)
    ys = netmodel.forward_many(nn, xs)
    return float(np.min(ys @ np.asarray(c)))


def anchored_problem(rng, nn, box, nz=3, p=2, q=3):
    """Random constrained problem guaranteed feasible: constraint offsets are
    anchored at a concrete (x0, z0) pair."""
    x0 = box.sample(rng, 1)[0]
    y0 = netmodel.forward(nn, x0)
    zlo = rng.normal(0, 1, nz) - rng.uniform(0.5, 2, nz)
    zhi = zlo + rng.uniform(1, 3, nz)
    z_box = Box(zlo, zhi)
    z0 = z_box.sample(rng, 1)[0]
    a_y = rng.normal(0, 1, (p, nn.output_dim))
    a_z = rng.normal(0, 1, (p, nz))
    e = a_y @ y0 + a_z @ z0
    b_y = rng.normal(0, 1, (q, nn.output_dim))
    b_z = rng.normal(0, 1, (q, nz))
    h = b_y @ y0 + b_z @ z0 + rng.uniform(0.1, 2.0, q)
    return ConstrainedProblem.build(
        nn,
        box,
        a_y=a_y,
        a_z=a_z,
        e=e,
        b_y=b_y,
        b_z=b_z,
        h=h,
        c_y=rng.normal(0, 1, nn.output_dim),
        c_z=rng.normal(0, 1, nz),
        z_box=z_box,
    )
