import numpy as np
import pytest

from gridverify import netmodel
from gridverify.netmodel import DenseNN, Layer, affine_layer, forward, forward_many

from conftest import random_net


def lemma1_gadget():
    """min(x, y) = x - relu(x - y) as two layers."""
    l1 = Layer(np.array([[1.0, 0.0], [1.0, -1.0]]), np.zeros(2), np.array([False, True]))
    l2 = Layer(np.array([[1.0, -1.0]]), np.zeros(1), np.array([False]))
    return DenseNN.from_layers([l1, l2])


def test_identity_forward():
    nn = DenseNN.from_layers([affine_layer(np.eye(2), np.zeros(2))])
    assert np.array_equal(forward(nn, [-2.0, 3.0]), [-2.0, 3.0])


def test_relu_clips_negative():
    nn = DenseNN.from_layers([Layer(np.array([[1.0]]), np.zeros(1), np.array([True]))])
    assert forward(nn, [-5.0]) == [0.0]


def test_min_gadget():
    nn = lemma1_gadget()
    assert forward(nn, [2.0, 5.0]) == [2.0]
    assert forward(nn, [7.0, 4.0]) == [4.0]


def test_forward_shape_error():
    nn = lemma1_gadget()
    with pytest.raises(netmodel.ShapeError):
        forward(nn, [1.0, 2.0, 3.0])


def test_validate_ok():
    assert netmodel.validate(lemma1_gadget()) == []


def test_validate_chaining():
    l1 = affine_layer(np.zeros((3, 2)), np.zeros(3))
    l2 = affine_layer(np.zeros((4, 4)), np.zeros(4))
    nn = DenseNN((l1, l2), 2, 4)
    bad = netmodel.validate(nn)
    assert len(bad) == 1 and "chain" in bad[0]


def test_validate_bias_length():
    layer = Layer(np.zeros((2, 2)), np.zeros(3), np.zeros(2, dtype=bool))
    nn = DenseNN((layer,), 2, 2)
    bad = netmodel.validate(nn)
    assert len(bad) == 1 and "bias" in bad[0]


def test_save_load_round_trip(tmp_path):
    nn = lemma1_gadget()
    path = tmp_path / "m.txt"
    netmodel.save(nn, path)
    back = netmodel.load(path)
    assert netmodel.dumps(back) == netmodel.dumps(nn)
    for a, b in zip(nn.layers, back.layers):
        assert np.array_equal(a.weight, b.weight)
        assert np.array_equal(a.bias, b.bias)
        assert np.array_equal(a.mask, b.mask)


def test_round_trip_exact_floats():
    rng = np.random.default_rng(0)
    nn = random_net(rng, 3, [5, 4], 2)
    back = netmodel.loads(netmodel.dumps(nn))
    for a, b in zip(nn.layers, back.layers):
        assert np.array_equal(a.weight, b.weight)
        assert np.array_equal(a.bias, b.bias)


def test_load_unknown_field():
    text = netmodel.dumps(lemma1_gadget()).replace("bias", "offset")
    with pytest.raises(netmodel.ModelFormatError, match="offset"):
        netmodel.loads(text)


def test_load_truncated():
    text = netmodel.dumps(lemma1_gadget())
    with pytest.raises(netmodel.ModelFormatError, match="end of file"):
        netmodel.loads(text[: len(text) // 2])


def test_load_version_mismatch():
    text = netmodel.dumps(lemma1_gadget()).replace(" v1", " v9", 1)
    with pytest.raises(netmodel.ModelFormatError, match="version"):
        netmodel.loads(text)


def test_piecewise_linear_continuity():
    rng = np.random.default_rng(1)
    for _ in range(5):
        nn = random_net(rng, 3, [6, 6], 2)
        lip = 1.0
        for layer in nn.layers:
            lip *= np.max(np.abs(layer.weight).sum(axis=1))
        x1 = rng.normal(0, 1, 3)
        x2 = rng.normal(0, 1, 3)
        ts = np.linspace(0.0, 1.0, 400)
        pts = np.array([t * x1 + (1 - t) * x2 for t in ts])
        ys = forward_many(nn, pts)
        seg = np.linalg.norm(x1 - x2, np.inf) / (len(ts) - 1)
        jumps = np.max(np.abs(np.diff(ys, axis=0)))
        assert jumps <= lip * seg + 1e-9


def test_masked_layer_equals_widened_construction():
    # mixed-mask layer == affine -> full ReLU on a duplicated block -> affine
    rng = np.random.default_rng(2)
    w = rng.normal(0, 1, (4, 3))
    b = rng.normal(0, 1, 4)
    mask = np.array([True, False, True, False])
    mixed = DenseNN.from_layers([Layer(w, b, mask)])

    rows_relu = np.nonzero(mask)[0]
    rows_id = np.nonzero(~mask)[0]
    w1 = np.vstack([w[rows_relu], w[rows_id], -w[rows_id]])
    b1 = np.concatenate([b[rows_relu], b[rows_id], -b[rows_id]])
    k, r = len(rows_relu), len(rows_id)
    recomb = np.zeros((4, k + 2 * r))
    for i, row in enumerate(rows_relu):
        recomb[row, i] = 1.0
    for i, row in enumerate(rows_id):
        recomb[row, k + i] = 1.0
        recomb[row, k + r + i] = -1.0
    widened = DenseNN.from_layers(
        [
            Layer(w1, b1, np.ones(k + 2 * r, dtype=bool)),
            affine_layer(recomb, np.zeros(4)),
        ]
    )
    xs = rng.normal(0, 2, (1000, 3))
    diff = np.max(np.abs(forward_many(mixed, xs) - forward_many(widened, xs)))
    assert diff <= 1e-12


def test_immutable_arrays():
    nn = lemma1_gadget()
    with pytest.raises(ValueError):
        nn.layers[0].weight[0, 0] = 9.0
