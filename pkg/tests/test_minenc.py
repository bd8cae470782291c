import numpy as np
import pytest

from gridverify import lpcore, minenc, netmodel, verifier
from gridverify.dualopt import ConstrainedProblem
from gridverify.minenc import ViolationSpec, append_min_encoding, relu_count
from gridverify.netmodel import DenseNN, affine_layer, forward, forward_many
from gridverify.relax import Box

from conftest import random_net


def identity_net(n):
    return DenseNN.from_layers([affine_layer(np.eye(n), np.zeros(n))])


def brute_delta(spec, ys):
    return spec.term_values(ys).min(axis=1)


def test_four_upper_terms():
    enc = append_min_encoding(identity_net(4), ViolationSpec(upper=np.full(4, 5.0)))
    assert forward(enc, [3.0, 1.0, 4.0, 2.0]) == [1.0]


def test_two_upper_terms():
    enc = append_min_encoding(identity_net(2), ViolationSpec(upper=np.zeros(2)))
    assert forward(enc, [-1.0, -3.0]) == [1.0]


def test_five_terms_match_brute_force():
    rng = np.random.default_rng(0)
    spec = ViolationSpec(upper=rng.normal(0, 2, 5))
    enc = append_min_encoding(identity_net(5), spec)
    xs = rng.normal(0, 3, (1000, 5))
    got = forward_many(enc, xs)[:, 0]
    want = brute_delta(spec, xs)
    assert np.max(np.abs(got - want)) <= 1e-12


@pytest.mark.parametrize("pairing", minenc.PAIRINGS)
def test_exactness_random_nets(pairing):
    rng = np.random.default_rng(1)
    for _ in range(20):
        n_out = int(rng.integers(2, 10))
        hidden = [int(rng.integers(2, 17)) for _ in range(int(rng.integers(1, 4)))]
        nn = random_net(rng, int(rng.integers(1, 5)), hidden, n_out)
        kind = rng.integers(3)
        lo = rng.normal(-1, 1, n_out) - 2
        hi = lo + rng.uniform(0.5, 4, n_out)
        spec = ViolationSpec(
            upper=hi if kind != 1 else None, lower=lo if kind != 0 else None
        )
        enc = append_min_encoding(nn, spec, pairing)
        assert enc.output_dim == 1
        xs = rng.normal(0, 1.5, (1000, nn.input_dim))
        want = brute_delta(spec, forward_many(nn, xs))
        got = forward_many(enc, xs)[:, 0]
        assert np.max(np.abs(got - want)) <= 1e-12
        assert enc.num_relu - nn.num_relu == relu_count(spec.num_terms)


def test_relu_count_values():
    assert relu_count(4) == 3  # 2^2 - 1
    assert relu_count(1) == 0
    assert relu_count(5) == 4  # odd schedule 5 -> 3 -> 2 -> 1
    for n in range(1, 40):
        assert relu_count(n) == n - 1
    for p in range(1, 6):
        assert relu_count(2**p) == 2**p - 1


def test_pairing_orders_agree_pointwise():
    rng = np.random.default_rng(2)
    for n_out in (2, 3, 5, 6, 7, 8):
        nn = random_net(rng, 3, [6], n_out)
        spec = ViolationSpec(upper=rng.normal(1, 1, n_out), lower=rng.normal(-3, 1, n_out))
        xs = rng.normal(0, 1, (200, 3))
        a = forward_many(append_min_encoding(nn, spec, "halves"), xs)
        b = forward_many(append_min_encoding(nn, spec, "adjacent"), xs)
        assert np.max(np.abs(a - b)) <= 1e-12


def test_sign_semantics():
    rng = np.random.default_rng(3)
    nn = random_net(rng, 2, [4], 3)
    spec = ViolationSpec(upper=np.full(3, 0.5), lower=np.full(3, -0.5))
    enc = append_min_encoding(nn, spec)
    xs = rng.normal(0, 1, (500, 2))
    delta = forward_many(enc, xs)[:, 0]
    ys = forward_many(nn, xs)
    ok = np.all(ys <= 0.5 + 1e-12, axis=1) & np.all(ys >= -0.5 - 1e-12, axis=1)
    assert np.array_equal(delta >= 0, ok)


def test_empty_spec_rejected():
    with pytest.raises(ValueError):
        ViolationSpec()
    with pytest.raises(ValueError):
        ViolationSpec(upper=np.zeros(2), lower=np.ones(2))  # upper below lower


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        append_min_encoding(identity_net(3), ViolationSpec(upper=np.zeros(2)))


def test_milp_two_terms_over_box():
    # min(x, y) over the unit box via the big-M route: optimum 0
    milp = minenc.milp_min_reformulation(np.eye(2), np.zeros(2), 10.0)
    best = np.inf
    for b in milp.assignments():
        g, rhs = milp.rows_for_assignment(b)
        lp = lpcore.LpProblem.build(
            np.array([0.0, 0.0, 1.0]),
            a_ub=g,
            b_ub=rhs,
            lb=np.array([0.0, 0.0, -np.inf]),
            ub=np.array([1.0, 1.0, np.inf]),
        )
        res = lpcore.solve_lp(lp)
        if res.optimal:
            best = min(best, res.value)
    assert abs(best - 0.0) <= 1e-9


def test_milp_single_term():
    milp = minenc.milp_min_reformulation(np.array([[2.0]]), np.array([1.0]), 5.0)
    assert milp.num_binaries == 0
    (b,) = list(milp.assignments())
    g, rhs = milp.rows_for_assignment(b)
    lp = lpcore.LpProblem.build(
        np.array([0.0, 1.0]),
        a_ub=g,
        b_ub=rhs,
        lb=np.array([0.0, -np.inf]),
        ub=np.array([1.0, np.inf]),
    )
    res = lpcore.solve_lp(lp)
    assert abs(res.value - 1.0) <= 1e-9  # t equals the term at x = 0


def test_milp_matches_encoded_oracle():
    # 4 terms over a box: big-M route optimum == encoded-net exact oracle
    rng = np.random.default_rng(4)
    coeffs = rng.normal(0, 1, (4, 3))
    offsets = rng.normal(0, 1, 4)
    lo, hi = -np.ones(3), np.ones(3)
    big_m = minenc.suggest_big_m(coeffs, offsets, lo, hi)
    milp = minenc.milp_min_reformulation(coeffs, offsets, big_m)
    best = np.inf
    for b in milp.assignments():
        g, rhs = milp.rows_for_assignment(b)
        lp = lpcore.LpProblem.build(
            np.concatenate([np.zeros(3), [1.0]]),
            a_ub=g,
            b_ub=rhs,
            lb=np.concatenate([lo, [-np.inf]]),
            ub=np.concatenate([hi, [np.inf]]),
        )
        res = lpcore.solve_lp(lp)
        if res.optimal:
            best = min(best, res.value)

    base = DenseNN.from_layers([affine_layer(coeffs, offsets)])
    enc = append_min_encoding(base, ViolationSpec(upper=np.zeros(4)))
    # upper spec gives min(0 - term) = -max(term); we want min(term): negate.
    enc2 = minenc.append_terms_and_min(base, np.eye(4), np.zeros(4))
    prob = ConstrainedProblem.build(enc2, Box(lo, hi), c_y=np.array([1.0]))
    orc = verifier.oracle_exact(prob)
    assert abs(best - orc.gamma) <= 1e-9


def test_milp_rejects_bad_m():
    with pytest.raises(ValueError):
        minenc.milp_min_reformulation(np.eye(2), np.zeros(2), 0.0)
