"""Exact encoding of "worst violation across many limits" as ReLU layers.

A two-term minimum is one ReLU: ``min(a, b) = a - relu(a - b)``. Halving the
term list repeatedly turns the minimum over T affine terms into appended
network layers with exactly T - 1 ReLU neurons. This replaces the big-M /
binary formulation of the same minimum, which is kept here too (it is the
oracle's route).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .netmodel import DenseNN, Layer, append_layers

PAIRINGS = ("halves", "adjacent")


@dataclass(frozen=True)
class ViolationSpec:
    """Upper/lower limits whose slacks form the violation terms.

    Terms are ordered: all upper slacks (upper_i - y_i), then all lower
    slacks (y_i - lower_i). The encoded output is the minimum slack, so a
    negative value means some limit is violated.
    """

    upper: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None

    def __post_init__(self):
        up = None if self.upper is None else np.asarray(self.upper, dtype=np.float64).reshape(-1)
        lo = None if self.lower is None else np.asarray(self.lower, dtype=np.float64).reshape(-1)
        if up is None and lo is None:
            raise ValueError("violation spec needs at least one of upper/lower")
        if up is not None and lo is not None:
            if up.shape != lo.shape:
                raise ValueError("upper and lower must have equal length")
            if np.any(up < lo):
                raise ValueError("upper bound below lower bound")
        object.__setattr__(self, "upper", up)
        object.__setattr__(self, "lower", lo)

    @property
    def dim(self) -> int:
        return (self.upper if self.upper is not None else self.lower).shape[0]

    @property
    def num_terms(self) -> int:
        n = 0
        if self.upper is not None:
            n += self.upper.shape[0]
        if self.lower is not None:
            n += self.lower.shape[0]
        return n

    def term_map(self, n_y: int) -> Tuple[np.ndarray, np.ndarray]:
        """(W, b) with terms = W y + b over a length-n_y output vector."""
        if self.dim != n_y:
            raise ValueError(f"spec length {self.dim} != network output dim {n_y}")
        rows: List[np.ndarray] = []
        offs: List[float] = []
        eye = np.eye(n_y)
        if self.upper is not None:
            for i in range(n_y):
                rows.append(-eye[i])
                offs.append(self.upper[i])
        if self.lower is not None:
            for i in range(n_y):
                rows.append(eye[i])
                offs.append(-self.lower[i])
        return np.array(rows), np.array(offs)

    def term_values(self, ys: np.ndarray) -> np.ndarray:
        """Brute-force term values for a batch of outputs (n, n_y) -> (n, T)."""
        ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
        w, b = self.term_map(ys.shape[1])
        return ys @ w.T + b


def relu_count(num_terms: int) -> int:
    """ReLU neurons the encoding introduces: one per pairing, T - 1 total."""
    if num_terms < 1:
        raise ValueError("need at least one term")
    return int(num_terms) - 1


def _split_pairs(n: int, pairing: str) -> Tuple[List[int], List[Tuple[int, int]]]:
    """Indices kept unchanged and index pairs for one halving step."""
    if pairing not in PAIRINGS:
        raise ValueError(f"unknown pairing '{pairing}'")
    if n % 2 == 0:
        keep, src = [], list(range(n))
    else:
        keep, src = [0], list(range(1, n))
    h = len(src) // 2
    if pairing == "halves":
        pairs = [(src[i], src[i + h]) for i in range(h)]
    else:
        pairs = [(src[2 * i], src[2 * i + 1]) for i in range(h)]
    return keep, pairs


def min_tree_layers(
    num_terms: int, carry: int = 0, pairing: str = "halves"
) -> List[Layer]:
    """Layers mapping [carry..., terms...] to [min(terms), carry...].

    Each halving step emits one mixed-mask layer holding the surviving term
    values and the ReLU'd pairwise differences; the recombination
    ``a - relu(a - b)`` is folded into the following layer's weight. A final
    affine layer reorders the output to (min, carry).
    """
    if num_terms < 1:
        raise ValueError("need at least one term")
    layers: List[Layer] = []
    # rmap: current net outputs -> [carry..., terms...]; starts as identity.
    width = carry + num_terms
    rmap = np.eye(width)
    n = num_terms
    while n > 1:
        keep, pairs = _split_pairs(n, pairing)
        rows: List[np.ndarray] = []
        mask: List[bool] = []
        nxt_rows: List[np.ndarray] = []
        for i in range(carry):
            rows.append(rmap[i])
            mask.append(False)
        for k in keep:
            rows.append(rmap[carry + k])
            mask.append(False)
        base = carry + len(keep)
        for j, (a, b) in enumerate(pairs):
            rows.append(rmap[carry + a])
            mask.append(False)
            rows.append(rmap[carry + a] - rmap[carry + b])
            mask.append(True)
            # new term j' = a_row - relu(diff) lives at positions base+2j, base+2j+1
            nxt_rows.append((base + 2 * j, base + 2 * j + 1))
        w = np.array(rows)
        layers.append(Layer(w, np.zeros(w.shape[0]), np.array(mask)))
        # rebuild rmap over the layer just emitted
        out_w = w.shape[0]
        n_new = len(keep) + len(pairs)
        rmap = np.zeros((carry + n_new, out_w))
        for i in range(carry):
            rmap[i, i] = 1.0
        for t, _k in enumerate(keep):
            rmap[carry + t, carry + t] = 1.0
        for j, (pa, pd) in enumerate(nxt_rows):
            rmap[carry + len(keep) + j, pa] = 1.0
            rmap[carry + len(keep) + j, pd] = -1.0
        n = n_new
    # final affine: (min, carry...)
    out = np.vstack([rmap[carry : carry + 1], rmap[:carry]])
    layers.append(Layer(out, np.zeros(out.shape[0]), np.zeros(out.shape[0], dtype=bool)))
    return layers


def append_terms_and_min(
    nn: DenseNN,
    term_w: np.ndarray,
    term_b: np.ndarray,
    carry_indices: Sequence[int] = (),
    pairing: str = "halves",
) -> DenseNN:
    """Append term construction + min tree; output is (min, carried outputs).

    term_w/term_b define the terms as an affine map of the current outputs;
    carry_indices name current outputs to pass through unchanged.
    """
    term_w = np.atleast_2d(np.asarray(term_w, dtype=np.float64))
    term_b = np.asarray(term_b, dtype=np.float64).reshape(-1)
    n_y = nn.output_dim
    if term_w.shape[1] != n_y or term_w.shape[0] != term_b.shape[0]:
        raise ValueError("term map does not match network output dim")
    num_terms = term_w.shape[0]
    if num_terms < 1:
        raise ValueError("need at least one term")
    carry = len(carry_indices)
    rows = [np.eye(n_y)[i] for i in carry_indices] + list(term_w)
    bias = np.concatenate([np.zeros(carry), term_b])
    w = np.array(rows)
    terms_layer = Layer(w, bias, np.zeros(w.shape[0], dtype=bool))
    return append_layers(nn, [terms_layer] + min_tree_layers(num_terms, carry, pairing))


def append_min_encoding(nn: DenseNN, spec: ViolationSpec, pairing: str = "halves") -> DenseNN:
    """Exact worst-violation network: scalar output min over all slack terms."""
    term_w, term_b = spec.term_map(nn.output_dim)
    return append_terms_and_min(nn, term_w, term_b, (), pairing)


# ---------------------------------------------------------------------------
# big-M route (Appendix-style integer reformulation; oracle path only)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MinMilp:
    """min over i of (coeffs[i] v + offsets[i]) as a t/binary constraint system.

    Rows over (v, t): term_i(v) <= t + big_m * b_i with sum(b) = T - 1, i.e.
    exactly one b_k = 0 picks which term the scalar t must dominate.
    """

    coeffs: np.ndarray
    offsets: np.ndarray
    big_m: float

    @property
    def num_terms(self) -> int:
        return self.coeffs.shape[0]

    @property
    def num_binaries(self) -> int:
        return 0 if self.num_terms == 1 else self.num_terms

    def assignments(self):
        """All binary vectors satisfying the cardinality row."""
        t = self.num_terms
        if t == 1:
            yield np.zeros(0, dtype=np.int64)
            return
        for k in range(t):
            b = np.ones(t, dtype=np.int64)
            b[k] = 0
            yield b

    def rows_for_assignment(self, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(G, g) with G [v, t] <= g encoding term_i - t <= big_m * b_i."""
        t = self.num_terms
        nv = self.coeffs.shape[1]
        if t == 1:
            b = np.zeros(1, dtype=np.int64)
        g_mat = np.hstack([self.coeffs, -np.ones((t, 1))])
        g_rhs = -self.offsets + self.big_m * np.asarray(b, dtype=np.float64)[:t]
        assert g_mat.shape == (t, nv + 1)
        return g_mat, g_rhs


def milp_min_reformulation(coeffs, offsets, big_m: float) -> MinMilp:
    c = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    o = np.asarray(offsets, dtype=np.float64).reshape(-1)
    if c.shape[0] != o.shape[0]:
        raise ValueError("coeffs/offsets length mismatch")
    if c.shape[0] < 1:
        raise ValueError("need at least one term")
    if not big_m > 0:
        raise ValueError("big-M constant must be positive")
    return MinMilp(c, o, float(big_m))


def suggest_big_m(coeffs, offsets, lower, upper) -> float:
    """2x the interval spread of all terms over the box, plus one."""
    c = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    o = np.asarray(offsets, dtype=np.float64).reshape(-1)
    lo = np.asarray(lower, dtype=np.float64).reshape(-1)
    up = np.asarray(upper, dtype=np.float64).reshape(-1)
    mid = 0.5 * (lo + up)
    rad = 0.5 * (up - lo)
    centers = c @ mid + o
    radii = np.abs(c) @ rad
    spread = float(np.max(centers + radii) - np.min(centers - radii))
    return 2.0 * spread + 1.0
