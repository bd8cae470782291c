"""Input normalization, interval bounds, and backward linear relaxation.

The backward pass here is the plain single-objective variant (tunable lower
slopes, no constraint duals). It doubles as the reference implementation the
compiled kernel is cross-checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._core import codes
from .netmodel import DenseNN, Layer, affine_layer, prepend_affine

SplitMap = Dict[Tuple[int, int], bool]  # (layer, neuron) -> active?


@dataclass(frozen=True)
class Box:
    """Elementwise input bounds lower <= x <= upper."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        up = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != up.shape:
            raise ValueError("box bound lengths differ")
        if np.any(lo > up):
            raise ValueError("box has lower > upper")
        lo.flags.writeable = False
        up.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random((n, self.dim))
        return self.lower + u * (self.upper - self.lower)

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def fix(self, idx: int, value: float) -> "Box":
        lo = self.lower.copy()
        up = self.upper.copy()
        lo[idx] = value
        up[idx] = value
        return Box(lo, up)

    @staticmethod
    def concat(*boxes: "Box") -> "Box":
        return Box(
            np.concatenate([b.lower for b in boxes]),
            np.concatenate([b.upper for b in boxes]),
        )


@dataclass(frozen=True)
class NormBall:
    """Norm-ball input region after box normalization (p = inf supported)."""

    center: np.ndarray
    scale: np.ndarray
    eps: float = 1.0
    p: float = np.inf

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(-1)
        s = np.asarray(self.scale, dtype=np.float64).reshape(-1)
        if np.any(s < 0):
            raise ValueError("negative scale")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "scale", s)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def denormalize(self, xhat) -> np.ndarray:
        x = np.asarray(xhat, dtype=np.float64) * self.scale + self.center
        # guard against 1-ulp excursions so witnesses stay inside the box
        return np.clip(x, self.center - self.eps * self.scale, self.center + self.eps * self.scale)

    def normalize_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        s = np.where(self.scale > 0, self.scale, 1.0)
        return (x - self.center) / s


def normalize(box: Box) -> Tuple[NormBall, Layer]:
    """Ball plus the affine layer x = diag(scale) xhat + center.

    Degenerate coordinates (lower == upper) keep a zero scale: the leading
    layer maps them to the fixed value and they contribute nothing to the
    dual norm, which is equivalent to dropping them.
    """
    center = 0.5 * (box.lower + box.upper)
    scale = 0.5 * (box.upper - box.lower)
    return NormBall(center, scale), affine_layer(np.diag(scale), center)


def normalize_net(nn: DenseNN, box: Box) -> Tuple[DenseNN, NormBall]:
    """Prepend the normalization layer; input becomes ||xhat||_inf <= 1."""
    if box.dim != nn.input_dim:
        raise ValueError(f"box dim {box.dim} != network input dim {nn.input_dim}")
    ball, lead = normalize(box)
    return prepend_affine(nn, lead.weight, lead.bias), ball


def dual_norm_min(a, eps: float, p: float = np.inf) -> float:
    """min of a.x over the p-ball of radius eps: the negated dual norm."""
    if eps <= 0:
        raise ValueError("ball radius must be positive")
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    if p == np.inf:
        return float(-eps * np.abs(a).sum())
    raise ValueError(f"norm order p={p} not supported (only p=inf)")


@dataclass(frozen=True)
class LinearBound:
    """Affine lower bound a.xhat + b on a scalar output over the ball."""

    a: np.ndarray
    b: float

    def concretize(self, ball: NormBall) -> float:
        return dual_norm_min(self.a, ball.eps, ball.p) + self.b


@dataclass
class NeuronBounds:
    """Per-layer pre-activation intervals; feasible=False marks an empty cell
    (a branch whose sign constraints contradict the intervals)."""

    lower: List[np.ndarray]
    upper: List[np.ndarray]
    feasible: bool = True

    def num_layers(self) -> int:
        return len(self.lower)

    def status_layer(self, layer: Layer, k: int, splits: Optional[SplitMap]) -> np.ndarray:
        st = np.full(layer.out_dim, codes.PASS, dtype=np.int8)
        lo, up = self.lower[k], self.upper[k]
        for j in range(layer.out_dim):
            if not layer.mask[j]:
                continue
            if splits and (k, j) in splits:
                st[j] = codes.SPLIT_ACT if splits[(k, j)] else codes.SPLIT_INACT
            elif lo[j] >= 0:
                st[j] = codes.PASS
            elif up[j] <= 0:
                st[j] = codes.ZERO
            else:
                st[j] = codes.UNSTABLE
        return st

    def statuses(self, nn: DenseNN, splits: Optional[SplitMap] = None) -> List[np.ndarray]:
        return [self.status_layer(l, k, splits) for k, l in enumerate(nn.layers)]

    def unstable(self, nn: DenseNN, splits: Optional[SplitMap] = None) -> List[Tuple[int, int]]:
        out = []
        for k, st in enumerate(self.statuses(nn, splits)):
            for j in np.nonzero(st == codes.UNSTABLE)[0]:
                out.append((k, int(j)))
        return out


def interval_propagate(
    nn: DenseNN,
    ball: NormBall | Box,
    splits: Optional[SplitMap] = None,
) -> NeuronBounds:
    """Sound per-neuron pre-activation intervals over the input region.

    For a normalized net pass the NormBall (input box [-eps, eps]); a raw Box
    works too. Split constraints clip the affected neuron's interval, which
    tightens everything downstream; an impossible split marks the result
    infeasible.
    """
    if isinstance(ball, NormBall):
        lo = -ball.eps * np.ones(nn.input_dim)
        hi = ball.eps * np.ones(nn.input_dim)
    else:
        lo, hi = ball.lower.copy(), ball.upper.copy()
    lows: List[np.ndarray] = []
    ups: List[np.ndarray] = []
    feasible = True
    for k, layer in enumerate(nn.layers):
        mid = 0.5 * (lo + hi)
        rad = 0.5 * (hi - lo)
        pc = layer.weight @ mid + layer.bias
        pr = np.abs(layer.weight) @ rad
        plo, phi = pc - pr, pc + pr
        for j in range(layer.out_dim):
            if splits and (k, j) in splits:
                if splits[(k, j)]:
                    plo[j] = max(plo[j], 0.0)
                else:
                    phi[j] = min(phi[j], 0.0)
                if plo[j] > phi[j]:
                    feasible = False
                    plo[j], phi[j] = 0.0, 0.0
        lows.append(plo.copy())
        ups.append(phi.copy())
        post_lo, post_hi = plo.copy(), phi.copy()
        if layer.mask.any():
            m = layer.mask
            inact = np.zeros(layer.out_dim, dtype=bool)
            if splits:
                for (kk, j), act in splits.items():
                    if kk == k and not act:
                        inact[j] = True
            post_lo[m] = np.maximum(plo[m], 0.0)
            post_hi[m] = np.maximum(phi[m], 0.0)
            post_lo[m & inact] = 0.0
            post_hi[m & inact] = 0.0
        lo, hi = post_lo, post_hi
    return NeuronBounds(lows, ups, feasible)


def output_interval(nn: DenseNN, bounds: NeuronBounds) -> Tuple[np.ndarray, np.ndarray]:
    """Post-activation interval of the final layer's outputs."""
    k = len(nn.layers) - 1
    lo = bounds.lower[k].copy()
    hi = bounds.upper[k].copy()
    m = nn.layers[k].mask
    lo[m] = np.maximum(lo[m], 0.0)
    hi[m] = np.maximum(hi[m], 0.0)
    return lo, hi


def default_alpha(nn: DenseNN, bounds: NeuronBounds, splits: Optional[SplitMap] = None) -> np.ndarray:
    """Slope init: 1 when u >= -l else 0 (the tighter single-line choice)."""
    vals = []
    for k, j in bounds.unstable(nn, splits):
        vals.append(1.0 if bounds.upper[k][j] >= -bounds.lower[k][j] else 0.0)
    return np.array(vals, dtype=np.float64)


def backward_lower(
    nn: DenseNN,
    bounds: NeuronBounds,
    c: np.ndarray,
    alpha: np.ndarray,
    splits: Optional[SplitMap] = None,
    beta: Optional[np.ndarray] = None,
) -> LinearBound:
    """Backward substitution for a lower bound on c . output.

    An unstable neuron met with a negative coefficient takes the upper chord
    through (l, 0), (u, u); a non-negative coefficient takes the line of
    slope alpha through the origin. Split neurons add their +-beta terms.
    Reference implementation (pure numpy); the compiled kernel mirrors it.
    """
    statuses = bounds.statuses(nn, splits)
    a_idx, b_idx = index_maps(statuses)
    cur = np.asarray(c, dtype=np.float64).reshape(-1).copy()
    if cur.shape[0] != nn.output_dim:
        raise ValueError("objective length != output dim")
    acc = 0.0
    for k in range(len(nn.layers) - 1, -1, -1):
        layer = nn.layers[k]
        st = statuses[k]
        lo, up = bounds.lower[k], bounds.upper[k]
        ch = np.empty_like(cur)
        for j in range(layer.out_dim):
            cj = cur[j]
            s = st[j]
            if s == codes.PASS:
                ch[j] = cj
            elif s == codes.ZERO:
                ch[j] = 0.0
            elif s == codes.UNSTABLE:
                if up[j] <= lo[j]:
                    raise ValueError(f"inconsistent bounds at layer {k} neuron {j}")
                if cj >= 0:
                    ch[j] = cj * alpha[a_idx[k][j]]
                else:
                    slope = up[j] / (up[j] - lo[j])
                    ch[j] = cj * slope
                    acc += cj * (-slope * lo[j])
            elif s == codes.SPLIT_ACT:
                ch[j] = cj - (beta[b_idx[k][j]] if beta is not None else 0.0)
            else:  # SPLIT_INACT
                ch[j] = beta[b_idx[k][j]] if beta is not None else 0.0
        acc += ch @ layer.bias
        cur = layer.weight.T @ ch
    return LinearBound(cur, float(acc))


def index_maps(statuses: List[np.ndarray]) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Per-layer maps from neuron index to alpha slot / beta slot (-1: none)."""
    a_maps, b_maps = [], []
    na = nb = 0
    for st in statuses:
        am = np.full(st.shape[0], -1, dtype=np.int64)
        bm = np.full(st.shape[0], -1, dtype=np.int64)
        for j in range(st.shape[0]):
            if st[j] == codes.UNSTABLE:
                am[j] = na
                na += 1
            elif st[j] in (codes.SPLIT_ACT, codes.SPLIT_INACT):
                bm[j] = nb
                nb += 1
        a_maps.append(am)
        b_maps.append(bm)
    return a_maps, b_maps


def count_status(statuses: List[np.ndarray], code: int) -> int:
    return int(sum(int((st == code).sum()) for st in statuses))


def crown_lower_bound(
    nn: DenseNN,
    ball: NormBall,
    bounds: NeuronBounds,
    c: np.ndarray,
    alpha: Optional[np.ndarray] = None,
) -> LinearBound:
    """CROWN-style affine lower bound on c . output over the normalized ball."""
    if alpha is None:
        alpha = default_alpha(nn, bounds)
    return backward_lower(nn, bounds, c, alpha)


def crown_refine_bounds(nn: DenseNN, ball: NormBall, bounds: NeuronBounds) -> NeuronBounds:
    """Optional refinement: re-derive each masked neuron's interval with a
    backward pass over the prefix network instead of plain intervals."""
    lows = [b.copy() for b in bounds.lower]
    ups = [b.copy() for b in bounds.upper]
    for k, layer in enumerate(nn.layers):
        if k == 0:
            continue
        prefix = DenseNN(nn.layers[:k], nn.input_dim, nn.layers[k - 1].out_dim)
        pre_bounds = NeuronBounds(lows[:k], ups[:k])
        for j in range(layer.out_dim):
            row = layer.weight[j]
            if not np.any(row):
                continue
            lb = backward_lower(prefix, pre_bounds, row, default_alpha(prefix, pre_bounds))
            cand_lo = lb.concretize(ball) + layer.bias[j]
            ub = backward_lower(prefix, pre_bounds, -row, default_alpha(prefix, pre_bounds))
            cand_hi = -(ub.concretize(ball)) + layer.bias[j]
            lows[k][j] = max(lows[k][j], cand_lo)
            ups[k][j] = min(ups[k][j], cand_hi)
    return NeuronBounds(lows, ups, bounds.feasible)
