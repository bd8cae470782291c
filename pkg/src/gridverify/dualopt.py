"""Constraint dualization into the backward bound, and projected Adam ascent.

The bounded problem is  min c_y.y + c_z.z  over  y = NN(x), x in the input
box, z in the z box, subject to  A_y y + A_z z = e  (multipliers lam) and
B_y y + B_z z <= h  (multipliers mu >= 0).  Every dual state yields a valid
lower bound: the network term is bounded backward with the lam/mu-shifted
output objective, the z term is linear, and the inner minimum over the
concatenated normalized primal is the closed-form dual norm.

This strictly contains the narrower shape where the equalities read A y = z
(see ConstrainedProblem.eq12), which cannot express coupled physics rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._core import AdamParams, PackedProblem, make_kernel, make_python_kernel
from ._core import codes
from .netmodel import DenseNN
from .relax import (
    Box,
    NeuronBounds,
    default_alpha,
    interval_propagate,
    normalize_net,
    output_interval,
)

SplitMap = Dict[Tuple[int, int], bool]  # raw-net (layer, neuron) -> active?


class ZBoxError(ValueError):
    """Unbounded or inconsistent auxiliary-variable bounds."""


def _block(mat, rows: int, cols: int, name: str) -> np.ndarray:
    if mat is None:
        return np.zeros((rows, cols))
    m = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    if m.shape != (rows, cols):
        raise ValueError(f"{name} must be {rows}x{cols}, got {m.shape}")
    return m


@dataclass(frozen=True)
class ConstrainedProblem:
    nn: DenseNN
    input_box: Box
    a_y: np.ndarray
    a_z: np.ndarray
    e: np.ndarray
    b_y: np.ndarray
    b_z: np.ndarray
    h: np.ndarray
    c_y: np.ndarray
    c_z: np.ndarray
    z_box: Box

    @classmethod
    def build(
        cls,
        nn: DenseNN,
        input_box: Box,
        a_y=None,
        a_z=None,
        e=None,
        b_y=None,
        b_z=None,
        h=None,
        c_y=None,
        c_z=None,
        z_box: Optional[Box] = None,
    ) -> "ConstrainedProblem":
        ny = nn.output_dim
        if z_box is None:
            z_box = Box(np.zeros(0), np.zeros(0))
        nz = z_box.dim
        e = np.zeros(0) if e is None else np.asarray(e, dtype=np.float64).reshape(-1)
        h = np.zeros(0) if h is None else np.asarray(h, dtype=np.float64).reshape(-1)
        p, q = e.shape[0], h.shape[0]
        prob = cls(
            nn,
            input_box,
            _block(a_y, p, ny, "a_y"),
            _block(a_z, p, nz, "a_z"),
            e,
            _block(b_y, q, ny, "b_y"),
            _block(b_z, q, nz, "b_z"),
            h,
            np.zeros(ny) if c_y is None else np.asarray(c_y, dtype=np.float64).reshape(-1),
            np.zeros(nz) if c_z is None else np.asarray(c_z, dtype=np.float64).reshape(-1),
            z_box,
        )
        if prob.c_y.shape[0] != ny or prob.c_z.shape[0] != nz:
            raise ValueError("objective length mismatch")
        if input_box.dim != nn.input_dim:
            raise ValueError("input box does not match network input dim")
        return prob

    @classmethod
    def eq12(cls, nn, input_box, a, b=None, h=None, c=None, z_box=None):
        """The narrow published shape: z = A y, B z <= h, objective c.z."""
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        nz = a.shape[0]
        return cls.build(
            nn,
            input_box,
            a_y=a,
            a_z=-np.eye(nz),
            e=np.zeros(nz),
            b_z=b,
            h=h,
            c_z=c,
            z_box=z_box,
        )

    @property
    def n_z(self) -> int:
        return self.z_box.dim

    @property
    def n_eq(self) -> int:
        return self.e.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.h.shape[0]


@dataclass
class DualState:
    """Relaxation slopes and constraint multipliers; projected feasible."""

    alpha: np.ndarray
    beta: np.ndarray
    lam: np.ndarray
    mu: np.ndarray

    def project(self) -> "DualState":
        return DualState(
            np.clip(self.alpha, 0.0, 1.0),
            np.maximum(self.beta, 0.0),
            np.asarray(self.lam, dtype=np.float64),
            np.maximum(self.mu, 0.0),
        )

    def copy(self) -> "DualState":
        return DualState(self.alpha.copy(), self.beta.copy(), self.lam.copy(), self.mu.copy())


@dataclass
class AscentTrace:
    values: np.ndarray
    best: float
    crossed_at: Optional[int] = None

    def __post_init__(self):
        if self.values.size and not np.isclose(self.best, float(np.max(self.values))):
            raise ValueError("trace best must equal the running maximum")


class DualEvaluator:
    """One branch-and-bound node's dual bound machinery.

    Splits use raw-network layer indices; the evaluator works on the
    normalized net internally. z_fix pins auxiliary coordinates (fixed
    binaries) by collapsing their box.
    """

    def __init__(
        self,
        problem: ConstrainedProblem,
        splits: Optional[SplitMap] = None,
        z_fix: Optional[Dict[int, float]] = None,
        bounds: Optional[NeuronBounds] = None,
        pure_python: bool = False,
    ):
        self.problem = problem
        self.splits_raw = dict(splits or {})
        self.z_fix = dict(z_fix or {})
        self.net, self.ball = normalize_net(problem.nn, problem.input_box)
        self.splits = {(k + 1, j): v for (k, j), v in self.splits_raw.items()}
        if bounds is None:
            bounds = interval_propagate(self.net, self.ball, self.splits)
        self.bounds = bounds
        self.feasible = bounds.feasible
        statuses = bounds.statuses(self.net, self.splits)
        self.statuses = statuses
        self.unstable = [(k - 1, j) for (k, j) in bounds.unstable(self.net, self.splits)]
        self.split_order = [
            (k - 1, int(j))
            for k, st in enumerate(statuses)
            for j in np.nonzero((st == codes.SPLIT_ACT) | (st == codes.SPLIT_INACT))[0]
        ]
        z_mu = problem.z_box.center().copy() if problem.n_z else np.zeros(0)
        z_sig = (0.5 * (problem.z_box.upper - problem.z_box.lower)) if problem.n_z else np.zeros(0)
        for idx, val in self.z_fix.items():
            z_mu[idx] = val
            z_sig[idx] = 0.0
        self.pp = PackedProblem(
            [l.weight for l in self.net.layers],
            [l.bias for l in self.net.layers],
            statuses,
            bounds.lower,
            bounds.upper,
            a_y=problem.a_y,
            a_z=problem.a_z,
            e=problem.e,
            b_y=problem.b_y,
            b_z=problem.b_z,
            h=problem.h,
            c_y=problem.c_y,
            c_z=problem.c_z,
            z_mu=z_mu,
            z_sig=z_sig,
            eps=self.ball.eps,
        )
        self.kernel = make_python_kernel(self.pp) if pure_python else make_kernel(self.pp)

    # -- states ---------------------------------------------------------------

    def zero_state(self) -> DualState:
        return DualState(*self.pp.zero_state())

    def init_state(self) -> DualState:
        s = self.zero_state()
        s.alpha = default_alpha(self.net, self.bounds, self.splits)
        return s

    def _check(self, state: DualState) -> DualState:
        s = state
        if (
            s.alpha.shape[0] != self.pp.n_alpha
            or s.beta.shape[0] != self.pp.n_beta
            or s.lam.shape[0] != self.pp.p_eq
            or s.mu.shape[0] != self.pp.q_in
        ):
            raise ValueError(
                f"dual state sizes {(s.alpha.shape[0], s.beta.shape[0], s.lam.shape[0], s.mu.shape[0])} "
                f"do not match problem {(self.pp.n_alpha, self.pp.n_beta, self.pp.p_eq, self.pp.q_in)}"
            )
        return s

    def transfer_state(self, other: "DualEvaluator", state: DualState) -> DualState:
        """Warm start: carry multipliers over by neuron identity."""
        s = self.init_state()
        amap = {key: i for i, key in enumerate(other.unstable)}
        bmap = {key: i for i, key in enumerate(other.split_order)}
        for i, key in enumerate(self.unstable):
            if key in amap:
                s.alpha[i] = state.alpha[amap[key]]
        for i, key in enumerate(self.split_order):
            if key in bmap:
                s.beta[i] = state.beta[bmap[key]]
        s.lam = state.lam.copy()
        s.mu = state.mu.copy()
        return s

    # -- evaluation -----------------------------------------------------------

    def value(self, state: DualState) -> float:
        s = self._check(state)
        val, *_ = self.kernel.eval(s.alpha, s.beta, s.lam, s.mu, False)
        return float(val)

    def gradient(self, state: DualState) -> DualState:
        s = self._check(state)
        _, ga, gb, gl, gm = self.kernel.eval(s.alpha, s.beta, s.lam, s.mu, True)
        return DualState(ga, gb, gl, gm)

    def coeffs(self, state: DualState) -> Dict[Tuple[int, int], float]:
        """Backward-pass coefficient met at each unstable neuron (raw index)."""
        s = self._check(state)
        flat = self.kernel.coeffs(s.alpha, s.beta, s.lam, s.mu)
        out = {}
        for (k, j) in self.unstable:
            out[(k, j)] = float(flat[self.pp.n_off[k + 1] + j])
        return out

    def ascend(self, state0: Optional[DualState] = None, cfg: Optional[AdamParams] = None):
        """Projected Adam ascent; returns (best, trace, final, best_state)."""
        cfg = cfg or AdamParams()
        s = self._check(state0.project() if state0 is not None else self.init_state())
        best, bt, fin, trace, iters, crossed = self.kernel.run_adam(
            s.alpha, s.beta, s.lam, s.mu, cfg
        )
        return (
            float(best),
            AscentTrace(trace, float(best), None if crossed < 0 else int(crossed)),
            DualState(*fin),
            DualState(*bt),
        )


# -- module-level spec surface ----------------------------------------------


def dual_value(problem: ConstrainedProblem, state: DualState) -> float:
    return DualEvaluator(problem).value(state)


def dual_gradient(problem: ConstrainedProblem, state: DualState) -> DualState:
    return DualEvaluator(problem).gradient(state)


def ascend(
    problem: ConstrainedProblem,
    state0: Optional[DualState] = None,
    config: Optional[AdamParams] = None,
):
    """(best bound, trace, final state) for the root node."""
    best, trace, final, _ = DualEvaluator(problem).ascend(state0, config)
    return best, trace, final


def tighten_z_box(
    problem: ConstrainedProblem,
    hints: Optional[Dict[int, Tuple[float, float]]] = None,
    rounds: int = 8,
) -> Box:
    """Interval fixpoint over the constraint rows.

    Starts from the problem's stated z box (infinities allowed) plus hints,
    bounds the network outputs by interval propagation, then repeatedly
    isolates each z coordinate in every row. Coordinates still unbounded at
    the end are an error: no sound bound is derivable.
    """
    nz = problem.n_z
    lo = problem.z_box.lower.astype(np.float64).copy()
    hi = problem.z_box.upper.astype(np.float64).copy()
    for idx, (a, b) in (hints or {}).items():
        lo[idx] = max(lo[idx], a)
        hi[idx] = min(hi[idx], b)
    net, ball = normalize_net(problem.nn, problem.input_box)
    ylo, yhi = output_interval(net, interval_propagate(net, ball))

    rows: List[Tuple[np.ndarray, np.ndarray, float, bool]] = []
    for r in range(problem.n_ineq):
        rows.append((problem.b_y[r], problem.b_z[r], float(problem.h[r]), False))
    for r in range(problem.n_eq):
        rows.append((problem.a_y[r], problem.a_z[r], float(problem.e[r]), True))

    def interval_dot(coef, a, b):
        pos = np.maximum(coef, 0.0)
        neg = np.minimum(coef, 0.0)
        low = pos @ a + neg @ b
        high = pos @ b + neg @ a
        return low, high

    for _ in range(rounds):
        changed = False
        for wy, wz, rhs, is_eq in rows:
            y_lo, y_hi = interval_dot(wy, ylo, yhi)
            nzi = np.nonzero(wz)[0]
            for i in nzi:
                rest = wz.copy()
                rest[i] = 0.0
                r_lo, r_hi = interval_dot(rest, lo, hi)
                coef = wz[i]
                # wy.y + rest.z + coef*z_i <= rhs (and >= rhs when equality)
                top = rhs - y_lo - r_lo
                if np.isfinite(top):
                    cand = top / coef
                    if coef > 0 and cand < hi[i] - 1e-15:
                        hi[i] = cand
                        changed = True
                    elif coef < 0 and cand > lo[i] + 1e-15:
                        lo[i] = cand
                        changed = True
                if is_eq:
                    bot = rhs - y_hi - r_hi
                    if np.isfinite(bot):
                        cand = bot / coef
                        if coef > 0 and cand > lo[i] + 1e-15:
                            lo[i] = cand
                            changed = True
                        elif coef < 0 and cand < hi[i] - 1e-15:
                            hi[i] = cand
                            changed = True
        if not changed:
            break

    bad = [i for i in range(nz) if not (np.isfinite(lo[i]) and np.isfinite(hi[i]))]
    if bad:
        raise ZBoxError(
            f"z coordinates {bad} have no derivable bound; supply an explicit one"
        )
    if np.any(lo > hi + 1e-12):
        raise ZBoxError("constraint system implies an empty z box")
    return Box(lo, np.maximum(hi, lo))
