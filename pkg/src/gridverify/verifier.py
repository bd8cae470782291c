"""Complete verification: branch-and-bound over ReLU splits and binaries.

Node lower bounds come from the dual ascent; fully split nodes (no unstable
neurons, all binaries fixed) are plain LPs and are solved exactly, so a run
to completion recovers the true optimum. The exhaustive oracle enumerates
activation patterns times binary assignments and solves one LP per leaf; it
shares only the LP solver and interval arithmetic with the path it checks.
"""

from __future__ import annotations

import heapq
import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import lpcore
from ._core import AdamParams, codes
from .dualopt import ConstrainedProblem, DualEvaluator, DualState, SplitMap
from .netmodel import DenseNN, forward
from .relax import Box, NeuronBounds, interval_propagate, normalize_net

VERIFIED = "verified"
REFUTED = "refuted"
UNKNOWN = "unknown"


class EnumerationCap(RuntimeError):
    """Oracle instance too large for exhaustive enumeration."""


@dataclass(frozen=True)
class BinaryGroup:
    """Binary z coordinates with an optional cardinality floor sum(b) >= min_on."""

    z_indices: Tuple[int, ...]
    min_on: Optional[int] = None
    forbidden_zero: Tuple[int, ...] = ()

    def assignments(self) -> Iterable[Dict[int, float]]:
        k = len(self.z_indices)
        for bits in itertools.product((1, 0), repeat=k):
            if self.min_on is not None and sum(bits) < self.min_on:
                continue
            if any(b == 0 and idx in self.forbidden_zero for b, idx in zip(bits, self.z_indices)):
                continue
            yield {idx: float(b) for idx, b in zip(self.z_indices, bits)}

    def compatible(self, z_fix: Dict[int, float]) -> bool:
        """Does any assignment extend the given fixings?"""
        zeros = sum(1 for i in self.z_indices if z_fix.get(i) == 0.0)
        if self.min_on is not None and len(self.z_indices) - zeros < self.min_on:
            return False
        if any(z_fix.get(i) == 0.0 and i in self.forbidden_zero for i in self.z_indices):
            return False
        return True


@dataclass
class VerificationProblem:
    constrained: ConstrainedProblem
    binaries: List[BinaryGroup] = field(default_factory=list)
    completer: Optional[object] = None  # callable x -> (z, value) or None
    meta: Dict = field(default_factory=dict)

    def binary_indices(self) -> List[int]:
        return [i for g in self.binaries for i in g.z_indices]

    def binary_assignments(self) -> Iterable[Dict[int, float]]:
        if not self.binaries:
            yield {}
            return
        for combo in itertools.product(*(g.assignments() for g in self.binaries)):
            merged: Dict[int, float] = {}
            for d in combo:
                merged.update(d)
            yield merged


def as_verification(problem) -> VerificationProblem:
    if isinstance(problem, VerificationProblem):
        return problem
    return VerificationProblem(problem)


# ---------------------------------------------------------------------------
# node LP: exact at leaves, triangle relaxation elsewhere
# ---------------------------------------------------------------------------


class NodeLp:
    """LP over (x, z, sigma) for one node of the search tree."""

    def __init__(
        self,
        problem: ConstrainedProblem,
        splits: Optional[SplitMap] = None,
        z_fix: Optional[Dict[int, float]] = None,
        bounds: Optional[NeuronBounds] = None,
    ):
        self.problem = problem
        splits = splits or {}
        z_fix = z_fix or {}
        nn = problem.nn
        if bounds is None:
            bounds = interval_propagate(nn, problem.input_box, splits)
        self.bounds = bounds
        self.cell_feasible = bounds.feasible
        statuses = bounds.statuses(nn, splits)
        nx, nz = nn.input_dim, problem.n_z
        unstable = bounds.unstable(nn, splits)
        self.unstable = unstable
        ns = len(unstable)
        sig_of = {key: i for i, key in enumerate(unstable)}
        nv = nx + nz + ns

        m = np.zeros((nx, nv))
        m[:, :nx] = np.eye(nx)
        t = np.zeros(nx)
        g_rows: List[np.ndarray] = []
        g_rhs: List[float] = []
        for k, layer in enumerate(nn.layers):
            pre_m = layer.weight @ m
            pre_t = layer.weight @ t + layer.bias
            post_m = pre_m.copy()
            post_t = pre_t.copy()
            st = statuses[k]
            for j in range(layer.out_dim):
                s = st[j]
                if s == codes.PASS:
                    continue
                if s == codes.ZERO:
                    post_m[j] = 0.0
                    post_t[j] = 0.0
                elif s == codes.SPLIT_ACT:
                    g_rows.append(-pre_m[j])
                    g_rhs.append(pre_t[j])
                elif s == codes.SPLIT_INACT:
                    g_rows.append(pre_m[j])
                    g_rhs.append(-pre_t[j])
                    post_m[j] = 0.0
                    post_t[j] = 0.0
                else:  # UNSTABLE -> triangle rows on a fresh sigma variable
                    i = sig_of[(k, j)]
                    lo = bounds.lower[k][j]
                    up = bounds.upper[k][j]
                    slope = up / (up - lo)
                    e_sig = np.zeros(nv)
                    e_sig[nx + nz + i] = 1.0
                    g_rows.append(pre_m[j] - e_sig)
                    g_rhs.append(-pre_t[j])  # pre - sigma <= 0
                    g_rows.append(e_sig - slope * pre_m[j])
                    g_rhs.append(slope * (pre_t[j] - lo))  # sigma <= slope (pre - lo)
                    post_m[j] = e_sig
                    post_t[j] = 0.0
            m, t = post_m, post_t
        self.y_m, self.y_t = m, t

        a_rows: List[np.ndarray] = []
        a_rhs: List[float] = []
        for r in range(problem.n_eq):
            row = problem.a_y[r] @ m
            row_full = row.copy()
            row_full[nx : nx + nz] += problem.a_z[r]
            a_rows.append(row_full)
            a_rhs.append(problem.e[r] - float(problem.a_y[r] @ t))
        for r in range(problem.n_ineq):
            row = problem.b_y[r] @ m
            row_full = row.copy()
            row_full[nx : nx + nz] += problem.b_z[r]
            g_rows.append(row_full)
            g_rhs.append(problem.h[r] - float(problem.b_y[r] @ t))

        c = problem.c_y @ m
        c[nx : nx + nz] += problem.c_z
        self.obj_const = float(problem.c_y @ t)

        lb = np.concatenate(
            [
                problem.input_box.lower,
                problem.z_box.lower if nz else np.zeros(0),
                np.zeros(ns),
            ]
        )
        ub = np.concatenate(
            [
                problem.input_box.upper,
                problem.z_box.upper if nz else np.zeros(0),
                np.array([max(bounds.upper[k][j], 0.0) for (k, j) in unstable]),
            ]
        )
        for idx, val in z_fix.items():
            lb[nx + idx] = val
            ub[nx + idx] = val
        self.lp = lpcore.LpProblem.build(
            c,
            a_eq=np.array(a_rows) if a_rows else None,
            b_eq=np.array(a_rhs) if a_rows else None,
            a_ub=np.array(g_rows) if g_rows else None,
            b_ub=np.array(g_rhs) if g_rows else None,
            lb=lb,
            ub=ub,
        )
        self.nx, self.nz = nx, nz

    def solve(self):
        """(status, value, x, z, LpResult); value includes the affine offset."""
        if not self.cell_feasible:
            return lpcore.INFEASIBLE, None, None, None, None
        res = lpcore.solve_lp(self.lp)
        if not res.optimal:
            return res.status, None, None, None, res
        x = res.x[: self.nx]
        z = res.x[self.nx : self.nx + self.nz]
        return res.status, res.value + self.obj_const, x, z, res

    @property
    def is_exact(self) -> bool:
        return len(self.unstable) == 0


def relaxation_lp(
    problem,
    splits: Optional[SplitMap] = None,
    z_fix: Optional[Dict[int, float]] = None,
):
    """Triangle-relaxation LP value for a node (root by default: binaries and
    all unstable neurons relaxed). Returns (value, NodeLp)."""
    cp = as_verification(problem).constrained
    node = NodeLp(cp, splits, z_fix)
    status, value, _x, _z, _res = node.solve()
    if status != lpcore.OPTIMAL:
        value = np.inf if status == lpcore.INFEASIBLE else -np.inf
    return value, node


# ---------------------------------------------------------------------------
# witness handling
# ---------------------------------------------------------------------------


def witness_value(problem, x, z=None) -> float:
    cp = as_verification(problem).constrained
    y = forward(cp.nn, x)
    val = float(cp.c_y @ y)
    if cp.n_z and z is not None:
        val += float(cp.c_z @ np.asarray(z, dtype=np.float64))
    return val


def check_witness(problem, x, z=None, tol: float = 1e-6) -> Tuple[bool, float, float]:
    """(feasible, metric value, max constraint residual) by re-evaluation."""
    cp = as_verification(problem).constrained
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = forward(cp.nn, x)
    res = 0.0
    if not cp.input_box.contains(x, tol):
        res = np.inf
    zv = np.zeros(cp.n_z) if z is None else np.asarray(z, dtype=np.float64).reshape(-1)
    if cp.n_z:
        if not cp.z_box.contains(zv, tol):
            res = np.inf
    if cp.n_eq:
        res = max(res, float(np.max(np.abs(cp.a_y @ y + cp.a_z @ zv - cp.e))))
    if cp.n_ineq:
        res = max(res, float(np.max(np.maximum(cp.b_y @ y + cp.b_z @ zv - cp.h, 0.0))))
    return res <= tol, witness_value(problem, x, zv if cp.n_z else None), res


# ---------------------------------------------------------------------------
# exhaustive oracle
# ---------------------------------------------------------------------------


@dataclass
class OracleResult:
    gamma: float
    x: Optional[np.ndarray]
    z: Optional[np.ndarray]
    leaves: int
    feasible: bool

    @property
    def verified(self) -> bool:
        return self.gamma >= 0


def oracle_exact(problem, max_unstable: int = 12, max_binaries: int = 12) -> OracleResult:
    """Global minimum by activation-pattern x binary enumeration, one LP per
    non-empty leaf. Interval refinement under the split prefix skips
    provably empty subtrees."""
    vp = as_verification(problem)
    cp = vp.constrained
    root = interval_propagate(cp.nn, cp.input_box)
    n_un = len(root.unstable(cp.nn))
    n_bin = len(vp.binary_indices())
    if n_un > max_unstable:
        raise EnumerationCap(f"{n_un} unstable neurons exceeds the cap {max_unstable}")
    if n_bin > max_binaries:
        raise EnumerationCap(f"{n_bin} binaries exceeds the cap {max_binaries}")

    best = np.inf
    bx = bz = None
    leaves = 0

    def rec(splits: SplitMap, z_fix: Dict[int, float]):
        nonlocal best, bx, bz, leaves
        bounds = interval_propagate(cp.nn, cp.input_box, splits)
        if not bounds.feasible:
            return
        rem = bounds.unstable(cp.nn, splits)
        if not rem:
            node = NodeLp(cp, splits, z_fix, bounds)
            status, value, x, z, _res = node.solve()
            leaves += 1
            if status == lpcore.OPTIMAL and value < best:
                best, bx, bz = value, x, z
            return
        k, j = rem[0]
        rec({**splits, (k, j): True}, z_fix)
        rec({**splits, (k, j): False}, z_fix)

    for z_fix in vp.binary_assignments():
        rec({}, z_fix)
    return OracleResult(best, bx, bz, leaves, np.isfinite(best))


# ---------------------------------------------------------------------------
# projected-gradient refutation search
# ---------------------------------------------------------------------------


@dataclass
class AttackResult:
    value: float
    x: np.ndarray
    z: Optional[np.ndarray]


def _net_metric_grad(net: DenseNN, xhat: np.ndarray, cy: np.ndarray):
    pres = []
    v = xhat
    for layer in net.layers:
        pre = layer.weight @ v + layer.bias
        pres.append(pre)
        v = np.where(layer.mask, np.maximum(pre, 0.0), pre)
    g = cy.copy()
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        deriv = np.where(layer.mask, (pres[k] > 0).astype(np.float64), 1.0)
        g = layer.weight.T @ (g * deriv)
    return float(cy @ v), g


def attack(problem, restarts: int = 16, steps: int = 60, seed: int = 0) -> Optional[AttackResult]:
    """PGD on the input ball minimizing the metric; auxiliary variables are
    completed per candidate (problem completer, else one feasibility LP per
    binary assignment). The returned value is a true upper bound."""
    vp = as_verification(problem)
    cp = vp.constrained
    net, ball = normalize_net(cp.nn, cp.input_box)
    rng = np.random.default_rng(seed)
    d = cp.nn.input_dim
    starts = [np.zeros(d)]
    for _ in range(max(restarts - 1, 0)):
        if rng.random() < 0.5:
            starts.append(rng.uniform(-1.0, 1.0, d))
        else:
            starts.append(rng.choice([-1.0, 1.0], d))
    cands: List[Tuple[float, np.ndarray]] = []
    for x0 in starts:
        x = x0.copy()
        bestv, bestx = np.inf, x.copy()
        lr = 0.5
        for s in range(steps):
            val, g = _net_metric_grad(net, x, cp.c_y)
            if val < bestv:
                bestv, bestx = val, x.copy()
            x = np.clip(x - lr * np.sign(g), -1.0, 1.0)
            lr *= 0.93
        val, _ = _net_metric_grad(net, x, cp.c_y)
        if val < bestv:
            bestv, bestx = val, x.copy()
        cands.append((bestv, bestx))
    cands.sort(key=lambda t: t[0])

    best: Optional[AttackResult] = None
    for _val, xhat in cands[: max(4, restarts // 2)]:
        x_raw = ball.denormalize(xhat)
        got = complete_candidate(vp, x_raw)
        if got is None:
            continue
        x_new, z, value = got
        if best is None or value < best.value:
            best = AttackResult(value, x_new, z)
    return best


def complete_candidate(vp: VerificationProblem, x_raw: np.ndarray):
    """Feasible (x, z, metric value) for a candidate input, or None; the
    completer may repair the input (e.g. replace flows by the physics
    solution for the load part)."""
    cp = vp.constrained
    if vp.completer is not None:
        got = vp.completer(x_raw)
        if got is None:
            return None
        x_new, z, _value = got
        ok, val, _res = check_witness(vp, x_new, z)
        return (x_new, z, val) if ok else None
    y = forward(cp.nn, x_raw)
    if cp.n_z == 0:
        ok, val, _res = check_witness(vp, x_raw, None)
        return (x_raw, None, val) if ok else None
    best = None
    for z_fix in vp.binary_assignments():
        lb = cp.z_box.lower.copy()
        ub = cp.z_box.upper.copy()
        for idx, v in z_fix.items():
            lb[idx] = v
            ub[idx] = v
        lp = lpcore.LpProblem.build(
            cp.c_z,
            a_eq=cp.a_z if cp.n_eq else None,
            b_eq=(cp.e - cp.a_y @ y) if cp.n_eq else None,
            a_ub=cp.b_z if cp.n_ineq else None,
            b_ub=(cp.h - cp.b_y @ y) if cp.n_ineq else None,
            lb=lb,
            ub=ub,
        )
        res = lpcore.solve_lp(lp)
        if res.optimal:
            value = float(cp.c_y @ y) + res.value
            if best is None or value < best[2]:
                best = (x_raw, res.x, value)
    return best


# ---------------------------------------------------------------------------
# branch and bound
# ---------------------------------------------------------------------------


@dataclass
class VerifyConfig:
    timeout: float = 120.0
    node_budget: int = 20000
    ascent: AdamParams = field(default_factory=lambda: AdamParams(iters=400, lr=0.1))
    attack_restarts: int = 16
    refine: bool = False  # run the gap to gap_tol instead of stopping at a sign
    gap_tol: float = 1e-9
    workers: int = 1
    seed: int = 0


@dataclass
class Verdict:
    status: str
    gamma_lower: float
    upper_value: Optional[float]
    witness_x: Optional[np.ndarray]
    witness_z: Optional[np.ndarray]
    nodes: int
    wall_time: float
    iterations: int
    optimum: Optional[float] = None

    @property
    def exit_code(self) -> int:
        return {VERIFIED: 0, REFUTED: 1}.get(self.status, 2)


@dataclass
class _Node:
    bound: float
    depth: int
    splits: SplitMap
    z_fix: Dict[int, float]
    ev: DualEvaluator
    state: DualState


def _binary_children(vp: VerificationProblem, z_fix: Dict[int, float], idx: int):
    for v in (1.0, 0.0):
        child = {**z_fix, idx: v}
        if all(g.compatible(child) for g in vp.binaries):
            yield child


def _pick_branch(vp: VerificationProblem, node: _Node):
    """('binary', idx) or ('relu', (k, j)); binaries first when a group's
    cardinality floor is near-tight (scenario enumeration), else the unstable
    neuron with the largest relaxation-gap score."""
    unfixed = [i for i in vp.binary_indices() if i not in node.z_fix]
    tight = any(
        g.min_on is not None and g.min_on >= len(g.z_indices) - 1 for g in vp.binaries
    )
    if unfixed and (tight or not node.ev.unstable):
        return ("binary", unfixed[0])
    if node.ev.unstable:
        coeffs = node.ev.coeffs(node.state)
        bd = node.ev.bounds
        scores = {}
        for (k, j) in node.ev.unstable:
            lo = bd.lower[k + 1][j]
            up = bd.upper[k + 1][j]
            cj = coeffs[(k, j)]
            gap = -cj * up * lo / (up - lo) if cj < 0 else 0.0
            scores[(k, j)] = gap + abs(cj) * min(up, -lo) * 1e-3 + 1e-12
        key = max(sorted(scores), key=lambda kj: scores[kj])
        return ("relu", key)
    if unfixed:
        return ("binary", unfixed[0])
    return None


def _bound_child(vp, splits, z_fix, parent: Optional[_Node], cfg: VerifyConfig, threshold: float):
    """Bound one node (pure: no shared-state mutation). Returns a tagged
    result merged serially by the main loop."""
    cp = vp.constrained
    ev = DualEvaluator(cp, splits, z_fix)
    if not ev.feasible:
        return ("skip", 0)
    all_fixed = all(i in z_fix for i in vp.binary_indices())
    if not ev.unstable and all_fixed:
        node_lp = NodeLp(cp, splits, z_fix, None)
        status, value, x, z, _ = node_lp.solve()
        if status != lpcore.OPTIMAL:
            return ("skip", 0)
        return ("leaf", 0, value, x, z)
    state0 = ev.transfer_state(parent.ev, parent.state) if parent else None
    cfg_node = replace(cfg.ascent, early_stop=threshold)
    best, trace, _fin, bstate = ev.ascend(state0, cfg_node)
    iters = trace.values.size
    bound = max(best, parent.bound if parent else -np.inf)
    if bound >= threshold:
        return ("pruned", iters, bound)
    node = _Node(bound, (parent.depth + 1) if parent else 0, splits, z_fix, ev, bstate)
    return ("push", iters, node)


def _child_specs(vp, node: _Node):
    choice = _pick_branch(vp, node)
    if choice is None:
        return []
    kind, what = choice
    if kind == "binary":
        return [(node.splits, fix) for fix in _binary_children(vp, node.z_fix, what)]
    return [({**node.splits, what: active}, node.z_fix) for active in (True, False)]


def verify(problem, config: Optional[VerifyConfig] = None) -> Verdict:
    vp = as_verification(problem)
    cfg = config or VerifyConfig()
    t0 = time.perf_counter()
    iterations = 0

    ub = np.inf
    wx = wz = None
    got = attack(vp, restarts=cfg.attack_restarts, seed=cfg.seed)
    if got is not None:
        ub, wx, wz = got.value, got.x, got.z
    if not cfg.refine and ub < 0:
        ok, val, _ = check_witness(vp, wx, wz)
        if ok and val < 0:
            return Verdict(REFUTED, -np.inf, val, wx, wz, 0, time.perf_counter() - t0, 0)

    settled_min = np.inf  # min over pruned bounds and exact leaf values
    heap: List[Tuple[float, int, int, _Node]] = []
    seq = itertools.count()
    nodes = 0
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def prune_threshold() -> float:
        return (ub - cfg.gap_tol) if cfg.refine else 0.0

    def merge(result):
        nonlocal ub, wx, wz, settled_min, nodes, iterations
        nodes += 1
        tag = result[0]
        if tag == "skip":
            return
        iterations += result[1]
        if tag == "leaf":
            _t, _i, value, x, z = result
            settled_min = min(settled_min, value)
            if value < ub:
                ok, val, _res = check_witness(vp, x, z)
                if ok:
                    ub, wx, wz = val, x, z
        elif tag == "pruned":
            settled_min = min(settled_min, result[2])
        else:
            node = result[2]
            if cfg.refine and node.bound >= prune_threshold():
                settled_min = min(settled_min, node.bound)
                return
            heapq.heappush(heap, (node.bound, node.depth, next(seq), node))

    merge(_bound_child(vp, {}, {}, None, cfg, prune_threshold()))

    status = None
    while heap:
        if time.perf_counter() - t0 > cfg.timeout or nodes > cfg.node_budget:
            status = UNKNOWN
            break
        bound = heap[0][0]
        if not cfg.refine:
            if ub < 0:
                status = REFUTED
                break
            if bound >= 0:
                status = VERIFIED
                break
        elif bound >= ub - cfg.gap_tol:
            status = VERIFIED if ub >= 0 else REFUTED
            break
        batch = []
        while heap and len(batch) < max(cfg.workers, 1):
            _b, _d, _s, node = heapq.heappop(heap)
            batch.append(node)
        thr = prune_threshold()
        tasks = [(sp, zf, parent) for parent in batch for sp, zf in _child_specs(vp, parent)]
        if pool is not None and len(tasks) > 1:
            results = list(
                pool.map(lambda t: _bound_child(vp, t[0], t[1], t[2], cfg, thr), tasks)
            )
        else:
            results = [_bound_child(vp, sp, zf, parent, cfg, thr) for sp, zf, parent in tasks]
        for res in results:
            merge(res)
    if pool is not None:
        pool.shutdown(wait=False)

    lower = settled_min
    if heap:
        lower = min(lower, min(b for b, *_ in heap))
    if status is None:  # search tree exhausted
        if lower >= 0:
            status = VERIFIED
        elif ub < 0:
            status = REFUTED
        else:
            status = UNKNOWN
    optimum = None
    if status in (VERIFIED, REFUTED) and np.isfinite(ub):
        if ub - lower <= max(cfg.gap_tol, 1e-9) * max(1.0, abs(ub)) + 1e-9:
            optimum = ub
    return Verdict(
        status,
        float(lower),
        None if not np.isfinite(ub) else float(ub),
        wx,
        wz,
        nodes,
        time.perf_counter() - t0,
        iterations,
        optimum,
    )
