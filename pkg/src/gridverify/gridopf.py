"""DC power systems: SC-OPF, N-1 training data, and verification builders.

Conventions: line flow i is susceptance_i * (theta_from - theta_to); nodal
balance reads S_g p_g - S_d p_d = E^T p_f. The N-1 data generator solves one
LP with scenario-replicated flow/angle variables and a shared dispatch, so a
returned sample survives every single-line outage.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import lpcore
from .fileio import LineReader, ParseError, fmt_float, fmt_vec, text_hash
from .minenc import ViolationSpec, append_terms_and_min
from .netmodel import DenseNN, Layer, forward
from .relax import Box, interval_propagate, normalize_net, output_interval
from .dualopt import ConstrainedProblem
from .verifier import BinaryGroup, VerificationProblem

CASE_TAG = "gridverify-case"
CASE_VERSION = "v1"
DATASET_TAG = "gridverify-dataset"
DATASET_VERSION = "v1"


@dataclass(frozen=True)
class GridNetwork:
    """Buses, lines, generators, loads of a DC network (per-unit units)."""

    name: str
    n_bus: int
    line_from: np.ndarray
    line_to: np.ndarray
    susceptance: np.ndarray
    flow_max: np.ndarray
    gen_bus: np.ndarray
    gen_pmin: np.ndarray
    gen_pmax: np.ndarray
    gen_cost: np.ndarray
    load_bus: np.ndarray
    load_nominal: np.ndarray
    ref_bus: int = 0

    @property
    def n_line(self) -> int:
        return self.line_from.shape[0]

    @property
    def n_gen(self) -> int:
        return self.gen_bus.shape[0]

    @property
    def n_load(self) -> int:
        return self.load_bus.shape[0]

    @property
    def flow_min(self) -> np.ndarray:
        return -self.flow_max

    def incidence(self) -> np.ndarray:
        e = np.zeros((self.n_line, self.n_bus))
        for i in range(self.n_line):
            e[i, self.line_from[i]] = 1.0
            e[i, self.line_to[i]] = -1.0
        return e

    def gen_map(self) -> np.ndarray:
        s = np.zeros((self.n_bus, self.n_gen))
        for g in range(self.n_gen):
            s[self.gen_bus[g], g] = 1.0
        return s

    def load_map(self) -> np.ndarray:
        s = np.zeros((self.n_bus, self.n_load))
        for d in range(self.n_load):
            s[self.load_bus[d], d] = 1.0
        return s

    def connected(self, out_line: Optional[int] = None) -> bool:
        adj: List[List[int]] = [[] for _ in range(self.n_bus)]
        for i in range(self.n_line):
            if i == out_line:
                continue
            adj[self.line_from[i]].append(self.line_to[i])
            adj[self.line_to[i]].append(self.line_from[i])
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n_bus

    def violations(self) -> List[str]:
        out = []
        if np.any(self.susceptance <= 0):
            out.append("non-positive susceptance")
        if np.any(self.flow_max <= 0):
            out.append("non-positive flow limit")
        if np.any(self.gen_pmin > self.gen_pmax):
            out.append("generator limits cross")
        if not self.connected():
            out.append("network graph is not connected")
        for arr, hi in ((self.line_from, self.n_bus), (self.line_to, self.n_bus)):
            if np.any(arr < 0) or np.any(arr >= hi):
                out.append("line endpoint out of range")
        if np.any(self.line_from == self.line_to):
            out.append("self-loop line")
        return out


def builtin_case_4bus() -> GridNetwork:
    """Four-bus ring 1-2-3-4-1 with two generators and two loads.

    All numbers are artifact-chosen (documented in the case file): uniform
    10 pu susceptances, +-1 pu flow limits, 2.5 pu generators at buses 1 and
    2 with costs 1 and 2, unit nominal loads at buses 3 and 4, bus 1
    reference.
    """
    return GridNetwork(
        name="four-bus-ring",
        n_bus=4,
        line_from=np.array([0, 1, 2, 3]),
        line_to=np.array([1, 2, 3, 0]),
        susceptance=np.array([10.0, 10.0, 10.0, 10.0]),
        flow_max=np.array([1.0, 1.0, 1.0, 1.0]),
        gen_bus=np.array([0, 1]),
        gen_pmin=np.array([0.0, 0.0]),
        gen_pmax=np.array([2.5, 2.5]),
        gen_cost=np.array([1.0, 2.0]),
        load_bus=np.array([2, 3]),
        load_nominal=np.array([1.0, 1.0]),
        ref_bus=0,
    )


# ---------------------------------------------------------------------------
# case file IO
# ---------------------------------------------------------------------------


def dumps_case(net: GridNetwork) -> str:
    lines = [f"{CASE_TAG} {CASE_VERSION}"]
    lines.append(f"name {net.name}")
    lines.append(f"buses {net.n_bus}")
    lines.append(f"ref_bus {net.ref_bus}")
    lines.append(f"lines {net.n_line}")
    for i in range(net.n_line):
        lines.append(
            f"line {net.line_from[i]} {net.line_to[i]} "
            f"{fmt_float(net.susceptance[i])} {fmt_float(net.flow_max[i])}"
        )
    lines.append(f"generators {net.n_gen}")
    for g in range(net.n_gen):
        lines.append(
            f"generator {net.gen_bus[g]} {fmt_float(net.gen_pmin[g])} "
            f"{fmt_float(net.gen_pmax[g])} {fmt_float(net.gen_cost[g])}"
        )
    lines.append(f"loads {net.n_load}")
    for d in range(net.n_load):
        lines.append(f"load {net.load_bus[d]} {fmt_float(net.load_nominal[d])}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_case(net: GridNetwork, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_case(net))


def loads_case(text: str) -> GridNetwork:
    cur = LineReader(text)
    cur.header(CASE_TAG, CASE_VERSION)
    name = cur.take_str("name")
    n_bus = cur.take_int("buses")
    ref = cur.take_int("ref_bus")
    m = cur.take_int("lines")
    lf, lt, su, fm = [], [], [], []
    for _ in range(m):
        toks = cur.take("line")
        if len(toks) != 4:
            raise ParseError("line expects: from to susceptance flow_limit", line=cur.pos)
        lf.append(int(toks[0]))
        lt.append(int(toks[1]))
        su.append(float(toks[2]))
        fm.append(float(toks[3]))
    ng = cur.take_int("generators")
    gb, gl, gu, gc = [], [], [], []
    for _ in range(ng):
        toks = cur.take("generator")
        gb.append(int(toks[0]))
        gl.append(float(toks[1]))
        gu.append(float(toks[2]))
        gc.append(float(toks[3]))
    nd = cur.take_int("loads")
    db, dn = [], []
    for _ in range(nd):
        toks = cur.take("load")
        db.append(int(toks[0]))
        dn.append(float(toks[1]))
    cur.take("end")
    net = GridNetwork(
        name,
        n_bus,
        np.array(lf, dtype=np.int64),
        np.array(lt, dtype=np.int64),
        np.array(su),
        np.array(fm),
        np.array(gb, dtype=np.int64),
        np.array(gl),
        np.array(gu),
        np.array(gc),
        np.array(db, dtype=np.int64),
        np.array(dn),
        ref,
    )
    bad = net.violations()
    if bad:
        raise ParseError("case violates invariants: " + "; ".join(bad))
    return net


def load_case(path) -> GridNetwork:
    with open(path) as fh:
        return loads_case(fh.read())


def case_hash(net: GridNetwork) -> str:
    return text_hash(dumps_case(net))


# ---------------------------------------------------------------------------
# security-constrained DC-OPF and data generation
# ---------------------------------------------------------------------------


@dataclass
class OpfSample:
    p_d: np.ndarray
    p_g: np.ndarray
    feasible: bool = True


def scenarios(net: GridNetwork) -> List[Optional[int]]:
    """Intact system plus every single-line outage."""
    return [None] + list(range(net.n_line))


def solve_scopf(net: GridNetwork, p_d) -> Optional[OpfSample]:
    """Cost-minimal dispatch feasible for the intact system and every
    single-line outage (one LP, scenario-replicated flows/angles)."""
    p_d = np.asarray(p_d, dtype=np.float64).reshape(-1)
    if p_d.shape[0] != net.n_load:
        raise ValueError("load vector length mismatch")
    if np.any(p_d < 0):
        raise ValueError("loads must be non-negative")
    n, m, ng = net.n_bus, net.n_line, net.n_gen
    scens = scenarios(net)
    e_mat = net.incidence()
    s_g = net.gen_map()
    bus_load = net.load_map() @ p_d

    nv = ng + len(scens) * (m + n)

    def pf_idx(s, i):
        return ng + s * (m + n) + i

    def th_idx(s, b):
        return ng + s * (m + n) + m + b

    a_rows, a_rhs = [], []
    for s, out in enumerate(scens):
        for b in range(n):
            row = np.zeros(nv)
            row[:ng] = s_g[b]
            for i in range(m):
                row[pf_idx(s, i)] = -e_mat[i, b]
            a_rows.append(row)
            a_rhs.append(bus_load[b])
        for i in range(m):
            row = np.zeros(nv)
            row[pf_idx(s, i)] = 1.0
            if out == i:
                a_rows.append(row)
                a_rhs.append(0.0)
                continue
            for b in range(n):
                row[th_idx(s, b)] = -net.susceptance[i] * e_mat[i, b]
            a_rows.append(row)
            a_rhs.append(0.0)
        row = np.zeros(nv)
        row[th_idx(s, net.ref_bus)] = 1.0
        a_rows.append(row)
        a_rhs.append(0.0)

    lb = np.full(nv, -np.inf)
    ub = np.full(nv, np.inf)
    lb[:ng] = net.gen_pmin
    ub[:ng] = net.gen_pmax
    for s, out in enumerate(scens):
        for i in range(m):
            if out == i:
                continue
            lb[pf_idx(s, i)] = net.flow_min[i]
            ub[pf_idx(s, i)] = net.flow_max[i]

    c = np.zeros(nv)
    c[:ng] = net.gen_cost
    lp = lpcore.LpProblem.build(c, a_eq=np.array(a_rows), b_eq=np.array(a_rhs), lb=lb, ub=ub)
    res = lpcore.solve_lp(lp)
    if not res.optimal:
        return None
    return OpfSample(p_d.copy(), res.x[:ng].copy())


def check_sample_n1(net: GridNetwork, p_d, p_g, tol: float = 1e-7) -> bool:
    """Independent re-check: one feasibility LP per contingency with the
    dispatch held fixed."""
    p_d = np.asarray(p_d, dtype=np.float64).reshape(-1)
    p_g = np.asarray(p_g, dtype=np.float64).reshape(-1)
    if np.any(p_g < net.gen_pmin - tol) or np.any(p_g > net.gen_pmax + tol):
        return False
    n, m = net.n_bus, net.n_line
    e_mat = net.incidence()
    inj = net.gen_map() @ p_g - net.load_map() @ p_d
    for out in scenarios(net):
        nv = m + n
        a_rows, a_rhs = [], []
        for b in range(n):
            row = np.zeros(nv)
            row[:m] = -e_mat[:, b]
            a_rows.append(row)
            a_rhs.append(-inj[b])
        for i in range(m):
            row = np.zeros(nv)
            row[i] = 1.0
            if out == i:
                a_rows.append(row)
                a_rhs.append(0.0)
                continue
            row[m:] = -net.susceptance[i] * e_mat[i]
            a_rows.append(row)
            a_rhs.append(0.0)
        row = np.zeros(nv)
        row[m + net.ref_bus] = 1.0
        a_rows.append(row)
        a_rhs.append(0.0)
        lb = np.full(nv, -np.inf)
        ub = np.full(nv, np.inf)
        for i in range(m):
            if out != i:
                lb[i] = net.flow_min[i] - tol
                ub[i] = net.flow_max[i] + tol
            else:
                lb[i] = -tol
                ub[i] = tol
        lp = lpcore.LpProblem.build(
            np.zeros(nv), a_eq=np.array(a_rows), b_eq=np.array(a_rhs), lb=lb, ub=ub
        )
        if not lpcore.solve_lp(lp).optimal:
            return False
    return True


def generate_dataset(
    net: GridNetwork,
    n_samples: int,
    load_low: float,
    load_high: float,
    seed: int,
    attempt_factor: int = 50,
) -> Tuple[List[OpfSample], int, int]:
    """Uniform i.i.d. loads with rejection of N-1-infeasible samples.

    Deterministic under the seed: attempt k draws from its own RNG stream
    (seed, k). Returns (samples, attempts, shortfall)."""
    if load_low > load_high:
        raise ValueError("load_low > load_high")
    samples: List[OpfSample] = []
    cap = attempt_factor * n_samples
    attempts = 0
    while len(samples) < n_samples and attempts < cap:
        rng = np.random.default_rng([seed, attempts])
        p_d = rng.uniform(load_low, load_high, net.n_load)
        attempts += 1
        got = solve_scopf(net, p_d)
        if got is not None:
            samples.append(got)
    shortfall = n_samples - len(samples)
    if shortfall:
        warnings.warn(f"dataset short by {shortfall} samples after {attempts} attempts")
    return samples, attempts, shortfall


def dumps_dataset(net: GridNetwork, samples: Sequence[OpfSample], seed: int, load_low, load_high) -> str:
    lines = [f"{DATASET_TAG} {DATASET_VERSION}"]
    lines.append(f"case_hash {case_hash(net)}")
    lines.append(f"seed {seed}")
    lines.append(f"load_low {fmt_float(load_low)}")
    lines.append(f"load_high {fmt_float(load_high)}")
    lines.append(f"loads {net.n_load}")
    lines.append(f"gens {net.n_gen}")
    lines.append(f"samples {len(samples)}")
    for s in samples:
        lines.append("row " + fmt_vec(s.p_d) + " " + fmt_vec(s.p_g))
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_dataset(path, net, samples, seed, load_low, load_high) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_dataset(net, samples, seed, load_low, load_high))


@dataclass
class Dataset:
    case_hash: str
    seed: int
    load_low: float
    load_high: float
    inputs: np.ndarray   # (n, n_load)
    targets: np.ndarray  # (n, n_gen)


def loads_dataset(text: str) -> Dataset:
    cur = LineReader(text)
    cur.header(DATASET_TAG, DATASET_VERSION)
    ch = cur.take_str("case_hash")
    seed = cur.take_int("seed")
    lo = cur.take_float("load_low")
    hi = cur.take_float("load_high")
    nd = cur.take_int("loads")
    ng = cur.take_int("gens")
    n = cur.take_int("samples")
    xs = np.zeros((n, nd))
    ys = np.zeros((n, ng))
    for i in range(n):
        row = cur.take_floats("row", nd + ng)
        xs[i] = row[:nd]
        ys[i] = row[nd:]
    cur.take("end")
    return Dataset(ch, seed, lo, hi, xs, ys)


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        return loads_dataset(fh.read())


# ---------------------------------------------------------------------------
# physics bounds (valid for every integer line status)
# ---------------------------------------------------------------------------


def _angle_flow_maps(net: GridNetwork, out_line: Optional[int]):
    """theta = T pi and p_f = F pi for one in-service pattern (gauge ref=0)."""
    e_mat = net.incidence()
    y = net.susceptance.copy()
    if out_line is not None:
        y[out_line] = 0.0
    lap = e_mat.T @ (y[:, None] * e_mat)
    keep = [b for b in range(net.n_bus) if b != net.ref_bus]
    red = lap[np.ix_(keep, keep)]
    t_red = np.linalg.solve(red, np.eye(len(keep)))
    t_full = np.zeros((net.n_bus, net.n_bus))
    t_full[np.ix_(keep, keep)] = t_red
    f_mat = (y[:, None] * e_mat) @ t_full
    return t_full, f_mat


def physics_boxes(
    net: GridNetwork, nn: DenseNN, load_box: Box, pad_rel: float = 0.05, pad_abs: float = 1e-6
) -> Tuple[Box, Box, List[int]]:
    """Interval bounds on flows and angles over every admissible in-service
    pattern (intact plus connected single outages), given interval bounds on
    the dispatch from the network and on the loads from the box.

    Returns (flow box, angle box, disconnecting outages)."""
    norm_net, ball = normalize_net(nn, load_box)
    pg_lo, pg_hi = output_interval(norm_net, interval_propagate(norm_net, ball))
    s_g, s_d = net.gen_map(), net.load_map()
    inj_lo = s_g @ pg_lo - s_d @ load_box.upper
    inj_hi = s_g @ pg_hi - s_d @ load_box.lower
    mid = 0.5 * (inj_lo + inj_hi)
    rad = 0.5 * (inj_hi - inj_lo)
    f_lo = np.full(net.n_line, np.inf)
    f_hi = np.full(net.n_line, -np.inf)
    t_lo = np.full(net.n_bus, np.inf)
    t_hi = np.full(net.n_bus, -np.inf)
    excluded: List[int] = []
    for out in scenarios(net):
        if out is not None and not net.connected(out):
            excluded.append(out)
            continue
        t_map, f_map = _angle_flow_maps(net, out)
        fc = f_map @ mid
        fr = np.abs(f_map) @ rad
        if out is not None:
            fc[out] = 0.0
            fr[out] = 0.0
        f_lo = np.minimum(f_lo, fc - fr)
        f_hi = np.maximum(f_hi, fc + fr)
        tc = t_map @ mid
        tr = np.abs(t_map) @ rad
        t_lo = np.minimum(t_lo, tc - tr)
        t_hi = np.maximum(t_hi, tc + tr)

    def padded(lo, hi):
        span = np.maximum(hi - lo, 1.0)
        return Box(lo - pad_rel * span - pad_abs, hi + pad_rel * span + pad_abs)

    return padded(f_lo, f_hi), padded(t_lo, t_hi), excluded


def physics_completion(net: GridNetwork, nn: DenseNN, flow_scale: float):
    """Completer for the flow-limit problem: given a candidate input, keep its
    load part, pick the worst admissible contingency, and return the exact
    physics witness (repaired input, z, metric)."""
    nd, m, n = net.n_load, net.n_line, net.n_bus
    s_g, s_d = net.gen_map(), net.load_map()
    maps = {}
    for out in scenarios(net):
        if out is None or net.connected(out):
            maps[out] = _angle_flow_maps(net, out)

    def complete(x_raw):
        p_d = np.asarray(x_raw, dtype=np.float64).reshape(-1)[:nd]
        p_g = forward(nn, p_d)
        inj = s_g @ p_g - s_d @ p_d
        best = None
        for out, (t_map, f_map) in maps.items():
            theta = t_map @ inj
            p_f = f_map @ inj
            if out is not None:
                p_f[out] = 0.0
            slack = np.minimum(flow_scale * net.flow_max - p_f, p_f - flow_scale * net.flow_min)
            delta = float(np.min(slack))
            if best is None or delta < best[0]:
                b = np.ones(m)
                if out is not None:
                    b[out] = 0.0
                best = (delta, np.concatenate([p_d, p_f]), np.concatenate([theta, b]))
        if best is None:
            return None
        delta, x_new, z = best
        return x_new, z, delta

    return complete


# ---------------------------------------------------------------------------
# verification problem builders
# ---------------------------------------------------------------------------


def load_box_pm(net: GridNetwork, frac: float) -> Box:
    nom = net.load_nominal
    return Box(nom * (1.0 - frac), nom * (1.0 + frac))


def load_box_abs(net: GridNetwork, low: float, high: float) -> Box:
    return Box(np.full(net.n_load, low), np.full(net.n_load, high))


def build_problem1(
    nn: DenseNN, net: GridNetwork, load_box: Box, gen_limit_scale: float = 1.0
) -> VerificationProblem:
    """Generator-limit verification: min-encoded worst upper-limit slack, no
    explicit binaries and no auxiliary variables."""
    if nn.input_dim != net.n_load or nn.output_dim != net.n_gen:
        raise ValueError(
            f"network {nn.input_dim}->{nn.output_dim} does not match "
            f"{net.n_load} loads / {net.n_gen} generators"
        )
    spec = ViolationSpec(upper=gen_limit_scale * net.gen_pmax)
    term_w, term_b = spec.term_map(nn.output_dim)
    enc = append_terms_and_min(nn, term_w, term_b)
    cp = ConstrainedProblem.build(enc, load_box, c_y=np.array([1.0]))
    meta = {
        "kind": "gen-limits",
        "scale": gen_limit_scale,
        "terms": [f"gen{k}_upper" for k in range(net.n_gen)],
    }
    return VerificationProblem(cp, [], None, meta)


def _augment_passthrough(nn: DenseNN, extra: int) -> DenseNN:
    """Append `extra` fresh inputs and carry (original input, extra block)
    through every layer unmasked: input (x, u) of width in+extra maps to
    outputs (NN(x), x, u)."""
    carry = nn.input_dim + extra
    layers = []
    for k, layer in enumerate(nn.layers):
        r, c = layer.out_dim, layer.in_dim
        if k == 0:
            w = np.zeros((r + carry, carry))
            w[:r, :c] = layer.weight
            w[r:, :] = np.eye(carry)
        else:
            w = np.zeros((r + carry, c + carry))
            w[:r, :c] = layer.weight
            w[r:, c:] = np.eye(carry)
        b = np.concatenate([layer.bias, np.zeros(carry)])
        mask = np.concatenate([layer.mask, np.zeros(carry, dtype=bool)])
        layers.append(Layer(w, b, mask))
    return DenseNN.from_layers(layers)


def build_problem2(
    nn: DenseNN,
    net: GridNetwork,
    load_box: Box,
    flow_scale: float = 1.0,
    big_m: Optional[float] = None,
) -> VerificationProblem:
    """N-1 flow-limit verification with the worst-violation metric encoded as
    network layers (no violation binaries), big-M contingency links, and the
    line-status binaries kept for branching.

    The verified object takes (loads, flows) as its input; the flow block's
    box comes from the physics bounds, so it contains every dispatch-consistent
    flow under any admissible line status. z = (angles, line statuses).
    """
    if nn.input_dim != net.n_load or nn.output_dim != net.n_gen:
        raise ValueError("network dims do not match case loads/generators")
    nd, ng, m, n = net.n_load, net.n_gen, net.n_line, net.n_bus
    pf_box, th_box, excluded = physics_boxes(net, nn, load_box)
    for out in excluded:
        warnings.warn(f"outage of line {out} disconnects the grid; contingency excluded")

    # verified network: inputs (p_d, p_f) -> outputs (delta, p_g, p_d, p_f)
    aug = _augment_passthrough(nn, m)
    n_y0 = aug.output_dim  # ng + nd + m
    term_w = np.zeros((2 * m, n_y0))
    term_b = np.zeros(2 * m)
    pf0 = ng + nd
    for i in range(m):
        term_w[i, pf0 + i] = -1.0
        term_b[i] = flow_scale * net.flow_max[i]
        term_w[m + i, pf0 + i] = 1.0
        term_b[m + i] = -flow_scale * net.flow_min[i]
    enc = append_terms_and_min(aug, term_w, term_b, carry_indices=tuple(range(n_y0)))
    # outputs now (delta, p_g, p_d, p_f)
    ny = enc.output_dim
    assert ny == 1 + ng + nd + m

    input_box = Box.concat(load_box, pf_box)
    z_box = Box.concat(th_box, Box(np.zeros(m), np.ones(m)))
    nz = n + m

    sl_d = slice(1 + ng, 1 + ng + nd)
    sl_g = slice(1, 1 + ng)
    sl_f = slice(1 + ng + nd, ny)
    e_mat = net.incidence()
    s_g, s_d = net.gen_map(), net.load_map()

    if big_m is None:
        yb_e = net.susceptance[:, None] * e_mat
        spread = np.abs(pf_box.lower).max() + np.abs(pf_box.upper).max()
        spread += float(np.max(np.abs(yb_e) @ np.maximum(np.abs(th_box.lower), np.abs(th_box.upper))))
        big_m = 2.0 * spread + 1.0

    # Balance at every non-reference bus; the reference bus is the slack
    # (a trained dispatch never sums to the load exactly, so an all-bus
    # balance would make the problem infeasible outright). Plus the gauge
    # row pinning the reference angle.
    non_ref = [b for b in range(n) if b != net.ref_bus]
    a_y = np.zeros((n, ny))
    a_z = np.zeros((n, nz))
    e_vec = np.zeros(n)
    for r, b in enumerate(non_ref):
        a_y[r, sl_g] = s_g[b]
        a_y[r, sl_d] = -s_d[b]
        a_y[r, sl_f] = -e_mat[:, b]
    a_z[n - 1, net.ref_bus] = 1.0  # gauge: reference angle fixed to zero

    yb_e = net.susceptance[:, None] * e_mat
    rows_y: List[np.ndarray] = []
    rows_z: List[np.ndarray] = []
    rhs: List[float] = []
    for i in range(m):
        # p_f - Yb E theta <= M (1 - b)
        ry = np.zeros(ny)
        ry[sl_f.start + i] = 1.0
        rz = np.zeros(nz)
        rz[:n] = -yb_e[i]
        rz[n + i] = big_m
        rows_y.append(ry)
        rows_z.append(rz)
        rhs.append(big_m)
        # -(p_f - Yb E theta) <= M (1 - b)
        ry = np.zeros(ny)
        ry[sl_f.start + i] = -1.0
        rz = np.zeros(nz)
        rz[:n] = yb_e[i]
        rz[n + i] = big_m
        rows_y.append(ry)
        rows_z.append(rz)
        rhs.append(big_m)
        # |p_f_i| <= M b_i
        for sgn in (1.0, -1.0):
            ry = np.zeros(ny)
            ry[sl_f.start + i] = sgn
            rz = np.zeros(nz)
            rz[n + i] = -big_m
            rows_y.append(ry)
            rows_z.append(rz)
            rhs.append(0.0)
    # at least m-1 lines in service
    rz = np.zeros(nz)
    rz[n:] = -1.0
    rows_y.append(np.zeros(ny))
    rows_z.append(rz)
    rhs.append(-(m - 1))

    c_y = np.zeros(ny)
    c_y[0] = 1.0
    cp = ConstrainedProblem.build(
        enc,
        input_box,
        a_y=a_y,
        a_z=a_z,
        e=e_vec,
        b_y=np.array(rows_y),
        b_z=np.array(rows_z),
        h=np.array(rhs),
        c_y=c_y,
        z_box=z_box,
    )
    group = BinaryGroup(
        z_indices=tuple(range(n, n + m)),
        min_on=m - 1,
        forbidden_zero=tuple(n + i for i in excluded),
    )
    meta = {
        "kind": "n1-flows",
        "scale": flow_scale,
        "big_m": big_m,
        "excluded_outages": excluded,
        "terms": [f"line{k}_upper" for k in range(m)] + [f"line{k}_lower" for k in range(m)],
    }
    return VerificationProblem(cp, [group], physics_completion(net, nn, flow_scale), meta)


def intact_flow_net(nn: DenseNN, net: GridNetwork, flow_scale: float = 1.0) -> DenseNN:
    """Unconstrained cross-check network for the intact system: loads ->
    worst flow-limit slack, with flows produced by the closed-form DC
    solution instead of constraint rows."""
    _t_map, f_map = _angle_flow_maps(net, None)
    s_g, s_d = net.gen_map(), net.load_map()
    nd, ng, m = net.n_load, net.n_gen, net.n_line
    aug = _augment_passthrough(nn, 0)  # outputs (p_g, p_d)
    flow_w = np.hstack([f_map @ s_g, -(f_map @ s_d)])  # m x (ng + nd)
    term_w = np.vstack([-flow_w, flow_w])
    term_b = np.concatenate([flow_scale * net.flow_max, -flow_scale * net.flow_min])
    return append_terms_and_min(aug, term_w, term_b)
