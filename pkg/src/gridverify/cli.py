"""Command-line pipeline driver with machine-readable line-format reports.

Exit codes: 0 verified, 1 refuted, 2 unknown; 64 usage, 65 bad input data,
66 missing file, 70 internal error.
"""

from __future__ import annotations

import argparse
import sys
import time
from typing import List, Optional, Tuple

import numpy as np

from . import gridopf, minenc, netmodel, trainer, verifier
from ._core import AdamParams, BACKEND_NAME
from .dualopt import DualEvaluator
from .fileio import ParseError, file_hash, fmt_float, fmt_vec
from .relax import Box

EX_USAGE = 64
EX_DATA = 65
EX_NOINPUT = 66
EX_INTERNAL = 70

REPORT_TAG = "gridverify-report"
REPORT_VERSION = "v1"


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


def _load_case(spec: str) -> gridopf.GridNetwork:
    if spec == "4bus":
        return gridopf.builtin_case_4bus()
    try:
        return gridopf.load_case(spec)
    except FileNotFoundError:
        raise CliError(f"case file not found: {spec}", EX_NOINPUT)
    except ParseError as e:
        raise CliError(f"bad case file: {e}", EX_DATA)


def _load_model(path: str) -> netmodel.DenseNN:
    try:
        return netmodel.load(path)
    except FileNotFoundError:
        raise CliError(f"model file not found: {path}", EX_NOINPUT)
    except ParseError as e:
        raise CliError(f"bad model file: {e}", EX_DATA)


def _parse_box(spec: str, net: gridopf.GridNetwork) -> Box:
    """pm<percent> around the case's nominal loads, or abs:<low>:<high>."""
    try:
        if spec.startswith("pm"):
            return gridopf.load_box_pm(net, float(spec[2:]) / 100.0)
        if spec.startswith("abs:"):
            _tag, lo, hi = spec.split(":")
            return gridopf.load_box_abs(net, float(lo), float(hi))
    except (ValueError, IndexError):
        pass
    raise CliError(f"bad box spec '{spec}' (use pm25 or abs:0:0.1)", EX_USAGE)


def _parse_floats(text: str, what: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",") if t != ""])
    except ValueError:
        raise CliError(f"bad {what} list '{text}'", EX_USAGE)


def _build(problem: str, nn, net, box: Box, scale: float) -> verifier.VerificationProblem:
    try:
        if problem == "gen-limits":
            return gridopf.build_problem1(nn, net, box, scale)
        return gridopf.build_problem2(nn, net, box, scale)
    except ValueError as e:
        raise CliError(str(e), EX_DATA)


def _report_lines(command: str, pairs: List[Tuple[str, str]]) -> str:
    lines = [f"{REPORT_TAG} {REPORT_VERSION}", "schema 1", f"command {command}"]
    lines += [f"{k} {v}" for k, v in pairs]
    lines.append("end")
    return "\n".join(lines) + "\n"


def _emit(report_path: Optional[str], text: str) -> None:
    sys.stdout.write(text)
    if report_path:
        with open(report_path, "w") as fh:
            fh.write(text)


def _verdict_pairs(v: verifier.Verdict) -> List[Tuple[str, str]]:
    pairs = [
        ("status", v.status),
        ("gamma_lower", fmt_float(v.gamma_lower)),
        ("upper_value", "none" if v.upper_value is None else fmt_float(v.upper_value)),
    ]
    if v.witness_x is not None:
        pairs.append(("witness_x", fmt_vec(v.witness_x)))
    if v.witness_z is not None:
        pairs.append(("witness_z", fmt_vec(v.witness_z)))
    if v.optimum is not None:
        pairs.append(("optimum", fmt_float(v.optimum)))
    pairs += [
        ("nodes", str(v.nodes)),
        ("iterations", str(v.iterations)),
        ("wall_time_s", f"{v.wall_time:.3f}"),
    ]
    return pairs


def cmd_gen_data(args) -> int:
    net = _load_case(args.case)
    samples, attempts, short = gridopf.generate_dataset(
        net, args.samples, args.low, args.high, args.seed
    )
    gridopf.save_dataset(args.out, net, samples, args.seed, args.low, args.high)
    print(
        f"wrote {len(samples)} samples ({attempts} attempts, {short} short) to {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    try:
        data = gridopf.load_dataset(args.data)
    except FileNotFoundError:
        raise CliError(f"dataset not found: {args.data}", EX_NOINPUT)
    except ParseError as e:
        raise CliError(f"bad dataset: {e}", EX_DATA)
    widths = [int(w) for w in args.widths.split(",")]
    cfg = trainer.TrainConfig(
        widths=widths, epochs=args.epochs, batch_size=args.batch, lr=args.lr, seed=args.seed
    )
    try:
        net, stats = trainer.train_with_stats(data, cfg)
    except trainer.TrainError as e:
        raise CliError(str(e), EX_DATA)
    netmodel.save(net, args.out)
    print(f"trained {widths} net: final mse {stats['final_mse']:.3e} -> {args.out}")
    return 0


def cmd_encode_min(args) -> int:
    nn = _load_model(args.model)
    upper = _parse_floats(args.upper, "upper") if args.upper else None
    lower = _parse_floats(args.lower, "lower") if args.lower else None

    def broadcast(v):
        if v is None:
            return None
        return np.full(nn.output_dim, v[0]) if v.size == 1 else v

    try:
        spec = minenc.ViolationSpec(upper=broadcast(upper), lower=broadcast(lower))
        enc = minenc.append_min_encoding(nn, spec)
    except ValueError as e:
        raise CliError(str(e), EX_DATA)
    netmodel.save(enc, args.out)
    print(
        f"encoded {spec.num_terms} terms with {enc.num_relu - nn.num_relu} ReLUs -> {args.out}"
    )
    return 0


def _common_pairs(args, net, nn) -> List[Tuple[str, str]]:
    return [
        ("case", args.case),
        ("case_hash", gridopf.case_hash(net)),
        ("model", args.model),
        ("model_hash", netmodel.model_hash(nn)),
        ("problem", args.problem),
        ("box", args.box),
        ("seed", str(args.seed)),
        ("backend", BACKEND_NAME),
    ]


def cmd_verify(args) -> int:
    net = _load_case(args.case)
    nn = _load_model(args.model)
    box = _parse_box(args.box or ("pm25" if args.problem == "gen-limits" else "abs:0:0.1"), net)
    vp = _build(args.problem, nn, net, box, args.scale)
    cfg = verifier.VerifyConfig(
        timeout=args.timeout,
        node_budget=args.node_budget,
        ascent=AdamParams(iters=args.iters, lr=args.lr),
        workers=args.workers,
        seed=args.seed,
        refine=args.refine,
    )
    v = verifier.verify(vp, cfg)
    pairs = _common_pairs(args, net, nn)
    pairs.append(("scale", fmt_float(args.scale)))
    pairs.append(("workers", str(args.workers)))
    pairs += _verdict_pairs(v)
    pairs.append(("exit_code", str(v.exit_code)))
    _emit(args.report, _report_lines("verify", pairs))
    return v.exit_code


def cmd_oracle(args) -> int:
    net = _load_case(args.case)
    nn = _load_model(args.model)
    box = _parse_box(args.box or ("pm25" if args.problem == "gen-limits" else "abs:0:0.1"), net)
    vp = _build(args.problem, nn, net, box, args.scale)
    t0 = time.perf_counter()
    try:
        orc = verifier.oracle_exact(vp)
    except verifier.EnumerationCap as e:
        raise CliError(str(e), EX_DATA)
    code = 0 if orc.gamma >= 0 else 1
    pairs = _common_pairs(args, net, nn)
    pairs.append(("scale", fmt_float(args.scale)))
    pairs.append(("gamma", fmt_float(orc.gamma)))
    if orc.x is not None:
        pairs.append(("witness_x", fmt_vec(orc.x)))
    pairs += [
        ("leaves", str(orc.leaves)),
        ("wall_time_s", f"{time.perf_counter() - t0:.3f}"),
        ("exit_code", str(code)),
    ]
    _emit(args.report, _report_lines("oracle", pairs))
    return code


def cmd_sweep(args) -> int:
    net = _load_case(args.case)
    nn = _load_model(args.model)
    box = _parse_box(args.box or ("pm25" if args.problem == "gen-limits" else "abs:0:0.1"), net)
    scales = _parse_floats(args.scales, "scales")
    pairs = _common_pairs(args, net, nn)
    pairs.append(("scales", fmt_vec(scales)))
    worst = 0
    rows = []
    for s in scales:
        vp = _build(args.problem, nn, net, box, float(s))
        cfg = verifier.VerifyConfig(
            timeout=args.timeout,
            node_budget=args.node_budget,
            ascent=AdamParams(iters=args.iters, lr=args.lr),
            workers=args.workers,
            seed=args.seed,
        )
        v = verifier.verify(vp, cfg)
        worst = max(worst, v.exit_code)
        row = (
            f"{fmt_float(s)} status {v.status} gamma_lower {fmt_float(v.gamma_lower)} "
            f"upper {'none' if v.upper_value is None else fmt_float(v.upper_value)} nodes {v.nodes}"
        )
        if args.with_oracle:
            orc = verifier.oracle_exact(vp)
            row += f" oracle_gamma {fmt_float(orc.gamma)}"
        rows.append(("result", row))
    pairs += rows
    _emit(args.report, _report_lines("sweep", pairs))
    return worst


def cmd_trace(args) -> int:
    net = _load_case(args.case)
    nn = _load_model(args.model)
    box = _parse_box(args.box or "abs:0:0.1", net)
    scales = _parse_floats(args.scales, "scales")
    pairs = _common_pairs(args, net, nn)
    early = np.inf if args.full else 0.0
    for s in scales:
        vp = _build(args.problem, nn, net, box, float(s))
        lp_val, _node = verifier.relaxation_lp(vp)
        orc = verifier.oracle_exact(vp)
        ev = DualEvaluator(vp.constrained)
        best, trace, _fin, _bs = ev.ascend(
            cfg=AdamParams(iters=args.iters, lr=args.lr, early_stop=early)
        )
        pairs.append(("margin", fmt_float(s)))
        pairs.append(("root_lp", fmt_float(lp_val)))
        pairs.append(("oracle_gamma", fmt_float(orc.gamma)))
        pairs.append(("dual_best", fmt_float(best)))
        pairs.append(
            ("crossed_at", "none" if trace.crossed_at is None else str(trace.crossed_at))
        )
        for i, val in enumerate(trace.values):
            pairs.append(("point", f"{fmt_float(s)} {i} {fmt_float(val)}"))
    _emit(args.report, _report_lines("trace", pairs))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gridverify",
        description="Verify ReLU dispatch networks against grid limits and physics.",
    )
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="sample N-1-secure training data")
    g.add_argument("--case", required=True, help="case file or '4bus'")
    g.add_argument("--samples", type=int, default=1000)
    g.add_argument("--low", type=float, default=0.0)
    g.add_argument("--high", type=float, default=2.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="fit a dense ReLU regression net")
    t.add_argument("--data", required=True)
    t.add_argument("--widths", required=True, help="comma list, e.g. 2,4,2")
    t.add_argument("--epochs", type=int, default=2000)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("encode-min", help="append the worst-violation encoding")
    e.add_argument("--model", required=True)
    e.add_argument("--upper", help="comma list or single value")
    e.add_argument("--lower", help="comma list or single value")
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_encode_min)

    def common(p, scales=False):
        p.add_argument("--problem", choices=("gen-limits", "n1-flows"), required=True)
        p.add_argument("--case", required=True)
        p.add_argument("--model", required=True)
        p.add_argument("--box", help="pm<percent> or abs:<low>:<high>")
        if scales:
            p.add_argument("--scales", required=True, help="comma list of limit scales")
        else:
            p.add_argument("--scale", type=float, default=1.0)
        p.add_argument("--timeout", type=float, default=300.0)
        p.add_argument("--node-budget", type=int, default=20000)
        p.add_argument("--iters", type=int, default=400, help="ascent iterations per node")
        p.add_argument("--lr", type=float, default=0.1)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--report")

    v = sub.add_parser("verify", help="complete branch-and-bound verdict")
    common(v)
    v.add_argument("--refine", action="store_true", help="close the gap to the optimum")
    v.set_defaults(fn=cmd_verify)

    o = sub.add_parser("oracle", help="exact enumeration verdict (small instances)")
    common(o)
    o.set_defaults(fn=cmd_oracle)

    s = sub.add_parser("sweep", help="verdict table over limit scales")
    common(s, scales=True)
    s.add_argument("--with-oracle", action="store_true")
    s.set_defaults(fn=cmd_sweep)

    tr = sub.add_parser("trace", help="root dual-ascent trace vs LP and oracle")
    common(tr, scales=True)
    tr.add_argument("--root-only", action="store_true", default=True)
    tr.add_argument("--full", action="store_true", help="do not stop at the zero crossing")
    tr.set_defaults(fn=cmd_trace)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EX_USAGE if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except Exception as e:  # pragma: no cover - defensive
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EX_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
