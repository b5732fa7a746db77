"""Command-line entry point: ``parocpd gen|rank1|cpd|experiment``.

Exit status is 0 when a solver converged, 2 when it stopped at the iteration
cap, and 1 on any error.
"""

from __future__ import annotations

import argparse
import math
import sys

from .experiments import ExperimentSpec, run_convergence, run_success_ratio, trace_rows, write_trace
from .generators import MultTensorSpec, add_noise, mult_tensor, random_init, random_kruskal
from .paro import MuSchedule, cpd_als, epc_init, paro_decompose
from .rank1 import solve_rank1
from .tensor import read_tensor, write_tensor

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITERS = 2


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _float_pair(text: str) -> tuple[float, float]:
    lo, hi = (float(v) for v in text.split(","))
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parocpd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a benchmark tensor")
    gsub = gen.add_subparsers(dest="kind", required=True)
    gm = gsub.add_parser("mult", help="matrix-multiplication tensor for (M x N)(N x P)")
    gm.add_argument("m", type=int)
    gm.add_argument("n", type=int)
    gm.add_argument("p", type=int)
    gm.add_argument("-o", "--output", required=True)
    gr = gsub.add_parser("random", help="random Kruskal tensor")
    gr.add_argument("--dims", type=_int_list, required=True)
    gr.add_argument("--rank", type=int, required=True)
    gr.add_argument("--collinear", type=_float_pair, help="LO,HI range of within-block cosines")
    gr.add_argument("--blocks", type=_int_list, help="block sizes, e.g. 4,4")
    gr.add_argument("--snr", type=float, default=math.inf, help="signal-to-noise ratio in dB")
    gr.add_argument("--seed", type=int, default=0)
    gr.add_argument("-o", "--output", required=True)

    r1 = sub.add_parser("rank1", help="best rank-1 approximation")
    r1.add_argument("-i", "--input", required=True)
    r1.add_argument("--algo", choices=["als", "r1lm", "roro"], default="als")
    r1.add_argument("--init", choices=["svd", "ttsvd", "ttsvd-best"], default="svd")
    r1.add_argument("--perm", type=_int_list, help="mode order for --init ttsvd (0-based)")
    r1.add_argument("--tol", type=float, default=1e-12)
    r1.add_argument("--max-iters", type=int, default=1000)
    r1.add_argument("--trace")

    cp = sub.add_parser("cpd", help="rank-R CP decomposition")
    cp.add_argument("-i", "--input", required=True)
    cp.add_argument("--rank", type=int, required=True)
    cp.add_argument("--algo", choices=["als", "paro"], default="paro")
    cp.add_argument("--schedule", type=MuSchedule.parse, default=MuSchedule())
    cp.add_argument("--inner", choices=["als", "r1lm", "roro"], default="als")
    cp.add_argument("--seed", type=int, default=0)
    cp.add_argument("--no-epc", action="store_true", help="skip the initial rescaling (PARO)")
    cp.add_argument("--tol", type=float, default=1e-10)
    cp.add_argument("--stall-tol", type=float, default=1e-12)
    cp.add_argument("--max-iters", type=int, default=1000)
    cp.add_argument("--workers", type=int, default=1)
    cp.add_argument("--trace")

    ex = sub.add_parser("experiment", help="run a study from a spec file")
    ex.add_argument("kind", choices=["success-ratio", "convergence"])
    ex.add_argument("--spec", required=True)
    ex.add_argument("--output", help="CSV path prefix (overrides the spec file)")
    return p


def _gen(args) -> int:
    if args.kind == "mult":
        t = mult_tensor(MultTensorSpec(args.m, args.n, args.p))
    else:
        _, t = random_kruskal(args.dims, args.rank, args.seed, args.collinear, args.blocks)
        t = add_noise(t, args.snr, args.seed)
    write_tensor(args.output, t)
    print(f"wrote {'x'.join(map(str, t.shape))} tensor to {args.output}")
    return EXIT_OK


def _rank1(args) -> int:
    t = read_tensor(args.input)
    res = solve_rank1(t, args.algo, args.init, tol=args.tol, max_iters=args.max_iters, perm=args.perm)
    m = res.model
    print(f"weight {m.weight:.12g}  relative_error {res.error:.6e}  iterations {res.iterations}")
    if res.perm is not None:
        print(f"mode order {','.join(map(str, res.perm))}")
    if args.trace:
        write_trace(args.trace, trace_rows(0, f"{args.algo}/{args.init}", res))
    return EXIT_OK if res.converged else EXIT_MAX_ITERS


def _cpd(args) -> int:
    t = read_tensor(args.input)
    init = random_init(t.shape, args.rank, args.seed)
    if args.algo == "als":
        res = cpd_als(t, args.rank, init, tol=args.tol, max_iters=args.max_iters, stall_tol=args.stall_tol)
        label = "als"
    else:
        if not args.no_epc:
            init = epc_init(t, init)
        res = paro_decompose(
            t,
            args.rank,
            args.schedule,
            inner=args.inner,
            init=init,
            tol=args.tol,
            max_iters=args.max_iters,
            stall_tol=args.stall_tol,
            seed=args.seed,
            workers=args.workers,
        )
        label = "paro"
    print(f"relative_error {res.error:.6e}  iterations {res.iterations}  stop {res.reason}")
    for event in res.events:
        print(event, file=sys.stderr)
    if args.trace:
        write_trace(args.trace, trace_rows(0, label, res))
    return EXIT_OK if res.converged else EXIT_MAX_ITERS


def _experiment(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    if args.output:
        spec.output = args.output
    if args.kind != spec.kind:
        print(f"note: spec says kind = {spec.kind}; running {args.kind}", file=sys.stderr)
    if args.kind == "success-ratio":
        table = run_success_ratio(spec)
        for row in table.summary_rows():
            print(
                f"{row['variant']:<40} success {row['success_ratio']:.3f}  "
                f"failure {row['failure_ratio']:.3f}  middle {row['middle_ratio']:.3f}"
            )
    else:
        rows = run_convergence(spec)
        print(f"{len(rows)} trace rows")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"gen": _gen, "rank1": _rank1, "cpd": _cpd, "experiment": _experiment}
    try:
        return handlers[args.command](args)
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
