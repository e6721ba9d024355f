"""Command-line front end: ``goalfem demo NAME [options]``."""
import argparse
import csv
import os
import sys

from .driver import adapt
from .mesh import write_msh2, write_svg
from .problems import DEMOS, get_demo


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive(kind):
    def conv(text):
        val = kind(text)
        if not val > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return val
    return conv


def _fraction(text):
    val = float(text)
    if not 0 < val <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return val


def build_parser():
    p = _Parser(prog="goalfem", description="Goal-oriented adaptive finite elements.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    d = sub.add_parser("demo", help="run a built-in demo problem")
    d.add_argument("name", choices=sorted(DEMOS))
    d.add_argument("--tol", type=_positive(float), default=1e-3, help="goal error tolerance")
    d.add_argument("--alpha", type=_fraction, default=0.5, help="Doerfler marking fraction")
    d.add_argument("--degree", type=int, choices=(1, 2, 3), default=1, help="Lagrange degree")
    d.add_argument("--max-iter", type=_positive(int), default=20, help="maximum number of solves")
    d.add_argument("--out", default="./out", help="output directory")
    d.add_argument("--uniform", action="store_true", help="refine every cell instead of marking")
    d.add_argument("--svg", action="store_true", help="write an SVG picture of every mesh")
    d.add_argument("--seed", type=int, default=0, help="accepted for interface stability; unused")
    return p


def _write_indicators(path, ind):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "eta_T", "signed_contribution"])
        for i, (e, s) in enumerate(zip(ind.eta.tolist(), ind.signed.tolist())):
            w.writerow([i, repr(e), repr(s)])


def run_demo(args):
    demo = get_demo(args.name)
    os.makedirs(args.out, exist_ok=True)

    def emit(state):
        k = state.iteration
        write_msh2(state.mesh, os.path.join(args.out, f"mesh_{k}.msh2"))
        if args.svg:
            write_svg(state.mesh, os.path.join(args.out, f"mesh_{k}.svg"))
        _write_indicators(os.path.join(args.out, f"indicators_{k}.csv"), state.indicators)
        rec = state.record
        print(f"iter {k:3d}  cells {rec['cells']:7d}  dofs {rec['dofs']:7d}  "
              f"goal {rec['goal']:.12g}  eta_h {rec['eta_h']:.12g}")

    _, report = adapt(demo.problem, demo.mesh(), degree=args.degree, tol=args.tol, alpha=args.alpha,
                      max_iter=args.max_iter, marking="all" if args.uniform else "dorfler",
                      callback=emit)
    report.metadata.update(
        demo=args.name, flags=dict(tol=args.tol, alpha=args.alpha, degree=args.degree,
                                   max_iter=args.max_iter, out=args.out, uniform=args.uniform,
                                   svg=args.svg, seed=args.seed),
        reference_goal=demo.reference, reference_provenance=demo.provenance)
    report.to_json(os.path.join(args.out, "report.json"))
    report.to_csv(os.path.join(args.out, "report.csv"))
    last = report.iterations[-1]
    print(f"goal {last['goal']:.12g}")
    print(f"eta_h {last['eta_h']:.12g}")
    if report.converged:
        print("converged")
        return 0
    print(f"not converged after {len(report)} iterations")
    return 2


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "demo":
        return run_demo(args)
    return 1


if __name__ == "__main__":
    sys.exit(main())
