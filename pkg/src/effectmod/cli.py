"""Command line entry point: ``effectmod pair|tree|analyze|simulate|amplify``.

Exit status is 0 on success, 1 for bad input and 2 for a numerical failure.
Errors are also written to stderr as a one-line JSON object.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys

from . import __version__
from .exceptions import InputError, NumericError
from .pairs import PatientSchema
from .pipeline import load_config, run_amplify, run_analyze, run_pair, run_simulate, run_tree
from .simulate import SyntheticSpec

logger = logging.getLogger("effectmod")


def _list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _directions(items):
    out = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"--direction expects OUTCOME=control|treated, got {item!r}")
        out[f"direction.{name.strip()}"] = value.strip()
    return out


def _emit(text, args):
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _rows_to_csv(rows):
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def _analysis_overrides(args):
    ov = {
        "outcome": args.outcome,
        "gamma": args.gamma,
        "tau": args.tau,
        "alpha": args.alpha,
        "lambda": getattr(args, "lam", None),
        "groups": getattr(args, "groups", None),
        "covariates": args.covariates,
        "method": getattr(args, "method", None),
        "min_split": args.min_split,
        "min_leaf": args.min_leaf,
        "cp": args.cp,
        "max_depth": args.max_depth,
    }
    if getattr(args, "subdivide_secondary", False):
        ov["subdivide_secondary"] = "true"
    ov.update(_directions(args.direction))
    return ov


def cmd_pair(args):
    schema = PatientSchema(
        stratum=tuple(_list(args.stratum)),
        refinement=tuple(_list(args.fine or "")),
        outcomes=tuple(_list(args.outcome or "")),
    )
    _, _, report = run_pair(
        args.patients, schema, _list(args.fine or ""), _list(args.coarse or ""), args.out
    )
    d = report.to_dict()
    if args.format == "csv":
        _emit(_rows_to_csv([{k: v for k, v in d.items() if not isinstance(v, (list, dict))}]), args)
    elif args.format == "text":
        _emit("\n".join(f"{k}: {v}" for k, v in d.items()), args)
    else:
        _emit(json.dumps(d, indent=2), args)


def cmd_tree(args):
    config = load_config(args.config, _analysis_overrides(args))
    tree, text = run_tree(config, args.pairs, args.out)
    if args.format == "text":
        _emit(text, args)
    elif args.format == "csv":
        rows = [
            {
                "node_id": n.node_id,
                "depth": n.depth,
                "n_pairs": n.n_pairs,
                "split": "" if n.split is None else n.split.covariate,
                "leaf_group_id": "" if n.leaf_group_id is None else n.leaf_group_id,
            }
            for n in tree.nodes
        ]
        _emit(_rows_to_csv(rows), args)
    else:
        _emit(tree.to_json(), args)


def cmd_analyze(args):
    config = load_config(args.config, _analysis_overrides(args))
    bundle = run_analyze(config, args.pairs, args.out)
    if args.format == "text":
        _emit(bundle.text, args)
    elif args.format == "csv":
        _emit("".join(f"# outcome: {o}\n{csv_}" for o, csv_ in bundle.grids_csv.items()), args)
    else:
        _emit(bundle.to_json(), args)


def cmd_simulate(args):
    spec = SyntheticSpec.from_json(args.spec)
    if args.seed is not None:
        spec = SyntheticSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    sim = run_simulate(spec, args.out, args.level)
    truth = {"spec": spec.to_dict(), "groups": sim.truth()}
    _emit(json.dumps(truth, indent=2), args)


def cmd_amplify(args):
    rows = run_amplify(args.gamma, [float(v) for v in _list(args.lam)])
    if args.format == "csv":
        _emit(_rows_to_csv(rows), args)
    elif args.format == "text":
        lines = [f"Gamma = {args.gamma:g}", "Lambda   Delta"]
        lines += [f"{r['lambda']:<8.2f} {r['delta']:.2f}" for r in rows]
        _emit("\n".join(lines), args)
    else:
        _emit(json.dumps(rows, indent=2), args)


def _add_analysis_flags(p, with_groups):
    p.add_argument("--pairs", required=True, help="pair CSV file")
    p.add_argument("--config", help="key = value configuration file; flags override it")
    p.add_argument("--outcome", help="outcome name(s), primary first")
    p.add_argument("--covariates", help="covariates offered to the tree (default: all)")
    p.add_argument("--direction", action="append", metavar="OUTCOME=control|treated")
    p.add_argument("--min-split", dest="min_split", type=int)
    p.add_argument("--min-leaf", dest="min_leaf", type=int)
    p.add_argument("--cp", type=float)
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--gamma", help=argparse.SUPPRESS if not with_groups else "Gamma grid, e.g. 1,1.05,1.1")
    p.add_argument("--tau", type=float)
    p.add_argument("--alpha", type=float)
    if with_groups:
        p.add_argument("--groups", help="'tree' or the name of a group column")
        p.add_argument("--lambda", dest="lam", help="Lambda values for amplification")
        p.add_argument("--method", choices=("exact", "normal"))
        p.add_argument("--subdivide-secondary", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="effectmod",
        description="Effect modification and sensitivity analysis for matched pairs.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--format", choices=("json", "csv", "text"), default="json")
        p.add_argument("--out", help="directory for output artifacts")

    p = sub.add_parser("pair", help="re-pair patients exactly on covariates")
    p.add_argument("--patients", required=True)
    p.add_argument("--stratum", required=True, help="matching stratum column(s)")
    p.add_argument("--fine", help="fine refinement keys (phase 1)")
    p.add_argument("--coarse", help="coarse keys for the leftovers (phase 2)")
    p.add_argument("--outcome", help="outcome column(s) to carry")
    common(p)
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("tree", help="fit the tree on |Y| of the primary outcome")
    _add_analysis_flags(p, with_groups=False)
    common(p)
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("analyze", help="full sensitivity analysis report")
    _add_analysis_flags(p, with_groups=True)
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="draw a synthetic data set")
    p.add_argument("--spec", required=True, help="JSON SyntheticSpec")
    p.add_argument("--seed", type=int)
    p.add_argument("--level", choices=("pairs", "patients"), default="pairs")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("amplify", help="amplify a Gamma into (Lambda, Delta) pairs")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--lambda", dest="lam", required=True)
    common(p)
    p.set_defaults(func=cmd_amplify)
    return parser


def _fail(code, exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except NumericError as exc:
        return _fail(2, exc)
    except (InputError, OSError, KeyError, ValueError) as exc:
        return _fail(1, exc)
    except (ArithmeticError, FloatingPointError) as exc:
        return _fail(2, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
