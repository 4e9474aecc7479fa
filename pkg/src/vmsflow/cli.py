"""Command-line benchmark runner.

Usage::

    vmsflow run --case taylor-green --nelems 4,8,16 --degree 2 \
        --fine-degree 3 --re 100 --dt auto --tmax 1.0 --stab full-cn \
        --picard-tol 1e-10 --out results/tg

A JSON config file may supply the same keys (``--config file.json``);
explicit flags override it.  Exits 0 on success, nonzero with the case
name on failure.
"""

import argparse
import json
import sys

from .bench import CaseSpec, run_case


def _parse_re(text):
    return float("inf") if text in ("inf", "Inf", "INF") else float(text)


def _parse_dt(text):
    return "auto" if text == "auto" else float(text)


def build_parser():
    parser = argparse.ArgumentParser(prog="vmsflow")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a benchmark case")
    run.add_argument("--config", help="JSON file with the same keys as the flags")
    run.add_argument("--case", choices=["cavity-manufactured-steady",
                                        "taylor-green", "shear-layer",
                                        "lid-driven-cavity"])
    run.add_argument("--nelems", help="comma-separated element counts, e.g. 4,8,16")
    run.add_argument("--degree", type=int)
    run.add_argument("--fine-degree", type=int, dest="fine_degree")
    run.add_argument("--re", type=_parse_re)
    run.add_argument("--dt", type=_parse_dt)
    run.add_argument("--tmax", type=float)
    run.add_argument("--stab", choices=["none", "full-cn", "semi-cn"])
    run.add_argument("--picard-tol", type=float, dest="picard_tol")
    run.add_argument("--picard-max", type=int, dest="picard_max")
    run.add_argument("--sample-n", type=int, dest="sample_n")
    run.add_argument("--out")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    settings = {}
    if args.config:
        with open(args.config) as fh:
            settings.update(json.load(fh))
    for key in ("case", "nelems", "degree", "fine_degree", "re", "dt",
                "tmax", "stab", "picard_tol", "picard_max", "sample_n",
                "out"):
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    if "nelems" in settings and isinstance(settings["nelems"], str):
        settings["nelems"] = tuple(int(v) for v in settings["nelems"].split(","))
    if "re" in settings and isinstance(settings["re"], str):
        settings["re"] = _parse_re(settings["re"])
    if "case" not in settings:
        print("error: no case given (flag --case or config file)", file=sys.stderr)
        return 2
    case = settings["case"]
    try:
        spec = CaseSpec(**settings)
        run_case(spec)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: case {case!r} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
