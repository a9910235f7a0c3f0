"""Command line entry point.

    ppoa run CONFIG.json [--seed N] [--rounds R] [--out DIR]
    ppoa attack --sigma 0,0.07,1.0 --users 6022 --trials 10
    ppoa theory --sigma-grid 0.07,0.2,0.8,1.0
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .attack import run_attack_experiment, theoretical_exposure


def _floats(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _g(x) -> str:
    return "" if x is None else f"{x:.6g}"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ppoa", description="Federated recommendation with orthogonal aggregation.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run a federation from a JSON config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--rounds", type=int, help="override the round count")
    run.add_argument("--out", help="override the output directory")
    run.add_argument("--quiet", action="store_true")

    att = sub.add_parser("attack", help="attribute-inference attack on noisy count uploads")
    att.add_argument("--sigma", type=_floats, required=True, help="comma-separated noise levels")
    att.add_argument("--users", type=int, default=6022)
    att.add_argument("--trials", type=int, default=10)
    att.add_argument("--ratio", type=float, default=0.717, help="share of group 0")
    att.add_argument("--seed", type=int, default=0)
    att.add_argument("--out", help="also write the CSV here")

    th = sub.add_parser("theory", help="closed-form share of exposed users")
    th.add_argument("--sigma-grid", type=_floats, required=True)
    th.add_argument("--out")
    return ap


def _emit(lines, out):
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_attack(args) -> None:
    rng = np.random.default_rng(args.seed)
    lines = ["sigma,users,exposed,exposed_pct,correct,accuracy,theoretical_pct"]
    for s in args.sigma:
        rep = run_attack_experiment(args.users, s, args.trials, args.ratio, rng)
        acc = rep.accuracy
        lines.append(",".join([
            _g(s), str(args.users), _g(rep.exposed), _g(100 * rep.exposed_pct), _g(rep.correct),
            _g(None if acc is None else 100 * acc), _g(100 * theoretical_exposure(s)),
        ]))
    _emit(lines, args.out)


def cmd_theory(args) -> None:
    lines = ["sigma,p_su"]
    lines += [f"{_g(s)},{_g(theoretical_exposure(s))}" for s in args.sigma_grid]
    _emit(lines, args.out)


def cmd_run(args) -> None:
    from .config import load_config
    from .federation import run_federation

    cfg = load_config(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.rounds is not None:
        over["rounds"] = args.rounds
    if args.out is not None:
        over["output_dir"] = args.out
    if over:
        cfg = cfg.with_overrides(**over)

    def progress(rep):
        if not args.quiet and rep.eval is not None:
            e = rep.eval
            groups = ", ".join(f"g{g} {x:.4f}" for g, x in enumerate(e.group_ndcg))
            print(f"round {rep.round:4d}  ndcg@{cfg.train.top_k} {e.overall_ndcg:.4f} "
                  f"({groups})  hr {e.overall_hr:.4f}  "
                  f"loss {rep.loss:.4f}  {rep.timings.get('total', 0):.1f}s", file=sys.stderr)

    _, summary = run_federation(cfg, progress=progress)
    final = summary["final"] or {}
    print(",".join(final.keys()))
    print(",".join(_g(x) for x in final.values()))
    if "swap" in summary:
        print(f"swap: relative NDCG drop {_g(summary['swap']['relative_drop_ndcg'])}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        {"run": cmd_run, "attack": cmd_attack, "theory": cmd_theory}[args.cmd](args)
    except (ValueError, ArithmeticError, OSError, RuntimeError, KeyError) as exc:
        print(f"ppoa {args.cmd}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
