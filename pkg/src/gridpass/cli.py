"""Command-line analysis: exact password-space size and attack rates."""

from __future__ import annotations

import argparse
import sys
from decimal import Decimal
from typing import Optional

from gridpass.analysis import MAX_TRIALS, MODELS, run_attack
from gridpass.grid import SpaceParams, password_space

ATTACK_NOTE = (
    "note: attacker models operationalize informal claims about guessing "
    "resistance; see README for their exact definitions."
)


def scientific(value: int) -> str:
    """Render an integer as d.ddd×10^k."""
    mantissa, _, exponent = f"{Decimal(value):.3E}".partition("E")
    return f"{mantissa}×10^{int(exponent)}"


def _cmd_space(args, parser) -> int:
    try:
        params = SpaceParams(
            width=args.w,
            height=args.h,
            tolerance=args.t,
            orders=args.m,
            images=args.n,
            rounds=args.c,
        )
    except ValueError as exc:
        parser.error(str(exc))
    size = password_space(params)
    if args.csv:
        print("w,h,t,m,n,c,exact,scientific")
        print(
            f"{params.width},{params.height},{params.tolerance},"
            f"{params.orders},{params.images},{params.rounds},{size},{scientific(size)}"
        )
    else:
        print(
            f"parameters: w={params.width} h={params.height} t={params.tolerance} "
            f"m={params.orders} n={params.images} c={params.rounds}"
        )
        print(f"password space (exact): {size}")
        print(f"password space (scientific): {scientific(size)}")
    return 0


def _cmd_attack(args, parser) -> int:
    if args.trials < 1:
        parser.error("--trials must be at least 1")
    if args.trials > MAX_TRIALS:
        parser.error(f"--trials budget exceeded ({args.trials} > {MAX_TRIALS})")
    report = run_attack(args.model, args.trials, args.seed)
    reference = float(report.reference)
    z = report.deviation / report.sigma if report.sigma else 0.0
    if args.csv:
        print("model,trials,seed,successes,empirical_rate,reference_rate,sigma,z")
        print(
            f"{report.kind},{report.trials},{report.seed},{report.successes},"
            f"{report.empirical_rate:.9e},{reference:.9e},{report.sigma:.9e},{z:.4f}"
        )
    else:
        print(f"model: {report.kind}")
        print(f"trials: {report.trials}  seed: {report.seed}")
        print(f"successes: {report.successes}")
        print(f"empirical rate: {report.empirical_rate:.6e}")
        print(f"reference rate: {report.reference} = {reference:.6e}")
        print(
            f"deviation: {report.deviation:+.3e}  (z = {z:+.2f}, "
            f"within 3 sigma: {'yes' if report.within_three_sigma else 'NO'})"
        )
        print(ATTACK_NOTE)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="authcli",
        description="Analyze the grid password scheme: space size and attack rates.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    space = commands.add_parser("space", help="evaluate the exact password space")
    space.add_argument("--w", type=int, default=450, help="image width in pixels")
    space.add_argument("--h", type=int, default=450, help="image height in pixels")
    space.add_argument("--t", type=int, default=150, help="tolerance square side in pixels")
    space.add_argument("--m", type=int, default=4, help="images shown per challenge level")
    space.add_argument("--n", type=int, default=4, help="number of labeling orders")
    space.add_argument("--c", type=int, default=3, help="number of challenge levels")
    space.add_argument("--csv", action="store_true", help="machine-readable output")

    attack = commands.add_parser("attack", help="simulate an attacker model")
    attack.add_argument("--model", required=True, choices=MODELS)
    attack.add_argument("--trials", type=int, default=10_000)
    attack.add_argument("--seed", type=int, default=0)
    attack.add_argument("--csv", action="store_true", help="machine-readable output")

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "space":
        return _cmd_space(args, parser)
    return _cmd_attack(args, parser)


if __name__ == "__main__":
    sys.exit(main())
