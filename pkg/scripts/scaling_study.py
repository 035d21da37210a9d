"""Time the full pipeline on synthetic feeders of increasing size.

Each size runs generate -> clear -> prices -> validate on a random
radial grid (agents omitted: their cost is independent of grid size).
Prints a table of solver-only and per-stage wall times.
"""

import argparse

from lemuq import scenario

STAGES = ("build", "clear", "prices", "agents", "validate", "report")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+",
                        default=[20, 50, 120, 179],
                        help="bus counts to run (default: 20 50 120 179)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out/scaling",
                        help="artifact root; one subdirectory per size")
    args = parser.parse_args()

    header = f"{'buses':>6} {'solver':>8} " + " ".join(f"{s:>9}" for s in STAGES) + f" {'total':>8}"
    print(header)
    print("-" * len(header))
    for n in args.sizes:
        config = scenario.synthetic_scenario(n, seed=args.seed)
        report = scenario.run(config, out_dir=f"{args.out}/synthetic{n}")
        stages = " ".join(f"{report.stage_seconds.get(s, 0.0):9.2f}" for s in STAGES)
        print(f"{n:>6} {report.solver_seconds:8.2f} {stages} {report.total_seconds:8.2f}")
        if set(report.solver_status) != {"optimal"}:
            print(f"       warning: solver status {sorted(set(report.solver_status))}")


if __name__ == "__main__":
    main()
