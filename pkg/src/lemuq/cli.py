"""Command-line entry points: run a scenario, generate a grid, validate."""

from __future__ import annotations

import dataclasses
import logging
import sys
from pathlib import Path

import click

from . import pce, scenario
from .errors import LemuqError, ParseError, ValidationError


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log pipeline stages.")
def main(verbose: bool):
    """Local electricity market clearing under uncertainty."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load(path: str) -> scenario.ScenarioConfig:
    candidate = Path(path)
    if not candidate.exists():
        bundled = scenario.bundled_path(path)
        if bundled.exists():
            candidate = bundled
        else:
            raise click.ClickException(
                f"{path}: no such file or bundled case name")
    try:
        return scenario.load_scenario(candidate)
    except (ParseError, ValidationError) as exc:
        raise click.ClickException(str(exc)) from exc


@main.command("run")
@click.argument("scenario_file")
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              help="Output directory (default: the scenario's outputs.directory).")
@click.option("--samples", type=click.IntRange(min=1),
              help="Override sampling.n_samples.")
@click.option("--seed", type=int, help="Override sampling.seed.")
@click.option("--epsilon", type=click.FloatRange(min=0.0, min_open=True, max=0.5),
              help="Override the per-constraint risk level.")
@click.option("--gamma", type=click.Choice(["gaussian", "dist-robust"]),
              help="Override the risk-margin rule.")
@click.option("--degree", type=click.IntRange(min=0),
              help="Override the polynomial expansion degree.")
def run_cmd(scenario_file, out_dir, samples, seed, epsilon, gamma, degree):
    """Clear the market for SCENARIO_FILE and write CSVs plus a report.

    SCENARIO_FILE is a YAML path or a bundled case name (case1..case3).
    """
    config = _load(scenario_file)
    overrides = {}
    if samples is not None:
        overrides["n_samples"] = samples
    if seed is not None:
        overrides["seed"] = seed
    if epsilon is not None:
        overrides["epsilon"] = epsilon
    if gamma is not None:
        overrides["gamma_mode"] = gamma.replace("-", "_")
    if degree is not None:
        overrides["germ"] = pce.GermSpec(config.germ.components, degree=degree)
    if overrides:
        config = dataclasses.replace(config, **overrides)
    try:
        report = scenario.run(config, out_dir=out_dir)
    except LemuqError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc
    click.echo(f"scenario {report.scenario}: objective {report.objective:.4f}")
    for stage, secs in report.stage_seconds.items():
        click.echo(f"  {stage:<10s} {secs:8.3f} s")
    click.echo(f"  solver-only {report.solver_seconds:.3f} s, "
               f"total {report.total_seconds:.3f} s")
    if report.ac_max_violation_rate is not None:
        click.echo(f"  max AC violation rate {report.ac_max_violation_rate:.4f}")
    click.echo(f"wrote {len(report.manifest)} files to {report.out_dir}")


@main.command("generate-grid")
@click.option("--buses", required=True, type=click.IntRange(min=5),
              help="Number of buses including the slack.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--load-density", type=click.FloatRange(0.0, 1.0), default=0.7,
              show_default=True, help="Probability a bus hosts a load.")
@click.option("--pv-density", type=click.FloatRange(0.0, 1.0), default=0.4,
              show_default=True, help="Probability a bus hosts a PV plant.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              help="Write the scenario here instead of stdout.")
def generate_grid_cmd(buses, seed, load_density, pv_density, out_path):
    """Emit a runnable scenario for a random radial feeder."""
    config = scenario.synthetic_scenario(buses, seed, load_density, pv_density)
    text = scenario.emit_scenario(config)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
        click.echo(f"wrote {out_path}")
    else:
        sys.stdout.write(text)


@main.command("validate")
@click.argument("scenario_file")
def validate_cmd(scenario_file):
    """Check a scenario file; exit nonzero with a precise error if invalid.

    SCENARIO_FILE is a YAML path or a bundled case name (case1..case3).
    """
    config = _load(scenario_file)
    net = config.network()
    click.echo(
        f"{config.name}: {net.n + 1} buses, {len(config.branches)} branches, "
        f"{len(config.injections)} injections, {len(config.flexgens)} generators, "
        f"{len(config.agents)} agents, horizon {config.horizon}, "
        f"germ d={config.germ.d} degree {config.germ.degree}"
    )


if __name__ == "__main__":
    main()
