#!/usr/bin/env python3
"""
Cave Exploration Simulator
CLI entry point.

Usage
-----
# Generate a cave and print its statistics:
    python main.py generate-world --seed 7 --out cave.scsw

# Run a mission scenario and write every artifact:
    python main.py run --scenario scenarios/demo_room.json --out runs/demo

# Relay homing vs. return-to-base over six seeds:
    python main.py homing-experiment --scenario scenarios/homing_trend.json --reps 6 --out runs/trend

# Point-to-point accuracy of an exported map against its world:
    python main.py eval-map runs/demo/merged_map.txt cave.scsw

# Print a scenario with every default filled in:
    python main.py show-scenario scenarios/demo_room.json

Log verbosity comes from CAVESIM_LOG (DEBUG, INFO, WARNING, ERROR);
--verbose forces DEBUG.  Exit codes: 0 success, 1 runtime failure,
2 invalid input.
"""

from __future__ import annotations

import json
import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from src.errors import CaveSimError, InputError, MissionAborted

LOG_ENV = "CAVESIM_LOG"
_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

console = Console()


# ── Errors ────────────────────────────────────────────────────────────────────

class InvalidInput(click.ClickException):
    exit_code = 2


class RunFailed(click.ClickException):
    exit_code = 1


@contextmanager
def _errors() -> Iterator[None]:
    """Translate package errors into the exit-code contract."""
    try:
        yield
    except InputError as exc:
        raise InvalidInput(str(exc)) from exc
    except CaveSimError as exc:
        raise RunFailed(str(exc)) from exc


# ── Helpers ───────────────────────────────────────────────────────────────────

def _setup_logging(verbose: bool) -> None:
    level = "DEBUG" if verbose else os.environ.get(LOG_ENV, "WARNING").upper()
    if level not in _LEVELS:
        level = "WARNING"
    logging.basicConfig(
        level    = level,
        format   = "%(message)s",
        datefmt  = "[%X]",
        handlers = [RichHandler(console=Console(stderr=True), show_path=False)],
        force    = True,
    )


def _load_scenario(path: str, seed: Optional[int] = None) -> "MissionConfig":  # type: ignore[name-defined]
    """Load a scenario; relative world files resolve against the scenario's folder."""
    from src.models import MissionConfig

    config = MissionConfig.load(path)
    if config.world.kind == "file" and config.world.path and not Path(config.world.path).is_absolute():
        config.world.path = str(Path(path).parent / config.world.path)
    if seed is not None:
        config.seed = seed
    return config


def _rows_table(title: str, header: tuple[str, ...], rows: list[tuple]) -> Table:
    table = Table(title=title)
    for name in header:
        table.add_column(name, justify="right")
    for row in rows:
        table.add_row(*(str(v) for v in row))
    return table


# ── Commands ──────────────────────────────────────────────────────────────────

@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging (overrides CAVESIM_LOG).")
def cli(verbose: bool):
    """Cave exploration simulator: multi-robot exploration with relay homing."""
    _setup_logging(verbose)


@cli.command(name="generate-world")
@click.option("--seed", "-s", default=1, show_default=True, help="Generation seed.")
@click.option("--params", "-p", "params_file", type=click.Path(exists=True, dir_okay=False),
              help="JSON file with cave parameters (defaults for missing keys).")
@click.option("--out", "-o", "out_path", required=True, help="World file to write (.scsw).")
def generate_world(seed: int, params_file: Optional[str], out_path: str):
    """Generate a cave world, save it and print its statistics."""
    from src.models     import CaveParams
    from src.world_file import save_world
    from src.worldsim   import generate_cave, world_statistics

    with _errors():
        params = CaveParams()
        if params_file:
            try:
                data = json.loads(Path(params_file).read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise InvalidInput(f"{params_file}: invalid JSON ({exc.msg})") from exc
            params = CaveParams.from_dict(data, "cave")
        world = generate_cave(seed, params)
        save_world(world, out_path)
        stats = world_statistics(world)

    click.echo(f"✓ World saved: {out_path}")
    click.echo(f"  {world.shape[0]}×{world.shape[1]}×{world.shape[2]} voxels at {world.resolution} m")
    click.echo(f"  free volume: {stats.free_volume:.1f} m³ ({stats.free_cells} voxels)")
    rows = [(f"{lo:.1f}–{hi:.1f}", n) for lo, hi, n in stats.histogram_rows() if n]
    console.print(_rows_table("Corridor width", ("width (m)", "samples"), rows))


@cli.command()
@click.option("--scenario", "-c", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Scenario JSON file.")
@click.option("--out", "-o", "out_dir", required=True, help="Output directory.")
@click.option("--seed", "-s", type=int, default=None, help="Override the scenario seed.")
@click.option("--no-baseline", is_flag=True, help="Skip the return-to-base comparison run.")
def run(scenario: str, out_dir: str, seed: Optional[int], no_baseline: bool):
    """Run a mission scenario and write its artifacts to OUT."""
    from src.exporter import write_mission_artifacts
    from src.fleet    import run_mission

    with _errors():
        config = _load_scenario(scenario, seed)
        if no_baseline:
            config.compute_baseline = False
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    config.save(str(Path(out_dir) / "scenario.json"))

    click.echo(f"→ Running {config.robot_count} robot(s), world '{config.world.kind}'")
    with _errors():
        try:
            result = run_mission(config, progress_cb=click.echo)
        except MissionAborted as exc:
            if exc.partial is not None:
                write_mission_artifacts(exc.partial, out_dir, progress_cb=click.echo)
                click.echo(f"⚠ Partial artifacts in {out_dir}", err=True)
            raise
        write_mission_artifacts(result, out_dir, progress_cb=click.echo)

    m = result.metrics
    rows = [
        (r.id, r.policy, r.status, f"{r.flight_time:.1f}", f"{r.trajectory_length:.1f}",
         f"{r.explored_volume:.1f}", f"{r.exploration_time:.1f}",
         "–" if r.increase_pct is None else f"{r.increase_pct:+.1f}")
        for r in m.robots
    ]
    header = ("robot", "policy", "status", "flight (s)", "length (m)", "explored (m³)",
              "exploring (s)", "increase (%)")
    console.print(_rows_table("Mission", header, rows))
    click.echo(f"  merged explored volume: {m.merged_explored_volume:.1f} m³")
    click.echo(f"  relay chain connected:  {'yes' if m.relay_connected else 'no'}")
    click.echo(f"✓ Artifacts in {out_dir}")


@cli.command(name="homing-experiment")
@click.option("--scenario", "-c", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Scenario JSON file (at least 2 robots).")
@click.option("--reps", "-r", default=6, show_default=True, type=click.IntRange(min=1),
              help="Repetitions, each with its own seeds.")
@click.option("--jobs", "-j", default=1, show_default=True, type=click.IntRange(min=1),
              help="Worker processes.")
@click.option("--out", "-o", "out_dir", required=True, help="Output directory.")
@click.option("--seed", "-s", type=int, default=None, help="Override the scenario seed.")
def homing_experiment(scenario: str, reps: int, jobs: int, out_dir: str, seed: Optional[int]):
    """Relay homing vs. return-to-base, averaged over REPS seeded missions."""
    from src.experiment import SMALL_SAMPLE, run_homing_experiment, write_homing_table

    with _errors():
        config = _load_scenario(scenario, seed)
        table = run_homing_experiment(config, reps, jobs, progress_cb=click.echo)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    csv_path = Path(out_dir) / "homing_table.csv"
    write_homing_table(table, str(csv_path))

    if reps < SMALL_SAMPLE:
        click.echo(f"⚠ only {reps} repetition(s): small sample", err=True)
    out = Table(title=f"Exploration time before homing ({reps} repetition(s))")
    out.add_column("")
    for rank in range(1, table.robot_count + 1):
        out.add_column(f"robot {rank}", justify="right")
    out.add_row("relay (s)", *(f"{v:.1f}" for v in table.mean_relay))
    out.add_row("baseline (s)", *(f"{v:.1f}" for v in table.mean_baseline))
    out.add_row("increase (%)", *(f"{v:+.1f}" for v in table.increase_pct))
    console.print(out)
    click.echo(f"✓ Table saved: {csv_path}")


@cli.command(name="eval-map")
@click.argument("map_file", metavar="MAP", type=click.Path(exists=True, dir_okay=False))
@click.argument("world_file", metavar="WORLD", type=click.Path(exists=True, dir_okay=False))
@click.option("--bins", "-b", default=10, show_default=True, type=click.IntRange(min=1))
def eval_map(map_file: str, world_file: str, bins: int):
    """Point-to-point error of an exported MAP against its ground-truth WORLD."""
    from src.exporter   import load_map
    from src.mapping    import map_accuracy
    from src.world_file import load_world

    with _errors():
        report = map_accuracy(load_map(map_file), load_world(world_file))

    click.echo(f"points: {len(report.per_point_errors)}")
    click.echo(f"mean:   {report.mean:.4f} m")
    click.echo(f"std:    {report.std:.4f} m")
    rows = [(f"{lo:.3f}–{hi:.3f}", n) for lo, hi, n in report.histogram(bins)]
    console.print(_rows_table("Error histogram", ("error (m)", "points"), rows))


@cli.command(name="show-scenario")
@click.argument("scenario", required=False, type=click.Path(exists=True, dir_okay=False))
def show_scenario(scenario: Optional[str]):
    """Print SCENARIO (or the defaults) with every field filled in."""
    from src.models import MissionConfig

    with _errors():
        config = MissionConfig.load(scenario) if scenario else MissionConfig()
    click.echo(json.dumps(config.to_dict(), indent=2, sort_keys=True))


# ── Entry point ───────────────────────────────────────────────────────────────

if __name__ == "__main__":
    cli()
