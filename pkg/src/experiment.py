"""
Homing-trend battery.

Runs one scenario several times with shifted seeds (mission seed and world
seed both advance by the repetition index).  Each run is a relay-homing
mission plus its return-to-base baseline; the table reports, per robot rank,
the mean exploration time before homing under both modes and the increase
of relay homing over the baseline.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, InputError
from .fleet import run_mission
from .models import MissionConfig

logger = logging.getLogger(__name__)

SMALL_SAMPLE = 3


@dataclass
class RepetitionResult:
    index: int
    seed: int
    world_seed: int
    relay: list[float]       # s of exploration per robot rank
    baseline: list[float]


@dataclass
class HomingTable:
    repetitions: list[RepetitionResult]

    @property
    def robot_count(self) -> int:
        return len(self.repetitions[0].relay)

    @property
    def mean_relay(self) -> np.ndarray:
        return np.mean([r.relay for r in self.repetitions], axis=0)

    @property
    def mean_baseline(self) -> np.ndarray:
        return np.mean([r.baseline for r in self.repetitions], axis=0)

    @property
    def increase_pct(self) -> np.ndarray:
        """Relay gain over the baseline mean, per rank (NaN where the baseline is 0)."""
        base = self.mean_baseline
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(base > 0, 100.0 * (self.mean_relay - base) / base, np.nan)

    def is_non_decreasing(self, tolerance: float = 2.0) -> bool:
        """Increase is non-decreasing in rank, allowing one inversion of at most *tolerance* points."""
        drops = -np.diff(self.increase_pct)
        inversions = drops[drops > 0]
        return len(inversions) == 0 or (len(inversions) == 1 and inversions[0] <= tolerance)

    def rows(self) -> list[tuple[int, float, float, float]]:
        return [
            (rank + 1, float(r), float(b), float(p))
            for rank, (r, b, p) in enumerate(zip(self.mean_relay, self.mean_baseline, self.increase_pct))
        ]


def repetition_config(config: MissionConfig, index: int) -> MissionConfig:
    data = config.to_dict()
    data["seed"] = config.seed + index
    data["world"]["seed"] = config.world.seed + index
    data["homing_mode"] = "relay"
    data["compute_baseline"] = True
    return MissionConfig.from_dict(data)


def _run_repetition(job: tuple[dict, int]) -> RepetitionResult:
    data, index = job
    config = repetition_config(MissionConfig.from_dict(data), index)
    result = run_mission(config)
    return RepetitionResult(
        index      = index,
        seed       = config.seed,
        world_seed = config.world.seed,
        relay      = [r.exploration_time for r in result.metrics.robots],
        baseline   = [r.exploration_time for r in result.baseline.robots],
    )


def run_homing_experiment(
    config: MissionConfig,
    repetitions: int,
    jobs: int = 1,
    progress_cb: Optional[Callable[[str], None]] = None,
) -> HomingTable:
    """Run *repetitions* seeded missions (in *jobs* processes) and aggregate them by seed."""
    config.validate()
    if config.robot_count < 2:
        raise ConfigError("robot_count", "the homing experiment needs at least 2 robots")
    if repetitions < 1:
        raise InputError(f"repetitions must be >= 1, got {repetitions}")
    if repetitions < SMALL_SAMPLE:
        logger.warning("only %d repetition(s): the table is a small sample", repetitions)

    jobs_ = [(config.to_dict(), i) for i in range(repetitions)]
    results: list[RepetitionResult] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_run_repetition, jobs_):
                results.append(res)
                if progress_cb:
                    progress_cb(f"repetition {res.index + 1}/{repetitions} done (seed {res.seed})")
    else:
        for job in jobs_:
            res = _run_repetition(job)
            results.append(res)
            if progress_cb:
                progress_cb(f"repetition {res.index + 1}/{repetitions} done (seed {res.seed})")
    results.sort(key=lambda r: r.seed)
    return HomingTable(results)


def write_homing_table(table: HomingTable, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["robot", "relay_exploration_time_s", "baseline_exploration_time_s", "increase_pct"])
        for rank, relay, base, pct in table.rows():
            writer.writerow([rank, f"{relay:.3f}", f"{base:.3f}", "" if np.isnan(pct) else f"{pct:.2f}"])
