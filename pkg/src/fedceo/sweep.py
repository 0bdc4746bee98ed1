"""Parameter sweeps over (value, seed) grids of experiment runs.

A sweep varies exactly one dotted config field (``dp.sigma``, ``lr``,
``algorithm``, ...) over a list of values, runs every (value, seed) cell,
and reports per-cell final accuracy and privacy budget plus per-value
mean/std summaries.  Cells are independent, so they may run on a thread
pool; output order is always (value index, seed index) regardless of
scheduling.  If a cell fails, the cells completed before the failure ride
along on the raised exception's ``partial_rows`` attribute.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np

from .config import _SCHEMA
from .errors import ValidationError
from .protocol import RunConfig, run_experiment, worker_count

SWEEPABLE = tuple(
    key for key in _SCHEMA
    if _SCHEMA[key][0] in ("run", "dp") and key != "seed"
)


@dataclasses.dataclass(frozen=True)
class SweepSpec:
    base: RunConfig
    axis: str
    values: tuple
    seeds: tuple

    def __post_init__(self):
        if self.axis not in SWEEPABLE:
            raise ValidationError(
                f"not a sweepable config field (one of {', '.join(sorted(SWEEPABLE))})",
                field=self.axis,
            )
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if not self.values:
            raise ValidationError("needs at least one value", field="values")
        if not self.seeds:
            raise ValidationError("needs at least one seed", field="seeds")
        if any(int(s) < 0 for s in self.seeds):
            raise ValidationError("seeds must be nonnegative", field="seeds")


class SweepRow(NamedTuple):
    value: object
    seed: int
    acc: float
    loss: float
    eps_p: float


class SweepSummary(NamedTuple):
    value: object
    mean_acc: float
    std_acc: float
    mean_eps: float


class SweepResult(NamedTuple):
    spec: SweepSpec
    rows: list[SweepRow]          # one per (value, seed), in grid order
    summaries: list[SweepSummary]  # one per value


def cell_config(spec: SweepSpec, value, seed: int) -> RunConfig:
    """The base config with the axis field set to ``value`` and the seed set."""
    group, attr, convert = _SCHEMA[spec.axis]
    typed = convert(str(value))
    if group == "run":
        return dataclasses.replace(spec.base, seed=int(seed), **{attr: typed})
    dp = dataclasses.replace(spec.base.dp, **{attr: typed})
    return dataclasses.replace(spec.base, seed=int(seed), dp=dp)


def _run_cell(cfg: RunConfig) -> tuple[float, float, float]:
    result = run_experiment(cfg, max_workers=1)
    last = result.metrics[-1]
    return last.acc, last.loss, last.eps_p


def sweep(spec: SweepSpec, *, max_workers: int | None = None) -> SweepResult:
    """Run the full (value, seed) grid and summarize per value.

    Raises the first cell failure after cancelling the rest; completed
    rows (in grid order, up to the first gap) are attached to the
    exception as ``partial_rows``.
    """
    grid = [(value, int(seed)) for value in spec.values for seed in spec.seeds]
    configs = [cell_config(spec, value, seed) for value, seed in grid]
    workers = worker_count(max_workers)
    outcomes: list = [None] * len(grid)
    if workers == 1:
        try:
            for i, cfg in enumerate(configs):
                outcomes[i] = _run_cell(cfg)
        except Exception as exc:
            exc.partial_rows = _finished_rows(grid, outcomes)
            raise
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, cfg) for cfg in configs]
            try:
                for i, fut in enumerate(futures):
                    outcomes[i] = fut.result()
            except Exception as exc:
                for fut in futures:
                    fut.cancel()
                exc.partial_rows = _finished_rows(grid, outcomes)
                raise

    rows = _finished_rows(grid, outcomes)
    summaries = []
    per_value = len(spec.seeds)
    for vi, value in enumerate(spec.values):
        chunk = rows[vi * per_value:(vi + 1) * per_value]
        accs = np.array([row.acc for row in chunk])
        eps = np.array([row.eps_p for row in chunk])
        summaries.append(SweepSummary(
            value=value,
            mean_acc=float(accs.mean()),
            std_acc=float(accs.std()),
            mean_eps=float(eps.mean()),
        ))
    return SweepResult(spec=spec, rows=rows, summaries=summaries)


def _finished_rows(grid, outcomes) -> list[SweepRow]:
    rows = []
    for (value, seed), outcome in zip(grid, outcomes):
        if outcome is None:
            break
        acc, loss, eps = outcome
        rows.append(SweepRow(value=value, seed=seed, acc=acc, loss=loss, eps_p=eps))
    return rows


def sweep_csv_text(result: SweepResult) -> str:
    """CSV of per-cell rows then per-value summary rows.

    Summary rows reuse the seed column for the literals ``mean``/``std``.
    """
    def fmt(x: float) -> str:
        return "" if np.isnan(x) else repr(float(x))

    lines = [f"{result.spec.axis},seed,acc,loss,eps_p"]
    for row in result.rows:
        lines.append(f"{row.value},{row.seed},{fmt(row.acc)},{fmt(row.loss)},{fmt(row.eps_p)}")
    for s in result.summaries:
        lines.append(f"{s.value},mean,{fmt(s.mean_acc)},,{fmt(s.mean_eps)}")
        lines.append(f"{s.value},std,{fmt(s.std_acc)},,")
    return "\n".join(lines) + "\n"
