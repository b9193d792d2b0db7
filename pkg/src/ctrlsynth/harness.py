"""Multi-trial benchmark runs and success-rate scoring.

``S[i, j]`` is 1 when task ``i`` succeeded in trial ``j``.  ASR averages over
tasks and then trials; AgSR counts a task as solved if any trial solved it.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .analysis import PerformanceReport
from .design import HeuristicPolicy, classify_system, run_design
from .requirements import TaskRequirement

__all__ = [
    "BenchmarkTask",
    "TrialMatrix",
    "ScoreReport",
    "run_trials",
    "asr",
    "agsr",
    "score",
    "success_check",
    "heuristic_factory",
    "report_dict",
    "write_report",
    "write_table_csv",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchmarkTask:
    system_id: int
    req: TaskRequirement

    @property
    def label(self) -> str:
        return f"{classify_system(self.req.plant).value}/{self.req.mode.value}"


@dataclass
class TrialMatrix:
    outcomes: np.ndarray  # (N, T) of 0/1
    iterations: np.ndarray  # (N, T) iterations used; meaningful where outcome is 1
    labels: list[str] = field(default_factory=list)
    system_ids: list[int] = field(default_factory=list)
    errors: dict[tuple[int, int], str] = field(default_factory=dict)

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes, dtype=np.int8)
        if self.outcomes.ndim != 2:
            raise ValueError("outcomes must be an N x T matrix")
        if not np.isin(self.outcomes, (0, 1)).all():
            raise ValueError("outcomes must be 0 or 1")
        self.iterations = np.asarray(self.iterations, dtype=np.int64).reshape(self.outcomes.shape)

    @classmethod
    def from_outcomes(cls, outcomes) -> TrialMatrix:
        o = np.asarray(outcomes)
        return cls(o, np.zeros_like(o, dtype=np.int64))

    @property
    def n_systems(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_trials(self) -> int:
        return self.outcomes.shape[1]

    def subset(self, rows) -> TrialMatrix:
        rows = list(rows)
        return TrialMatrix(self.outcomes[rows], self.iterations[rows],
                           [self.labels[i] for i in rows] if self.labels else [],
                           [self.system_ids[i] for i in rows] if self.system_ids else [])

    def to_dict(self) -> dict:
        return {"outcomes": self.outcomes.tolist(), "iterations": self.iterations.tolist(),
                "labels": list(self.labels), "system_ids": list(self.system_ids),
                "errors": [[i, j, msg] for (i, j), msg in sorted(self.errors.items())]}

    @classmethod
    def from_dict(cls, d: dict) -> TrialMatrix:
        return cls(np.array(d["outcomes"]), np.array(d["iterations"]), list(d.get("labels", [])),
                   list(d.get("system_ids", [])),
                   {(i, j): msg for i, j, msg in d.get("errors", [])})


@dataclass(frozen=True)
class ScoreReport:
    asr_per_trial: list[float]
    asr: float
    agsr: float
    mean_iterations_on_success: Optional[float]

    def to_dict(self) -> dict:
        return {"asr_per_trial": self.asr_per_trial, "asr": self.asr, "agsr": self.agsr,
                "mean_iterations_on_success": self.mean_iterations_on_success}


def asr(m: TrialMatrix) -> tuple[list[float], float]:
    """Per-trial success percentages and their mean."""
    per_trial = (m.outcomes.mean(axis=0) * 100.0).tolist()
    return per_trial, float(np.mean(per_trial))


def agsr(m: TrialMatrix) -> float:
    return float(m.outcomes.any(axis=1).mean() * 100.0)


def score(m: TrialMatrix) -> ScoreReport:
    per_trial, a = asr(m)
    g = agsr(m)
    assert g >= a - 1e-9, "aggregate success rate below average success rate"
    ok = m.outcomes.astype(bool)
    mean_it = float(m.iterations[ok].mean()) if ok.any() else None
    return ScoreReport(per_trial, a, g, mean_it)


def success_check(report: PerformanceReport, req: TaskRequirement,
                  gain_margin_mode: bool = False) -> int:
    ok = (report.pass_stability and report.pass_settling and report.pass_phase_margin
          and report.pass_ess)
    if gain_margin_mode or req.require_gain_margin_6db:
        ok = ok and report.pass_gain_margin
    return int(bool(ok))


def heuristic_factory(trial: int) -> HeuristicPolicy:
    return HeuristicPolicy(trial=trial)


def _run_cell(args):
    i, j, req, factory, n_max = args
    try:
        out = run_design(req, factory(j), n_max)
    except Exception as exc:  # a broken cell scores 0 and the sweep goes on
        log.warning("task %d trial %d failed: %s", i, j, exc)
        return i, j, 0, 0, f"{type(exc).__name__}: {exc}"
    return i, j, int(out.success), out.iterations_used, None


def run_trials(tasks: Sequence[BenchmarkTask], policy_factory: Callable = heuristic_factory,
               T: int = 1, n_max: int | None = None, *, gain_margin: bool = False,
               jobs: int | None = None) -> TrialMatrix:
    """Run every task ``T`` times.  ``policy_factory(j)`` builds the policy for trial ``j``
    and must be picklable when ``jobs > 1``."""
    if T < 1:
        raise ValueError("T must be at least 1")
    reqs = [t.req.with_gain_margin() if gain_margin else t.req for t in tasks]
    cells = [(i, j, reqs[i], policy_factory, n_max) for i in range(len(tasks)) for j in range(T)]
    jobs = (os.cpu_count() or 1) if jobs is None else max(1, int(jobs))
    outcomes = np.zeros((len(tasks), T), dtype=np.int8)
    iters = np.zeros((len(tasks), T), dtype=np.int64)
    errors = {}
    with ExitStack() as stack:
        if jobs == 1 or len(cells) <= 1:
            results = map(_run_cell, cells)
        else:
            pool = stack.enter_context(ProcessPoolExecutor(max_workers=min(jobs, len(cells))))
            results = pool.map(_run_cell, cells, chunksize=max(1, len(cells) // (4 * jobs)))
        for i, j, ok, k, err in results:
            outcomes[i, j] = ok
            iters[i, j] = k
            if err:
                errors[(i, j)] = err
    return TrialMatrix(outcomes, iters, [t.label for t in tasks], [t.system_id for t in tasks],
                       errors)


def _groups(m: TrialMatrix) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for i, lab in enumerate(m.labels):
        groups.setdefault(lab, []).append(i)
    return groups


def report_dict(config: dict, m: TrialMatrix) -> dict:
    s = score(m)
    d = {"config": config, **s.to_dict()}
    d["per_group"] = {lab: score(m.subset(rows)).to_dict() for lab, rows in _groups(m).items()}
    d["per_system"] = [
        {"id": m.system_ids[i] if m.system_ids else i,
         "task": m.labels[i] if m.labels else None,
         "outcomes": m.outcomes[i].tolist(), "iterations": m.iterations[i].tolist()}
        for i in range(m.n_systems)]
    d["matrix"] = m.to_dict()
    return d


def write_report(path, config: dict, m: TrialMatrix) -> dict:
    d = report_dict(config, m)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=2)
        fh.write("\n")
    return d


def write_table_csv(path, m: TrialMatrix) -> None:
    """One row per (system class, response mode), ASR/AgSR in percent."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["task", "n_systems", "n_trials", "asr", "agsr", "mean_iterations_on_success"])
        for lab, rows in sorted(_groups(m).items()):
            s = score(m.subset(rows))
            mi = "" if s.mean_iterations_on_success is None else f"{s.mean_iterations_on_success:.2f}"
            wr.writerow([lab, len(rows), m.n_trials, f"{s.asr:.1f}", f"{s.agsr:.1f}", mi])
