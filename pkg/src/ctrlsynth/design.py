"""Iterative propose / evaluate / feedback controller design.

A *policy* proposes a controller from the requirement, the memory of
previous attempts and the latest feedback; the loop evaluates each proposal
and stops at the first one that meets every requirement.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol

import numpy as np

from .analysis import PerformanceReport, evaluate_closed_loop
from .lti import TransferFunction, routh_stable
from .requirements import ResponseMode, TaskRequirement
from .synthesis import (ControllerDesign, Family, LoopShapeParams, initial_bandwidth,
                        initial_params, loopshape_controller, pid_from_frequency)

__all__ = [
    "SystemClass",
    "TaskRequirement",
    "ResponseMode",
    "Feedback",
    "DesignRecord",
    "MemoryBuffer",
    "DesignOutcome",
    "DesignPolicy",
    "PolicyError",
    "HeuristicPolicy",
    "classify_system",
    "generate_feedback",
    "heuristic_propose",
    "run_design",
    "default_n_max",
    "trace_to_json",
]

log = logging.getLogger(__name__)

PARAM_MIN, PARAM_MAX = 1e-4, 1e6
GAMMA, DELTA = 1.5, 1.4
STALL_LIMIT = 3
BETA_SHRINK_FLOOR = 1.0
BETA_MAX_ANGLE = 88.0  # deg of lead the integral boost is asked for at most
PID_PHASE_CAP = 85.0
ERR_CAP = 1e6


class PolicyError(RuntimeError):
    """A policy could not produce a design (transport failure, unparsable reply, ...)."""


class SystemClass(str, Enum):
    FIRST_ORDER_STABLE = "first_order_stable"
    FIRST_ORDER_UNSTABLE = "first_order_unstable"
    SECOND_ORDER_STABLE = "second_order_stable"
    SECOND_ORDER_UNSTABLE = "second_order_unstable"
    FIRST_ORDER_DELAY = "first_order_delay"
    HIGHER_ORDER = "higher_order"

    @property
    def agent_number(self) -> int:
        return _AGENT_NUMBER[self]

    @classmethod
    def from_agent_number(cls, n: int) -> SystemClass:
        for k, v in _AGENT_NUMBER.items():
            if v == n:
                return k
        raise ValueError(f"no agent numbered {n}")


_AGENT_NUMBER = {
    SystemClass.FIRST_ORDER_STABLE: 1,
    SystemClass.FIRST_ORDER_UNSTABLE: 2,
    SystemClass.SECOND_ORDER_STABLE: 3,
    SystemClass.SECOND_ORDER_UNSTABLE: 4,
    SystemClass.FIRST_ORDER_DELAY: 5,
    SystemClass.HIGHER_ORDER: 6,
}


def classify_system(plant: TransferFunction) -> SystemClass:
    order = plant.den.degree
    if order >= 3 or (plant.delay > 0 and order != 1):
        return SystemClass.HIGHER_ORDER
    if plant.delay > 0:
        return SystemClass.FIRST_ORDER_DELAY
    stable = order == 0 or routh_stable(plant.den).stable
    if order <= 1:
        return SystemClass.FIRST_ORDER_STABLE if stable else SystemClass.FIRST_ORDER_UNSTABLE
    return SystemClass.SECOND_ORDER_STABLE if stable else SystemClass.SECOND_ORDER_UNSTABLE


def default_n_max(cls: SystemClass) -> int:
    cls = SystemClass(cls)
    if cls in (SystemClass.FIRST_ORDER_STABLE, SystemClass.SECOND_ORDER_STABLE):
        return 10
    if cls is SystemClass.HIGHER_ORDER:
        return 30
    return 20


# -- feedback ---------------------------------------------------------------

@dataclass(frozen=True)
class Feedback:
    settling_time_error_pct: float = 0.0
    phase_margin_error_pct: float = 0.0
    stability_violated: bool = False
    ess_violated: bool = False
    gain_margin_violated: bool = False
    directives: tuple[str, ...] = ()

    @property
    def is_clear(self) -> bool:
        return (self.settling_time_error_pct == 0 and self.phase_margin_error_pct == 0
                and not self.stability_violated and not self.ess_violated
                and not self.gain_margin_violated)

    @property
    def total_error(self) -> float:
        """Sum of the two percentage errors, capped so unsettled loops stay comparable."""
        return min(self.settling_time_error_pct, ERR_CAP) + min(abs(self.phase_margin_error_pct),
                                                                ERR_CAP)


def generate_feedback(report: PerformanceReport, req: TaskRequirement) -> Feedback:
    """Percentage errors against the requirement plus plain-language tuning hints."""
    ts = report.step.settling_time_s
    lo, hi = req.settling_time_min, req.settling_time_max
    width = hi - lo
    if ts > hi:
        st_err = (ts - hi) / width * 100.0
    elif ts < lo:
        st_err = (lo - ts) / width * 100.0
    else:
        st_err = 0.0
    pm = report.margins.phase_margin_deg
    pm_err = (pm - req.phase_margin_min) / req.phase_margin_min * 100.0 if pm < req.phase_margin_min else 0.0
    ess_bad = not report.pass_ess
    gm_bad = req.require_gain_margin_6db and not report.pass_gain_margin

    hints = []
    if not report.stable:
        hints.append("The closed loop is unstable; the design must first stabilise the plant.")
    if ts > hi:
        shown = "did not settle within the simulated horizon" if math.isinf(ts) else f"is {ts:.4g} sec"
        hints.append(f"Settling time {shown}, above the maximum {hi:.4g} sec "
                     f"(error {min(st_err, ERR_CAP):.3g}%): increase omega_L to make the response faster.")
    elif ts < lo:
        hints.append(f"Settling time is {ts:.4g} sec, below the minimum {lo:.4g} sec "
                     f"(error {st_err:.3g}%): decrease omega_L to slow the response down.")
    if pm_err < 0:
        hints.append(f"Phase margin {pm:.4g} deg is below the required {req.phase_margin_min:.4g} deg "
                     f"(error {pm_err:.3g}%): increase beta_b to add phase at crossover.")
        m = report.margins
        if m.crossover_count > 1:
            hints.append(f"The loop gain crosses 0 dB {m.crossover_count} times and the worst phase "
                         f"margin occurs at {m.gain_crossover_omega:.4g} rad/s; reduce the "
                         "high-frequency loop gain.")
    elif st_err > 0 and math.isfinite(pm):
        hints.append(f"Phase margin {pm:.4g} deg meets the requirement with "
                     f"{pm - req.phase_margin_min:.3g} deg to spare; beta_b may be reduced.")
    if ess_bad:
        hints.append(f"Steady-state error {report.step.steady_state_error:.3g} exceeds "
                     f"{req.ess_max:g}; keep integral action in the controller.")
    if gm_bad:
        hints.append("Gain margin is inside +-6 dB; reduce loop gain near the phase crossover.")
    return Feedback(st_err, pm_err, not report.stable, ess_bad, gm_bad, tuple(hints))


# -- memory -----------------------------------------------------------------

@dataclass
class DesignRecord:
    iteration: int
    design: Optional[ControllerDesign]
    report: Optional[PerformanceReport]
    feedback: Optional[Feedback] = None
    error: Optional[str] = None


@dataclass
class MemoryBuffer:
    records: list[DesignRecord] = field(default_factory=list)
    capacity: Optional[int] = None

    def append(self, rec: DesignRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("iterations must increase within a memory buffer")
        if self.capacity is not None and len(self.records) >= self.capacity:
            raise OverflowError("memory buffer is full")
        self.records.append(rec)

    def evaluated(self) -> list[DesignRecord]:
        return [r for r in self.records if r.report is not None]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass
class DesignOutcome:
    success: bool
    final: Optional[ControllerDesign]
    iterations_used: int
    trace: MemoryBuffer
    system_class: Optional[SystemClass] = None
    notes: list[str] = field(default_factory=list)


class DesignPolicy(Protocol):
    def propose(self, system_class: SystemClass, req: TaskRequirement, memory: MemoryBuffer,
                feedback: Feedback) -> ControllerDesign: ...


# -- deterministic heuristic ------------------------------------------------

def _score(rec: DesignRecord, req: TaskRequirement) -> tuple[int, float]:
    fb = rec.feedback or generate_feedback(rec.report, req)
    penalty = (ERR_CAP if fb.ess_violated else 0.0) + (ERR_CAP if fb.gain_margin_violated else 0.0)
    return (0 if rec.report.stable else 1, fb.total_error + penalty)


def _best_and_stall(records: list[DesignRecord], req: TaskRequirement):
    best, best_score, stall = None, None, 0
    for rec in records:
        s = _score(rec, req)
        if best is None or s < best_score:
            best, best_score, stall = rec, s, 0
        else:
            stall += 1
    return best, stall


def _clamp(x: float, lo: float = PARAM_MIN, hi: float = PARAM_MAX) -> float:
    return float(min(max(x, lo), hi))


def _settling_side(rep: PerformanceReport, req: TaskRequirement) -> int:
    """+1 too slow, -1 too fast, 0 inside the window."""
    ts = rep.step.settling_time_s
    if ts > req.settling_time_max:
        return 1
    if ts < req.settling_time_min:
        return -1
    return 0


def _next_bandwidth(w: float, side: int, step: float, records, key, req) -> float:
    """Multiplicative bandwidth move, bisected (in log) against known overshoots."""
    if side == 0:
        return w
    target = w * step if side > 0 else w / step
    opposite = [key(r) for r in records
                if r.report.stable and _settling_side(r.report, req) == -side]
    if side > 0:
        fences = [x for x in opposite if w < x <= target]
        if fences:
            target = math.sqrt(w * min(fences))
    else:
        fences = [x for x in opposite if target <= x < w]
        if fences:
            target = math.sqrt(w * max(fences))
    return target


def _dedupe(make, w: float, taken, factor: float):
    """Nudge ``w`` by ``factor`` until ``make(w)`` is not already in ``taken``."""
    for _ in range(200):
        key = make(w)
        if not any(np.allclose(key, t, rtol=1e-9, atol=0) for t in taken):
            return w
        w *= factor
    return w


def _propose_loopshape(req, records, best, stall, gamma, delta, perturb):
    plant = req.plant
    p: LoopShapeParams = best.design.params
    rep = best.report
    fb = best.feedback or generate_feedback(rep, req)
    level = stall // STALL_LIMIT
    g = gamma ** (2 ** level)
    d = delta ** (2 ** level)
    w, beta = p.omega_L, p.beta_b
    plant_unstable = not routh_stable(plant.den).stable

    if not rep.stable:
        if plant_unstable:
            w, beta = w * g, beta * d
        else:
            w = w / g
            if rep.margins.crossover_count > 1:
                beta = beta / d
    else:
        side = _settling_side(rep, req)
        pm = rep.margins.phase_margin_deg
        if fb.phase_margin_error_pct < 0:
            wgc = rep.margins.gain_crossover_omega or w
            spurious = wgc > 1.5 * w
            if spurious:
                # worst crossover sits above the design bandwidth: cut high-frequency gain
                beta = beta / (d * d) if beta > 0.05 else 0.0
                if beta == 0.0 or side <= 0:
                    w = w / g
            else:
                want = math.degrees(math.atan(beta)) + (req.phase_margin_min - pm) + 1.0
                if want < BETA_MAX_ANGLE:
                    beta = max(beta * d, math.tan(math.radians(want)))
                else:
                    beta = max(beta, math.tan(math.radians(BETA_MAX_ANGLE)))
                    if side >= 0:
                        w = w / g
            if side != 0 and not spurious:
                w = _next_bandwidth(w, side, g, records, lambda r: r.design.params.omega_L, req)
        else:
            if side > 0 and beta > BETA_SHRINK_FLOOR:
                shrunk = max(beta / delta, BETA_SHRINK_FLOOR)
                lost = math.degrees(math.atan(beta) - math.atan(shrunk))
                if pm - lost >= req.phase_margin_min + 2.0:
                    beta = shrunk
            w = _next_bandwidth(w, side, g, records, lambda r: r.design.params.omega_L, req)
            if side == 0 and fb.gain_margin_violated:
                w = w / g

    w, beta = _clamp(w), min(max(beta, 0.0), PARAM_MAX)
    taken = [r.design.params.as_list() for r in records if r.design.family is Family.LOOP_SHAPE]
    w = _dedupe(lambda x: [x, beta], w, taken, perturb)
    return loopshape_controller(plant, LoopShapeParams(_clamp(w), beta, p.gain_sign))


def _pid_seed(req, records) -> tuple[float, float]:
    plant = req.plant
    w0 = initial_bandwidth(req)
    ls = [r for r in records if r.design.family is Family.LOOP_SHAPE]
    if ls:
        w0 = ls[-1].design.params.omega_L
    poles = plant.poles()
    rhp = [abs(p) for p in poles if p.real >= 0]
    if rhp:
        w0 = max(w0, 2.0 * max(rhp))
    return w0, min(req.phase_margin_min + 10.0, PID_PHASE_CAP)


def _propose_pid(req, records, stall, gamma, perturb):
    plant = req.plant
    pid_recs = [r for r in records if r.design.family is Family.PID and "omega_c" in r.design.meta]
    if not pid_recs:
        w, phi = _pid_seed(req, records)
    else:
        best, _ = _best_and_stall(pid_recs, req)
        rep = best.report
        w, phi = best.design.meta["omega_c"], best.design.meta["phase_target"]
        g = gamma ** (2 ** (stall // STALL_LIMIT))
        plant_unstable = not routh_stable(plant.den).stable
        if not rep.stable:
            w = w * g if plant_unstable else w / g
            phi = min(phi + 5.0, PID_PHASE_CAP)
        else:
            pm = rep.margins.phase_margin_deg
            if pm < req.phase_margin_min:
                phi = min(phi + (req.phase_margin_min - pm) + 2.0, 89.0)
            side = _settling_side(rep, req)
            w = _next_bandwidth(w, side, g, pid_recs, lambda r: r.design.meta["omega_c"], req)
    taken = [[r.design.meta["omega_c"], r.design.meta["phase_target"]] for r in pid_recs]
    w = _dedupe(lambda x: [x, phi], _clamp(w), taken, perturb)
    return pid_from_frequency(plant, _clamp(w), phi)


def _boost_saturated(rec: DesignRecord, req: TaskRequirement) -> bool:
    """Stable, still failing, and the integral boost already gives its maximum lead."""
    cap = math.tan(math.radians(BETA_MAX_ANGLE)) * (1 - 1e-9)
    return rec.report.stable and rec.design.params.beta_b >= cap and not rec.report.success


def _use_pid(records: list[DesignRecord], req: TaskRequirement) -> bool:
    if any(r.design.family is Family.PID for r in records):
        return True
    ls = [r for r in records if r.design.family is Family.LOOP_SHAPE]
    if len(ls) < 2:
        return False
    if not ls[-1].report.stable and not ls[-2].report.stable:
        return True
    # a PI-type loop cannot add lead: two saturated attempts mean the family is exhausted
    return _boost_saturated(ls[-1], req) and _boost_saturated(ls[-2], req)


def heuristic_propose(system_class: SystemClass, req: TaskRequirement, memory: MemoryBuffer,
                      feedback: Feedback | None = None, *, gamma: float = GAMMA,
                      delta: float = DELTA, perturb: float = 1.01) -> ControllerDesign:
    """Deterministic stand-in for the task-specific design agent.

    Starts from the cold-start loop-shape design and then moves the best
    design so far: the bandwidth follows the settling-time error, ``beta_b``
    follows the phase-margin error.  Step sizes square after every
    ``STALL_LIMIT`` iterations without improvement.  Two consecutive unstable
    loop-shape designs, or two in a row with ``beta_b`` at its cap, switch the
    family to PID.
    """
    records = memory.evaluated()
    if not records:
        return initial_params(req, req.plant, Family.LOOP_SHAPE)
    if _use_pid(records, req):
        pid_recs = [r for r in records if r.design.family is Family.PID]
        _, stall = _best_and_stall(pid_recs, req) if pid_recs else (None, 0)
        return _propose_pid(req, records, stall, gamma, perturb)
    ls = [r for r in records if r.design.family is Family.LOOP_SHAPE]
    best, stall = _best_and_stall(ls, req)
    return _propose_loopshape(req, ls, best, stall, gamma, delta, perturb)


@dataclass(frozen=True)
class HeuristicPolicy:
    gamma: float = GAMMA
    delta: float = DELTA
    trial: int = 0

    @property
    def perturbation(self) -> float:
        if self.trial == 0:
            return 1.01
        u = np.random.Generator(np.random.Philox(self.trial)).random()
        return 1.005 + 0.01 * u

    def propose(self, system_class, req, memory, feedback):
        return heuristic_propose(system_class, req, memory, feedback, gamma=self.gamma,
                                 delta=self.delta, perturb=self.perturbation)


# -- Algorithm driver -------------------------------------------------------

def run_design(req: TaskRequirement, policy: DesignPolicy, n_max: int | None = None) -> DesignOutcome:
    """Iterate propose -> evaluate -> feedback until success or ``n_max`` attempts."""
    cls = classify_system(req.plant)
    notes: list[str] = []
    assign = getattr(policy, "assign", None)
    if assign is not None:
        try:
            agent = assign(req)
        except PolicyError as exc:
            notes.append(f"task assignment failed: {exc}")
        else:
            if agent is not None and agent != cls.agent_number:
                msg = (f"central agent chose agent {agent}, analytic class is "
                       f"{cls.value} (agent {cls.agent_number}); using the analytic class")
                log.warning(msg)
                notes.append(msg)
    n_max = default_n_max(cls) if n_max is None else int(n_max)
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    memory = MemoryBuffer()
    fb = Feedback()
    for k in range(1, n_max + 1):
        try:
            design = policy.propose(cls, req, memory, fb)
        except PolicyError as exc:
            memory.append(DesignRecord(k, None, None, None, f"policy failure: {exc}"))
            continue
        try:
            report = evaluate_closed_loop(req.plant, design.tf, req)
        except ValueError as exc:
            memory.append(DesignRecord(k, design, None, None, f"evaluation failure: {exc}"))
            continue
        if report.success:
            memory.append(DesignRecord(k, design, report, Feedback()))
            return DesignOutcome(True, design, k, memory, cls, notes)
        fb = generate_feedback(report, req)
        memory.append(DesignRecord(k, design, report, fb))
    return DesignOutcome(False, None, n_max, memory, cls, notes)


def _num(x: float | None):
    if x is None or not math.isfinite(x):
        return None
    return float(x)


def trace_to_json(memory: MemoryBuffer) -> list[dict]:
    """One JSON-ready row per iteration; non-finite numbers become ``null``."""
    rows = []
    for r in memory:
        row = {"iteration": r.iteration,
               "family": r.design.family.value if r.design else None,
               "params": r.design.params.as_list() if r.design else None,
               "pm_deg": None, "ts_s": None, "ess": None, "success": False,
               "st_err_pct": None, "pm_err_pct": None}
        if r.report is not None:
            fb = r.feedback or Feedback()
            row.update(pm_deg=_num(r.report.margins.phase_margin_deg),
                       ts_s=_num(r.report.step.settling_time_s),
                       ess=_num(r.report.step.steady_state_error),
                       success=bool(r.report.success),
                       st_err_pct=_num(fb.settling_time_error_pct),
                       pm_err_pct=_num(fb.phase_margin_error_pct))
        if r.error:
            row["error"] = r.error
        rows.append(row)
    return rows
