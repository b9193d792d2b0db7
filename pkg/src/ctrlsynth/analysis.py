"""Frequency-domain margins, step-response metrics and closed-loop evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from . import _sim
from .lti import (StabilityMethod, StabilityVerdict, TransferFunction, pade, routh_stable,
                  tf_feedback_unity, tf_series)
from .requirements import TaskRequirement

__all__ = [
    "FrequencyPoint",
    "MarginReport",
    "StepMetrics",
    "PerformanceReport",
    "Trajectory",
    "freq_response",
    "bode",
    "loop_phase_deg",
    "compute_margins",
    "step_response",
    "closed_loop_step",
    "settling_time",
    "steady_state_error",
    "evaluate_closed_loop",
    "write_bode_csv",
    "write_step_csv",
]

SETTLING_BAND = 0.02
DIVERGENCE_LIMIT = 1e9
GRID_MIN, GRID_MAX, GRID_PER_DECADE = 1e-4, 1e6, 400
BISECT_RTOL = 1e-10
MAX_STEPS = 2_000_000
MAX_HORIZON_EXTENSIONS = 3
PADE_ORDER = 3


@dataclass(frozen=True)
class FrequencyPoint:
    omega: float
    magnitude: float
    phase: float  # degrees


@dataclass(frozen=True)
class MarginReport:
    phase_margin_deg: float
    gain_crossover_omega: float | None
    gain_margin_upper_db: float
    gain_margin_lower_db: float
    crossover_count: int
    crossover_omegas: tuple[float, ...] = ()
    phase_crossover_omegas: tuple[float, ...] = ()


@dataclass(frozen=True)
class StepMetrics:
    settling_time_s: float
    steady_state_error: float
    final_value: float
    diverged: bool
    horizon_s: float
    dt_s: float


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    diverged: bool
    dt: float


@dataclass(frozen=True)
class PerformanceReport:
    stable: bool
    margins: MarginReport
    step: StepMetrics
    pass_stability: bool
    pass_settling: bool
    pass_phase_margin: bool
    pass_ess: bool
    pass_gain_margin: bool
    success: bool
    stability: StabilityVerdict | None = None
    warnings: tuple[str, ...] = field(default_factory=tuple)

    @property
    def phase_margin(self) -> float:
        return self.margins.phase_margin_deg

    @property
    def settling_time(self) -> float:
        return self.step.settling_time_s


# -- frequency domain -------------------------------------------------------

def loop_phase_deg(g: TransferFunction, omegas) -> np.ndarray:
    """Continuous phase of ``g(jw)`` in degrees.

    Summing the angle contributed by each zero and pole keeps the phase on
    one branch along the whole sweep without an unwrapping pass.
    """
    w = np.asarray(omegas, dtype=float)
    jw = 1j * w
    ph = np.zeros_like(w)
    for z in g.zeros():
        ph += np.angle(jw - z)
    for p in g.poles():
        ph -= np.angle(jw - p)
    ph = np.degrees(ph)
    if g.num.coeffs[0] / g.den.coeffs[0] < 0:
        ph -= 180.0
    return ph - np.degrees(w * g.delay)


def bode(g: TransferFunction, omegas) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude (absolute) and continuous phase (degrees) of ``g(jw)``."""
    w = np.asarray(omegas, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        mag = np.abs(g.num(1j * w) / g.den(1j * w))
    mag = np.where(np.isnan(mag), np.inf, mag)
    return mag, loop_phase_deg(g, w)


def freq_response(g: TransferFunction, omegas: Sequence[float]) -> list[FrequencyPoint]:
    w = np.asarray(omegas, dtype=float)
    if w.size and (np.any(w <= 0) or np.any(np.diff(w) <= 0)):
        raise ValueError("omegas must be positive and strictly increasing")
    mag, ph = bode(g, w)
    return [FrequencyPoint(float(a), float(b), float(c)) for a, b, c in zip(w, mag, ph)]


def _wrap180(deg):
    """Map angles into (-180, 180]."""
    return 180.0 - np.mod(180.0 - np.asarray(deg, dtype=float), 360.0)


def _bisect(fun, lo, hi, rtol=BISECT_RTOL):
    """Vectorised bisection in log-frequency; ``fun(lo)`` and ``fun(hi)`` differ in sign."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    if lo.size == 0:
        return lo
    flo = fun(lo) > 0
    while np.any(hi - lo > rtol * lo):
        mid = np.sqrt(lo * hi)
        fm = fun(mid) > 0
        same = fm == flo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return np.sqrt(lo * hi)


def compute_margins(loop: TransferFunction, *, w_min: float = GRID_MIN, w_max: float = GRID_MAX,
                    per_decade: int = GRID_PER_DECADE) -> MarginReport:
    """Phase and gain margins of the unity-feedback loop ``loop``.

    Gain crossovers are located on a log grid and refined by bisection; the
    reported phase margin is the worst one over all crossovers.  Gain margins
    are read at every -180 deg (mod 360) phase crossing: the upper margin is
    the smallest positive one, the lower margin the largest negative one.
    """
    n = int(round(math.log10(w_max / w_min) * per_decade)) + 1
    w = np.logspace(math.log10(w_min), math.log10(w_max), n)
    rat = loop.rational

    def logmag(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(np.abs(rat.num(1j * x)) / np.abs(rat.den(1j * x)))

    def phase(x):
        return loop_phase_deg(loop, x)

    lm = logmag(w)
    ph = phase(w)
    ok = np.isfinite(lm[:-1]) & np.isfinite(lm[1:])
    idx = np.flatnonzero(ok & ((lm[:-1] > 0) != (lm[1:] > 0)))
    wgc = _bisect(logmag, w[idx], w[idx + 1])
    if wgc.size:
        pms = _wrap180(180.0 + phase(wgc))
        k = int(np.argmin(pms))
        pm, w_pm = float(pms[k]), float(wgc[k])
    else:
        pm, w_pm = math.inf, None

    # phase crossings of -180 + 360 m
    u = (ph + 180.0) / 360.0
    lo_lvl = np.floor(np.minimum(u[:-1], u[1:]))
    hi_lvl = np.floor(np.maximum(u[:-1], u[1:]))
    cross = np.flatnonzero(hi_lvl > lo_lvl)
    los, his, levels = [], [], []
    for i in cross:
        for m in range(int(lo_lvl[i]) + 1, min(int(hi_lvl[i]), int(lo_lvl[i]) + 16) + 1):
            los.append(w[i])
            his.append(w[i + 1])
            levels.append(360.0 * m - 180.0)
    levels = np.asarray(levels)
    if levels.size:
        sgn = np.where(phase(np.asarray(his)) > phase(np.asarray(los)), 1.0, -1.0)
        wpc = _bisect(lambda x: sgn * (phase(x) - levels), los, his)
    else:
        wpc = np.zeros(0)
    gm_up, gm_lo = math.inf, -math.inf
    if wpc.size:
        with np.errstate(divide="ignore"):
            gm = -20.0 * logmag(wpc) / math.log(10.0)
        pos = gm[np.isfinite(gm) & (gm > 0)]
        neg = gm[np.isfinite(gm) & (gm < 0)]
        if pos.size:
            gm_up = float(pos.min())
        if neg.size:
            gm_lo = float(neg.max())
    return MarginReport(pm, w_pm, gm_up, gm_lo, int(wgc.size),
                        tuple(float(x) for x in wgc), tuple(float(x) for x in np.sort(wpc)))


# -- time domain ------------------------------------------------------------

def _realize(g: TransferFunction):
    """Balanced controllable-canonical realisation of the rational part of ``g``."""
    den = g.den.coeffs
    num = g.num.coeffs
    n = den.size - 1
    a = den / den[0]
    b = np.zeros(n + 1)
    b[n + 1 - num.size:] = num / den[0]
    d = b[0]
    if n == 0:
        return np.zeros((1, 1)), np.zeros(1), np.zeros(1), float(d)
    A = np.zeros((n, n))
    A[0, :] = -a[1:]
    A[np.arange(1, n), np.arange(n - 1)] = 1.0
    B = np.zeros(n)
    B[0] = 1.0
    C = b[1:] - d * a[1:]
    _, (scale, _) = scipy.linalg.matrix_balance(A, permute=False, separate=True)
    A = A * scale[None, :] / scale[:, None]
    return A, B / scale, C * scale, float(d)


def _rk4_step_matrices(A, B, dt):
    # one classical RK4 step with the input held over the step, in closed form
    m = A * dt
    eye = np.eye(A.shape[0])
    m2 = m @ m
    m3 = m2 @ m
    phi = eye + m + m2 / 2 + m3 / 6 + m3 @ m / 24
    gam = dt * (eye + m / 2 + m2 / 6 + m3 / 24) @ B
    return phi, gam


def _simulate(g: TransferFunction, horizon: float, dt: float, feedback: bool) -> Trajectory:
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_steps = max(1, min(int(math.ceil(horizon / dt - 1e-9)), MAX_STEPS))
    A, B, C, D = _realize(g)
    phi, gam = _rk4_step_matrices(A, B, dt)
    lag = int(round(g.delay / dt))
    y, diverged = _sim.run_linear(phi, gam, C, D, n_steps, lag, feedback, DIVERGENCE_LIMIT)
    t = np.arange(y.size) * dt
    return Trajectory(t, y, bool(diverged), dt)


def step_response(g: TransferFunction, horizon_s: float, dt_s: float) -> Trajectory:
    """Unit-step response of ``g`` by fixed-step RK4; delay is an input ring buffer."""
    if g.num.degree > g.den.degree:
        raise ValueError("improper transfer function")
    return _simulate(g, horizon_s, dt_s, feedback=False)


def closed_loop_step(loop: TransferFunction, horizon_s: float, dt_s: float) -> Trajectory:
    """Reference step through unity feedback around ``loop``, delay kept inside the loop."""
    return _simulate(loop, horizon_s, dt_s, feedback=True)


def settling_time(traj, final_value: float, band: float = SETTLING_BAND) -> float:
    """First sample time after which ``|y - final_value| <= band*|final_value|`` holds.

    ``traj`` is a :class:`Trajectory` or a ``(t, y)`` pair.
    """
    if isinstance(traj, Trajectory):
        if traj.diverged:
            return math.inf
        t, y = traj.t, traj.y
    else:
        t, y = (np.asarray(a, dtype=float) for a in traj)
    if y.size == 0:
        raise ValueError("empty trajectory")
    if final_value == 0 or not math.isfinite(final_value):
        return math.inf
    outside = np.flatnonzero(np.abs(y - final_value) > band * abs(final_value))
    if outside.size == 0:
        return float(t[0])
    last = outside[-1]
    if last == y.size - 1:
        return math.inf
    return float(t[last + 1])


def _strip_origin(num: np.ndarray, den: np.ndarray):
    while num.size > 1 and den.size > 1 and num[-1] == 0.0 and den[-1] == 0.0:
        num, den = num[:-1], den[:-1]
    return num, den


def steady_state_error(loop: TransferFunction) -> float:
    """Unit-step tracking error ``|1/(1 + L(0))|`` of the unity-feedback loop."""
    num, den = _strip_origin(loop.num.coeffs, loop.den.coeffs)
    n0, d0 = float(num[-1]), float(den[-1])
    if d0 == 0.0:
        return 0.0 if n0 != 0.0 else 1.0
    if d0 + n0 == 0.0:
        return math.inf
    return abs(d0 / (d0 + n0))


def _closed_loop_poles(loop: TransferFunction) -> np.ndarray:
    rat = loop.rational if not loop.delay else tf_series(loop.rational, pade(loop.delay, PADE_ORDER))
    return tf_feedback_unity(rat).poles()


def _time_grid(req: TaskRequirement, loop: TransferFunction, cl_poles, margins: MarginReport):
    mags = [1.0]
    for p in (cl_poles, loop.poles()):
        if len(p):
            mags.append(float(np.max(np.abs(p))))
    if margins.gain_crossover_omega is not None:
        mags.append(max(margins.crossover_omegas))
    w_hi = max(mags)
    dt = min(req.settling_time_max / 2000.0, 0.02 / w_hi)
    horizon = 3.0 * req.settling_time_max
    stable_re = [-p.real for p in cl_poles if p.real < 0]
    if stable_re:
        horizon = max(horizon, 30.0 / min(stable_re))
    return dt, min(horizon, MAX_STEPS * dt)


def evaluate_closed_loop(plant: TransferFunction, controller: TransferFunction,
                         req: TaskRequirement) -> PerformanceReport:
    """Assemble ``L = G*C``, close the loop and score it against ``req``."""
    loop = tf_series(plant, controller)
    if loop.num.degree > loop.den.degree:
        raise ValueError("improper loop transfer function")
    warnings: list[str] = []
    margins = compute_margins(loop)
    cl_poles = _closed_loop_poles(loop)

    if loop.delay:
        rat = tf_series(loop.rational, pade(loop.delay, PADE_ORDER))
        verdict = routh_stable(tf_feedback_unity(rat).den)
    else:
        verdict = routh_stable(tf_feedback_unity(loop).den)
    if verdict.near_boundary:
        warnings.append("closed-loop root within 1e-6 of the imaginary axis")

    ess = steady_state_error(loop)
    num0, den0 = _strip_origin(loop.num.coeffs, loop.den.coeffs)
    n0, d0 = float(num0[-1]), float(den0[-1])
    final = n0 / (d0 + n0) if d0 + n0 != 0.0 else math.nan

    dt, horizon = _time_grid(req, loop, cl_poles, margins)
    stable = verdict.stable
    diverged = False
    ts = math.inf
    if stable or loop.delay:
        for _ in range(MAX_HORIZON_EXTENSIONS + 1):
            if loop.delay:
                traj = closed_loop_step(loop, horizon, dt)
            else:
                traj = step_response(tf_feedback_unity(loop), horizon, dt)
            diverged = traj.diverged
            ts = settling_time(traj, final) if math.isfinite(final) else math.inf
            if diverged or math.isfinite(ts) or horizon >= MAX_STEPS * dt:
                break
            horizon = min(2.0 * horizon, MAX_STEPS * dt)
        if loop.delay:
            if verdict.stable and diverged:
                warnings.append("Pade stability check disagrees with delayed simulation (diverged)")
            elif not verdict.stable and not diverged:
                warnings.append("Pade stability check disagrees with delayed simulation (bounded)")
            stable = verdict.stable and not diverged
            if not stable:
                verdict = StabilityVerdict(False, verdict.max_real_part,
                                           StabilityMethod.SIMULATION if diverged else verdict.method,
                                           verdict.near_boundary)
    else:
        diverged = True
    if not stable:
        ts = math.inf

    step = StepMetrics(ts, ess, float(final), diverged or not stable, horizon, dt)
    pass_settling = req.settling_time_min <= ts <= req.settling_time_max
    pass_pm = margins.phase_margin_deg >= req.phase_margin_min
    pass_ess = ess <= req.ess_max
    pass_gm = margins.gain_margin_upper_db >= 6.0 and margins.gain_margin_lower_db <= -6.0
    success = stable and pass_settling and pass_pm and pass_ess
    if req.require_gain_margin_6db:
        success = success and pass_gm
    return PerformanceReport(stable, margins, step, stable, pass_settling, pass_pm, pass_ess,
                             pass_gm, success, verdict, tuple(warnings))


def write_bode_csv(path, g: TransferFunction, omegas) -> None:
    mag, ph = bode(g, omegas)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["omega", "mag_db", "phase_deg"])
        with np.errstate(divide="ignore"):
            for w, m, p in zip(omegas, 20 * np.log10(mag), ph):
                wr.writerow([repr(float(w)), repr(float(m)), repr(float(p))])


def write_step_csv(path, traj: Trajectory) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "y"])
        for t, y in zip(traj.t, traj.y):
            wr.writerow([repr(float(t)), repr(float(y))])
