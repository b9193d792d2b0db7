"""Controller families: loop-shaping PI with integral boost, and filtered PID."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np

from .lti import TransferFunction, routh_stable, tf_dc_gain
from .requirements import TaskRequirement

__all__ = [
    "Family",
    "LoopShapeParams",
    "PidParams",
    "ControllerDesign",
    "loopshape_controller",
    "pid_controller",
    "pid_from_frequency",
    "initial_params",
    "loop_gain_sign",
    "DEFAULT_BETA",
]

DEFAULT_BETA = math.sqrt(10.0)
DERIVATIVE_FILTER_RATIO = 0.01


class Family(str, Enum):
    LOOP_SHAPE = "loop_shape"
    PID = "pid"


@dataclass(frozen=True)
class LoopShapeParams:
    omega_L: float
    beta_b: float = DEFAULT_BETA
    gain_sign: int = 1

    def __post_init__(self):
        if not self.omega_L > 0:
            raise ValueError("omega_L must be positive")
        if self.beta_b < 0:
            raise ValueError("beta_b must be nonnegative")
        if self.gain_sign not in (1, -1):
            raise ValueError("gain_sign must be +1 or -1")

    def as_list(self) -> list[float]:
        return [self.omega_L, self.beta_b]


@dataclass(frozen=True)
class PidParams:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    tau_f: float = 0.0

    def __post_init__(self):
        if self.kd != 0 and not self.tau_f > 0:
            raise ValueError("tau_f must be positive when kd is nonzero")

    def as_list(self) -> list[float]:
        return [self.kp, self.ki, self.kd, self.tau_f]


Params = Union[LoopShapeParams, PidParams]


@dataclass(frozen=True)
class ControllerDesign:
    family: Family
    params: Params
    tf: TransferFunction
    # policy bookkeeping (e.g. the crossover target behind a PID design)
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def to_dict(self) -> dict:
        params = {k: getattr(self.params, k) for k in self.params.__dataclass_fields__}
        return {"family": self.family.value, "params": params,
                "num": self.tf.num.tolist(), "den": self.tf.den.tolist()}

    @classmethod
    def from_dict(cls, d: dict, plant: TransferFunction | None = None) -> ControllerDesign:
        """Rebuild a design.  Loop-shape designs need ``plant`` to regenerate
        their gain; without it the stored coefficients are used as-is."""
        family = Family(d["family"])
        if family is Family.PID:
            return pid_controller(PidParams(**d["params"]))
        p = LoopShapeParams(**d["params"])
        if plant is not None:
            return loopshape_controller(plant, p)
        return cls(family, p, TransferFunction.from_coeffs(d["num"], d["den"]))


def loopshape_controller(plant: TransferFunction, p: LoopShapeParams) -> ControllerDesign:
    """``K(s) = Kp (beta s + wL) / (s sqrt(beta^2 + 1))`` with ``Kp = +-1/|G(j wL)|``.

    The integral boost has unit magnitude at ``wL``, so the loop crosses 0 dB
    exactly at the chosen bandwidth.
    """
    mag = float(abs(plant(1j * p.omega_L)))
    if mag == 0.0:
        raise ValueError("bandwidth coincides with plant zero")
    if not math.isfinite(mag):
        raise ValueError("bandwidth coincides with plant pole on the imaginary axis")
    kp = p.gain_sign / mag
    root = math.sqrt(p.beta_b ** 2 + 1.0)
    tf = TransferFunction.from_coeffs([kp * p.beta_b, kp * p.omega_L], [root, 0.0])
    return ControllerDesign(Family.LOOP_SHAPE, p, tf)


def pid_controller(p: PidParams) -> ControllerDesign:
    """``C(s) = kp + ki/s + kd s/(tau_f s + 1)`` over a common denominator."""
    if p.kd == 0.0:
        if p.ki == 0.0:
            num, den = [p.kp], [1.0]
        else:
            num, den = [p.kp, p.ki], [1.0, 0.0]
    elif p.ki == 0.0:
        num, den = [p.kp * p.tau_f + p.kd, p.kp], [p.tau_f, 1.0]
    else:
        num = [p.kp * p.tau_f + p.kd, p.kp + p.ki * p.tau_f, p.ki]
        den = [p.tau_f, 1.0, 0.0]
    return ControllerDesign(Family.PID, p, TransferFunction.from_coeffs(num, den))


def pid_from_frequency(plant: TransferFunction, omega_c: float, phase_margin: float,
                       integral_ratio: float = 5.0) -> ControllerDesign:
    """PID placing the loop at ``-180 + phase_margin`` degrees with unit gain at ``omega_c``.

    The integral corner sits ``integral_ratio`` below ``omega_c``; the
    derivative gain supplies whatever phase lead remains.  When lag rather
    than lead is needed the derivative term is dropped.
    """
    g = complex(plant(1j * omega_c))
    if g == 0 or not np.isfinite(g):
        raise ValueError("plant has a zero or pole at the target crossover")
    target = np.exp(1j * math.radians(-180.0 + phase_margin))
    c = target / g
    # C(jw) = kp (1 - j/r) + kd (w^2 tau + j w)/(1 + w^2 tau^2) with ki = kp w / r
    tau_f = DERIVATIVE_FILTER_RATIO / omega_c
    den = 1.0 + (omega_c * tau_f) ** 2
    a, b = omega_c ** 2 * tau_f / den, omega_c / den
    kd = (c.imag + c.real / integral_ratio) / (a / integral_ratio + b)
    kp = c.real - a * kd
    ki = kp * omega_c / integral_ratio
    if kd * kp < 0 or kp == 0:
        # lag is needed rather than lead: drop the derivative and place a PI
        kd, tau_f = 0.0, 0.0
        kp, ki = c.real, -c.imag * omega_c
    design = pid_controller(PidParams(float(kp), float(ki), float(kd), float(tau_f)))
    design.meta.update(omega_c=float(omega_c), phase_target=float(phase_margin))
    return design


def loop_gain_sign(plant: TransferFunction) -> int:
    """Controller sign for negative feedback.

    Stable plants take the sign of their DC gain, which makes the loop gain
    positive at low frequency.  For unstable plants the DC sign is flipped by
    each real right-half-plane pole, so the high-frequency gain sign is used.
    """
    if routh_stable(plant.den).stable:
        try:
            g0 = tf_dc_gain(plant.rational)
        except ZeroDivisionError:
            g0 = 0.0
        if g0 != 0.0 and math.isfinite(g0):
            return 1 if g0 > 0 else -1
    hf = plant.num.coeffs[0] / plant.den.coeffs[0]
    return 1 if hf > 0 else -1


def initial_bandwidth(req: TaskRequirement) -> float:
    if req.settling_time_max <= 0:
        raise ValueError("settling_time_max must be positive")
    ts_lo = max(req.settling_time_min, req.settling_time_max / 100.0)
    return 4.0 / math.sqrt(ts_lo * req.settling_time_max)


def initial_params(req: TaskRequirement, plant: TransferFunction | None = None,
                   family: Family = Family.LOOP_SHAPE) -> ControllerDesign:
    """Cold-start design: bandwidth from the settling window, ``beta_b = sqrt(10)``."""
    plant = req.plant if plant is None else plant
    p = LoopShapeParams(initial_bandwidth(req), DEFAULT_BETA, loop_gain_sign(plant))
    ls = loopshape_controller(plant, p)
    if Family(family) is Family.LOOP_SHAPE:
        return ls
    # PI equivalent of the loop-shape controller
    num = ls.tf.num.coeffs / ls.tf.den.coeffs[0]
    kp, ki = (float(num[0]), float(num[1])) if num.size == 2 else (0.0, float(num[0]))
    return pid_controller(PidParams(kp, ki, 0.0, DERIVATIVE_FILTER_RATIO / p.omega_L))
