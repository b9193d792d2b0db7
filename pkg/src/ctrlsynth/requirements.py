"""Design requirements attached to a plant."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

from .lti import TransferFunction


class ResponseMode(str, Enum):
    FAST = "fast"
    MODERATE = "moderate"
    SLOW = "slow"
    UNSPECIFIED = "unspecified"


@dataclass(frozen=True)
class TaskRequirement:
    plant: TransferFunction
    phase_margin_min: float
    settling_time_min: float
    settling_time_max: float
    ess_max: float = 1e-4
    mode: ResponseMode = ResponseMode.UNSPECIFIED
    require_gain_margin_6db: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", ResponseMode(self.mode))
        if not (0 <= self.settling_time_min < self.settling_time_max):
            raise ValueError(
                f"need 0 <= settling_time_min < settling_time_max, got "
                f"[{self.settling_time_min}, {self.settling_time_max}]")
        if not (0 < self.phase_margin_min < 180):
            raise ValueError(f"phase_margin_min must lie in (0, 180), got {self.phase_margin_min}")
        if self.ess_max < 0 or math.isnan(self.ess_max):
            raise ValueError("ess_max must be nonnegative")

    def with_gain_margin(self, on: bool = True) -> TaskRequirement:
        return replace(self, require_gain_margin_6db=on)

    def describe(self) -> str:
        return (f"Phase margin greater or equal {self.phase_margin_min:.5g} degrees, "
                f"settling time between {self.settling_time_min:.5g} and "
                f"{self.settling_time_max:.5g} sec, steady state error less or equal "
                f"{self.ess_max:g}")
