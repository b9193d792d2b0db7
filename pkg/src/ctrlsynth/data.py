"""Benchmark task generation and the JSON dataset schema.

Each generator draws its numbers in a fixed statement order from a
counter-based generator (Philox) keyed by ``(seed, family)``, so a given
seed reproduces the same file on every platform.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .design import SystemClass
from .lti import TransferFunction
from .requirements import ResponseMode, TaskRequirement

__all__ = [
    "DatasetEntry",
    "GeneratorConfig",
    "DatasetError",
    "gen_first_order_stable",
    "gen_second_order_stable",
    "gen_second_order_unstable",
    "gen_first_order_delay",
    "gen_first_order_unstable",
    "generate",
    "GENERATORS",
    "load_dataset",
    "save_dataset",
    "entry_tasks",
    "dataset_tasks",
]

ESS_MAX = 0.0001
MODES = (ResponseMode.FAST, ResponseMode.MODERATE, ResponseMode.SLOW)
_FAMILY_KEY = {
    SystemClass.FIRST_ORDER_STABLE: 1,
    SystemClass.FIRST_ORDER_UNSTABLE: 2,
    SystemClass.SECOND_ORDER_STABLE: 3,
    SystemClass.SECOND_ORDER_UNSTABLE: 4,
    SystemClass.FIRST_ORDER_DELAY: 5,
}


class DatasetError(ValueError):
    pass


@dataclass
class DatasetEntry:
    id: int
    num: list[float]
    den: list[float]
    phase_margin_min: float
    # keyed by mode for multi-mode families, by None for a single window
    windows: dict[Optional[str], tuple[float, float]]
    steadystate_error_max: float = ESS_MAX
    metadata: str = ""
    delay: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def plant(self) -> TransferFunction:
        return TransferFunction.from_coeffs(self.num, self.den, self.delay)

    def to_dict(self) -> dict:
        d = {"id": self.id, "num": list(self.num), "den": list(self.den)}
        if self.delay:
            d["delay"] = self.delay
        d["phase_margin_min"] = self.phase_margin_min
        for mode, (lo, hi) in self.windows.items():
            if mode is None:
                d["settling_time_min"] = lo
                d["settling_time_max"] = hi
            else:
                d[f"settling_time_min_{mode}"] = lo
                d[f"settling_time_max_{mode}"] = hi
        d["steadystate_error_max"] = self.steadystate_error_max
        d["metadata"] = self.metadata
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DatasetEntry:
        ident = d.get("id", "?")

        def need(key):
            if key not in d:
                raise DatasetError(f"entry id={ident}: missing field '{key}'")
            return d[key]

        def number(key, val):
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
                raise DatasetError(f"entry id={ident}: field '{key}' must be a finite number")
            return float(val)

        need("id")
        if not isinstance(d["id"], int):
            raise DatasetError(f"entry id={ident}: field 'id' must be an integer")
        coeffs = {}
        for key in ("num", "den"):
            v = need(key)
            if not isinstance(v, list) or not v:
                raise DatasetError(f"entry id={ident}: field '{key}' must be a non-empty list")
            coeffs[key] = [number(key, x) for x in v]
        windows: dict[Optional[str], tuple[float, float]] = {}
        for mode in MODES:
            k_lo, k_hi = f"settling_time_min_{mode.value}", f"settling_time_max_{mode.value}"
            if k_lo in d or k_hi in d:
                windows[mode.value] = (number(k_lo, need(k_lo)), number(k_hi, need(k_hi)))
        if not windows:
            windows[None] = (number("settling_time_min", need("settling_time_min")),
                             number("settling_time_max", need("settling_time_max")))
        for mode, (lo, hi) in windows.items():
            if not 0 <= lo < hi:
                key = "settling_time_max" + (f"_{mode}" if mode else "")
                raise DatasetError(f"entry id={ident}: field '{key}' must exceed its minimum")
        known = {"id", "num", "den", "delay", "phase_margin_min", "steadystate_error_max",
                 "metadata", "settling_time_min", "settling_time_max"}
        known |= {f"settling_time_{b}_{m.value}" for b in ("min", "max") for m in MODES}
        meta = d.get("metadata", "")
        if not isinstance(meta, str):
            raise DatasetError(f"entry id={ident}: field 'metadata' must be a string")
        entry = cls(
            id=d["id"], num=coeffs["num"], den=coeffs["den"],
            phase_margin_min=number("phase_margin_min", need("phase_margin_min")),
            windows=windows,
            steadystate_error_max=number("steadystate_error_max", need("steadystate_error_max")),
            metadata=meta,
            delay=number("delay", d.get("delay", 0.0) or 0.0),
            extra={k: v for k, v in d.items() if k not in known},
        )
        try:
            entry.plant
        except ValueError as exc:
            raise DatasetError(f"entry id={ident}: fields 'num'/'den'/'delay': {exc}") from None
        return entry


@dataclass(frozen=True)
class GeneratorConfig:
    family: SystemClass
    n: int
    seed: int = 0
    mode: Optional[ResponseMode] = None

    def __post_init__(self):
        object.__setattr__(self, "family", SystemClass(self.family))
        if self.mode is not None:
            object.__setattr__(self, "mode", ResponseMode(self.mode))
        if self.n < 1:
            raise ValueError("n must be at least 1")

    def rng(self) -> Callable[[float, float], float]:
        ss = np.random.SeedSequence([int(self.seed) & 0xFFFFFFFFFFFFFFFF, _FAMILY_KEY[self.family]])
        gen = np.random.Generator(np.random.Philox(ss))

        def uniform(a: float, b: float) -> float:
            return a + (b - a) * float(gen.random())

        return uniform


def gen_first_order_stable(cfg: GeneratorConfig) -> list[DatasetEntry]:
    """``K/(s+B)`` with fast / moderate / slow settling windows scaled by ``tau = 3/B``."""
    u = cfg.rng()
    out = []
    for i in range(cfg.n):
        K = u(0.1, 20)
        B = u(0.1, 20)
        tau = 3 / B
        pm = u(45, 90)
        fast = (u(0, 0.001 * tau), u(0.3 * tau, 0.5 * tau))
        moderate = (u(0.1 * tau, 0.5 * tau), u(tau, 5 * tau))
        slow = (u(5 * tau, 10 * tau), u(20 * tau, 30 * tau))
        out.append(DatasetEntry(
            i, [K], [1, B], pm, {"fast": fast, "moderate": moderate, "slow": slow}, ESS_MAX,
            "First order system with different response speed requirements."))
    return out


def gen_second_order_stable(cfg: GeneratorConfig) -> list[DatasetEntry]:
    """``a/(s^2 + 2 zeta wn s + wn^2)`` with windows scaled by ``tau = 4/(zeta wn)``."""
    u = cfg.rng()
    out = []
    for i in range(cfg.n):
        zeta = u(0.1, 0.99)
        wn = u(0.1, 5)
        a = u(0.1, 20)
        tau = 4 / (zeta * wn)
        pm = u(45, 65)
        fast = (u(0, 0.005 * tau), u(tau, 1.5 * tau))
        moderate = (u(2 * tau, 2.5 * tau), u(3 * tau, 4 * tau))
        slow = (u(4 * tau, 5 * tau), u(6 * tau, 10 * tau))
        out.append(DatasetEntry(
            i, [a], [1, 2 * zeta * wn, wn * wn], pm,
            {"fast": fast, "moderate": moderate, "slow": slow}, ESS_MAX,
            "Second order system with different response speed requirements."))
    return out


def gen_second_order_unstable(cfg: GeneratorConfig) -> list[DatasetEntry]:
    """Even ids: complex right-half-plane pair.  Odd ids: one real unstable pole."""
    u = cfg.rng()
    out = []
    for i in range(cfg.n):
        if i % 2 == 0:
            zeta = u(0.1, 0.99)
            omega = u(0.1, 5)
            A = u(0.1, 20)
            sT = 4 / (omega * zeta)
            den = [1, -2 * zeta * omega, omega * omega]
        else:
            A = u(0.1, 20)
            B = u(0.1, 20)
            C = u(0, -20)
            sT = 3 / min(B, abs(C))
            den = [1, B + C, B * C]
        pm = u(45, 65)
        window = (u(0, 0.05 * sT), u(sT, 1.5 * sT))
        u(5, 20)  # overshoot_max: drawn to keep the stream aligned, never emitted
        out.append(DatasetEntry(
            i, [A], den, pm, {None: window}, ESS_MAX,
            "Second order unstable system with different response speed requirements."))
    return out


def gen_first_order_delay(cfg: GeneratorConfig) -> list[DatasetEntry]:
    """``K exp(-theta s)/(s+B)`` with ``theta`` between 0.1 and 0.2 of ``tau = 3/B``."""
    u = cfg.rng()
    out = []
    for i in range(cfg.n):
        K = u(0.1, 20)
        B = u(0.1, 20)
        tau = 3 / B
        theta = u(0.1 * tau, 0.2 * tau)
        pm = u(45, 65)
        window = (u(4 * tau, 5 * tau), u(40 * tau, 50 * tau))
        out.append(DatasetEntry(
            i, [K], [1, B], pm, {None: window}, ESS_MAX,
            "First order system with time delay.", delay=theta))
    return out


def gen_first_order_unstable(cfg: GeneratorConfig) -> list[DatasetEntry]:
    """``K/(s-B)`` with windows scaled by ``tau = 3/B``."""
    u = cfg.rng()
    out = []
    for i in range(cfg.n):
        K = u(0.1, 20)
        B = u(0.1, 20)
        tau = 3 / B
        pm = u(45, 65)
        window = (u(0, 0.05 * tau), u(tau, 1.5 * tau))
        out.append(DatasetEntry(
            i, [K], [1, -B], pm, {None: window}, ESS_MAX,
            "First order unstable system."))
    return out


GENERATORS: dict[SystemClass, Callable[[GeneratorConfig], list[DatasetEntry]]] = {
    SystemClass.FIRST_ORDER_STABLE: gen_first_order_stable,
    SystemClass.SECOND_ORDER_STABLE: gen_second_order_stable,
    SystemClass.SECOND_ORDER_UNSTABLE: gen_second_order_unstable,
    SystemClass.FIRST_ORDER_DELAY: gen_first_order_delay,
    SystemClass.FIRST_ORDER_UNSTABLE: gen_first_order_unstable,
}


def generate(family, n: int, seed: int = 0) -> list[DatasetEntry]:
    cfg = GeneratorConfig(SystemClass(family), n, seed)
    if cfg.family not in GENERATORS:
        raise ValueError(f"no generator for {cfg.family.value}; higher-order tasks are load-only")
    return GENERATORS[cfg.family](cfg)


def dumps(entries: list[DatasetEntry]) -> str:
    return json.dumps([e.to_dict() for e in entries], indent=2, ensure_ascii=False) + "\n"


def save_dataset(entries: list[DatasetEntry], path) -> None:
    Path(path).write_text(dumps(entries), encoding="utf-8")


def load_dataset(path) -> list[DatasetEntry]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(raw, dict):
        raw = [raw]
    if not isinstance(raw, list):
        raise DatasetError("dataset must be a JSON array of entries")
    out = []
    for d in raw:
        if not isinstance(d, dict):
            raise DatasetError("dataset entries must be JSON objects")
        out.append(DatasetEntry.from_dict(d))
    return out


def entry_tasks(entry: DatasetEntry, mode: ResponseMode | str | None = None) -> list[TaskRequirement]:
    """Expand an entry into one requirement per settling window."""
    plant = entry.plant
    tasks = []
    for m, (lo, hi) in entry.windows.items():
        if mode is not None and m is not None and m != ResponseMode(mode).value:
            continue
        tasks.append(TaskRequirement(
            plant, entry.phase_margin_min, lo, hi, entry.steadystate_error_max,
            ResponseMode(m) if m else ResponseMode.UNSPECIFIED))
    return tasks


def dataset_tasks(entries: list[DatasetEntry], mode=None) -> list[tuple[int, TaskRequirement]]:
    return [(e.id, t) for e in entries for t in entry_tasks(e, mode)]
