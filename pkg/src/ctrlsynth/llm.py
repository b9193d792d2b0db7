"""Chat-completion backed design policy.

Prompts follow the central-agent / task-agent split: a central prompt asks
which specialist should handle the plant, and a task prompt asks that
specialist for controller parameters given the history of earlier designs.
Replies are constrained JSON; anything else is retried with a nudge.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import httpx

from .design import (PARAM_MAX, PARAM_MIN, Feedback, MemoryBuffer, PolicyError, SystemClass,
                     classify_system)
from .requirements import TaskRequirement
from .synthesis import (ControllerDesign, Family, LoopShapeParams, PidParams, loop_gain_sign,
                        loopshape_controller, pid_controller)

__all__ = [
    "LlmConfig",
    "PromptBundle",
    "LlmReply",
    "LlmPolicy",
    "render_central_prompt",
    "render_task_prompt",
    "requirement_text",
    "call_llm",
    "extract_json",
    "parse_parameters",
    "parse_agent_number",
    "family_for",
]

log = logging.getLogger(__name__)

JSON_NUDGE = "Your previous reply could not be parsed. Respond with valid JSON only."

# Per-model sampling defaults, matched by prefix; anything else gets 0 / 1024.
MODEL_DEFAULTS = {
    "gpt-4o": (0.0, 1024),
    "gpt-4-turbo": (0.0, 1024),
    "gpt-3.5-turbo": (0.0, 1024),
    "claude": (1.0, 1024),
    "gemini": (1.0, 8192),
}


@dataclass(frozen=True)
class LlmConfig:
    endpoint: str
    model: str
    temperature: Optional[float] = None
    max_tokens: Optional[int] = None
    retries: int = 3
    in_flight_cap: int = 4
    api_key_env: str = "CTRLSYNTH_API_KEY"
    timeout_s: float = 120.0

    def __post_init__(self):
        temp, tokens = 0.0, 1024
        for prefix, vals in MODEL_DEFAULTS.items():
            if self.model.startswith(prefix):
                temp, tokens = vals
                break
        if self.temperature is None:
            object.__setattr__(self, "temperature", temp)
        if self.max_tokens is None:
            object.__setattr__(self, "max_tokens", tokens)
        if self.retries < 0 or self.in_flight_cap < 1:
            raise ValueError("retries must be >= 0 and in_flight_cap >= 1")

    @classmethod
    def from_file(cls, path) -> LlmConfig:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown LLM config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str


@dataclass(frozen=True)
class LlmReply:
    raw: str
    design_rationale: str = ""
    parameters: tuple[float, ...] = ()
    agent_number: Optional[int] = None
    payload: dict = field(default_factory=dict, compare=False)


# -- prompt text ------------------------------------------------------------

CENTRAL_SYSTEM = """\
You are an expert control engineer tasked with analyzing the provided control task and assigning it to the most suitable task-specific agent, each specializing in designing controllers for specific system types.

First, analyze the dynamic system to identify its type, such as a first-order stable system, second-order unstable system, first-order with time delay, higher-order system, etc. Based on this analysis, assign the task to the corresponding task-specific agent that specializes in the identified system type.

Here are the available task-specific agents:
- Agent 1: First-order stable system
- Agent 2: First-order unstable system
- Agent 3: Second-order stable system
- Agent 4: Second-order unstable system
- Agent 5: First-order system with time delay
- Agent 6: Higher-order system

Ensure the selected agent can effectively tailor the control design process."""

CENTRAL_RESPONSE = """\
## Response Instructions:
Your response should strictly follow the JSON format below, containing three keys: 'Task Requirement' and 'Task Analysis', and 'Agent Number':
- Task Requirement: Summarize the task requirements, including the system dynamics and performance criteria provided by the user.
- Task Analysis: Provide a brief analysis of the system and justify the selection of the task-specific agent.
- Agent Number: Specify the task-specific agent number (choose from 1 to 6).
### Example of the expected JSON format:
{
  "Task Requirement": "[Summarize the system dynamics and performance criteria provided by the user]",
  "Task Analysis": "[High level task analysis]",
  "Agent": "[Task-specific agent number: 1, 2, 3, 4, 5, or 6]"
}"""

LOOP_SHAPE_SYSTEM = """\
You are a control engineer expert, and your goal is to design a controller K(s) for a system with transfer function G(s) using loop shaping method.
The loop transfer function is L(s) = G(s)K(s) and here are the basic loop shaping steps:

[Step1] Choose a proper loop bandwidth omega_L for the given plant G(s).
Note: Increasing omega_L will make the response faster, therefore smaller settling time. On the other hand, decreasing omega_L corresponds to larger settling time.

[Step2] Compute the proportional gain K_p to set the desired loop bandwidth omega_L, where K_p = +-1/|G(j omega_L)|.

[Step3] Design an integral boost to increase the low frequency loop gain thus improving both tracking and disturbance rejection at low frequencies. Specifically, select K_i(s) = (beta_b s + omega_L)/(s sqrt(beta_b^2 + 1)) with beta >= 0. A reasonable initial choice of beta_b is sqrt(10).
Note: Decreasing beta will: (i) increase the low frequency gain and reduce the high frequency gain thus improving both tracking and noise rejection performance, and (ii) reduce the phase at loop crossover thus degrading robustness. Hence a smaller beta_b should only be used if the loop can tolerate the reduced phase. On the other hand, increasing beta will increase the phase margin.

Thus the final controller is then: K = K_p K_i(s). There are two key design parameters for loop shaping: omega_L and beta_b. Your goal is to find a proper combination of these two parameters such that the designed controller achieves satisfactory performance, such as phase margin and settling time requirements.
You will also be provided by a list of your history design and the corresponding performance if there is any. And you should improve your previous design based on the user request.
Note: If you could not see an improvement within 3 rounds, to make the tuning process more efficient, please be more aggressive and try to increase design step based on the previous designs."""

# Family-specific remarks appended to the loop-shaping instruction.  Only the
# first-order stable agent has a reference prompt; the others are adaptations.
CLASS_NOTES = {
    SystemClass.FIRST_ORDER_STABLE: "",
    SystemClass.FIRST_ORDER_UNSTABLE: (
        "The plant has one pole in the right half-plane at s = {rhp}. The sign of K_p is chosen "
        "for you so that the loop is stabilizable; omega_L must sit well above {rhp_abs} rad/s "
        "and beta_b must be large enough to lift the loop gain above the unstable pole, otherwise "
        "the closed loop is unstable."),
    SystemClass.SECOND_ORDER_STABLE: (
        "The plant is second order. When the plant is lightly damped, a crossover near its "
        "natural frequency {wn} rad/s can produce extra 0 dB crossings; keep omega_L away from "
        "the resonance, and reduce beta_b if the phase margin is set by a spurious crossover."),
    SystemClass.FIRST_ORDER_DELAY: (
        "The plant has a transport delay of {delay} sec, which removes omega_L*{delay}*180/pi "
        "degrees of phase at crossover. Keep omega_L well below 1/{delay} rad/s; the phase "
        "margin falls quickly as omega_L approaches that value."),
    SystemClass.HIGHER_ORDER: (
        "The plant is of order {order}. Its phase rolls off faster than a first-order plant, so "
        "the usable loop bandwidth is limited; check that the loop crosses 0 dB only once."),
}

PID_SYSTEM = """\
You are a control engineer expert, and your goal is to design a controller C(s) for a system with transfer function G(s) using PID control.
The controller is C(s) = k_p + k_i/s + k_d s/(tau_f s + 1) and the loop transfer function is L(s) = G(s)C(s). Here are the basic tuning steps:

[Step1] Choose a loop crossover frequency omega_c above the magnitude of every right-half-plane pole of G(s); the closed loop cannot be stable otherwise.
Note: Increasing omega_c will make the response faster, therefore smaller settling time, but needs more phase lead.

[Step2] Choose k_p, k_i and k_d so that |L(j omega_c)| = 1 and the phase of L(j omega_c) leaves the required phase margin. The derivative term k_d supplies phase lead; the integral term k_i removes steady-state error and costs phase near omega_c, so keep the integral corner k_i/k_p well below omega_c.

[Step3] Choose the derivative filter tau_f about 100 times faster than omega_c (tau_f = 0.01/omega_c is a reasonable choice) so the controller stays proper.

There are four design parameters: k_p, k_i, k_d and tau_f. Your goal is to find a combination that achieves satisfactory performance, such as phase margin and settling time requirements.
You will also be provided by a list of your history design and the corresponding performance if there is any. And you should improve your previous design based on the user request.
Note: If you could not see an improvement within 3 rounds, to make the tuning process more efficient, please be more aggressive and try to increase design step based on the previous designs."""

TASK_RESPONSE = """\
## Response Instructions:
Please provide the controller design to the given plant G(s). Your response should strictly adhere to the following JSON format, which includes two keys: 'design' and 'parameter'. The 'design' key can contain design steps and rationale about the parameters choice or the reason to update specific parameter based on the previous design and performance, and the 'parameter' key should ONLY provide a list of numerical values of the chosen parameters{order_hint}.
### Example of the expected JSON format:
{{
  "design": "[Detailed design steps and rationale behind parameters choice]",
  "parameter": "[List of Parameters]"
}}"""

PARAM_NAMES = {Family.LOOP_SHAPE: ("omega_L", "beta_b"),
               Family.PID: ("k_p", "k_i", "k_d", "tau_f")}


def family_for(cls: SystemClass) -> Family:
    """Second-order unstable plants cannot be stabilised by the PI-type loop-shaping
    controller when both poles are unstable, so that agent tunes a PID."""
    return Family.PID if SystemClass(cls) is SystemClass.SECOND_ORDER_UNSTABLE else Family.LOOP_SHAPE


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def requirement_text(req: TaskRequirement) -> str:
    lines = [
        "Please design the controller for the following system:",
        f"G(s) = {req.plant}.",
        "Design the controller to meet the following specifications:",
        f"- The system should be stable and steady state error less or equal {_fmt(req.ess_max)}.",
        f"- Phase margin greater or equal {_fmt(req.phase_margin_min)} degrees,",
        f"- Settling time greater or equal {_fmt(req.settling_time_min)} sec,",
        f"- Settling time should also be less or equal to {_fmt(req.settling_time_max)} sec.",
    ]
    if req.require_gain_margin_6db:
        lines.append("- Gain margin at least 6 dB in both directions.")
    return "\n".join(lines)


def render_central_prompt(req: TaskRequirement) -> PromptBundle:
    return PromptBundle(CENTRAL_SYSTEM, f"{requirement_text(req)}\n\n{CENTRAL_RESPONSE}")


def _class_note(cls: SystemClass, req: TaskRequirement) -> str:
    template = CLASS_NOTES.get(cls, "")
    if not template:
        return ""
    plant = req.plant
    poles = plant.poles()
    rhp = [p for p in poles if p.real > 0]
    den = plant.den.coeffs / plant.den.coeffs[0]
    return template.format(
        rhp=_fmt(rhp[0].real) if rhp else "-",
        rhp_abs=_fmt(abs(rhp[0])) if rhp else "-",
        wn=_fmt(math.sqrt(abs(den[-1]))) if den.size == 3 else "-",
        delay=_fmt(plant.delay),
        order=plant.den.degree,
    )


def _history_line(rec) -> str:
    d = rec.design
    if d is None:
        return f"Design {rec.iteration}: no design ({rec.error})."
    names = PARAM_NAMES[d.family]
    vals = d.params.as_list()
    head = f"Design {rec.iteration}: ({', '.join(names)}) = ({', '.join(repr(float(v)) for v in vals)})"
    if rec.report is None:
        return f"{head} -> evaluation failed ({rec.error})."
    r = rec.report
    pm = r.margins.phase_margin_deg
    ts = r.step.settling_time_s
    pm_s = f"{pm:.4f} degrees" if math.isfinite(pm) else "undefined (no gain crossover)"
    ts_s = f"{ts:.4f} sec" if math.isfinite(ts) else "not settled"
    stab = "stable" if r.stable else "unstable"
    return (f"{head} -> {stab}, phase margin {pm_s}, settling time {ts_s}, "
            f"steady state error {r.step.steady_state_error:.3g}, "
            f"success: {'yes' if r.success else 'no'}.")


def render_task_prompt(cls: SystemClass, req: TaskRequirement, memory: MemoryBuffer,
                       fb: Feedback | None = None) -> PromptBundle:
    cls = SystemClass(cls)
    family = family_for(cls)
    system = LOOP_SHAPE_SYSTEM if family is Family.LOOP_SHAPE else PID_SYSTEM
    note = _class_note(cls, req)
    if note:
        system = f"{system}\n\n{note}"
    parts = [requirement_text(req)]
    records = [r for r in memory if r.design is None or r.design.family is family]
    if records:
        parts.append("### History of previous designs:\n" + "\n".join(_history_line(r) for r in records))
    if fb is not None and fb.directives:
        parts.append("### Feedback on the latest design:\n" + "\n".join(f"- {d}" for d in fb.directives))
    names = PARAM_NAMES[family]
    parts.append(TASK_RESPONSE.format(order_hint=f" in the order [{', '.join(names)}]"))
    return PromptBundle(system, "\n\n".join(parts))


# -- reply parsing ----------------------------------------------------------

_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL | re.IGNORECASE)
_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


def extract_json(text: str) -> dict:
    """First JSON object in ``text``: a fenced block if present, else the first bare object."""
    decoder = json.JSONDecoder()
    candidates = [m.group(1) for m in _FENCE.finditer(text)] + [text]
    for chunk in candidates:
        for i, ch in enumerate(chunk):
            if ch != "{":
                continue
            try:
                obj, _ = decoder.raw_decode(chunk, i)
            except json.JSONDecodeError:
                continue
            if isinstance(obj, dict):
                return obj
    raise ValueError("no JSON object in reply")


def parse_parameters(value) -> list[float]:
    """Accept ``[2, 3.16]`` as a JSON array or as the string ``"[2, 3.16]"``."""
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            value = [float(x) for x in _NUMBER.findall(value)]
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or not value:
        raise ValueError("'parameter' must be a non-empty list of numbers")
    out = []
    for v in value:
        if isinstance(v, str):
            v = float(v)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValueError("'parameter' entries must be finite numbers")
        out.append(float(v))
    return out


def parse_agent_number(payload: dict) -> int:
    for key in ("Agent", "Agent Number", "agent", "agent_number"):
        if key in payload:
            v = payload[key]
            if isinstance(v, int) and not isinstance(v, bool):
                n = v
            else:
                m = re.search(r"[1-6]", str(v))
                if m is None:
                    raise ValueError(f"no agent number in {v!r}")
                n = int(m.group(0))
            if not 1 <= n <= 6:
                raise ValueError(f"agent number {n} outside 1-6")
            return n
    raise ValueError("reply has no 'Agent' key")


# -- transport --------------------------------------------------------------

_SEMAPHORES: dict[int, threading.BoundedSemaphore] = {}
_SEM_LOCK = threading.Lock()


def _semaphore(cap: int) -> threading.BoundedSemaphore:
    with _SEM_LOCK:
        if cap not in _SEMAPHORES:
            _SEMAPHORES[cap] = threading.BoundedSemaphore(cap)
        return _SEMAPHORES[cap]


def _post(client: httpx.Client, cfg: LlmConfig, messages: list[dict]) -> str:
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(cfg.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    body = {"model": cfg.model, "messages": messages,
            "temperature": cfg.temperature, "max_tokens": cfg.max_tokens}
    with _semaphore(cfg.in_flight_cap):
        try:
            resp = client.post(cfg.endpoint, json=body, headers=headers, timeout=cfg.timeout_s)
            resp.raise_for_status()
            data = resp.json()
        except (httpx.HTTPError, json.JSONDecodeError) as exc:
            raise PolicyError(f"chat endpoint request failed: {exc}") from exc
    try:
        return data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise PolicyError("chat endpoint returned an unexpected body") from exc


def call_llm(bundle: PromptBundle, cfg: LlmConfig, *, expect: str = "parameter",
             client: httpx.Client | None = None) -> LlmReply:
    """Send one prompt and parse the constrained JSON reply.

    ``expect`` names the key that must parse (``"parameter"`` for design
    replies, ``"agent"`` for the central agent).  Malformed replies are
    retried ``cfg.retries`` times with a nudge appended to the conversation.
    """
    own = client is None
    client = client or httpx.Client()
    messages = [{"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text}]
    last_err = None
    try:
        for _ in range(cfg.retries + 1):
            raw = _post(client, cfg, messages)
            try:
                payload = extract_json(raw)
                if expect == "agent":
                    return LlmReply(raw, str(payload.get("Task Analysis", "")), (),
                                    parse_agent_number(payload), payload)
                if "parameter" not in payload:
                    raise ValueError("reply has no 'parameter' key")
                params = parse_parameters(payload["parameter"])
                return LlmReply(raw, str(payload.get("design", "")), tuple(params), None, payload)
            except ValueError as exc:
                last_err = exc
                log.info("unparsable reply (%s); retrying", exc)
                messages = messages + [{"role": "assistant", "content": raw},
                                       {"role": "user", "content": JSON_NUDGE}]
    finally:
        if own:
            client.close()
    raise PolicyError(f"no valid JSON after {cfg.retries + 1} attempts: {last_err}")


# -- policy -----------------------------------------------------------------

# Parameters with a positive domain; PID gains keep their sign and are left alone.
DOMAIN = {"omega_L": (PARAM_MIN, PARAM_MAX), "beta_b": (0.0, PARAM_MAX),
          "tau_f": (PARAM_MIN, PARAM_MAX)}


def _clamp(vals: list[float], names) -> list[float]:
    out = []
    for name, v in zip(names, vals):
        lo, hi = DOMAIN.get(name, (-math.inf, math.inf))
        c = min(max(v, lo), hi)
        if c != v:
            log.warning("parameter %s=%g outside domain, clamped to %g", name, v, c)
        out.append(c)
    return out


class LlmPolicy:
    """Design policy that asks a chat model for each proposal."""

    def __init__(self, cfg: LlmConfig, client: httpx.Client | None = None):
        self.cfg = cfg
        self._client = client

    def assign(self, req: TaskRequirement) -> int:
        reply = call_llm(render_central_prompt(req), self.cfg, expect="agent", client=self._client)
        return reply.agent_number

    def propose(self, system_class: SystemClass, req: TaskRequirement, memory: MemoryBuffer,
                feedback: Feedback) -> ControllerDesign:
        cls = SystemClass(system_class or classify_system(req.plant))
        family = family_for(cls)
        bundle = render_task_prompt(cls, req, memory, feedback)
        reply = call_llm(bundle, self.cfg, client=self._client)
        names = PARAM_NAMES[family]
        if len(reply.parameters) != len(names):
            raise PolicyError(f"expected {len(names)} parameters [{', '.join(names)}], "
                              f"got {len(reply.parameters)}")
        vals = _clamp(list(reply.parameters), names)
        try:
            if family is Family.LOOP_SHAPE:
                p = LoopShapeParams(vals[0], vals[1], loop_gain_sign(req.plant))
                return loopshape_controller(req.plant, p)
            return pid_controller(PidParams(*vals))
        except ValueError as exc:
            raise PolicyError(f"proposed parameters rejected: {exc}") from exc
