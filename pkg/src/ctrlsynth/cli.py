"""Command-line entry point: ``ctrlsynth {gen,design,eval,report,bode,step}``.

Exit status is 0 on success, 1 when a task fails (no controller found,
evaluation error) and 2 for configuration problems such as bad flags or
unreadable input files.  Every command that writes an output also writes
``<output>.manifest.json`` recording the flags and tool version.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (MAX_STEPS, closed_loop_step, step_response, write_bode_csv,
                       write_step_csv)
from .data import DatasetError, GENERATORS, generate, load_dataset, save_dataset, entry_tasks
from .design import run_design, trace_to_json
from .harness import (BenchmarkTask, TrialMatrix, heuristic_factory, score, write_report,
                      write_table_csv)
from .lti import TransferFunction, tf_feedback_unity, tf_series
from .requirements import ResponseMode

log = logging.getLogger("ctrlsynth")


class ConfigError(Exception):
    """Bad input files or flag combinations (exit status 2)."""


class LlmFactory:
    """Picklable per-trial policy factory for the LLM backend."""

    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, trial: int):
        from .llm import LlmPolicy
        return LlmPolicy(self.cfg)


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _manifest(args, out) -> None:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}
    _write_json(f"{out}.manifest.json", {
        "tool": "ctrlsynth", "version": __version__, "command": args.command,
        "flags": flags, "seed": flags.get("seed")})


def _policy_factory(args):
    if args.policy == "heuristic":
        return heuristic_factory
    if not args.llm_config:
        raise ConfigError("--policy llm needs --llm-config")
    from .llm import LlmConfig
    try:
        cfg = LlmConfig.from_file(args.llm_config)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {args.llm_config}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{args.llm_config}: {exc}") from None
    return LlmFactory(cfg)


def _plant(path) -> TransferFunction:
    d = _load_json(path)
    try:
        return TransferFunction.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: not a transfer function ({exc})") from None


def _controller(path) -> TransferFunction:
    d = _load_json(path)
    if isinstance(d, dict) and "final" in d:  # a design trace
        d = d["final"]
    if not isinstance(d, dict) or "num" not in d or "den" not in d:
        raise ConfigError(f"{path}: expected an object with 'num' and 'den'")
    try:
        return TransferFunction.from_coeffs(d["num"], d["den"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


# -- commands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    entries = generate(args.family, args.n, args.seed)
    save_dataset(entries, args.out)
    _manifest(args, args.out)
    print(f"wrote {len(entries)} {args.family} entries to {args.out}")
    return 0


def _load_entries(path):
    try:
        return load_dataset(path)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except (DatasetError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_design(args) -> int:
    entries = _load_entries(args.task)
    if args.id is not None:
        entries = [e for e in entries if e.id == args.id]
        if not entries:
            raise ConfigError(f"no entry with id {args.id} in {args.task}")
    if len(entries) != 1:
        raise ConfigError(f"{args.task} holds {len(entries)} entries; pick one with --id")
    tasks = entry_tasks(entries[0], args.mode)
    if len(tasks) != 1:
        raise ConfigError(f"entry has {len(tasks)} settling windows; pick one with --mode")
    req = tasks[0].with_gain_margin(args.gain_margin)
    policy = _policy_factory(args)(0)
    outcome = run_design(req, policy, args.max_iters)
    doc = {
        "task": entries[0].to_dict(), "mode": req.mode.value,
        "system_class": outcome.system_class.value, "success": outcome.success,
        "iterations_used": outcome.iterations_used,
        "final": outcome.final.to_dict() if outcome.final else None,
        "notes": outcome.notes, "trace": trace_to_json(outcome.trace),
    }
    _write_json(args.out, doc)
    _manifest(args, args.out)
    if outcome.success:
        print(f"success after {outcome.iterations_used} iteration(s): C(s) = {outcome.final.tf}")
        return 0
    print(f"no controller met the requirements in {outcome.iterations_used} iterations")
    return 1


def cmd_eval(args) -> int:
    entries = _load_entries(args.dataset)
    tasks = [BenchmarkTask(e.id, t) for e in entries for t in entry_tasks(e, args.mode)]
    if not tasks:
        raise ConfigError("dataset yields no tasks")
    from .harness import run_trials
    m = run_trials(tasks, _policy_factory(args), args.trials, args.max_iters,
                   gain_margin=args.gain_margin, jobs=args.jobs)
    config = {"dataset": str(args.dataset), "policy": args.policy, "trials": args.trials,
              "n_max": args.max_iters, "gain_margin": args.gain_margin,
              "mode": args.mode, "version": __version__}
    rep = write_report(args.out, config, m)
    if args.table:
        write_table_csv(args.table, m)
    _manifest(args, args.out)
    print(f"ASR {rep['asr']:.1f}%  AgSR {rep['agsr']:.1f}%  over {m.n_systems} tasks x {m.n_trials} trials")
    return 1 if m.errors else 0


def cmd_report(args) -> int:
    d = _load_json(args.report)
    try:
        m = TrialMatrix.from_dict(d["matrix"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{args.report}: no trial matrix ({exc})") from None
    s = score(m)
    print(f"ASR {s.asr:.1f}%  AgSR {s.agsr:.1f}%  per trial {[round(x, 1) for x in s.asr_per_trial]}")
    if args.out:
        write_table_csv(args.out, m)
        _manifest(args, args.out)
    return 0


def cmd_bode(args) -> int:
    loop = tf_series(_plant(args.plant), _controller(args.controller))
    n = int(round(math.log10(args.w_max / args.w_min) * args.per_decade)) + 1
    w = np.logspace(math.log10(args.w_min), math.log10(args.w_max), n)
    write_bode_csv(args.out, loop, w)
    _manifest(args, args.out)
    return 0


def cmd_step(args) -> int:
    loop = tf_series(_plant(args.plant), _controller(args.controller))
    rat = loop.rational
    cl_poles = tf_feedback_unity(rat).poles()
    w_hi = max([1.0] + [float(np.max(np.abs(p))) for p in (cl_poles, rat.poles()) if len(p)])
    dt = args.dt or 0.02 / w_hi
    horizon = args.horizon
    if horizon is None:
        stable_re = [-p.real for p in cl_poles if p.real < 0]
        horizon = 30.0 / min(stable_re) if stable_re else 10.0
    horizon = min(horizon, MAX_STEPS * dt)
    if loop.delay:
        traj = closed_loop_step(loop, horizon, dt)
    else:
        traj = step_response(tf_feedback_unity(loop), horizon, dt)
    write_step_csv(args.out, traj)
    _manifest(args, args.out)
    if traj.diverged:
        print("closed loop diverged; trajectory truncated")
        return 1
    return 0


# -- parser -----------------------------------------------------------------

def _positive(kind):
    def conv(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctrlsynth", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ctrlsynth {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a benchmark dataset")
    g.add_argument("--family", required=True, choices=[c.value for c in GENERATORS])
    g.add_argument("--n", required=True, type=_positive(int))
    g.add_argument("--seed", required=True, type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    def policy_flags(p):
        p.add_argument("--policy", choices=["heuristic", "llm"], default="heuristic")
        p.add_argument("--llm-config")
        p.add_argument("--max-iters", type=_positive(int), default=None)
        p.add_argument("--gain-margin", action="store_true",
                       help="also require +-6 dB gain margins")
        p.add_argument("--mode", choices=[m.value for m in ResponseMode if m.value != "unspecified"])

    d = sub.add_parser("design", help="design a controller for one task")
    d.add_argument("--task", required=True)
    d.add_argument("--id", type=int)
    d.add_argument("--out", required=True)
    policy_flags(d)
    d.set_defaults(func=cmd_design)

    e = sub.add_parser("eval", help="run a multi-trial benchmark")
    e.add_argument("--dataset", required=True)
    e.add_argument("--trials", type=_positive(int), default=1)
    e.add_argument("--jobs", type=_positive(int), default=None)
    e.add_argument("--seed", type=int, default=None, help="recorded in the manifest only")
    e.add_argument("--out", required=True)
    e.add_argument("--table", help="also write a per-task CSV table")
    policy_flags(e)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="re-score a saved evaluation report")
    r.add_argument("--report", required=True)
    r.add_argument("--out", help="CSV table")
    r.set_defaults(func=cmd_report)

    for name, func, helptext in (("bode", cmd_bode, "loop frequency response as CSV"),
                                 ("step", cmd_step, "closed-loop step response as CSV")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--plant", required=True)
        p.add_argument("--controller", required=True)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)
    bode_p = sub.choices["bode"]
    bode_p.add_argument("--w-min", type=_positive(float), default=1e-3)
    bode_p.add_argument("--w-max", type=_positive(float), default=1e3)
    bode_p.add_argument("--per-decade", type=_positive(int), default=50)
    step_p = sub.choices["step"]
    step_p.add_argument("--horizon", type=_positive(float))
    step_p.add_argument("--dt", type=_positive(float))
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        ap.print_usage(sys.stderr)
        print(f"ctrlsynth: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ZeroDivisionError) as exc:
        print(f"ctrlsynth: task error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
