"""Command line entry point: ``absmac run | sweep | explore | replay``.

Every flag can also come from a ``--config`` file of ``key = value`` lines
(``#`` starts a comment).  Keys are the flag names with dashes or
underscores, optionally under a ``scheduler.`` or ``explore.`` prefix, e.g.::

    protocol = counter-race
    n = 2, 4, 8
    scheduler.kind = adversarial
    scheduler.crash_p = 0.01
    explore.depth = 24

Flags given on the command line win over the file.  The exit status is 0
iff no violation was found.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from absmac.core import ConfigurationError
from absmac.explore import ExploreConfig, WorkBudgetExceeded, explore
from absmac.harness import TrialConfig, export_trace, replay, run_experiment, run_trial
from absmac.registry import PROTOCOLS
from absmac.schedulers import POLICIES
from absmac.trace import write_jsonl

ALIASES = {
    "scheduler.kind": "scheduler",
    "scheduler.seed": "scheduler_seed",
    "scheduler.crash_p": "crash_p",
    "scheduler.crash_budget": "crash_budget",
    "explore.depth": "depth",
    "explore.tape_bound": "tape_bound",
    "explore.max_crashes": "max_crashes",
    "explore.budget": "budget",
}

DEFAULTS: dict[str, Any] = {
    "protocol": "counter-race",
    "scheduler": "uniform",
    "seed": 0,
    "trials": 1,
    "crash_p": 0.0,
    "crash_budget": 0,
    "c_T": 1.0,
    "k": 3,
    "depth": 20,
}


def read_config(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file into canonical option names."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        key = ALIASES.get(key, key)
        if "." in key:
            key = key.split(".", 1)[1]
        if key == "c_t":
            key = "c_T"
        out[key] = value
    return out


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _inputs(text: str | None) -> Any:
    if text is None:
        return None
    parts = text.replace(",", " ").split()
    if len(parts) == 1 and not parts[0].lstrip("-").isdigit():
        return parts[0]
    return [int(p) for p in parts]


class Options:
    """Command line flags layered over config-file values and defaults."""

    def __init__(self, args: argparse.Namespace, file_values: dict[str, str]):
        self.args = args
        self.file = file_values

    def get(self, name: str, conv=str) -> Any:
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        if name in self.file:
            return conv(self.file[name])
        return DEFAULTS.get(name)


def _trial_configs(opt: Options) -> list[TrialConfig]:
    ns = opt.get("n", _ints)
    if ns is None:
        raise ConfigurationError("--n is required (on the command line or in the config file)")
    if isinstance(ns, int):
        ns = [ns]
    schedulers = opt.get("scheduler", lambda s: s.replace(",", " ").split())
    if isinstance(schedulers, str):
        schedulers = [schedulers]
    c_ts = opt.get("c_T", lambda s: [float(x) for x in s.replace(",", " ").split()])
    if isinstance(c_ts, float):
        c_ts = [c_ts]
    configs = []
    for n in ns:
        for sched in schedulers:
            for c_T in c_ts:
                crash_budget = opt.get("crash_budget", int)
                configs.append(TrialConfig(
                    n=n,
                    protocol=opt.get("protocol"),
                    inputs=_inputs(opt.get("inputs")),
                    scheduler=sched,
                    seed=opt.get("seed", int),
                    scheduler_seed=opt.get("scheduler_seed", int),
                    crash_p=opt.get("crash_p", float),
                    crash_budget=n - 1 if crash_budget == -1 else crash_budget,
                    max_acks=opt.get("max_acks", int),
                    max_events=opt.get("max_events", int),
                    c_T=c_T,
                    k=opt.get("k", int),
                ))
    return configs


def cmd_run(opt: Options) -> int:
    configs = _trial_configs(opt)
    if len(configs) != 1:
        raise ConfigurationError("run takes a single n, scheduler and c_T; use sweep for several")
    config = configs[0]
    trace_path = opt.get("trace")
    if trace_path:
        config.keep_trace = True
    r = run_trial(config)
    print(f"config      {config.config_id} seed={config.seed}")
    print(f"inputs      {r.inputs}")
    print(f"terminated  {r.terminated} (acks to termination: {r.acks_to_termination_state}, total acks {r.total_acks}, events {r.events})")
    print(f"decisions   {r.decisions}")
    if r.agreement_fraction is not None:
        print(f"agreement   {r.agreement_fraction:.3f}")
    if r.estimate_fraction is not None:
        print(f"estimates   {r.estimate_fraction:.3f} within [n/log2 n, n log2 n]")
    if r.id_lengths:
        print(f"id lengths  max {max(r.id_lengths)}")
    print(f"broadcasts  max per node {max(r.broadcasts)}")
    if trace_path:
        export_trace(r, trace_path)
        print(f"trace       {trace_path}")
    for v in r.violations:
        print(f"VIOLATION   {v}")
    return 1 if r.violations else 0


def cmd_sweep(opt: Options) -> int:
    configs = _trial_configs(opt)
    out = opt.get("out") or "summary.csv"
    trace_dir = opt.get("trace_dir") or str(Path(out).with_suffix("")) + "_traces"
    summary = run_experiment(configs, opt.get("trials", int), out, trace_dir=trace_dir)
    for row in summary.rows:
        if row["metric"] in ("acks_to_termination_state", "agreement_fraction", "max_broadcasts_per_node"):
            print(f"{row['config_id']:<48} {row['metric']:<26} p50={row['p50']:<8g} p99={row['p99']:<8g} "
                  f"max={row['max']:<8g} violations={row['violations']}")
    for flag in summary.flags:
        print(f"trend: {flag}")
    for path in summary.failing_traces:
        print(f"failing trace: {path}")
    print(f"summary written to {out}; {summary.violations} violating trials")
    return 1 if summary.violations else 0


def cmd_explore(opt: Options) -> int:
    n = opt.get("n", _ints)
    if isinstance(n, list):
        if len(n) != 1:
            raise ConfigurationError("explore takes a single n")
        n = n[0]
    if n is None:
        raise ConfigurationError("--n is required")
    inputs = _inputs(opt.get("inputs"))
    protocol = opt.get("protocol")
    if inputs is None or isinstance(inputs, str):
        inputs = list(range(n)) if protocol == "ae-agreement" else [u % 2 for u in range(n)]
    config = ExploreConfig(
        n=n, inputs=inputs, protocol=protocol, seed=opt.get("seed", int),
        max_crashes=opt.get("max_crashes", int), k=opt.get("k", int), c_T=opt.get("c_T", float),
    )
    kwargs = {}
    budget = opt.get("budget", int)
    if budget is not None:
        kwargs["budget"] = budget
    try:
        verdict = explore(config, opt.get("depth", int), opt.get("tape_bound", int), **kwargs)
    except WorkBudgetExceeded as e:
        print(str(e), file=sys.stderr)
        return 2
    print(verdict.describe())
    if not verdict.passed:
        out = opt.get("out") or "counterexample.jsonl"
        write_jsonl(verdict.counterexample, out)
        print(f"counterexample written to {out}")
        return 1
    return 0


def cmd_replay(opt: Options) -> int:
    violations = replay(opt.args.trace_file)
    if not violations:
        print("no violations")
        return 0
    for v in violations:
        print(f"VIOLATION {v}")
    return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="absmac", description="Consensus simulations over an abstract MAC layer.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser, many: bool) -> None:
        sp.add_argument("--config", help="key = value file; command line flags override it")
        sp.add_argument("--n", type=int, nargs="+" if many else None, help="number of nodes")
        sp.add_argument("--protocol", choices=list(PROTOCOLS))
        sp.add_argument("--inputs", help="comma separated values, or one of random, split, zeros, ones, distinct")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--k", type=int, help="counter lead needed to decide (default 3)")
        sp.add_argument("--c-T", dest="c_T", type=float, nargs="+" if many else None, help="round-count constant for ae-agreement")
        sp.add_argument("--out", help="output path")

    def trial_flags(sp: argparse.ArgumentParser, many: bool) -> None:
        sp.add_argument("--scheduler", choices=list(POLICIES), nargs="+" if many else None)
        sp.add_argument("--scheduler-seed", type=int)
        sp.add_argument("--crash-p", type=float, help="per-step crash probability")
        sp.add_argument("--crash-budget", type=int, help="maximum crashes; -1 means n-1")
        sp.add_argument("--max-acks", type=int)
        sp.add_argument("--max-events", type=int)

    run = sub.add_parser("run", help="run one seeded trial")
    common(run, False)
    trial_flags(run, False)
    run.add_argument("--trace", help="export the trace as JSON Lines")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run many trials per configuration and write a CSV summary")
    common(sweep, True)
    trial_flags(sweep, True)
    sweep.add_argument("--trials", type=int)
    sweep.add_argument("--trace-dir", help="where violating traces go")
    sweep.set_defaults(func=cmd_sweep)

    ex = sub.add_parser("explore", help="check every schedule up to a depth")
    common(ex, False)
    ex.add_argument("--depth", type=int)
    ex.add_argument("--tape-bound", type=int, help="maximum random draws per node")
    ex.add_argument("--max-crashes", type=int)
    ex.add_argument("--budget", type=int, help="maximum distinct states")
    ex.set_defaults(func=cmd_explore)

    rp = sub.add_parser("replay", help="rerun the oracles over an exported trace")
    rp.add_argument("trace_file")
    rp.add_argument("--config", help=argparse.SUPPRESS)
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        file_values = read_config(args.config) if getattr(args, "config", None) else {}
        return args.func(Options(args, file_values))
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
