"""Seeded trials, sweeps and trace export."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from absmac.ae import TWO, AeState, run_layered
from absmac.core import ConfigurationError, apply_event, create_world, scheduler_view
from absmac.counter_race import K
from absmac.oracles import OracleSet, oracles_for, replay_schedule
from absmac.registry import PROTOCOLS
from absmac.rng import INPUT_STREAM, make_generator
from absmac.schedulers import POLICIES, choose, make_policy
from absmac.trace import ACK, MessageSchedule, read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

INPUT_SPECS = ("random", "split", "zeros", "ones", "distinct")
CSV_COLUMNS = ("config_id", "protocol", "n", "scheduler", "metric", "p50", "p90", "p99", "max", "violations")


def counter_race_cap(n: int) -> int:
    """Default ack cap for counter race: ``64 n^3 ln n``, at least 1000."""
    return max(1000, math.ceil(64 * n**3 * math.log(max(n, 1))))


def ae_cap(n: int) -> int:
    """Default ack cap for a.e. agreement: ``64 n^2 (log2 n)^4 log2 log2 n`` with ``n`` clamped to 4."""
    nh = max(n, 4)
    lg = math.log2(nh)
    return math.ceil(64 * nh**2 * lg**4 * math.log2(lg))


def default_cap(protocol: str, n: int) -> int:
    if protocol == "ae-agreement":
        return ae_cap(n)
    if protocol == "id-gen":
        return max(1000, 64 * n * max(1, math.ceil(math.log2(max(n, 2)))))
    return counter_race_cap(n)


@dataclass
class TrialConfig:
    """One trial.  ``inputs`` is an explicit list or one of :data:`INPUT_SPECS`."""

    n: int
    protocol: str = "counter-race"
    inputs: Any = None
    scheduler: str = "uniform"
    seed: int = 0
    scheduler_seed: int | None = None
    crash_p: float = 0.0
    crash_budget: int = 0
    max_acks: int | None = None
    max_events: int | None = None
    c_T: float = 1.0
    k: int = K
    check_oracles: bool = True
    keep_trace: bool = False
    engine: str = "event"
    metric_rounds: int = 1 << 16

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigurationError(f"need at least one node, got n={self.n}")
        if self.protocol not in PROTOCOLS:
            raise ConfigurationError(f"unknown protocol {self.protocol!r}; expected one of {', '.join(PROTOCOLS)}")
        if self.scheduler not in POLICIES:
            raise ConfigurationError(f"unknown scheduler {self.scheduler!r}; expected one of {', '.join(POLICIES)}")
        if self.engine not in ("event", "layered"):
            raise ConfigurationError(f"engine must be 'event' or 'layered', got {self.engine!r}")
        if self.engine == "layered" and (self.protocol != "ae-agreement" or self.scheduler != "layers" or self.crash_budget):
            raise ConfigurationError("the layered engine only runs ae-agreement under the layers scheduler without crashes")
        if not 0 <= self.crash_budget <= self.n - 1:
            raise ConfigurationError(f"crash_budget must be in [0, n-1], got {self.crash_budget}")

    @property
    def policy_seed(self) -> int:
        return self.seed if self.scheduler_seed is None else self.scheduler_seed

    @property
    def config_id(self) -> str:
        parts = [self.protocol, f"n={self.n}", self.scheduler, f"crash={self.crash_budget}"]
        if self.crash_budget:
            parts.append(f"p={self.crash_p:g}")
        if self.protocol == "ae-agreement":
            parts.append(f"c_T={self.c_T:g}")
        return "/".join(parts)

    def ack_cap(self) -> int:
        return self.max_acks if self.max_acks is not None else default_cap(self.protocol, self.n)

    def resolve_inputs(self) -> list:
        choice = self.inputs
        if choice is None:
            choice = "distinct" if self.protocol == "ae-agreement" else "random"
        if not isinstance(choice, str):
            return list(choice)
        n = self.n
        if choice == "random":
            return [int(b) for b in make_generator(self.seed, INPUT_STREAM).integers(0, 2, size=n)]
        if choice == "split":
            return [u % 2 for u in range(n)]
        if choice == "zeros":
            return [0] * n
        if choice == "ones":
            return [1] * n
        if choice == "distinct":
            return list(range(n))
        raise ConfigurationError(f"unknown input choice {choice!r}; expected a list or one of {', '.join(INPUT_SPECS)}")


@dataclass
class TrialResult:
    config: TrialConfig
    inputs: list
    terminated: bool
    acks_to_termination_state: int | None
    total_acks: int
    events: int
    decisions: list
    crashed: list[bool]
    violations: list[str]
    broadcasts: list[int]
    capped: bool = False
    agreement_fraction: float | None = None
    estimate_fraction: float | None = None
    estimates: list[int] | None = None
    active_counts: list[int] | None = None
    id_lengths: list[int] | None = None
    history: list[tuple] | None = None
    trace: MessageSchedule | None = None

    @property
    def ok(self) -> bool:
        return not self.violations


def agreement_fraction(decisions: Sequence[Any], crashed: Sequence[bool]) -> float:
    """Share of non-crashed nodes holding the most common decision."""
    live = [d for d, c in zip(decisions, crashed) if not c]
    if not live:
        return 1.0
    counts: dict = {}
    for d in live:
        if d is not None:
            counts[d] = counts.get(d, 0) + 1
    return max(counts.values(), default=0) / len(live)


def estimate_fraction(estimates: Sequence[int | None], n: int) -> float:
    """Share of nodes whose size estimate lies in ``[n / log2 n, n log2 n]``."""
    lg = math.log2(n) if n > 1 else 1.0
    ok = sum(1 for N in estimates if N is not None and n / lg <= N <= n * lg)
    return ok / len(estimates)


def run_trial(
    config: TrialConfig,
    *,
    content_hook: Callable[[dict], dict] | None = None,
    record_history: bool = False,
    policy=None,
) -> TrialResult:
    """Run one seeded trial to quiescence or the ack cap."""
    if config.engine == "layered":
        return _run_layered(config)
    inputs = config.resolve_inputs()
    need_trace = config.check_oracles or config.keep_trace
    world = create_world(
        config.n,
        inputs,
        config.protocol,
        config.seed,
        record_trace=need_trace,
        content_hook=content_hook,
        k=config.k,
        c_T=config.c_T,
    )
    if world.trace is not None:
        world.trace.header.update(
            {"k": config.k, "c_T": config.c_T, "scheduler": config.scheduler, "config_id": config.config_id}
        )
    if policy is None:
        policy = make_policy(config.scheduler, config.policy_seed, config.crash_p, config.crash_budget)
    oracles: OracleSet | None = oracles_for(config.protocol, config.n, inputs, k=config.k) if config.check_oracles else None
    view = scheduler_view(world)
    cap = config.ack_cap()
    max_events = config.max_events if config.max_events is not None else 50 * cap + 10 * config.n
    is_ae = config.protocol == "ae-agreement"
    active: dict[int, int] = {}
    acks_term = None
    capped = False
    fed = 0

    while True:
        if acks_term is None and world.terminated:
            acks_term = world.ack_count
        if world.quiescent:
            break
        if world.ack_count >= cap or world.seq >= max_events:
            capped = True
            break
        ev = choose(policy, view)
        apply_event(world, ev)
        if is_ae and ev.kind == ACK:
            st: AeState = world.states[ev.node]
            if st.phase == TWO:
                active[st.i] = active.get(st.i, 0) + (st.rho is not None)
        if oracles is not None:
            events = world.trace.events
            for tev in events[fed:]:
                oracles.step(tev)
            if config.keep_trace:
                fed = len(events)
            else:
                events.clear()

    violations: list[str] = []
    if oracles is not None:
        oracles.finish()
        violations = oracles.violations
    if world.quiescent and acks_term is None:
        violations.append("liveness: quiescent before every live node finished")

    decisions = list(world.outputs)
    crashed = list(world.crashed)
    result = TrialResult(
        config=config,
        inputs=inputs,
        terminated=acks_term is not None,
        acks_to_termination_state=acks_term,
        total_acks=world.ack_count,
        events=world.seq,
        decisions=decisions,
        crashed=crashed,
        violations=violations,
        broadcasts=list(world.bcast_counts),
        capped=capped,
        history=list(world.history) if record_history else None,
        trace=world.trace if config.keep_trace else None,
    )
    if config.protocol in ("counter-race", "counter-race+idgen", "ae-agreement"):
        result.agreement_fraction = agreement_fraction(decisions, crashed)
    if is_ae:
        result.estimates = [None if s is None or s.phase == "one" else s.N for s in world.states]
        result.estimate_fraction = estimate_fraction(result.estimates, config.n)
        result.active_counts = [active[i] for i in sorted(active)]
    if config.protocol == "id-gen":
        result.id_lengths = [len(d) for d in decisions if d is not None]
    return result


def _run_layered(config: TrialConfig) -> TrialResult:
    inputs = config.resolve_inputs()
    out = run_layered(inputs, config.seed, config.c_T, metric_rounds=config.metric_rounds)
    n = config.n
    violations = [f"validity: node {u} decided {d!r}, not an input" for u, d in enumerate(out.decisions) if d not in inputs]
    crashed = [False] * n
    return TrialResult(
        config=config,
        inputs=inputs,
        terminated=True,
        acks_to_termination_state=out.acks,
        total_acks=out.acks,
        events=n + out.acks * n,
        decisions=out.decisions,
        crashed=crashed,
        violations=violations,
        broadcasts=[out.T + 1] * n,
        capped=out.acks > config.ack_cap(),
        agreement_fraction=agreement_fraction(out.decisions, crashed),
        estimate_fraction=estimate_fraction(out.N, n),
        estimates=out.N,
        active_counts=out.active_counts.tolist(),
    )


# -- sweeps ------------------------------------------------------------------


def quantiles(values: Sequence[float]) -> dict[str, float]:
    if len(values) == 0:
        return {"p50": math.nan, "p90": math.nan, "p99": math.nan, "max": math.nan}
    a = np.asarray(values, dtype=float)
    p50, p90, p99 = np.quantile(a, [0.5, 0.9, 0.99])
    return {"p50": float(p50), "p90": float(p90), "p99": float(p99), "max": float(a.max())}


@dataclass
class Summary:
    rows: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    violations: int = 0
    failing_traces: list[Path] = field(default_factory=list)
    results: dict[str, list[TrialResult]] = field(default_factory=dict)


def metric_values(results: Sequence[TrialResult]) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {
        "acks_to_termination_state": [r.acks_to_termination_state for r in results if r.terminated],
        "total_acks": [r.total_acks for r in results],
        "max_broadcasts_per_node": [max(r.broadcasts) for r in results],
        "terminated": [float(r.terminated) for r in results],
    }
    if any(r.agreement_fraction is not None for r in results):
        out["agreement_fraction"] = [r.agreement_fraction for r in results if r.agreement_fraction is not None]
    if any(r.estimate_fraction is not None for r in results):
        out["estimate_fraction"] = [r.estimate_fraction for r in results if r.estimate_fraction is not None]
    if any(r.active_counts for r in results):
        out["active_per_round"] = [c for r in results for c in (r.active_counts or ())]
    if any(r.id_lengths for r in results):
        out["id_length"] = [x for r in results for x in (r.id_lengths or ())]
    return out


def run_experiment(
    configs: Sequence[TrialConfig],
    trials: int,
    out: str | Path | None = None,
    *,
    trace_dir: str | Path | None = None,
    keep_results: bool = False,
) -> Summary:
    """Run ``trials`` seeds of every config and summarize per (config, metric).

    Trial ``t`` of a config uses seed ``config.seed + t``.  Any violating
    trial is rerun with its trace kept and exported to ``trace_dir``.
    """
    summary = Summary()
    for base in configs:
        results = []
        bad = 0
        for t in range(trials):
            cfg = replace(base, seed=base.seed + t)
            r = run_trial(cfg)
            if r.violations:
                bad += 1
                logger.warning("%s seed %d: %s", base.config_id, cfg.seed, "; ".join(r.violations[:3]))
                if trace_dir is not None and cfg.engine == "event":
                    d = Path(trace_dir)
                    d.mkdir(parents=True, exist_ok=True)
                    path = d / f"{base.config_id.replace('/', '_')}_seed{cfg.seed}.jsonl"
                    export_trace(run_trial(replace(cfg, keep_trace=True)), path)
                    summary.failing_traces.append(path)
            results.append(r)
        summary.violations += bad
        if keep_results:
            summary.results[base.config_id] = results
        for metric, values in metric_values(results).items():
            row = {
                "config_id": base.config_id,
                "protocol": base.protocol,
                "n": base.n,
                "scheduler": base.scheduler,
                "metric": metric,
                **quantiles(values),
                "violations": bad,
            }
            summary.rows.append(row)
    summary.flags = trend_flags(summary.rows)
    for flag in summary.flags:
        logger.warning("trend: %s", flag)
    if out is not None:
        write_csv(summary.rows, out)
    return summary


def trend_flags(rows: Sequence[dict]) -> list[str]:
    """Flag sweeps whose median acks drop as n grows, or whose agreement drops as c_T grows."""
    flags = []
    by_group: dict[tuple, list[dict]] = {}
    for row in rows:
        if row["metric"] == "acks_to_termination_state":
            key = (row["protocol"], row["scheduler"], row["config_id"].split("/", 3)[-1])
            by_group.setdefault(key, []).append(row)
    for key, group in by_group.items():
        group.sort(key=lambda r: r["n"])
        for a, b in zip(group, group[1:]):
            if b["p50"] < a["p50"]:
                flags.append(f"median acks fall from n={a['n']} ({a['p50']:g}) to n={b['n']} ({b['p50']:g}) for {key[0]}/{key[1]}")
    ae_rows: dict[tuple, list[tuple[float, dict]]] = {}
    for row in rows:
        if row["metric"] == "agreement_fraction" and "c_T=" in row["config_id"]:
            c = float(row["config_id"].rsplit("c_T=", 1)[1])
            ae_rows.setdefault((row["n"], row["scheduler"]), []).append((c, row))
    for key, group in ae_rows.items():
        group.sort(key=lambda e: e[0])
        for (ca, a), (cb, b) in zip(group, group[1:]):
            if b["p50"] < a["p50"]:
                flags.append(f"median agreement falls from c_T={ca:g} to c_T={cb:g} at n={key[0]}")
    return flags


def write_csv(rows: Sequence[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{row[k]:.6g}" if isinstance(row[k], float) else row[k]) for k in CSV_COLUMNS})
    return path


# -- traces --------------------------------------------------------------------


def export_trace(result: TrialResult, path: str | Path) -> Path:
    if result.trace is None:
        raise ValueError("trial was run without keep_trace; rerun with keep_trace=True")
    return write_jsonl(result.trace, path)


def replay(path: str | Path) -> list[str]:
    """Read a JSON Lines trace back and rerun every applicable oracle on it."""
    return replay_schedule(read_jsonl(path))


def config_dict(config: TrialConfig) -> dict:
    return asdict(config)
