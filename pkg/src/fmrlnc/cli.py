"""Command-line entry point.

Exit status: 0 on success, 1 on invalid input, 2 when a result row fails
its acceptance relation (or a simulated run breaks conservation/decoding).
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .coding import MemoryPolicy
from .config import ExperimentSpec, parse_config
from .engine import SimulationConfig, run
from .errors import CapacityError, ConfigurationError, UsageError, ValidationError
from .experiments import (
    Scenario,
    build_topology,
    cmd_lemma3,
    cmd_metrics,
    cmd_stopping,
    estimate_lemma1,
    estimate_lemma2,
    oracle,
    parse_placement,
    parse_recipients,
)
from .field import FieldSpec
from .topology import PeriodicSchedule

KIND_OF = {
    "estimate-lemma1": "lemma1",
    "estimate-lemma2": "lemma2",
    "oracle": "oracle",
    "stopping": "stopping",
    "lemma3": "lemma3-adversary",
    "metrics": "metrics",
    "simulate": "simulate",
}

# per-command defaults, keyed like config values ("trials" is the global flag)
DEFAULTS = {
    "lemma1": {"trials": 100_000, "field.q": "16", "policy.s": 1, "network.k": 4, "policy.kind": "accumulator"},
    "lemma2": {"trials": 100_000, "field.q": "2", "policy.s": 1, "network.k": 4, "analysis.variant": "accumulator"},
    "oracle": {"trials": 1_000_000, "field.q": "2", "policy.s": 1, "network.k": 2, "analysis.scenario": "receive"},
    "stopping": {
        "trials": 30, "field.q": "2^16", "policy.s": 1, "policy.kind": "accumulator", "network.n": 32,
        "network.k": 16, "network.topology": "path:32", "network.model": "sync-broadcast",
        "network.placement": "spread", "analysis.scale": "connectivity", "analysis.delta": 1,
    },
    "lemma3-adversary": {
        "trials": 100, "field.q": "2", "policy.s": 1, "policy.kind": "accumulator", "network.n": 24,
        "network.k": 8, "network.round_budget": 10_000,
    },
    "metrics": {"network.topology": "cycle:6", "analysis.delta": 1},
    "simulate": {
        "trials": 1, "field.q": "2^16", "policy.s": 1, "policy.kind": "accumulator", "network.n": 8,
        "network.k": 4, "network.topology": "complete:8", "network.model": "sync-broadcast",
        "network.placement": "spread", "network.record": "full",
    },
}

FLAG_KEYS = {
    "q": "field.q", "s": "policy.s", "policy": "policy.kind", "n": "network.n", "k": "network.k",
    "topology": "network.topology", "model": "network.model", "placement": "network.placement",
    "recipients": "network.recipients", "budget": "network.round_budget", "tracked": "network.tracked_directions",
    "record": "network.record", "payload": "network.payload_length", "scale": "analysis.scale",
    "delta": "analysis.delta", "baseline": "analysis.baseline", "scenario": "analysis.scenario",
    "variant": "analysis.variant", "name": "analysis.name",
}


def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="fmrlnc", description="Finite-memory network coding experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--trials", type=int, help="trials, samples or runs, per command")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--config", help="INI experiment config; flags override it")
    sub = top.add_subparsers(dest="command", required=True)

    def cmd(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help_text)

    p = cmd("estimate-lemma1", "one-transmission success probability")
    p.add_argument("--q")
    p.add_argument("--s", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--policy", choices=("unlimited", "accumulator", "recombinator"))

    p = cmd("estimate-lemma2", "forgetting probability after one reception")
    p.add_argument("--q")
    p.add_argument("--s", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--variant", choices=("accumulator", "recombinator"))

    p = cmd("oracle", "exact enumeration against the simulator (q <= 3, k <= 2, s = 1)")
    p.add_argument("--scenario", choices=("receive", "emit"))
    p.add_argument("--q")
    p.add_argument("--k", type=int)
    p.add_argument("--s", type=int)

    for name, help_text in (("stopping", "stopping-time campaign"), ("simulate", "one run, JSONL trace")):
        p = cmd(name, help_text)
        p.add_argument("--q")
        p.add_argument("--s", type=int)
        p.add_argument("--policy", choices=("unlimited", "accumulator", "recombinator"))
        p.add_argument("--n", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--topology")
        p.add_argument("--model", choices=("sync-broadcast", "async-broadcast", "async-single-transfer"))
        p.add_argument("--placement")
        p.add_argument("--recipients")
        p.add_argument("--budget", type=int)
        p.add_argument("--tracked", type=int)
        p.add_argument("--payload", type=int)
        if name == "stopping":
            p.add_argument("--scale", choices=("none", "connectivity", "isoperimetric", "cut"))
            p.add_argument("--delta", type=int)
            p.add_argument("--baseline", help="paired policy, e.g. unlimited or accumulator:8")
            p.add_argument("--name")
        else:
            p.add_argument("--record", choices=("summary", "full"))

    p = cmd("lemma3", "adaptive adversary lower-bound runs")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--q")
    p.add_argument("--s", type=int)
    p.add_argument("--policy", choices=("accumulator", "recombinator"))
    p.add_argument("--budget", type=int)

    p = cmd("metrics", "exact graph metrics as p/q fractions")
    p.add_argument("--topology", help="graph spec, G1|G2 schedule, or @schedule-file")
    p.add_argument("--delta", type=int)
    return top


class Settings:
    """Flag > config file > command default."""

    def __init__(self, args: argparse.Namespace, spec: ExperimentSpec, kind: str):
        self.args = args
        self.spec = spec
        self.defaults = DEFAULTS[kind]

    def __call__(self, key: str, default=None):
        flag = next((f for f, k in FLAG_KEYS.items() if k == key), None)
        if flag is not None and getattr(self.args, flag, None) is not None:
            return getattr(self.args, flag)
        if key in self.spec.values:
            return self.spec.values[key]
        return self.defaults.get(key, default)

    def top(self, name: str, default=None):
        value = getattr(self.args, name)
        if value is not None:
            return value
        return self.spec.get(f"experiment.{name}", self.defaults.get(name, default))


def _policy(text: str, s: int, innovative_only: bool = True) -> MemoryPolicy:
    kind, _, size = text.partition(":")
    if kind == "unlimited":
        return MemoryPolicy.unlimited(innovative_only)
    if size:
        if not size.isdigit():
            raise ValidationError(f"bad slot count in policy {text!r}")
        s = int(size)
    if kind == "accumulator":
        return MemoryPolicy.accumulator(s)
    if kind == "recombinator":
        return MemoryPolicy.recombinator(s)
    raise ValidationError(f"unknown policy {text!r}")


def _positive(name: str, value: int) -> int:
    if value < 1:
        raise ValidationError(f"{name} must be >= 1")
    return value


def _execute(args: argparse.Namespace) -> tuple[str, bool, str | None]:
    kind = KIND_OF[args.command]
    spec = parse_config(args.config) if args.config else ExperimentSpec()
    if spec.kind is not None and spec.kind != kind:
        raise ValidationError(f"config is for {spec.kind!r} but the command runs {kind!r}")
    get = Settings(args, spec, kind)
    seed = get.top("seed", 0)
    if seed < 0:
        raise ValidationError("seed must be >= 0")
    trials = _positive("trials", get.top("trials", 1))
    out = get.top("out")

    if kind == "lemma1":
        table = estimate_lemma1(get("field.q"), get("policy.s"), get("network.k"), get("policy.kind"), trials, seed)
    elif kind == "lemma2":
        table = estimate_lemma2(get("field.q"), get("policy.s"), get("analysis.variant"), trials, seed, k=get("network.k"))
    elif kind == "oracle":
        f = FieldSpec.parse(str(get("field.q")))
        table = oracle(get("analysis.scenario"), f.q, get("network.k"), s=get("policy.s"), samples=trials, seed=seed)
    elif kind == "metrics":
        topo = build_topology(get("network.topology"))
        graphs = topo.graphs if isinstance(topo, PeriodicSchedule) else [topo.graph]
        table = cmd_metrics(graphs, get("analysis.delta"))
    elif kind == "lemma3-adversary":
        table = cmd_lemma3(
            get("network.n"), get("field.q"), get("policy.s"), get("network.round_budget"), trials, seed,
            k=get("network.k"), variant=get("policy.kind"), payload_length=get("network.payload_length", 4),
        )
    else:
        f = FieldSpec.parse(str(get("field.q")))
        pol = _policy(get("policy.kind"), get("policy.s"), get("policy.innovative_only", True))
        n, k = get("network.n"), get("network.k")
        if kind == "stopping":
            baseline = get("analysis.baseline")
            scn = Scenario(
                name=get("analysis.name") or get("network.topology"), n=n, k=k, field=f, policy=pol,
                topology=get("network.topology"), placement=get("network.placement"), model=get("network.model"),
                recipients=get("network.recipients"), scale=get("analysis.scale"), delta=get("analysis.delta"),
                baseline=_policy(baseline, get("policy.s")) if baseline else None,
                round_budget=get("network.round_budget"), payload_length=get("network.payload_length", 4),
                tracked_directions=get("network.tracked_directions"),
            )
            table = cmd_stopping(scn, trials, seed)
        else:
            traces = []
            for i in range(trials):
                cfg = SimulationConfig(
                    n=n, k=k, field=f, policy=pol, topology=build_topology(get("network.topology")),
                    placement=parse_placement(get("network.placement"), n, k), model=get("network.model"),
                    payload_length=get("network.payload_length", 4),
                    recipients=parse_recipients(get("network.recipients"), n), seed=seed, run_index=i,
                    round_budget=get("network.round_budget"), tracked_directions=get("network.tracked_directions"),
                    record=get("network.record"),
                )
                traces.append(run(cfg))
            ok = all(t.conservation_violations == 0 and t.decode_mismatches == 0 for t in traces)
            return "".join(t.to_jsonl() for t in traces), ok, out
    return table.to_csv(), not table.failures, out


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for bad usage; 2 is reserved for failing rows here
        return 1 if exc.code == 2 else int(exc.code or 0)
    try:
        text, ok, out = _execute(args)
    except (ValidationError, CapacityError, ConfigurationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if ok else 2

