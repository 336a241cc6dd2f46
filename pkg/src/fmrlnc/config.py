"""Experiment config files.

A config is an INI file (read with :mod:`configparser`).  Every key is
optional; command-line flags override file values, which override these
defaults::

    [experiment]
    kind = stopping          # lemma1 | lemma2 | oracle | stopping | lemma3-adversary | metrics | simulate
    seed = 0
    trials = <per command>   # lemma1/lemma2: 100000, oracle: 1000000, stopping: 30, lemma3: 100, simulate: 1
    out = <stdout>

    [field]
    q = 16                   # 2, a prime < 2^31, 2^m (m <= 16) or GF(2^m)

    [policy]
    kind = accumulator       # unlimited | accumulator | recombinator
    s = 1
    innovative_only = true   # unlimited policy only

    [network]
    n = 32
    k = 16
    topology = path:32       # graph spec, G1|G2|... periodic schedule, or @schedule-file
    model = sync-broadcast   # sync-broadcast | async-broadcast | async-single-transfer
    placement = spread       # at:U | spread[:OFF] | 1=0 2=0,5 ...
    recipients = all         # all, or a list of node ids
    round_budget = 50*(n+k)
    payload_length = 4
    tracked_directions = k+64 (capped at q^k - 1)
    record = summary         # summary | full

    [analysis]
    scale = connectivity     # none | connectivity | isoperimetric | cut
    delta = 1
    baseline =               # e.g. unlimited or accumulator:8
    scenario = receive       # oracle: receive | emit
    variant = accumulator    # lemma2: accumulator | recombinator
    name = <topology>
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigParseError, ValidationError
from .experiments import parse_placement
from .field import FieldSpec

KINDS = ("lemma1", "lemma2", "oracle", "stopping", "lemma3-adversary", "metrics", "simulate")
MODELS = ("sync-broadcast", "async-broadcast", "async-single-transfer")
POLICIES = ("unlimited", "accumulator", "recombinator")

SCHEMA: dict[str, dict[str, type]] = {
    "experiment": {"kind": str, "seed": int, "trials": int, "out": str},
    "field": {"q": str},
    "policy": {"kind": str, "s": int, "innovative_only": bool},
    "network": {
        "n": int, "k": int, "topology": str, "model": str, "placement": str,
        "recipients": str, "round_budget": int, "payload_length": int,
        "tracked_directions": int, "record": str,
    },
    "analysis": {"scale": str, "delta": int, "baseline": str, "scenario": str, "variant": str, "name": str},
}


@dataclass
class ExperimentSpec:
    """Validated config values keyed ``section.key``."""

    path: str | None = None
    values: dict[str, object] = field(default_factory=dict)

    @property
    def kind(self) -> str | None:
        return self.values.get("experiment.kind")

    def get(self, key: str, default=None):
        return self.values.get(key, default)


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """1-based line of every ``key`` under every ``[section]``."""
    where: dict[tuple[str, str], int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, ""), lineno)
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None and not raw[:1].isspace():
            where.setdefault((section, m.group(1).strip().lower()), lineno)
    return where


def _convert(raw: str, typ: type, what: str) -> object:
    if typ is int:
        try:
            return int(raw)
        except ValueError:
            raise ValidationError(f"{what} must be an integer, got {raw!r}") from None
    if typ is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{what} must be true or false, got {raw!r}")
    return raw


def parse_config_text(text: str, path: str | None = None) -> ExperimentSpec:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None, strict=True)
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.DuplicateOptionError as exc:
        raise ConfigParseError(f"duplicate key {exc.option!r} in [{exc.section}]", path, exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigParseError(f"duplicate section [{exc.section}]", path, exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigParseError("key outside any [section]", path, exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigParseError(f"cannot parse {line.strip()!r}", path, lineno) from None

    lines = _line_index(text)
    spec = ExperimentSpec(path=path)
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigParseError(
                f"unknown section [{section}]; expected one of {sorted(SCHEMA)}", path, lines.get((section, ""))
            )
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in SCHEMA[section]:
                raise ConfigParseError(
                    f"unknown key {key!r} in [{section}]; expected one of {sorted(SCHEMA[section])}", path, line
                )
            try:
                spec.values[f"{section}.{key}"] = _convert(raw.strip(), SCHEMA[section][key], f"{section}.{key}")
            except ValidationError as exc:
                raise ConfigParseError(str(exc), path, line) from None

    try:
        validate(spec)
    except _Invalid as exc:
        section, key = exc.key.split(".")
        raise ConfigParseError(exc.message, path, lines.get((section, key))) from None
    return spec


class _Invalid(Exception):
    def __init__(self, key: str, message: str):
        super().__init__(message)
        self.key = key
        self.message = message


def validate(spec: ExperimentSpec) -> None:
    """Cross-field invariants; raises ``_Invalid`` naming the offending key."""
    v = spec.values

    def need(key: str, ok: bool, message: str) -> None:
        if key in v and not ok:
            raise _Invalid(key, message)

    need("experiment.kind", v.get("experiment.kind") in KINDS, f"experiment.kind must be one of {KINDS}")
    need("experiment.trials", int(v.get("experiment.trials", 1)) >= 1, "trials must be >= 1")
    need("experiment.seed", int(v.get("experiment.seed", 0)) >= 0, "seed must be >= 0")
    need("policy.kind", v.get("policy.kind") in POLICIES, f"policy.kind must be one of {POLICIES}")
    need("policy.s", int(v.get("policy.s", 1)) >= 1, "policy.s must be >= 1")
    need("network.model", v.get("network.model") in MODELS, f"network.model must be one of {MODELS}")
    need("network.n", int(v.get("network.n", 1)) >= 1, "network.n must be >= 1")
    need("network.k", int(v.get("network.k", 0)) >= 0, "network.k must be >= 0")
    need("network.round_budget", int(v.get("network.round_budget", 1)) >= 1, "round_budget must be >= 1")
    need("network.record", v.get("network.record") in ("summary", "full"), "record must be summary or full")
    need("analysis.delta", int(v.get("analysis.delta", 1)) >= 1, "delta must be >= 1")
    if "field.q" in v:
        try:
            FieldSpec.parse(str(v["field.q"]))
        except ValidationError as exc:
            raise _Invalid("field.q", str(exc)) from None
    if "network.placement" in v:
        try:
            parse_placement(str(v["network.placement"]), int(v.get("network.n", 1)), int(v.get("network.k", 0)))
        except ValidationError as exc:
            raise _Invalid("network.placement", str(exc)) from None


def parse_config(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config_text(text, str(path))
