"""Scenario configuration, the built-in scenario bank and run reports.

Config files are flat ``key = value`` text (``#`` starts a comment)::

    protocol = tr
    servers = 3
    opMix = insert:4, delete:2, lookup:2, next:2
    netDelay = 1,6
    layout = 0:6, 0:4, 1:4
    script = 20 move 0 1; 80 split 1
"""

from __future__ import annotations

import random
import statistics
from collections import Counter
from dataclasses import dataclass, field, fields, replace
from typing import Any

from .client import Workload
from .cluster import Cluster
from .core import SUBHEAD
from .interleave import random_trial
from .verify import check_counter_invariant, check_linearizable, check_lookup_property

SUITES = ("lin", "lookup", "replay", "counters")


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


@dataclass
class Directive:
    tick: int
    op: str  # move | split | delink
    args: tuple

    def __str__(self) -> str:
        return " ".join([str(self.tick), self.op, *("-" if a is None else str(a) for a in self.args)])


@dataclass
class ScenarioConfig:
    protocol: str = "am"
    variant: str = "unordered"
    servers: int = 2
    clients: int = 2
    seed: int = 0
    opMix: dict = field(default_factory=lambda: {"insert": 4, "delete": 2, "lookup": 2, "next": 2})
    steps: int = 30
    theta: int = 1000
    splitThreshold: int = 64
    moveBatch: int = 1
    script: list = field(default_factory=list)
    netDelay: tuple = (1, 3)
    reorder: bool = True
    # extensions beyond the core field set
    requestTimeout: int = 200
    layout: list = field(default_factory=lambda: [(0, 6), (0, 4)])
    keySpace: int = 1000
    think: tuple = (1, 4)
    clientStart: int = 0
    maxTicks: int = 200_000
    linTrials: int = 200
    name: str = "custom"

    def validate(self) -> "ScenarioConfig":
        if self.protocol not in ("am", "tr"):
            raise ConfigError("protocol must be am or tr")
        if self.variant not in ("unordered", "sorted"):
            raise ConfigError("variant must be unordered or sorted")
        if self.servers < 1 or self.clients < 0 or self.steps < 0:
            raise ConfigError("servers must be >= 1; clients and steps >= 0")
        if self.theta <= self.requestTimeout:
            raise ConfigError("theta must exceed requestTimeout")
        lo, hi = self.netDelay
        if not 1 <= lo <= hi <= self.requestTimeout:
            raise ConfigError("netDelay must satisfy 1 <= min <= max <= requestTimeout")
        if self.moveBatch < 1 or self.splitThreshold < 2:
            raise ConfigError("moveBatch must be >= 1 and splitThreshold >= 2")
        for sid, _ in self.layout:
            if not 0 <= sid < self.servers:
                raise ConfigError(f"layout names unknown server {sid}")
        for d in self.script:
            if d.op not in ("move", "split", "delink"):
                raise ConfigError(f"unknown directive {d.op!r}")
            if d.op == "move" and not 0 <= d.args[1] < self.servers:
                raise ConfigError(f"move target {d.args[1]} out of range")
        if sum(self.opMix.values()) <= 0:
            raise ConfigError("opMix needs a positive weight")
        return self


def _pairs(text: str) -> list[tuple[str, str]]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if part:
            a, _, b = part.partition(":")
            out.append((a.strip(), b.strip()))
    return out


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def parse_script(text: str) -> list[Directive]:
    out = []
    for part in text.split(";"):
        words = part.split()
        if not words:
            continue
        if len(words) < 2:
            raise ConfigError(f"bad directive {part!r}")
        tick, op = int(words[0]), words[1].lower()
        args = tuple(None if w == "-" else int(w) for w in words[2:])
        if op == "move" and len(args) != 2:
            raise ConfigError("move needs <sublist index> <target server>")
        if op == "split" and len(args) not in (1, 2):
            raise ConfigError("split needs <sublist index> [position]")
        out.append(Directive(tick, op, args))
    return sorted(out, key=lambda d: d.tick)


_PARSERS = {
    "protocol": str.strip,
    "variant": str.strip,
    "name": str.strip,
    "opMix": lambda v: {k: float(w) for k, w in _pairs(v)},
    "script": parse_script,
    "netDelay": lambda v: tuple(int(x) for x in v.split(",")),
    "think": lambda v: tuple(int(x) for x in v.split(",")),
    "reorder": _bool,
    "layout": lambda v: [(int(a), int(b)) for a, b in _pairs(v)],
}


def apply_settings(cfg: ScenarioConfig, settings: dict[str, str]) -> ScenarioConfig:
    known = {f.name for f in fields(ScenarioConfig)}
    changes: dict[str, Any] = {}
    for key, raw in settings.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            changes[key] = _PARSERS.get(key, int)(raw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return replace(cfg, **changes)


def parse_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    settings = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, _, v = line.partition("=")
        settings[k.strip()] = v.strip()
    return apply_settings(base or ScenarioConfig(), settings).validate()


def dump_config(cfg: ScenarioConfig) -> str:
    def fmt(name: str, v: Any) -> str:
        if name == "opMix":
            return ", ".join(f"{k}:{w:g}" for k, w in v.items())
        if name == "script":
            return "; ".join(map(str, v))
        if name in ("netDelay", "think"):
            return ",".join(map(str, v))
        if name == "layout":
            return ", ".join(f"{a}:{b}" for a, b in v)
        if isinstance(v, bool):
            return "true" if v else "false"
        return str(v)

    return "".join(f"{f.name} = {fmt(f.name, getattr(cfg, f.name))}\n" for f in fields(cfg))


BANK: dict[str, str] = {
    "quiescent-move": """
        protocol = am
        clients = 2
        steps = 15
        layout = 0:8, 0:4
        script = 600 move 0 1
    """,
    "hot-move": """
        protocol = am
        clients = 4
        steps = 60
        think = 1,2
        opMix = insert:5, delete:3, lookup:1, next:1
        layout = 0:6, 1:4
        script = 15 move 0 1
    """,
    "split-storm": """
        protocol = am
        servers = 3
        clients = 3
        steps = 50
        splitThreshold = 8
        opMix = insert:6, delete:1, lookup:2, next:1
        layout = 0:10, 1:4
        script = 30 split 0; 60 move 0 2; 120 split 1; 200 move 1 1; 300 delink -
    """,
    "reorder-adversary": """
        protocol = tr
        clients = 4
        steps = 50
        netDelay = 1,12
        reorder = true
        opMix = insert:5, delete:3, lookup:1, next:1
        layout = 0:8, 1:4
        script = 10 move 0 1
    """,
    "sorted-mixed": """
        protocol = am
        variant = sorted
        servers = 3
        clients = 3
        steps = 50
        splitThreshold = 12
        keySpace = 200
        opMix = insert:5, delete:2, lookup:3
        layout = 0:8, 1:8
        script = 40 split 0; 90 move 0 2; 200 move 1 0
    """,
}


def load_scenario(name: str) -> ScenarioConfig:
    if name not in BANK:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(BANK)}")
    return replace(parse_config(BANK[name]), name=name)


# running


def _sorted_layout(cfg: ScenarioConfig, rng: random.Random):
    """Disjoint ascending key blocks with matching (min, max] ranges."""
    n = len(cfg.layout)
    bounds = [cfg.keySpace * (i + 1) // n for i in range(n - 1)]
    layout, ranges = [], []
    for i, (sid, count) in enumerate(cfg.layout):
        lo = None if i == 0 else bounds[i - 1]
        hi = None if i == n - 1 else bounds[i]
        lo_k = 0 if lo is None else lo + 1
        hi_k = cfg.keySpace - 1 if hi is None else hi
        keys = sorted(rng.sample(range(lo_k, hi_k + 1), min(count, hi_k - lo_k + 1)))
        layout.append((sid, keys))
        ranges.append((lo, hi))
    return layout, ranges


def build(cfg: ScenarioConfig, record_commits: bool = True) -> Cluster:
    cfg.validate()
    cluster = Cluster(
        cfg.protocol,
        servers=cfg.servers,
        seed=cfg.seed,
        theta=cfg.theta,
        request_timeout=cfg.requestTimeout,
        net_delay=tuple(cfg.netDelay),
        reorder=cfg.reorder,
        move_batch=cfg.moveBatch,
        record_commits=record_commits,
        max_ticks=cfg.maxTicks,
    )
    rng = random.Random(f"layout/{cfg.seed}")
    if cfg.variant == "sorted":
        layout, ranges = _sorted_layout(cfg, rng)
        cluster.bootstrap(layout, ranges)
    else:
        cluster.bootstrap([(sid, [rng.randrange(cfg.keySpace) for _ in range(n)]) for sid, n in cfg.layout])
    mix = dict(cfg.opMix)
    if cfg.variant == "sorted":
        mix = {("search" if k in ("lookup", "next") else k): w for k, w in mix.items()}
        merged: dict[str, float] = {}
        for k, w in mix.items():
            merged[k] = merged.get(k, 0) + w
        mix = merged
    for _ in range(cfg.clients):
        cluster.add_client(
            Workload(
                steps=cfg.steps,
                mix=mix,
                think=tuple(cfg.think),
                key_space=cfg.keySpace,
                start=cfg.clientStart,
                sorted=cfg.variant == "sorted",
            )
        )
    for d in cfg.script:
        cluster.schedule(d.tick, d.op, *d.args)
    if cfg.clients:
        cluster.start_auto_split(cfg.splitThreshold)
    return cluster


@dataclass
class Outcome:
    config: ScenarioConfig
    cluster: Cluster
    observations: dict
    report: dict
    verdicts: dict[str, dict]

    @property
    def ok(self) -> bool:
        return all(v["ok"] for v in self.verdicts.values())


def trace_header(cfg: ScenarioConfig) -> str:
    return f"scenario={cfg.name} protocol={cfg.protocol} variant={cfg.variant} seed={cfg.seed}"


def run_config(cfg: ScenarioConfig, suites: tuple[str, ...] = SUITES) -> Outcome:
    cluster = build(cfg)
    cluster.run()
    obs = observations(cluster, cfg)
    verdicts = run_suites(cfg, cluster.history, obs, suites)
    return Outcome(cfg, cluster, obs, make_report(cfg, cluster, verdicts), verdicts)


def observations(cluster: Cluster, cfg: ScenarioConfig) -> dict:
    """Everything the suites judge, in JSON-friendly form (kept with traces)."""
    return {
        "violations": [list(v) for v in cluster.violations],
        "moves": [
            {"subhead": str(m.subhead), "sealed": m.sealed, "match": m.match, "oracle_match": m.oracle_match,
             "attempts": m.attempts, "aborts": m.aborts, "residue_clean": m.residue_clean}
            for m in cluster.moves
        ],
        "counter_checkpoints": cluster.checks["counter_checkpoints"],
        "split_offsets": [list(x) for x in cluster.split_offsets],
        "final_counters": {str(srv.sid): _counter_status(srv) for srv in cluster.servers},
        "sorted_problems": sorted_problems(cluster) if cfg.variant == "sorted" else [],
    }


def _counter_status(server) -> str:
    v = check_counter_invariant(server)
    return "ok" if v.ok else v.message


def run_suites(cfg: ScenarioConfig, history, obs: dict, suites: tuple[str, ...] = SUITES) -> dict[str, dict]:
    unknown = set(suites) - set(SUITE_FUNCS)
    if unknown:
        raise ConfigError(f"unknown verify suites {sorted(unknown)}")
    return {s: SUITE_FUNCS[s](cfg, history, obs) for s in suites}


# verify suites


def _verdict(ok: bool, detail: str, **extra) -> dict:
    return {"ok": bool(ok), "detail": detail, **extra}


def suite_lin(cfg: ScenarioConfig, history, obs: dict) -> dict:
    bad = []
    for i in range(cfg.linTrials):
        t = random_trial(cfg.seed * 100_003 + i)
        if not check_linearizable(t.history, t.initial).ok:
            bad.append(t.seed)
    problems = obs["sorted_problems"]
    return _verdict(
        not bad and not problems,
        f"{cfg.linTrials} core histories, {len(bad)} violations",
        failing_seeds=bad[:10],
        sorted_problems=problems,
    )


def suite_lookup(cfg: ScenarioConfig, history, obs: dict) -> dict:
    if cfg.variant == "sorted":
        return _verdict(True, "not applicable to the sorted variant")
    v = check_lookup_property(history)
    return _verdict(v.ok, v.message, checked=v.checked)


def suite_replay(cfg: ScenarioConfig, history, obs: dict) -> dict:
    errs = [m for s, m in obs["violations"] if s == "replay"]
    moves = obs["moves"]
    unfinished = [m["subhead"] for m in moves if m["sealed"] is None]
    ok = not errs and not unfinished and all(m["match"] and m["oracle_match"] is not False for m in moves)
    return _verdict(ok, f"{len(moves)} moves, {len(errs)} violations", violations=errs[:10], unfinished=unfinished)


def suite_counters(cfg: ScenarioConfig, history, obs: dict) -> dict:
    errs = [m for s, m in obs["violations"] if s == "counters"]
    errs += [f"server {sid}: {msg}" for sid, msg in obs["final_counters"].items() if msg != "ok"]
    errs += [f"split {a1}+{a2} != {old}" for old, a1, a2 in obs["split_offsets"] if a1 + a2 != old]
    return _verdict(
        not errs,
        f"{obs['counter_checkpoints']} checkpoints, {len(obs['split_offsets'])} splits",
        violations=errs[:10],
    )


SUITE_FUNCS = {"lin": suite_lin, "lookup": suite_lookup, "replay": suite_replay, "counters": suite_counters}


def sorted_problems(cluster: Cluster) -> list[str]:
    """Duplicate keys, order breaks and registry/brute-force routing mismatches."""
    seq = [k for k, _, _ in cluster.global_sequence()]
    out = []
    if len(set(seq)) != len(seq):
        dup = sorted(k for k, n in Counter(seq).items() if n > 1)
        out.append(f"duplicate keys {dup[:5]}")
    if seq != sorted(seq):
        out.append("global order is not sorted")
    for k in sorted(set(seq)):
        if route_owner(cluster, k) != brute_owner(cluster, k):
            out.append(f"routing mismatch for {k}")
            break
    return out


def route_owner(cluster: Cluster, key):
    """SubHead of the first covering registry entry across servers, if any."""
    for srv in cluster.servers:
        entry, _ = srv.route(key)
        if entry is not None and not entry.retired:
            return entry.subhead
    return None


def brute_owner(cluster: Cluster, key):
    """SubHead of the sublist physically holding a live ``key``, by full scan."""
    owner = None
    ref = cluster.node(cluster.head_ref).next.load()
    while ref != cluster.tail_ref:
        n = cluster.node(ref)
        if n.key is SUBHEAD:
            owner = ref
        elif not n.is_sentinel and n.key == key and not n.status.load().deleted:
            return owner
        ref = n.next.load()
    return None


# report


def _latencies(cluster: Cluster) -> dict:
    per: dict[str, list[int]] = {}
    for o in cluster.history.ops():
        if o.complete:
            per.setdefault(o.name, []).append(o.respond_tick - o.invoke_tick)
    return {
        name: {"count": len(v), "mean": round(statistics.fmean(v), 3), "max": max(v)}
        for name, v in sorted(per.items())
    }


def make_report(cfg: ScenarioConfig, cluster: Cluster, verdicts: dict) -> dict:
    stats = cluster.stats()
    ops = Counter(o.name for o in cluster.history.ops())
    clients: Counter = Counter()
    for c in cluster.clients:
        clients.update(c.stats)
    return {
        "schema": "distlist-report/1",
        "scenario": cfg.name,
        "protocol": cfg.protocol,
        "variant": cfg.variant,
        "seed": cfg.seed,
        "ticks": cluster.sim.now,
        "ops": dict(sorted(ops.items())),
        "latency_ticks": _latencies(cluster),
        "delegations": stats["delegations"],
        "move_attempts": stats["move_attempts"],
        "move_aborts": stats["move_aborts"],
        "replicates": stats["replicates"],
        "replays_acked": stats["replays_acked"],
        "compensations": stats["compensations"],
        "splits": stats["splits"],
        "served_after_retire": stats["served_after_retire"],
        "stale_hits": sum(s.arena.stale_hits for s in cluster.servers),
        "messages": {"sent": cluster.sim.sent, "delivered": cluster.sim.delivered},
        "moves": [
            {
                "source": m.source,
                "target": m.target,
                "attempts": m.attempts,
                "aborts": m.aborts,
                "started": m.started,
                "sealed": m.sealed,
                "switch": m.switch_req,
                "reclaimed": m.reclaimed,
                "size": m.size,
            }
            for m in cluster.moves
        ],
        "client": dict(sorted(clients.items())),
        "server": dict(sorted(stats.items())),
        "verdicts": verdicts,
        "ok": all(v["ok"] for v in verdicts.values()),
    }
