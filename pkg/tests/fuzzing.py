"""Seeded scenario generators shared by the fuzz and acceptance tests."""

from __future__ import annotations

import random
from dataclasses import replace

from distlist.scenarios import ScenarioConfig, parse_script


def _moves_and_splits(r: random.Random, sublists: int, servers: int, count: int) -> list[str]:
    out = []
    for _ in range(count):
        tick = r.randint(1, 60)
        if r.random() < 2 / 3:
            out.append(f"{tick} move {r.randint(0, sublists)} {r.randint(0, servers - 1)}")
        else:
            out.append(f"{tick} split {r.randint(0, sublists)}")
    return out


def unordered_config(seed: int) -> ScenarioConfig:
    """Three servers, splits, moves (with Switch) and an occasional delink pass."""
    r = random.Random(seed)
    script = _moves_and_splits(r, 3, 3, r.randint(1, 4))
    if r.random() < 0.3:
        script.append(f"{r.randint(30, 90)} delink -")
    return replace(
        ScenarioConfig(),
        name=f"fuzz-unordered-{seed}",
        protocol=r.choice(["am", "tr"]),
        seed=seed,
        servers=3,
        clients=4,
        steps=12,
        theta=300,
        requestTimeout=100,
        layout=[(0, 4), (1, 3), (2, 2)],
        keySpace=6,
        netDelay=(1, r.randint(1, 10)),
        moveBatch=r.randint(1, 3),
        splitThreshold=r.choice([4, 64]),
        opMix={"insert": 3, "delete": 2, "lookup": 4, "next": 1},
        script=parse_script(";".join(script)),
        linTrials=0,
    )


def sorted_config(seed: int) -> ScenarioConfig:
    r = random.Random(seed)
    script = _moves_and_splits(r, 3, 3, r.randint(1, 4))
    return replace(
        ScenarioConfig(),
        name=f"fuzz-sorted-{seed}",
        protocol=r.choice(["am", "tr"]),
        variant="sorted",
        seed=seed,
        servers=3,
        clients=4,
        steps=12,
        theta=300,
        requestTimeout=100,
        layout=[(0, 4), (1, 3), (2, 2)],
        keySpace=30,
        netDelay=(1, r.randint(1, 10)),
        moveBatch=r.randint(1, 3),
        splitThreshold=r.choice([4, 64]),
        opMix={"insert": 4, "delete": 2, "lookup": 3},
        script=parse_script(";".join(script)),
        linTrials=0,
    )


def tr_hot_config(seed: int) -> ScenarioConfig:
    """TR Move of a busy sublist under adversarial reordering."""
    r = random.Random(seed)
    return replace(
        ScenarioConfig(),
        name=f"fuzz-tr-{seed}",
        protocol="tr",
        seed=seed,
        servers=2,
        clients=4,
        steps=25,
        think=(1, 2),
        theta=300,
        requestTimeout=100,
        layout=[(0, r.randint(0, 8)), (1, 3)],
        keySpace=8,
        netDelay=(1, r.randint(2, 12)),
        reorder=True,
        moveBatch=r.randint(1, 3),
        opMix={"insert": 5, "delete": 3, "lookup": 1, "next": 1},
        script=parse_script(f"{r.randint(3, 20)} move 0 1"),
        linTrials=0,
    )


def am_hot_config(seed: int) -> ScenarioConfig:
    """AM Move of a sublist that keeps receiving writes for a while."""
    r = random.Random(seed)
    return replace(
        ScenarioConfig(),
        name=f"fuzz-am-{seed}",
        protocol="am",
        seed=seed,
        servers=2,
        clients=4,
        steps=r.randint(20, 50),
        think=(1, 2),
        theta=300,
        requestTimeout=100,
        layout=[(0, r.randint(2, 8)), (1, 3)],
        keySpace=8,
        netDelay=(1, r.randint(1, 4)),
        opMix={"insert": 5, "delete": 3, "lookup": 1, "next": 1},
        script=parse_script(f"{r.randint(3, 20)} move 0 1"),
        linTrials=0,
    )
