"""Unimax budget allocation across Elo / time-control groups and per-game ply sampling."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class GroupSpec:
    key: Hashable
    size: int

    def __post_init__(self):
        if self.size < 0:
            raise ValueError(f"group {self.key!r} has negative size")


def _key_order(key) -> tuple:
    # mixed key types must still sort deterministically
    return (type(key).__name__, key) if not isinstance(key, tuple) else ("tuple", tuple(map(str, key)))


def group_capacity(size: int, epoch_cap: float = 1.0) -> int:
    return int(math.floor(Fraction(epoch_cap).limit_denominator(10**9) * size))


def unimax_allocate(groups: Sequence[GroupSpec], budget: int, epoch_cap: float = 1.0) -> dict:
    """Near-uniform integer allocation subject to ``count <= floor(epoch_cap * size)``.

    Waterfilling on exact rationals: groups whose cap is at or below the
    current fair share are saturated and removed, the rest split what is
    left.  The common fractional share is floored and the leftover units go
    one each to the unsaturated groups with the largest capacity (ties by
    key).
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    groups = list(groups)
    if not groups:
        if budget > 0:
            raise ValueError("cannot allocate a positive budget over zero groups")
        return {}
    if len({g.key for g in groups}) != len(groups):
        raise ValueError("group keys must be unique")
    caps = {g.key: group_capacity(g.size, epoch_cap) for g in groups}
    alloc = {g.key: 0 for g in groups}
    total_cap = sum(caps.values())
    if budget >= total_cap:
        return dict(caps)

    open_keys = set(caps)
    remaining = Fraction(budget)
    while True:
        share = remaining / len(open_keys)
        saturated = [k for k in open_keys if caps[k] <= share]
        if not saturated:
            break
        for k in saturated:
            alloc[k] = caps[k]
            remaining -= caps[k]
            open_keys.discard(k)
    level = math.floor(share)
    for k in open_keys:
        alloc[k] = level
    leftover = budget - sum(alloc.values())
    order = sorted(open_keys, key=lambda k: (-caps[k], _key_order(k)))
    for k in order[:leftover]:
        alloc[k] += 1
    return alloc


def two_stage_allocate(nested: Mapping, budget: int, epoch_cap: float = 1.0) -> dict:
    """Unimax over outer groups, then again inside each outer group.

    ``nested`` maps an outer key to ``{inner_key: size}``.  Returns
    ``{outer: {inner: count}}``.
    """
    outer = [GroupSpec(k, sum(v.values())) for k, v in nested.items()]
    # the outer capacity is the sum of the inner capacities
    outer_caps = {k: sum(group_capacity(s, epoch_cap) for s in v.values()) for k, v in nested.items()}
    first = unimax_allocate([GroupSpec(g.key, outer_caps[g.key]) for g in outer], budget, 1.0)
    out = {}
    for key, inner in nested.items():
        out[key] = unimax_allocate([GroupSpec(k, s) for k, s in inner.items()], first[key], epoch_cap)
    return out


def largest_remainder(weights: Sequence[int], budget: int) -> list:
    total = sum(weights)
    if total == 0 or budget == 0:
        return [0] * len(weights)
    budget = min(budget, total)
    quotas = [Fraction(budget * w, total) for w in weights]
    base = [math.floor(q) for q in quotas]
    leftover = budget - sum(base)
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - base[i]), -weights[i], i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def allocate_ply_budget(games: Sequence[tuple], budget: int, mode: str = "proportional") -> dict:
    """Per-game ply counts from ``(game_id, length)`` pairs."""
    ids = [g for g, _ in games]
    lengths = [int(n) for _, n in games]
    if any(n < 0 for n in lengths):
        raise ValueError("game lengths must be >= 0")
    if mode == "proportional":
        return dict(zip(ids, largest_remainder(lengths, budget)))
    if mode == "unimax":
        if not games:
            return {}
        return unimax_allocate([GroupSpec(g, n) for g, n in zip(ids, lengths)], budget)
    raise ValueError(f"unknown mode {mode!r}")


def sample_plies(game_length: int, count: int, rng: np.random.Generator) -> list:
    if count > game_length:
        raise ValueError(f"cannot sample {count} plies from a {game_length}-ply game")
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == game_length:
        return list(range(game_length))
    return sorted(int(i) for i in rng.choice(game_length, size=count, replace=False))


def game_seed(master_seed: int, game_id) -> int:
    """Stable per-game seed, independent of processing order."""
    h = hashlib.blake2b(f"{master_seed}:{game_id}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def sample_game_plies(allocation: Mapping, lengths: Mapping, master_seed: int) -> dict:
    return {
        gid: sample_plies(lengths[gid], n, np.random.default_rng(game_seed(master_seed, gid)))
        for gid, n in allocation.items()
    }


def allocation_report(groups: Sequence[GroupSpec], alloc: Mapping, epoch_cap: float = 1.0) -> str:
    lines = ["group\tsize\tallocated\tsaturated"]
    for g in groups:
        n = alloc.get(g.key, 0)
        lines.append(f"{g.key}\t{g.size}\t{n}\t{'yes' if n >= group_capacity(g.size, epoch_cap) else 'no'}")
    return "\n".join(lines) + "\n"


def uniformity_pvalue(samples: Sequence[int], length: int) -> float:
    """Chi-square goodness-of-fit p-value of ply indices against uniform."""
    from scipy.stats import chisquare

    counts = np.bincount(np.asarray(samples), minlength=length)
    return float(chisquare(counts).pvalue)


def elo_tc_groups(records, elo_field: str = "MeanElo", unit: str = "plies") -> dict:
    """``{elo_bin: {time_control_name: size}}`` from Stage 2 records."""
    out: dict = {}
    for r in records:
        elo = getattr(r, elo_field)
        if elo is None:
            continue
        b = (elo // 100) * 100
        tc = r.TimeControlName or "Unknown"
        size = r.Length if unit == "plies" else 1
        out.setdefault(b, {}).setdefault(tc, 0)
        out[b][tc] += size
    return out


def draw_samples(records, budget: int, seed: int, epoch_cap: float = 1.0,
                 ply_mode: str = "proportional", min_ply: int = 0,
                 unit: str = "plies") -> list:
    """Two-stage Unimax over (Elo bin, time control), then uniform plies per game.

    Returns ``[(game_index, ply), ...]`` sorted.  With ``unit="games"`` the
    group budgets count games and every ply of a selected game is eligible;
    otherwise budgets count plies.
    """
    records = list(records)
    by_group: dict = {}
    for i, r in enumerate(records):
        if r.MeanElo is None:
            continue
        by_group.setdefault(((r.MeanElo // 100) * 100, r.TimeControlName or "Unknown"), []).append(i)
    eligible = {i: max(0, (records[i].Length or 0) - min_ply) for ii in by_group.values() for i in ii}
    nested: dict = {}
    for (b, tc), idx in by_group.items():
        nested.setdefault(b, {})[tc] = len(idx) if unit == "games" else sum(eligible[i] for i in idx)
    alloc = two_stage_allocate(nested, budget, epoch_cap)
    picks = []
    for (b, tc), idx in sorted(by_group.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
        n = alloc[b][tc]
        if n == 0:
            continue
        if unit == "games":
            rng = np.random.default_rng(game_seed(seed, f"{b}/{tc}"))
            chosen = sorted(rng.choice(len(idx), size=n, replace=False))
            for j in chosen:
                gi = idx[int(j)]
                picks.extend((gi, min_ply + p) for p in range(eligible[gi]))
            continue
        per_game = allocate_ply_budget([(i, eligible[i]) for i in idx], n, ply_mode)
        for gi, k in per_game.items():
            rng = np.random.default_rng(game_seed(seed, records[gi].Site or gi))
            picks.extend((gi, min_ply + p) for p in sample_plies(eligible[gi], k, rng))
    return sorted(picks)
