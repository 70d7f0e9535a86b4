"""Evaluation-set construction: LOB-P/LOB-C, LIF/LIF-D/LIF-T10, LGB, aux variants, M1-S."""
from __future__ import annotations

import dataclasses
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .chess import BoardState, Move, moves_to_san_text, parse_uci, push, to_fen
from .openings import OpeningDB, canonical_prefix, match_opening
from .prompts import (
    MetadataContext,
    PromptTemplate,
    aux_suffix,
    can_render,
    pick_template,
    render,
)
from .sampler import game_seed, sample_plies

log = logging.getLogger(__name__)

KINDS = ("LOB-P", "LOB-C", "LIF", "LIF-D", "LIF-T10", "LGB", "M1-S")
LGB_SHIFT = 500
# Paper-scale sizes, used only as default caps.
DEFAULT_SIZES = {"LOB-P": 31_169, "LOB-C": 32_736, "LIF": 25_000, "M1-S": 11_225}
RESULT_Z = {"1-0": 1, "0-1": -1, "1/2-1/2": 0}

LOB_TEMPLATES = {
    "white": PromptTemplate("lob-white", "instruct", (
        "In this chess game on Lichess, the player, controlling the {w_lit_lower_pieces}, opens with the "
        "{opening} by playing {opening_moves}.")),
    "black": PromptTemplate("lob-black", "instruct", (
        "In this chess game on Lichess, the player, controlling the {b_lit_lower_pieces}, opens with the "
        "{opening} by playing {opening_moves}.")),
    "white-name-only": PromptTemplate("lob-white-name", "instruct", (
        "In this chess game on Lichess, the player, controlling the {w_lit_lower_pieces}, opens with the "
        "{opening}.")),
    "black-name-only": PromptTemplate("lob-black-name", "instruct", (
        "In this chess game on Lichess, the player, controlling the {b_lit_lower_pieces}, opens with the "
        "{opening}.")),
}


@dataclass
class BenchmarkPosition:
    id: str
    kind: str
    game_id: str
    ply: int
    fen: str
    history: list  # UCI moves from the start position
    prompt: str
    target: str
    white_elo: Optional[int] = None
    black_elo: Optional[int] = None
    time_control: Optional[str] = None
    time_control_name: Optional[str] = None
    elo_shift: int = 0
    clock: Optional[float] = None  # active player's remaining seconds before the move
    aux: Optional[dict] = None

    def __post_init__(self):
        if self.ply != len(self.history):
            raise ValueError("ply index must equal history length")

    @property
    def active_elo(self) -> Optional[int]:
        return self.white_elo if self.ply % 2 == 0 else self.black_elo

    def to_row(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_row(cls, row: dict) -> "BenchmarkPosition":
        return cls(**row)


@dataclass(frozen=True)
class BenchmarkSpec:
    kind: str
    elo_range: Optional[tuple] = None
    months: Optional[tuple] = None  # ((year, month), ...)
    players: Optional[tuple] = None
    skip_plies: int = 0
    elo_shift: int = 0
    size_cap: Optional[int] = None
    plies_per_game: int = 1
    aux: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown benchmark kind {self.kind!r}")
        if self.elo_shift and self.kind != "LGB":
            raise ValueError("Elo shift applies only to LGB")

    @classmethod
    def lif_d(cls, months=None, **kw) -> "BenchmarkSpec":
        return cls("LIF-D", elo_range=(900, 1100), months=months, **kw)

    @classmethod
    def lgb(cls, **kw) -> "BenchmarkSpec":
        return cls("LGB", elo_shift=LGB_SHIFT, **kw)


@dataclass
class BuildStats:
    games: int = 0
    positions: int = 0
    skipped: Counter = field(default_factory=Counter)
    template_fallbacks: int = 0


def _game_id(rec) -> str:
    return rec.Site or f"offset-{rec.ByteOffsetStart}"


def _replay(rec) -> list:
    """States before each ply, plus the final state; every move is checked for legality."""
    states = [BoardState.start()]
    for u in rec.Moves:
        states.append(push(states[-1], parse_uci(states[-1], u)))
    return states


def _remaining_clock(rec, ply: int) -> Optional[float]:
    clocks = rec.Clocks or []
    if rec.TcDelay is None or len(clocks) < ply or any(c is None for c in clocks[:ply]):
        return None
    return float(rec.TcDelay) if ply < 2 else float(clocks[ply - 2])


def _position(rec, kind, ply, states, prompt, shift=0) -> BenchmarkPosition:
    return BenchmarkPosition(
        id=f"{kind}:{_game_id(rec)}:{ply}", kind=kind, game_id=_game_id(rec), ply=ply,
        fen=to_fen(states[ply]), history=list(rec.Moves[:ply]), prompt=prompt, target=rec.Moves[ply],
        white_elo=rec.WhiteElo, black_elo=rec.BlackElo, time_control=rec.TimeControl,
        time_control_name=rec.TimeControlName, elo_shift=shift, clock=_remaining_clock(rec, ply),
    )


def _cap(positions: list, cap: Optional[int]) -> list:
    return positions if cap is None else positions[:cap]


def build_lob(games: Iterable, db: OpeningDB, mode: str = "partial", stats: Optional[BuildStats] = None,
              threshold: int = 85, size_cap: Optional[int] = None) -> list:
    """Opening benchmark positions: every ply inside the canonical opening prefix.

    ``partial`` prompts carry the opening name and the moves played so far;
    ``canonical`` prompts carry the full canonical prefix.  The historical
    opening name from the PGN is kept in the prompt text.
    """
    if mode not in ("partial", "canonical"):
        raise ValueError(f"unknown LOB mode {mode!r}")
    kind = "LOB-P" if mode == "partial" else "LOB-C"
    stats = stats if stats is not None else BuildStats()
    out = []
    for rec in games:
        stats.games += 1
        match = match_opening(rec.ECO, rec.Opening or "", db, threshold) if rec.Opening else None
        if match is None:
            stats.skipped["unmatched_opening"] += 1
            continue
        prefix = canonical_prefix(match.entry, rec.Moves)
        if not prefix:
            stats.skipped["no_canonical_prefix"] += 1
            continue
        states = _replay(rec)
        start = BoardState.start()
        for ply in range(len(prefix)):
            side = "white" if ply % 2 == 0 else "black"
            shown = prefix if mode == "canonical" else rec.Moves[:ply]
            ctx = MetadataContext(opening=rec.Opening, side=side)
            if shown:
                ctx.opening_moves = moves_to_san_text(start, [Move.from_uci(u) for u in shown])
                template = LOB_TEMPLATES[side]
            else:
                template = LOB_TEMPLATES[f"{side}-name-only"]
            out.append(_position(rec, kind, ply, states, render(template, ctx)))
    stats.positions = len(out)
    return _cap(out, size_cap)


def _opening_moves_text(rec, db: Optional[OpeningDB]) -> Optional[str]:
    if db is None or not rec.Opening:
        return None
    match = match_opening(rec.ECO, rec.Opening, db)
    if match is None:
        return None
    prefix = canonical_prefix(match.entry, rec.Moves)
    if not prefix:
        return None
    return moves_to_san_text(BoardState.start(), [Move.from_uci(u) for u in prefix])


def _shifted(ctx: MetadataContext, shift: int) -> MetadataContext:
    if shift:
        ctx.white_elo = ctx.white_elo + shift
        ctx.black_elo = ctx.black_elo + shift
    return ctx


def _lif_game_ok(rec, spec: BenchmarkSpec) -> Optional[str]:
    if not rec.Moves:
        return "empty_game"
    if spec.elo_range is not None:
        lo, hi = spec.elo_range
        if rec.MeanElo is None or not lo <= rec.MeanElo <= hi:
            return "elo_window"
    if spec.months is not None and (rec.Year, rec.Month) not in {tuple(m) for m in spec.months}:
        return "month"
    if spec.players is not None and rec.White not in spec.players and rec.Black not in spec.players:
        return "player_list"
    if spec.kind == "LGB" and (rec.WhiteElo is None or rec.BlackElo is None):
        return "missing_rating"
    return None


def build_lif(games: Iterable, templates: Sequence[PromptTemplate], spec: BenchmarkSpec = BenchmarkSpec("LIF"),
              seed: int = 0, db: Optional[OpeningDB] = None, real_names: Optional[dict] = None,
              stats: Optional[BuildStats] = None) -> list:
    """Instruction-following positions: sampled plies with a per-game template.

    The template is drawn uniformly from those whose fields the game can
    fill; a game whose first-draw template would need a missing field is
    counted as a fallback.
    """
    stats = stats if stats is not None else BuildStats()
    out = []
    for rec in games:
        stats.games += 1
        reason = _lif_game_ok(rec, spec)
        if reason:
            stats.skipped[reason] += 1
            continue
        gid = _game_id(rec)
        rng = np.random.default_rng(game_seed(seed, gid))
        plies = range(len(rec.Moves))
        if spec.kind == "LIF-T10":
            plies = [p for p in plies if (rec.White if p % 2 == 0 else rec.Black) in spec.players]
        plies = [p for p in plies if p >= spec.skip_plies]
        if not plies:
            stats.skipped["no_eligible_ply"] += 1
            continue
        chosen = [plies[i] for i in sample_plies(len(plies), min(spec.plies_per_game, len(plies)), rng)]
        states = _replay(rec)
        opening_moves = _opening_moves_text(rec, db)
        for ply in chosen:
            side = "white" if ply % 2 == 0 else "black"
            ctx = _shifted(MetadataContext.from_record(rec, opening_moves, real_names, side, ply), spec.elo_shift)
            first = templates[int(rng.integers(len(templates)))]
            template = first
            if not can_render(first, ctx):
                stats.template_fallbacks += 1
                template = pick_template(templates, ctx, rng)
                log.debug("template %s lacks metadata for %s; fell back to %s", first.id, gid,
                          template.id if template else None)
            if template is None:
                stats.skipped["no_renderable_template"] += 1
                continue
            out.append(_position(rec, spec.kind, ply, states, render(template, ctx), spec.elo_shift))
    stats.positions = len(out)
    return _cap(out, spec.size_cap)


def build_lgb(games: Iterable, templates: Sequence[PromptTemplate], seed: int = 0, **kw) -> list:
    """LIF construction on over-the-board games with every prompt Elo shifted by +500."""
    return build_lif(games, templates, BenchmarkSpec.lgb(), seed, **kw)


def move_delay(rec, ply: int) -> Optional[float]:
    """Seconds the active player spent on move ``ply`` (clock before - clock after + increment)."""
    clocks = rec.Clocks or []
    if rec.TcDelay is None or rec.TcIncrement is None or ply >= len(clocks) or clocks[ply] is None:
        return None
    before = rec.TcDelay if ply < 2 else clocks[ply - 2]
    if before is None:
        return None
    return float(before - clocks[ply] + rec.TcIncrement)


def build_aux_variant(positions: Iterable[BenchmarkPosition], games_by_id: dict) -> list:
    out = []
    for p in positions:
        rec = games_by_id[p.game_id]
        ctx = MetadataContext.from_record(rec, ply=p.ply)
        ctx.side = "white" if p.ply % 2 == 0 else "black"
        q = dataclasses.replace(p, history=list(p.history))
        q.prompt = p.prompt + aux_suffix(ctx)
        q.aux = {
            "result": RESULT_Z.get(rec.Result),
            "plies_remaining": len(rec.Moves) - p.ply - 1,
            "termination": rec.TerminationReason,
            "move_delay": move_delay(rec, p.ply),
        }
        out.append(q)
    return out


def round_half_up(value: int, step: int = 100) -> int:
    return ((value + step // 2) // step) * step


def stratify_m1s(positions: Sequence[BenchmarkPosition], k: int = 1, seed: int = 0, on: str = "active") -> list:
    """Keep up to ``k`` seeded picks per (rounded Elo, time control) stratum, in input order."""
    strata: dict = {}
    for i, p in enumerate(positions):
        if on == "active":
            elo = p.active_elo
        elif on == "mean":
            elo = None if p.white_elo is None or p.black_elo is None else (p.white_elo + p.black_elo) // 2
        else:
            raise ValueError(f"unknown stratification Elo {on!r}")
        if elo is None:
            continue
        strata.setdefault((round_half_up(elo), p.time_control_name or ""), []).append(i)
    keep = []
    for key in sorted(strata):
        idx = strata[key]
        rng = np.random.default_rng(game_seed(seed, key))
        keep.extend(idx[j] for j in sample_plies(len(idx), min(k, len(idx)), rng))
    return [positions[i] for i in sorted(keep)]


def skip_first_plies(positions: Iterable[BenchmarkPosition], n: int = 10) -> list:
    return [p for p in positions if p.ply >= n]


def write_benchmark(path, positions: Iterable[BenchmarkPosition]) -> int:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    n = 0
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for p in positions:
            fh.write(json.dumps(p.to_row(), ensure_ascii=False, separators=(",", ":")) + "\n")
            n += 1
    tmp.replace(path)
    return n


def read_benchmark(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [BenchmarkPosition.from_row(json.loads(line)) for line in fh if line.strip()]


def validate_positions(positions: Iterable[BenchmarkPosition]) -> None:
    """Raise if a target is illegal at its FEN or an aux target is out of range."""
    from .chess import TerminationKind, parse_fen

    kinds = {k.value for k in TerminationKind}
    for p in positions:
        parse_uci(parse_fen(p.fen), p.target)
        if p.aux:
            if p.aux["plies_remaining"] < 0:
                raise ValueError(f"{p.id}: negative plies_remaining")
            if p.aux["result"] not in (-1, 0, 1, None):
                raise ValueError(f"{p.id}: bad result target")
            if p.aux["termination"] is not None and p.aux["termination"] not in kinds:
                raise ValueError(f"{p.id}: unknown termination kind {p.aux['termination']!r}")
