"""Rule-based game outcomes merged with PGN termination metadata."""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from .board import BLACK, WHITE, BoardState, legal_moves, repetition_key, square_file, square_rank


class TerminationKind(str, enum.Enum):
    CHECKMATE = "Checkmate"
    STALEMATE = "Stalemate"
    INSUFFICIENT_MATERIAL = "Insufficient material"
    THREEFOLD_REPETITION = "Threefold repetition"
    FIVEFOLD_REPETITION = "Fivefold repetition"
    FIFTY_MOVES = "Fifty moves"
    SEVENTY_FIVE_MOVES = "Seventy-five moves"
    RESIGNATION = "Resigned"
    TIME_FORFEIT = "Time forfeit"
    DRAW_AGREEMENT = "Draw by agreement"
    ABANDONED = "Abandoned"
    RULES_INFRACTION = "Rules infraction"
    OTHER = "Other"


# automatic draws that need no claim
FORCED_DRAWS = frozenset({
    TerminationKind.STALEMATE,
    TerminationKind.INSUFFICIENT_MATERIAL,
    TerminationKind.FIVEFOLD_REPETITION,
    TerminationKind.SEVENTY_FIVE_MOVES,
})

_DRAW_KINDS = FORCED_DRAWS | {
    TerminationKind.THREEFOLD_REPETITION,
    TerminationKind.FIFTY_MOVES,
    TerminationKind.DRAW_AGREEMENT,
}
_WIN_KINDS = frozenset({TerminationKind.CHECKMATE, TerminationKind.RESIGNATION})


@dataclass(frozen=True)
class TerminationOutcome:
    kind: TerminationKind
    winner: Optional[bool] = None
    flags: tuple = ()

    def __post_init__(self):
        if self.kind in _WIN_KINDS and self.winner is None:
            raise ValueError(f"{self.kind.value} requires a winner")
        if self.kind in _DRAW_KINDS and self.winner is not None:
            raise ValueError(f"{self.kind.value} cannot have a winner")

    @property
    def decisive(self) -> bool:
        return self.winner is not None


def result_winner(result: Optional[str]) -> tuple:
    """Map a PGN result tag to ``(finished, winner)``."""
    if result == "1-0":
        return True, WHITE
    if result == "0-1":
        return True, BLACK
    if result in ("1/2-1/2", "½-½"):
        return True, None
    return False, None


def is_insufficient_material(state: BoardState) -> bool:
    """Dead positions reachable without claims: K v K, K+minor v K, same-colour bishops."""
    minors = []
    for sq, p in enumerate(state.board):
        if p is None or p in "Kk":
            continue
        if p in "PpRrQq":
            return False
        minors.append((p, sq))
    if len(minors) <= 1:
        return True
    if all(p in "Bb" for p, _ in minors):
        colours = {(square_file(sq) + square_rank(sq)) % 2 for _, sq in minors}
        return len(colours) == 1
    return False


def repetition_count(history: Sequence[BoardState], state: Optional[BoardState] = None) -> int:
    """How often ``state`` (default: last of ``history``) occurs in ``history``."""
    if not history:
        return 0
    target = repetition_key(state if state is not None else history[-1])
    return sum(1 for s in history if repetition_key(s) == target)


def max_repetition(history: Sequence[BoardState]) -> int:
    if not history:
        return 0
    return max(Counter(repetition_key(s) for s in history).values())


def rule_outcome(final_state: BoardState, history: Sequence[BoardState] = ()) -> Optional[TerminationOutcome]:
    """Outcome implied purely by the rules, or ``None`` if the game could go on.

    ``history`` is the full sequence of positions in game order (including
    the final one).  Claimable draws (threefold, fifty moves) are reported
    since the game record shows they were reachable.
    """
    if not legal_moves(final_state):
        if final_state.is_check():
            return TerminationOutcome(TerminationKind.CHECKMATE, winner=not final_state.turn)
        return TerminationOutcome(TerminationKind.STALEMATE)
    if is_insufficient_material(final_state):
        return TerminationOutcome(TerminationKind.INSUFFICIENT_MATERIAL)
    reps = repetition_count(history, final_state) if history else 1
    if reps >= 5:
        return TerminationOutcome(TerminationKind.FIVEFOLD_REPETITION)
    if final_state.halfmove_clock >= 150:
        return TerminationOutcome(TerminationKind.SEVENTY_FIVE_MOVES)
    if reps >= 3:
        return TerminationOutcome(TerminationKind.THREEFOLD_REPETITION)
    if final_state.halfmove_clock >= 100:
        return TerminationOutcome(TerminationKind.FIFTY_MOVES)
    return None


_COMMENT_HINTS = (
    ("resign", TerminationKind.RESIGNATION),
    ("time", TerminationKind.TIME_FORFEIT),
    ("agree", TerminationKind.DRAW_AGREEMENT),
    ("abandon", TerminationKind.ABANDONED),
)


def detect_termination(
    final_state: BoardState,
    history: Sequence[BoardState] = (),
    last_pgn_comment: Optional[str] = None,
    result_tag: Optional[str] = None,
    termination_header: Optional[str] = None,
) -> TerminationOutcome:
    """Combine the rule outcome with PGN metadata into a single label.

    Precedence: automatic rule outcomes (mate, forced draws) first, then the
    ``Termination`` header (time forfeit, abandoned, rules infraction), then
    claimable draws on drawn games, then hints in the final comment, then the
    result tag (decisive ``Normal`` games are resignations, drawn ones are
    agreements).  Disagreement between board and result tag is recorded in
    ``flags`` instead of raising.
    """
    finished, winner = result_winner(result_tag)
    header = (termination_header or "").strip().lower()
    rule = rule_outcome(final_state, history)
    flags = []

    if rule is not None and (rule.kind == TerminationKind.CHECKMATE or rule.kind in FORCED_DRAWS):
        if finished and winner != rule.winner:
            flags.append("result_mismatch")
        return TerminationOutcome(rule.kind, rule.winner, tuple(flags))

    if header in ("time forfeit", "time_forfeit"):
        return TerminationOutcome(TerminationKind.TIME_FORFEIT, winner)
    if header == "abandoned":
        return TerminationOutcome(TerminationKind.ABANDONED, winner)
    if header == "rules infraction":
        return TerminationOutcome(TerminationKind.RULES_INFRACTION, winner)

    if rule is not None and finished and winner is None:
        return TerminationOutcome(rule.kind)

    comment = (last_pgn_comment or "").lower()
    for needle, kind in _COMMENT_HINTS:
        if needle in comment:
            if kind == TerminationKind.RESIGNATION and winner is None:
                continue
            if kind == TerminationKind.DRAW_AGREEMENT and winner is not None:
                continue
            return TerminationOutcome(kind, winner)

    if finished:
        if winner is None:
            return TerminationOutcome(TerminationKind.DRAW_AGREEMENT)
        return TerminationOutcome(TerminationKind.RESIGNATION, winner)
    return TerminationOutcome(TerminationKind.OTHER, None, ("unfinished",))
