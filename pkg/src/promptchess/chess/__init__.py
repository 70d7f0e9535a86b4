"""Standard chess rules: board state, move generation, notation, outcomes."""
import numpy as np

from .board import (
    BLACK,
    STARTING_FEN,
    WHITE,
    BoardState,
    FenError,
    IllegalMoveError,
    Move,
    apply_move,
    is_attacked,
    legal_moves,
    mirror_square,
    parse_fen,
    parse_square,
    perft,
    push,
    repetition_key,
    square_name,
    to_fen,
)
from .notation import AmbiguousMoveError, format_san, format_uci, moves_to_san_text, parse_san, parse_uci
from .termination import (
    FORCED_DRAWS,
    TerminationKind,
    TerminationOutcome,
    detect_termination,
    is_insufficient_material,
    result_winner,
    rule_outcome,
)


def random_game(seed, max_plies: int = 80) -> list:
    """Play uniformly random legal moves; returns positions in game order."""
    rng = np.random.default_rng(seed)
    state = BoardState.start()
    positions = [state]
    for _ in range(max_plies):
        moves = legal_moves(state)
        if not moves:
            break
        state = push(state, moves[rng.integers(len(moves))])
        positions.append(state)
    return positions


__all__ = [
    "BLACK", "STARTING_FEN", "WHITE", "AmbiguousMoveError", "BoardState", "FORCED_DRAWS",
    "FenError", "IllegalMoveError", "Move", "TerminationKind", "TerminationOutcome",
    "apply_move", "detect_termination", "format_san", "format_uci", "is_attacked",
    "is_insufficient_material", "legal_moves", "mirror_square", "moves_to_san_text",
    "parse_fen", "parse_san", "parse_square", "parse_uci", "perft", "push", "random_game",
    "repetition_key", "result_winner", "rule_outcome", "square_name", "to_fen",
]
