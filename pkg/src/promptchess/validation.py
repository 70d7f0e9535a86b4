"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

from typing import Sequence

from .chess import BoardState, FenError, IllegalMoveError, parse_fen, parse_uci


def check_states(X) -> list:
    """FEN strings or ``BoardState`` objects -> list of states."""
    if isinstance(X, (str, BoardState)):
        raise TypeError("expected a sequence of positions, got a single position")
    out = []
    for i, x in enumerate(X):
        if isinstance(x, BoardState):
            out.append(x)
        elif isinstance(x, str):
            try:
                out.append(parse_fen(x))
            except FenError as exc:
                raise ValueError(f"row {i}: {exc}") from None
        else:
            raise TypeError(f"row {i}: expected FEN or BoardState, got {type(x).__name__}")
    if not out:
        raise ValueError("empty input")
    return out


def check_prompt_pairs(X) -> tuple:
    """``[(position, prompt), ...]`` -> ``(states, prompts)``."""
    rows = list(X)
    if not rows:
        raise ValueError("empty input")
    for i, row in enumerate(rows):
        if len(row) != 2 or not isinstance(row[1], str):
            raise ValueError(f"row {i}: expected (position, prompt text)")
        if not row[1].strip():
            raise ValueError(f"row {i}: empty prompt")
    return check_states([r[0] for r in rows]), [r[1] for r in rows]


def check_targets(states: Sequence[BoardState], y) -> list:
    y = list(y)
    if len(y) != len(states):
        raise ValueError(f"{len(states)} positions but {len(y)} targets")
    for i, (s, u) in enumerate(zip(states, y)):
        try:
            parse_uci(s, u)
        except IllegalMoveError:
            raise ValueError(f"row {i}: target {u!r} is not legal in {s.fen}") from None
    return y


def check_opening_rows(X) -> list:
    """``[(eco, name), ...]`` with ``eco`` possibly empty."""
    rows = []
    for i, row in enumerate(X):
        if isinstance(row, str):
            rows.append((None, row))
        elif len(row) == 2:
            rows.append((row[0] or None, row[1] or ""))
        else:
            raise ValueError(f"row {i}: expected (eco, name) or a name")
    return rows
