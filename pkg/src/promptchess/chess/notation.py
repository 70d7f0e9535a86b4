"""SAN and UCI move codecs."""
from __future__ import annotations

import re

from .board import (
    BoardState,
    IllegalMoveError,
    Move,
    _is_castling,
    is_capture,
    legal_moves,
    push,
    square_file,
    square_name,
    square_rank,
)


class AmbiguousMoveError(ValueError):
    pass


_SAN_RE = re.compile(r"^([NBRQK])?([a-h])?([1-8])?(x)?([a-h][1-8])(?:=?([QRBNqrbn]))?$")
_SUFFIX_RE = re.compile(r"(?:\s*e\.?p\.?)$|[+#!?]+$")


def parse_uci(state: BoardState, text: str) -> Move:
    try:
        move = Move.from_uci(text.strip())
    except ValueError as exc:
        raise IllegalMoveError(str(exc)) from None
    if move not in legal_moves(state):
        raise IllegalMoveError(f"no legal move {text!r}")
    return move


def format_uci(move: Move) -> str:
    return move.uci


def _strip_san(text: str) -> str:
    text = text.strip()
    prev = None
    while prev != text:
        prev = text
        text = _SUFFIX_RE.sub("", text).strip()
    return text


def parse_san(state: BoardState, text: str) -> Move:
    san = _strip_san(text)
    moves = legal_moves(state)
    if san in ("O-O", "0-0", "O-O-O", "0-0-0"):
        kingside = san.count("-") == 1
        for m in moves:
            if _is_castling(state, m) and (m.to_square > m.from_square) == kingside:
                return m
        raise IllegalMoveError(f"castling not legal: {text!r}")
    match = _SAN_RE.match(san)
    if not match:
        raise IllegalMoveError(f"unparseable SAN {text!r}")
    piece, from_file, from_rank, _, dest, promo = match.groups()
    piece = piece or "P"
    to_sq = "abcdefgh".index(dest[0]) + 8 * (int(dest[1]) - 1)
    promo = promo.lower() if promo else None
    candidates = []
    for m in moves:
        p = state.board[m.from_square]
        if m.to_square != to_sq or p.upper() != piece or m.promotion != promo:
            continue
        if from_file and square_file(m.from_square) != "abcdefgh".index(from_file):
            continue
        if from_rank and square_rank(m.from_square) != int(from_rank) - 1:
            continue
        if piece == "K" and _is_castling(state, m):
            continue
        candidates.append(m)
    if not candidates:
        raise IllegalMoveError(f"no legal move matches SAN {text!r}")
    if len(candidates) > 1:
        raise AmbiguousMoveError(
            f"ambiguous SAN {text!r}: " + ", ".join(m.uci for m in candidates))
    return candidates[0]


def format_san(state: BoardState, move: Move, *, suffix: bool = True) -> str:
    moves = legal_moves(state)
    if move not in moves:
        raise IllegalMoveError(f"illegal move {move.uci}")
    p = state.board[move.from_square].upper()
    if _is_castling(state, move):
        san = "O-O" if move.to_square > move.from_square else "O-O-O"
    elif p == "P":
        san = ""
        if is_capture(state, move):
            san = "abcdefgh"[square_file(move.from_square)] + "x"
        san += square_name(move.to_square)
        if move.promotion:
            san += "=" + move.promotion.upper()
    else:
        rivals = [m for m in moves if m != move and m.to_square == move.to_square
                  and state.board[m.from_square].upper() == p]
        disamb = ""
        if rivals:
            same_file = any(square_file(m.from_square) == square_file(move.from_square) for m in rivals)
            same_rank = any(square_rank(m.from_square) == square_rank(move.from_square) for m in rivals)
            if not same_file:
                disamb = "abcdefgh"[square_file(move.from_square)]
            elif not same_rank:
                disamb = str(square_rank(move.from_square) + 1)
            else:
                disamb = square_name(move.from_square)
        san = p + disamb + ("x" if is_capture(state, move) else "") + square_name(move.to_square)
    if suffix:
        after = push(state, move)
        if after.is_check():
            san += "#" if not legal_moves(after) else "+"
    return san


def moves_to_san_text(state: BoardState, moves, *, numbered: bool = True) -> str:
    """Render a move sequence as movetext, e.g. ``1. e4 c5 2. c3``."""
    parts = []
    for i, move in enumerate(moves):
        if numbered and (state.turn or i == 0):
            parts.append(f"{state.fullmove_number}." if state.turn else f"{state.fullmove_number}...")
        parts.append(format_san(state, move))
        state = push(state, move)
    return " ".join(parts)
