"""112-plane position encoding and the 1858-entry policy move table.

Everything is expressed from the side to move's point of view: when black
is to move the board is flipped vertically and colours are swapped, so the
mover always plays "up" the board.

Move table order: from-squares a1..h8; for each, queen-ray targets in the
directions N, NE, E, SE, S, SW, W, NW (increasing distance), then knight
targets clockwise starting at (+1, +2), then, for from-squares on the 7th
rank, promotions (capture-left, push, capture-right) x (q, r, b).  A plain
7th->8th rank pawn move stands for the knight promotion.  These indices are
self-consistent but not guaranteed to match official Lc0 ordering.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import BinaryIO, Optional, Sequence

import numpy as np

from .chess import BoardState, Move, legal_moves, mirror_square, repetition_key
from .chess.board import KNIGHT_DELTAS, square, square_name

NUM_PLANES = 112
HISTORY_FRAMES = 8
PLANES_PER_FRAME = 13
POLICY_SIZE = 1858

PLANE_CASTLING = 104  # us-queenside, us-kingside, them-queenside, them-kingside
PLANE_SIDE_TO_MOVE = 108
PLANE_HALFMOVE = 109
PLANE_ZEROS = 110
PLANE_ONES = 111

HALFMOVE_NORM = 99.0

QUEEN_DIRECTIONS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))
PROMOTION_ORDER = ("q", "r", "b")

_OUR_PIECES = "PNBRQK"


# -- position history ---------------------------------------------------------

@dataclass(frozen=True)
class PositionHistory:
    """Up to 8 positions, most recent first, with repetition flags."""

    states: tuple
    repetition_flags: tuple

    def __post_init__(self):
        if len(self.states) > HISTORY_FRAMES:
            raise ValueError(f"history holds at most {HISTORY_FRAMES} positions")
        if len(self.states) != len(self.repetition_flags):
            raise ValueError("repetition flags must align with states")

    @classmethod
    def from_game(cls, positions: Sequence[BoardState]) -> "PositionHistory":
        """Build from the full game so far, in game order (last = current)."""
        keys = [repetition_key(s) for s in positions]
        flags = [k in keys[:i] for i, k in enumerate(keys)]
        recent = list(range(len(positions) - 1, max(-1, len(positions) - 1 - HISTORY_FRAMES), -1))
        return cls(tuple(positions[i] for i in recent), tuple(flags[i] for i in recent))

    @classmethod
    def single(cls, state: BoardState) -> "PositionHistory":
        return cls((state,), (False,))


def encode_position(history: PositionHistory, state: Optional[BoardState] = None) -> np.ndarray:
    """Encode a position and its history as a float32 array of shape (112, 8, 8).

    ``planes[p, rank, file]`` with rank 0 being the mover's back rank.
    """
    if not isinstance(history, PositionHistory):
        history = PositionHistory(tuple(history), (False,) * len(history))
    if len(history.states) > HISTORY_FRAMES:
        raise ValueError(f"history longer than {HISTORY_FRAMES}")
    if not history.states:
        raise ValueError("history must contain the current position")
    current = history.states[0] if state is None else state
    if state is not None and history.states[0] != state:
        raise ValueError("history[0] must be the current position")
    us = current.turn
    planes = np.zeros((NUM_PLANES, 8, 8), dtype=np.float32)
    for t, (frame, repeated) in enumerate(zip(history.states, history.repetition_flags)):
        base = t * PLANES_PER_FRAME
        for sq, piece in enumerate(frame.board):
            if piece is None:
                continue
            rel = sq if us else mirror_square(sq)
            mine = piece.isupper() == us
            offset = _OUR_PIECES.index(piece.upper()) + (0 if mine else 6)
            planes[base + offset, rel >> 3, rel & 7] = 1.0
        if repeated:
            planes[base + 12] = 1.0
    wq, wk, bq, bk = current.castling
    rights = (wq, wk, bq, bk) if us else (bq, bk, wq, wk)
    for i, on in enumerate(rights):
        if on:
            planes[PLANE_CASTLING + i] = 1.0
    if not us:
        planes[PLANE_SIDE_TO_MOVE] = 1.0
    planes[PLANE_HALFMOVE] = current.halfmove_clock / HALFMOVE_NORM
    planes[PLANE_ONES] = 1.0
    return planes


# -- move table ---------------------------------------------------------------

@dataclass(frozen=True)
class MoveTable:
    moves: tuple  # index -> relative UCI string
    index: dict  # relative UCI string -> index

    def __len__(self) -> int:
        return len(self.moves)

    def forward(self, uci: str) -> int:
        return self.index[uci]

    def inverse(self, idx: int) -> str:
        return self.moves[idx]


def _on_board(f: int, r: int) -> bool:
    return 0 <= f < 8 and 0 <= r < 8


@lru_cache(maxsize=1)
def build_move_table() -> MoveTable:
    entries = []
    for from_sq in range(64):
        f0, r0 = from_sq & 7, from_sq >> 3
        for df, dr in QUEEN_DIRECTIONS:
            dist = 1
            while _on_board(f0 + df * dist, r0 + dr * dist):
                entries.append(square_name(from_sq) + square_name(square(f0 + df * dist, r0 + dr * dist)))
                dist += 1
        for df, dr in KNIGHT_DELTAS:
            if _on_board(f0 + df, r0 + dr):
                entries.append(square_name(from_sq) + square_name(square(f0 + df, r0 + dr)))
        if r0 == 6:
            for df in (-1, 0, 1):
                if _on_board(f0 + df, 7):
                    for promo in PROMOTION_ORDER:
                        entries.append(square_name(from_sq) + square_name(square(f0 + df, 7)) + promo)
    table = MoveTable(tuple(entries), {u: i for i, u in enumerate(entries)})
    assert len(table) == POLICY_SIZE, len(table)
    return table


def _relative(move: Move, turn: bool) -> Move:
    if turn:
        return move
    return Move(mirror_square(move.from_square), mirror_square(move.to_square), move.promotion)


def move_to_policy_index(move: Move, state: BoardState) -> int:
    rel = _relative(move, state.turn)
    uci = rel.uci
    if rel.promotion == "n":
        uci = uci[:4]
    try:
        return build_move_table().forward(uci)
    except KeyError:
        raise ValueError(f"move {move.uci} not representable in the policy table") from None


def policy_index_to_move(index: int, state: BoardState) -> Move:
    """Decode a policy index into an absolute move in ``state``."""
    if not 0 <= index < POLICY_SIZE:
        raise ValueError(f"policy index out of range: {index}")
    rel = Move.from_uci(build_move_table().inverse(index))
    move = _relative(rel, state.turn)
    piece = state.board[move.from_square]
    if (rel.promotion is None and piece in ("P", "p")
            and rel.from_square >> 3 == 6 and rel.to_square >> 3 == 7):
        move = Move(move.from_square, move.to_square, "n")
    return move


def legal_policy_indices(state: BoardState) -> dict:
    """Map policy index -> legal move for ``state``."""
    return {move_to_policy_index(m, state): m for m in legal_moves(state)}


# -- move distributions -------------------------------------------------------

@dataclass(frozen=True)
class MoveDistribution:
    """Probabilities over the 1858 policy slots; zero off the legal set."""

    probs: np.ndarray
    legal: dict  # policy index -> Move

    def prob(self, move: Move, state: BoardState) -> float:
        return float(self.probs[move_to_policy_index(move, state)])

    def as_dict(self) -> dict:
        return {m.uci: float(self.probs[i]) for i, m in sorted(self.legal.items())}

    def argmax(self) -> Move:
        best = max(self.legal, key=lambda i: (self.probs[i], -i))
        return self.legal[best]


def mask_and_normalize(logits, state: BoardState) -> MoveDistribution:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (POLICY_SIZE,):
        raise ValueError(f"expected {POLICY_SIZE} logits, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    legal = legal_policy_indices(state)
    if not legal:
        raise ValueError("no legal moves in terminal position")
    idx = np.fromiter(sorted(legal), dtype=np.int64)
    z = logits[idx] - logits[idx].max()
    w = np.exp(z)
    probs = np.zeros(POLICY_SIZE, dtype=np.float64)
    probs[idx] = w / w.sum()
    return MoveDistribution(probs, legal)


# -- plane tensor files -------------------------------------------------------

PLANES_MAGIC = b"PCPL"


def write_planes(fh: BinaryIO, planes: np.ndarray) -> None:
    """Flat little-endian float32 tensor with a magic + shape header."""
    arr = np.ascontiguousarray(planes, dtype="<f4")
    fh.write(PLANES_MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def read_planes(fh: BinaryIO) -> np.ndarray:
    if fh.read(4) != PLANES_MAGIC:
        raise ValueError("not a plane tensor file")
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(shape))
    data = np.frombuffer(fh.read(4 * count), dtype="<f4")
    if data.size != count:
        raise ValueError("truncated plane tensor")
    return data.reshape(shape).astype(np.float32)
