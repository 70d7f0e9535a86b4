"""Immutable board state, FEN codec and legal move generation.

Squares are integers 0..63 with ``a1 = 0``, ``h1 = 7``, ``a8 = 56``.
Pieces are single characters, uppercase for white (``"PNBRQK"``) and
lowercase for black.  Colors are booleans (``WHITE = True``).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

WHITE = True
BLACK = False

FILE_NAMES = "abcdefgh"
RANK_NAMES = "12345678"
PIECE_CHARS = "PNBRQKpnbrqk"
PROMOTION_PIECES = ("q", "r", "b", "n")

STARTING_FEN = "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1"

# castling flag order: white queenside, white kingside, black queenside, black kingside
WQ, WK, BQ, BK = range(4)

KNIGHT_DELTAS = ((1, 2), (2, 1), (2, -1), (1, -2), (-1, -2), (-2, -1), (-2, 1), (-1, 2))
KING_DELTAS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))
ROOK_DIRS = ((0, 1), (1, 0), (0, -1), (-1, 0))
BISHOP_DIRS = ((1, 1), (1, -1), (-1, -1), (-1, 1))


class FenError(ValueError):
    pass


class IllegalMoveError(ValueError):
    pass


def square(file: int, rank: int) -> int:
    return rank * 8 + file


def square_file(sq: int) -> int:
    return sq & 7


def square_rank(sq: int) -> int:
    return sq >> 3


def square_name(sq: int) -> str:
    return FILE_NAMES[sq & 7] + RANK_NAMES[sq >> 3]


def parse_square(name: str) -> int:
    if len(name) != 2 or name[0] not in FILE_NAMES or name[1] not in RANK_NAMES:
        raise ValueError(f"invalid square name: {name!r}")
    return square(FILE_NAMES.index(name[0]), RANK_NAMES.index(name[1]))


def mirror_square(sq: int) -> int:
    """Flip a square vertically (a1 <-> a8)."""
    return sq ^ 56


def _offset(sq: int, df: int, dr: int) -> int:
    f, r = (sq & 7) + df, (sq >> 3) + dr
    if 0 <= f < 8 and 0 <= r < 8:
        return r * 8 + f
    return -1


def _build_steps(deltas):
    return tuple(
        tuple(t for t in (_offset(sq, df, dr) for df, dr in deltas) if t >= 0)
        for sq in range(64)
    )


def _build_rays(dirs):
    rays = []
    for sq in range(64):
        per_dir = []
        for df, dr in dirs:
            ray = []
            t = _offset(sq, df, dr)
            while t >= 0:
                ray.append(t)
                t = _offset(t, df, dr)
            per_dir.append(tuple(ray))
        rays.append(tuple(per_dir))
    return tuple(rays)


KNIGHT_STEPS = _build_steps(KNIGHT_DELTAS)
KING_STEPS = _build_steps(KING_DELTAS)
ROOK_RAYS = _build_rays(ROOK_DIRS)
BISHOP_RAYS = _build_rays(BISHOP_DIRS)


def piece_color(piece: str) -> bool:
    return piece.isupper()


@dataclass(frozen=True)
class Move:
    from_square: int
    to_square: int
    promotion: Optional[str] = None

    def __post_init__(self):
        if self.from_square == self.to_square:
            raise ValueError("move must change square")
        if self.promotion is not None and self.promotion not in PROMOTION_PIECES:
            raise ValueError(f"invalid promotion piece: {self.promotion!r}")

    @property
    def uci(self) -> str:
        return square_name(self.from_square) + square_name(self.to_square) + (self.promotion or "")

    @classmethod
    def from_uci(cls, text: str) -> "Move":
        if len(text) not in (4, 5):
            raise ValueError(f"invalid uci move: {text!r}")
        promotion = text[4].lower() if len(text) == 5 else None
        return cls(parse_square(text[:2]), parse_square(text[2:4]), promotion)

    def __str__(self) -> str:
        return self.uci


@dataclass(frozen=True)
class BoardState:
    board: tuple
    turn: bool = WHITE
    castling: tuple = (True, True, True, True)
    ep_square: Optional[int] = None
    halfmove_clock: int = 0
    fullmove_number: int = 1
    _king_cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    @classmethod
    def start(cls) -> "BoardState":
        return parse_fen(STARTING_FEN)

    def piece_at(self, sq: int) -> Optional[str]:
        return self.board[sq]

    def king_square(self, color: bool) -> int:
        try:
            return self._king_cache[color]
        except KeyError:
            k = "K" if color else "k"
            sq = self.board.index(k) if k in self.board else -1
            self._king_cache[color] = sq
            return sq

    @property
    def fen(self) -> str:
        return to_fen(self)

    def is_check(self) -> bool:
        return is_attacked(self.board, self.king_square(self.turn), not self.turn)

    def mirror(self) -> "BoardState":
        """Vertically flipped, color-swapped position (side to move swapped too)."""
        board = [None] * 64
        for sq, p in enumerate(self.board):
            if p is not None:
                board[mirror_square(sq)] = p.swapcase()
        wq, wk, bq, bk = self.castling
        return BoardState(
            board=tuple(board),
            turn=not self.turn,
            castling=(bq, bk, wq, wk),
            ep_square=None if self.ep_square is None else mirror_square(self.ep_square),
            halfmove_clock=self.halfmove_clock,
            fullmove_number=self.fullmove_number,
        )

    def validate(self) -> None:
        if self.board.count("K") != 1 or self.board.count("k") != 1:
            raise FenError("exactly one king per color required")
        if self.halfmove_clock < 0:
            raise FenError("halfmove clock must be non-negative")
        if self.fullmove_number < 1:
            raise FenError("fullmove number must be positive")
        if self.ep_square is not None:
            if square_rank(self.ep_square) != (5 if self.turn else 2):
                raise FenError("en passant square on wrong rank")
        homes = (
            (WQ, 4, "K", 0, "R"), (WK, 4, "K", 7, "R"),
            (BQ, 60, "k", 56, "r"), (BK, 60, "k", 63, "r"),
        )
        for flag, ksq, king, rsq, rook in homes:
            if self.castling[flag] and (self.board[ksq] != king or self.board[rsq] != rook):
                raise FenError("castling rights inconsistent with king/rook placement")
        for sq in range(8):
            if self.board[sq] in ("P", "p") or self.board[56 + sq] in ("P", "p"):
                raise FenError("pawn on back rank")
        if is_attacked(self.board, self.king_square(not self.turn), self.turn):
            raise FenError("side not to move is in check")


def parse_fen(text: str) -> BoardState:
    parts = text.split()
    if len(parts) != 6:
        raise FenError(f"expected 6 FEN fields, got {len(parts)}")
    placement, side, castling, ep, half, full = parts
    ranks = placement.split("/")
    if len(ranks) != 8:
        raise FenError(f"expected 8 ranks, got {len(ranks)}")
    board: list = [None] * 64
    for i, row in enumerate(ranks):
        rank = 7 - i
        f = 0
        for ch in row:
            if ch.isdigit():
                if ch in "09":
                    raise FenError(f"invalid empty-run digit {ch!r}")
                f += int(ch)
            elif ch in PIECE_CHARS:
                if f >= 8:
                    raise FenError(f"rank {rank + 1} overflows")
                board[square(f, rank)] = ch
                f += 1
            else:
                raise FenError(f"illegal piece character {ch!r}")
        if f != 8:
            raise FenError(f"rank {rank + 1} has {f} files")
    if side not in ("w", "b"):
        raise FenError(f"invalid side to move {side!r}")
    if castling == "-":
        flags = (False, False, False, False)
    else:
        if any(c not in "KQkq" for c in castling) or len(set(castling)) != len(castling):
            raise FenError(f"invalid castling field {castling!r}")
        flags = ("Q" in castling, "K" in castling, "q" in castling, "k" in castling)
    if ep == "-":
        ep_sq = None
    else:
        try:
            ep_sq = parse_square(ep)
        except ValueError as exc:
            raise FenError(str(exc)) from None
    try:
        halfmove, fullmove = int(half), int(full)
    except ValueError:
        raise FenError("clock fields must be integers") from None
    state = BoardState(tuple(board), side == "w", flags, ep_sq, halfmove, fullmove)
    state.validate()
    return state


def board_fen(board: tuple) -> str:
    rows = []
    for rank in range(7, -1, -1):
        row, empty = "", 0
        for f in range(8):
            p = board[square(f, rank)]
            if p is None:
                empty += 1
            else:
                if empty:
                    row += str(empty)
                    empty = 0
                row += p
        if empty:
            row += str(empty)
        rows.append(row)
    return "/".join(rows)


def to_fen(state: BoardState) -> str:
    flags = "".join(c for c, on in zip("KQkq", (state.castling[WK], state.castling[WQ],
                                                state.castling[BK], state.castling[BQ])) if on)
    ep = "-" if state.ep_square is None else square_name(state.ep_square)
    return (f"{board_fen(state.board)} {'w' if state.turn else 'b'} {flags or '-'} "
            f"{ep} {state.halfmove_clock} {state.fullmove_number}")


def is_attacked(board: tuple, sq: int, by_color: bool) -> bool:
    """Whether ``sq`` is attacked by any piece of ``by_color``."""
    if sq < 0:
        return False
    if by_color:
        pawn, knight, bishop, rook, queen, king = "PNBRQK"
        # white pawns attack upward, so look one rank below
        pawn_sources = (_offset(sq, -1, -1), _offset(sq, 1, -1))
    else:
        pawn, knight, bishop, rook, queen, king = "pnbrqk"
        pawn_sources = (_offset(sq, -1, 1), _offset(sq, 1, 1))
    for s in pawn_sources:
        if s >= 0 and board[s] == pawn:
            return True
    for s in KNIGHT_STEPS[sq]:
        if board[s] == knight:
            return True
    for s in KING_STEPS[sq]:
        if board[s] == king:
            return True
    for ray in ROOK_RAYS[sq]:
        for s in ray:
            p = board[s]
            if p is not None:
                if p == rook or p == queen:
                    return True
                break
    for ray in BISHOP_RAYS[sq]:
        for s in ray:
            p = board[s]
            if p is not None:
                if p == bishop or p == queen:
                    return True
                break
    return False


def _pseudo_moves(state: BoardState) -> Iterator[Move]:
    board = state.board
    us = state.turn
    for sq, p in enumerate(board):
        if p is None or piece_color(p) != us:
            continue
        kind = p.upper()
        if kind == "P":
            yield from _pawn_moves(state, sq)
        elif kind == "N":
            for t in KNIGHT_STEPS[sq]:
                q = board[t]
                if q is None or piece_color(q) != us:
                    yield Move(sq, t)
        elif kind == "K":
            for t in KING_STEPS[sq]:
                q = board[t]
                if q is None or piece_color(q) != us:
                    yield Move(sq, t)
            yield from _castling_moves(state, sq)
        else:
            rays = ()
            if kind in "RQ":
                rays += ROOK_RAYS[sq]
            if kind in "BQ":
                rays += BISHOP_RAYS[sq]
            for ray in rays:
                for t in ray:
                    q = board[t]
                    if q is None:
                        yield Move(sq, t)
                    else:
                        if piece_color(q) != us:
                            yield Move(sq, t)
                        break


def _pawn_moves(state: BoardState, sq: int) -> Iterator[Move]:
    board = state.board
    us = state.turn
    dr = 1 if us else -1
    start_rank, last_rank = (1, 7) if us else (6, 0)

    def emit(t):
        if square_rank(t) == last_rank:
            for promo in PROMOTION_PIECES:
                yield Move(sq, t, promo)
        else:
            yield Move(sq, t)

    one = _offset(sq, 0, dr)
    if one >= 0 and board[one] is None:
        yield from emit(one)
        if square_rank(sq) == start_rank:
            two = _offset(sq, 0, 2 * dr)
            if board[two] is None:
                yield Move(sq, two)
    for df in (-1, 1):
        t = _offset(sq, df, dr)
        if t < 0:
            continue
        q = board[t]
        if q is not None and piece_color(q) != us:
            yield from emit(t)
        elif t == state.ep_square:
            yield Move(sq, t)


def _castling_moves(state: BoardState, king_sq: int) -> Iterator[Move]:
    board = state.board
    them = not state.turn
    if state.turn:
        options = ((WK, 4, 7, (5, 6), (5, 6)), (WQ, 4, 0, (1, 2, 3), (3, 2)))
    else:
        options = ((BK, 60, 63, (61, 62), (61, 62)), (BQ, 60, 56, (57, 58, 59), (59, 58)))
    for flag, ksq, rsq, empty, transit in options:
        if not state.castling[flag] or king_sq != ksq:
            continue
        if any(board[s] is not None for s in empty):
            continue
        if is_attacked(board, ksq, them) or any(is_attacked(board, s, them) for s in transit):
            continue
        yield Move(ksq, transit[-1])


def _is_castling(state: BoardState, move: Move) -> bool:
    p = state.board[move.from_square]
    return p in ("K", "k") and abs(move.to_square - move.from_square) == 2


def _is_en_passant(state: BoardState, move: Move) -> bool:
    p = state.board[move.from_square]
    return (p in ("P", "p") and move.to_square == state.ep_square
            and square_file(move.to_square) != square_file(move.from_square))


def _placement_after(state: BoardState, move: Move) -> list:
    board = list(state.board)
    p = board[move.from_square]
    if _is_en_passant(state, move):
        board[move.to_square + (-8 if state.turn else 8)] = None
    elif _is_castling(state, move):
        if move.to_square > move.from_square:
            rook_from, rook_to = move.from_square + 3, move.from_square + 1
        else:
            rook_from, rook_to = move.from_square - 4, move.from_square - 1
        board[rook_to] = board[rook_from]
        board[rook_from] = None
    board[move.from_square] = None
    if move.promotion:
        p = move.promotion.upper() if state.turn else move.promotion
    board[move.to_square] = p
    return board


def legal_moves(state: BoardState) -> list:
    """All legal moves, ordered by from-square then generation order."""
    moves = []
    us, them = state.turn, not state.turn
    king_piece = "K" if us else "k"
    king_sq = state.king_square(us)
    for m in _pseudo_moves(state):
        board = _placement_after(state, m)
        ksq = m.to_square if state.board[m.from_square] == king_piece else king_sq
        if not is_attacked(board, ksq, them):
            moves.append(m)
    return moves


_ROOK_HOMES = {0: WQ, 7: WK, 56: BQ, 63: BK}


def push(state: BoardState, move: Move) -> BoardState:
    """Apply ``move`` without a legality check."""
    p = state.board[move.from_square]
    captured = state.board[move.to_square]
    is_ep = _is_en_passant(state, move)
    board = _placement_after(state, move)
    castling = list(state.castling)
    if p == "K":
        castling[WQ] = castling[WK] = False
    elif p == "k":
        castling[BQ] = castling[BK] = False
    for sq in (move.from_square, move.to_square):
        if sq in _ROOK_HOMES:
            castling[_ROOK_HOMES[sq]] = False
    ep = None
    if p in ("P", "p") and abs(move.to_square - move.from_square) == 16:
        ep = (move.from_square + move.to_square) // 2
    reset = p in ("P", "p") or captured is not None or is_ep
    return BoardState(
        board=tuple(board),
        turn=not state.turn,
        castling=tuple(castling),
        ep_square=ep,
        halfmove_clock=0 if reset else state.halfmove_clock + 1,
        fullmove_number=state.fullmove_number + (0 if state.turn else 1),
    )


def apply_move(state: BoardState, move: Move) -> BoardState:
    if move not in legal_moves(state):
        raise IllegalMoveError(f"illegal move {move.uci} in {to_fen(state)}")
    return push(state, move)


def is_capture(state: BoardState, move: Move) -> bool:
    return state.board[move.to_square] is not None or _is_en_passant(state, move)


def perft(state: BoardState, depth: int) -> int:
    if depth < 0:
        raise ValueError("depth must be non-negative")
    if depth == 0:
        return 1
    moves = legal_moves(state)
    if depth == 1:
        return len(moves)
    return sum(perft(push(state, m), depth - 1) for m in moves)


def repetition_key(state: BoardState) -> tuple:
    """Identity of a position for repetition counting.

    The en passant square only counts when a legal en passant capture exists.
    """
    ep = state.ep_square
    if ep is not None and not any(
        m.to_square == ep and _is_en_passant(state, m) for m in legal_moves(state)
    ):
        ep = None
    return (state.board, state.turn, state.castling, ep)


def with_turn(state: BoardState, turn: bool) -> BoardState:
    return replace(state, turn=turn, ep_square=None, _king_cache={})
