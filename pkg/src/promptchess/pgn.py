"""Streaming PGN reading: header-only Stage 1 scan and full Stage 2 replay."""
from __future__ import annotations

import bz2
import dataclasses
import gzip
import io
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator, Optional, Union

from .chess import BoardState, detect_termination, parse_san, push, rule_outcome
from .chess.board import IllegalMoveError

log = logging.getLogger(__name__)

RESULT_TOKENS = ("1-0", "0-1", "1/2-1/2", "*")

_HEADER_RE = re.compile(r'^\s*\[\s*([A-Za-z0-9_]+)\s+"((?:[^"\\]|\\.)*)"\s*\]\s*$')
_CLOCK_RE = re.compile(r"\[%clk\s+(\d+):(\d+):(\d+(?:\.\d+)?)\]")
_TOKEN_RE = re.compile(
    r"""
    (?P<comment>\{[^}]*\}?)
  | (?P<line_comment>;[^\n]*)
  | (?P<open>\()
  | (?P<close>\))
  | (?P<nag>\$\d+)
  | (?P<result>1-0|0-1|1/2-1/2|\*)(?=\s|$|[)}])
  | (?P<number>\d+\.+)
  | (?P<move>[^\s{}();$]+)
    """,
    re.VERBOSE,
)

_TC_NAMES = ("UltraBullet", "Bullet", "Blitz", "Rapid", "Classical", "Correspondence")


class CorruptGameError(ValueError):
    pass


@dataclass
class Stage1Record:
    Event: Optional[str] = None
    Site: Optional[str] = None
    White: Optional[str] = None
    Black: Optional[str] = None
    WhiteTitle: Optional[str] = None
    BlackTitle: Optional[str] = None
    TimeControl: Optional[str] = None
    TimeControlName: Optional[str] = None
    UTCDate: Optional[str] = None
    Year: Optional[int] = None
    Month: Optional[int] = None
    Day: Optional[int] = None
    TcDelay: Optional[int] = None
    TcIncrement: Optional[int] = None
    WhiteElo: Optional[int] = None
    BlackElo: Optional[int] = None
    WhiteRatingDiff: Optional[int] = None
    BlackRatingDiff: Optional[int] = None
    Round: Optional[str] = None
    Result: Optional[str] = None
    Variant: Optional[str] = None
    ECO: Optional[str] = None
    Opening: Optional[str] = None
    Termination: Optional[str] = None
    Annotator: Optional[str] = None
    IsFischerRandom: bool = False
    EvalDepth: Optional[int] = None
    OriginalPGN: str = ""
    ByteOffsetStart: int = 0
    ByteOffsetEnd: int = 0
    Utf8Diff: int = 0
    Truncated: bool = False

    def to_row(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_row(cls, row: dict):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in row.items() if k in names})


@dataclass
class Stage2Record(Stage1Record):
    Length: Optional[int] = None
    TerminationOutcome: Optional[str] = None
    TerminationWinner: Optional[str] = None
    LastComment: Optional[str] = None
    TerminationReason: Optional[str] = None
    MeanElo: Optional[int] = None
    DiffElo: Optional[int] = None
    Moves: list = field(default_factory=list)
    Clocks: list = field(default_factory=list)


@dataclass
class ScanStats:
    games: int = 0
    garbage_lines: int = 0
    truncated: int = 0


def utf8_offset_diff(pgn: str) -> int:
    """Extra bytes taken by multi-byte characters in ``pgn``."""
    return len(pgn.encode("utf-8")) - len(pgn)


def parse_time_control(text: Optional[str]) -> Optional[tuple]:
    if text is None:
        return None
    m = re.fullmatch(r"\s*(\d+)\+(\d+)\s*", text)
    if not m:
        return None
    return int(m.group(1)), int(m.group(2))


def time_control_category(base: int, inc: int) -> str:
    """Lichess speed category from estimated game duration (base + 40 * increment)."""
    est = base + 40 * inc
    if est < 30:
        return "UltraBullet"
    if est < 180:
        return "Bullet"
    if est < 480:
        return "Blitz"
    if est < 1500:
        return "Rapid"
    return "Classical"


def _to_int(value: Optional[str], positive: bool = False) -> Optional[int]:
    if value is None:
        return None
    try:
        n = int(value.strip().lstrip("+"))
    except ValueError:
        return None
    if positive and n <= 0:
        return None
    return n


def _unescape(value: str) -> str:
    return value.replace('\\"', '"').replace("\\\\", "\\")


def record_from_headers(headers: dict, pgn: str = "") -> Stage1Record:
    tc = parse_time_control(headers.get("TimeControl"))
    event = headers.get("Event")
    name = None
    if event:
        for candidate in _TC_NAMES:
            if candidate.lower() in event.lower():
                name = candidate
                break
    if name is None:
        if headers.get("TimeControl", "").strip() == "-":
            name = "Correspondence"
        elif tc is not None:
            name = time_control_category(*tc)
    date = headers.get("UTCDate") or headers.get("Date")
    ymd = [None, None, None]
    if date:
        for i, part in enumerate(date.split(".")[:3]):
            ymd[i] = _to_int(part, positive=True)
    variant = headers.get("Variant") or "Standard"
    return Stage1Record(
        Event=event,
        Site=headers.get("Site"),
        White=headers.get("White"),
        Black=headers.get("Black"),
        WhiteTitle=headers.get("WhiteTitle"),
        BlackTitle=headers.get("BlackTitle"),
        TimeControl=headers.get("TimeControl"),
        TimeControlName=name,
        UTCDate=date,
        Year=ymd[0],
        Month=ymd[1],
        Day=ymd[2],
        TcDelay=tc[0] if tc else None,
        TcIncrement=tc[1] if tc else None,
        WhiteElo=_to_int(headers.get("WhiteElo"), positive=True),
        BlackElo=_to_int(headers.get("BlackElo"), positive=True),
        WhiteRatingDiff=_to_int(headers.get("WhiteRatingDiff")),
        BlackRatingDiff=_to_int(headers.get("BlackRatingDiff")),
        Round=headers.get("Round"),
        Result=headers.get("Result"),
        Variant=variant,
        ECO=headers.get("ECO"),
        Opening=headers.get("Opening"),
        Termination=headers.get("Termination"),
        Annotator=headers.get("Annotator"),
        IsFischerRandom="960" in variant or "fischer" in variant.lower(),
        EvalDepth=_to_int(headers.get("EvalDepth")),
        OriginalPGN=pgn,
        Utf8Diff=utf8_offset_diff(pgn),
    )


def parse_headers(pgn: str) -> dict:
    headers = {}
    for line in pgn.splitlines():
        m = _HEADER_RE.match(line)
        if m:
            headers[m.group(1)] = _unescape(m.group(2))
        elif line.strip():
            break
    return headers


def open_pgn(path: Union[str, Path]) -> BinaryIO:
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    if path.suffix == ".bz2":
        return bz2.open(path, "rb")
    if path.suffix == ".zst":
        import zstandard  # optional

        return zstandard.ZstdDecompressor().stream_reader(open(path, "rb"))
    return open(path, "rb")


def _strip_comments(line: str, in_comment: bool) -> tuple:
    out = []
    for ch in line:
        if in_comment:
            if ch == "}":
                in_comment = False
        elif ch == "{":
            in_comment = True
        else:
            out.append(ch)
    text = "".join(out)
    if ";" in text:
        text = text[: text.index(";")]
    return text, in_comment


def _ends_with_result(text: str) -> bool:
    tokens = text.split()
    return bool(tokens) and tokens[-1] in RESULT_TOKENS


def scan_headers(stream: Union[BinaryIO, bytes, str, Path], stats: Optional[ScanStats] = None) -> Iterator[Stage1Record]:
    """Split concatenated PGN into games without parsing move trees.

    Each record carries the byte span of its source text; whitespace after a
    game's result belongs to that game, so concatenating ``OriginalPGN``
    reproduces a clean input exactly.  Stray text before the first game or
    after a game's result is skipped and counted in ``stats``.
    """
    if isinstance(stream, (str, Path)):
        with open_pgn(stream) as fh:
            yield from scan_headers(fh, stats)
        return
    if isinstance(stream, bytes):
        stream = io.BytesIO(stream)
    stats = stats if stats is not None else ScanStats()

    offset = 0
    start = None
    buf: list = []
    headers: dict = {}
    state = "outside"  # outside | headers | movetext | done
    in_comment = False

    def finish(end: int, truncated: bool = False) -> Stage1Record:
        raw = b"".join(buf)
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            text = raw.decode("utf-8", errors="replace")
        rec = record_from_headers(headers, text)
        rec.ByteOffsetStart, rec.ByteOffsetEnd = start, end
        rec.Truncated = truncated
        stats.games += 1
        if truncated:
            stats.truncated += 1
            log.warning("truncated game at byte %d", start)
        return rec

    for raw_line in stream:
        line = raw_line.decode("utf-8", errors="replace")
        stripped = line.strip()
        is_header = not in_comment and _HEADER_RE.match(line) is not None
        if is_header and state in ("movetext", "done"):
            yield finish(offset, truncated=state == "movetext")
            buf, headers, state = [], {}, "outside"
        if state == "outside":
            if is_header:
                start, state = offset, "headers"
            elif stripped:
                stats.garbage_lines += 1
                offset += len(raw_line)
                continue
            else:
                offset += len(raw_line)
                continue
        if state == "done":
            if stripped:
                stats.garbage_lines += 1
                yield finish(offset)
                buf, headers, state = [], {}, "outside"
            else:
                buf.append(raw_line)
            offset += len(raw_line)
            continue
        buf.append(raw_line)
        offset += len(raw_line)
        if state == "headers":
            if is_header:
                m = _HEADER_RE.match(line)
                headers[m.group(1)] = _unescape(m.group(2))
                continue
            if not stripped:
                continue
            state = "movetext"
        if state == "movetext":
            text, in_comment = _strip_comments(line, in_comment)
            if not in_comment and _ends_with_result(text):
                state = "done"
    if state in ("done", "movetext", "headers"):
        yield finish(offset, truncated=state != "done")


def recover_pgn(fh: BinaryIO, rec: Stage1Record) -> str:
    """Re-read a game's source text from its byte offsets."""
    fh.seek(rec.ByteOffsetStart)
    return fh.read(rec.ByteOffsetEnd - rec.ByteOffsetStart).decode("utf-8")


@dataclass
class Movetext:
    sans: list
    comments: list  # comment text following each ply ('' if none)
    game_comment: str
    result: Optional[str]
    last_comment: Optional[str] = None  # final mainline {...} comment, verbatim


def parse_movetext(pgn: str) -> Movetext:
    lines = pgn.splitlines(keepends=True)
    i = 0
    while i < len(lines) and (not lines[i].strip() or _HEADER_RE.match(lines[i])):
        i += 1
    body = "".join(lines[i:])
    sans, comments = [], []
    game_comment, result, last_comment = "", None, None
    depth = 0
    for m in _TOKEN_RE.finditer(body):
        kind = m.lastgroup
        tok = m.group()
        if kind == "open":
            depth += 1
        elif kind == "close":
            depth = max(0, depth - 1)
        elif depth:
            continue
        elif kind == "comment":
            text = tok[1:-1].strip() if tok.endswith("}") else tok[1:].strip()
            last_comment = text
            if comments:
                comments[-1] = (comments[-1] + " " + text).strip()
            else:
                game_comment = (game_comment + " " + text).strip()
        elif kind == "result":
            result = tok
        elif kind == "move":
            sans.append(tok)
            comments.append("")
    return Movetext(sans, comments, game_comment, result, last_comment)


def clock_seconds(comment: str) -> Optional[float]:
    m = _CLOCK_RE.search(comment or "")
    if not m:
        return None
    h, mnt, s = m.groups()
    return int(h) * 3600 + int(mnt) * 60 + float(s)


def replay(sans, state: Optional[BoardState] = None) -> list:
    """Replay SAN moves; returns ``(positions, moves)``."""
    state = state or BoardState.start()
    positions, moves = [state], []
    for ply, san in enumerate(sans):
        try:
            move = parse_san(state, san)
        except (IllegalMoveError, ValueError) as exc:
            raise CorruptGameError(f"ply {ply}: {exc}") from None
        state = push(state, move)
        positions.append(state)
        moves.append(move)
    return positions, moves


def parse_game(rec: Stage1Record) -> Stage2Record:
    if rec.IsFischerRandom or (rec.Variant or "Standard") not in ("Standard", "From Position"):
        raise CorruptGameError(f"unsupported variant {rec.Variant!r}")
    headers = parse_headers(rec.OriginalPGN)
    start = BoardState.start()
    if headers.get("FEN"):
        from .chess import parse_fen

        start = parse_fen(headers["FEN"])
    mt = parse_movetext(rec.OriginalPGN)
    positions, moves = replay(mt.sans, start)
    final = positions[-1]
    last_comment = mt.last_comment or None
    outcome = detect_termination(final, positions, last_comment, rec.Result, rec.Termination)
    rule = rule_outcome(final, positions)
    out = Stage2Record(**dataclasses.asdict(rec))
    out.Length = len(moves)
    out.TerminationOutcome = rule.kind.value if rule else None
    out.TerminationWinner = None if outcome.winner is None else ("white" if outcome.winner else "black")
    out.LastComment = last_comment
    out.TerminationReason = outcome.kind.value
    if rec.WhiteElo is not None and rec.BlackElo is not None:
        out.MeanElo = (rec.WhiteElo + rec.BlackElo) // 2
        out.DiffElo = abs(rec.WhiteElo - rec.BlackElo)
    out.Moves = [m.uci for m in moves]
    out.Clocks = [clock_seconds(c) for c in mt.comments]
    return out
