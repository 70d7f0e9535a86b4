"""Game-level helpers on top of ``chess_oracle``: SAN writing, clocks, outcomes.

Used to build PGN fixtures whose expected fields are known by construction.
"""
from . import chess_oracle as co

FILES = "abcdefgh"


def start():
    pos = co.read_fen("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1")
    pos["half"] = 0
    return pos


def sq_name(s):
    return FILES[s[0]] + str(s[1] + 1)


def in_check(pos):
    return co.attacked(pos, co.king_of(pos, pos["white"]), not pos["white"])


def status(pos):
    if co.legal(pos):
        return None
    return "mate" if in_check(pos) else "stalemate"


def play(pos, mv):
    (ff, fr), (tf, tr), _ = mv
    piece = pos["grid"][fr][ff]
    capture = pos["grid"][tr][tf] is not None or (piece.upper() == "P" and ff != tf)
    nxt = co.make(pos, mv)
    nxt["half"] = 0 if piece.upper() == "P" or capture else pos["half"] + 1
    return nxt


def san(pos, mv):
    (ff, fr), (tf, tr), pr = mv
    g = pos["grid"]
    piece = g[fr][ff].upper()
    target = sq_name((tf, tr))
    if piece == "K" and abs(tf - ff) == 2:
        text = "O-O" if tf == 6 else "O-O-O"
    elif piece == "P":
        capture = ff != tf
        text = (FILES[ff] + "x" if capture else "") + target + ("=" + pr.upper() if pr else "")
    else:
        rivals = [m for m in co.legal(pos)
                  if m[1] == (tf, tr) and m[0] != (ff, fr) and g[m[0][1]][m[0][0]].upper() == piece]
        dis = ""
        if rivals:
            if all(m[0][0] != ff for m in rivals):
                dis = FILES[ff]
            elif all(m[0][1] != fr for m in rivals):
                dis = str(fr + 1)
            else:
                dis = sq_name((ff, fr))
        text = piece + dis + ("x" if g[tr][tf] is not None else "") + target
    nxt = co.make(pos, mv)
    if in_check(nxt):
        text += "#" if not co.legal(nxt) else "+"
    return text


def find_san(pos, text):
    for mv in co.legal(pos):
        if san(pos, mv).rstrip("+#") == text.rstrip("+#"):
            return mv
    raise ValueError(f"no move {text}")


def rep_key(pos):
    """Placement, side, castling, and the ep square only if an ep capture is legal."""
    rows = ["".join(p or "." for p in pos["grid"][r]) for r in range(8)]
    ep = pos["ep"]
    if ep is not None:
        caps = [m for m in co.legal(pos) if m[1] == ep and pos["grid"][m[0][1]][m[0][0]].upper() == "P"]
        if not caps:
            ep = None
    return ("/".join(rows), pos["white"], "".join(sorted(pos["castle"])), ep)


def insufficient(pos):
    pieces = [(p, (f + r) % 2) for r in range(8) for f in range(8)
              for p in [pos["grid"][r][f]] if p and p.upper() != "K"]
    if not pieces:
        return True
    if any(p.upper() in "PRQ" for p, _ in pieces):
        return False
    if len(pieces) == 1:
        return True
    if all(p.upper() == "B" for p, _ in pieces) and len({c for _, c in pieces}) == 1:
        return True
    return False


def expected_reason(positions, result, termination_header, last_comment=None):
    """Expected termination label, applying the documented precedence."""
    final = positions[-1]
    st = status(final)
    winner = {"1-0": "white", "0-1": "black"}.get(result)
    drawn = result == "1/2-1/2"
    keys = [rep_key(p) for p in positions]
    reps = keys.count(keys[-1])
    if st == "mate":
        return "Checkmate", ("black" if final["white"] else "white")
    if st == "stalemate":
        return "Stalemate", None
    if insufficient(final):
        return "Insufficient material", None
    if reps >= 5:
        return "Fivefold repetition", None
    if final["half"] >= 150:
        return "Seventy-five moves", None
    if termination_header == "Time forfeit":
        return "Time forfeit", winner
    if termination_header == "Abandoned":
        return "Abandoned", winner
    if drawn and reps >= 3:
        return "Threefold repetition", None
    if drawn and final["half"] >= 100:
        return "Fifty moves", None
    c = (last_comment or "").lower()
    if "resign" in c and winner:
        return "Resigned", winner
    if "time" in c:
        return "Time forfeit", winner
    if winner:
        return "Resigned", winner
    if drawn:
        return "Draw by agreement", None
    return "Other", None


def rule_label(positions):
    """Rule-only outcome of the final position (None if play could continue)."""
    final = positions[-1]
    st = status(final)
    if st == "mate":
        return "Checkmate"
    if st == "stalemate":
        return "Stalemate"
    if insufficient(final):
        return "Insufficient material"
    keys = [rep_key(p) for p in positions]
    reps = keys.count(keys[-1])
    if reps >= 5:
        return "Fivefold repetition"
    if final["half"] >= 150:
        return "Seventy-five moves"
    if reps >= 3:
        return "Threefold repetition"
    if final["half"] >= 100:
        return "Fifty moves"
    return None
