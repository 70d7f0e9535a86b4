"""Opening-name normalisation, fuzzy matching and canonical prefix recovery."""
from __future__ import annotations

import csv
import enum
import string
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

DEFAULT_THRESHOLD = 85

# Spelling variants folded together by the rule stage.
SPELLING_MAP = {
    "defence": "defense",
    "var": "variation",
    "gambito": "gambit",
}

_PUNCT = str.maketrans({c: " " for c in string.punctuation if c != "'"} | {"'": None, "’": None})


class MatchMethod(str, enum.Enum):
    EXACT = "exact"
    RULE = "rule"
    FUZZY = "fuzzy"


@dataclass(frozen=True)
class OpeningEntry:
    eco: str
    name: str
    lines: tuple  # tuple of tuples of UCI strings

    def __post_init__(self):
        if len(self.eco) != 3:
            raise ValueError(f"ECO code must have 3 characters: {self.eco!r}")
        if any(len(line) == 0 for line in self.lines):
            raise ValueError("opening lines must be non-empty")


@dataclass(frozen=True)
class MatchResult:
    entry: OpeningEntry
    score: int
    method: MatchMethod

    def __post_init__(self):
        if self.method == MatchMethod.EXACT and self.score != 100:
            raise ValueError("exact matches score 100")


# letters that carry no combining mark under NFKD
_NON_DECOMPOSING = str.maketrans({"ł": "l", "Ł": "L", "ø": "o", "Ø": "O", "ß": "ss", "đ": "d", "Đ": "D"})


def strip_diacritics(text: str) -> str:
    folded = unicodedata.normalize("NFKD", text or "")
    folded = "".join(c for c in folded if not unicodedata.combining(c))
    return unicodedata.normalize("NFC", folded.translate(_NON_DECOMPOSING))


def _tokens(text: str) -> list:
    return strip_diacritics(text).lower().translate(_PUNCT).split()


def normalize_name(text: str) -> list:
    """Lowercase, strip diacritics and punctuation, split, sort."""
    return sorted(_tokens(text))


def lcs_length(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b):
            cur.append(prev[j] + 1 if ca == cb else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def indel_distance(a: str, b: str) -> int:
    return len(a) + len(b) - 2 * lcs_length(a, b)


def token_sort_ratio(a: str, b: str) -> int:
    """Similarity 0-100 of the token-sorted normalised strings (insert/delete edits only).

    Rounded half-up; two empty strings score 100.
    """
    sa, sb = " ".join(normalize_name(a)), " ".join(normalize_name(b))
    total = len(sa) + len(sb)
    if total == 0:
        return 100
    common = 2 * lcs_length(sa, sb)  # = total - indel distance
    return (200 * common + total) // (2 * total)


def _canonical_tokens(text: str) -> tuple:
    return tuple(SPELLING_MAP.get(t, t) for t in _tokens(text))


class OpeningDB:
    def __init__(self, entries: Iterable[OpeningEntry]):
        self.entries = tuple(sorted(entries, key=lambda e: (e.eco, e.name)))
        self._by_key = {(e.eco, e.name): e for e in self.entries}
        self._by_eco: dict = {}
        for e in self.entries:
            self._by_eco.setdefault(e.eco, []).append(e)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def get(self, eco: str, name: str) -> Optional[OpeningEntry]:
        return self._by_key.get((eco, name))

    def by_eco(self, eco: str) -> list:
        return self._by_eco.get(eco, [])


def load_openings(path=None) -> OpeningDB:
    """Read a TSV with columns eco, name, uci-moves; rows sharing (eco, name) merge."""
    if path is None:
        text = resources.files("promptchess.data").joinpath("openings.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    lines: dict = {}
    reader = csv.DictReader(text.splitlines(), delimiter="\t")
    for row in reader:
        key = (row["eco"].strip(), row["name"].strip())
        moves = tuple(row["uci-moves"].split())
        lines.setdefault(key, [])
        if moves not in lines[key]:
            lines[key].append(moves)
    return OpeningDB(OpeningEntry(eco, name, tuple(ls)) for (eco, name), ls in lines.items())


def validate_db(db: OpeningDB) -> None:
    """Raise if any line is illegal from the start position."""
    from .chess import BoardState, Move, apply_move

    for e in db:
        for line in e.lines:
            s = BoardState.start()
            for u in line:
                s = apply_move(s, Move.from_uci(u))


def _best_fuzzy(name: str, candidates: Sequence[OpeningEntry]) -> Optional[tuple]:
    best = None
    for e in candidates:  # candidates are pre-sorted by (eco, name); strict > keeps the first
        score = token_sort_ratio(name, e.name)
        if best is None or score > best[0]:
            best = (score, e)
    return best


def match_opening(eco: Optional[str], name: str, db: OpeningDB, threshold: int = DEFAULT_THRESHOLD,
                  eco_first: bool = True) -> Optional[MatchResult]:
    """Exact, then rule-normalised, then fuzzy (same ECO first, then global)."""
    if eco:
        hit = db.get(eco, name)
        if hit is not None:
            return MatchResult(hit, 100, MatchMethod.EXACT)
        canon = _canonical_tokens(name)
        for e in db.by_eco(eco):
            if _canonical_tokens(e.name) == canon:
                return MatchResult(e, 100, MatchMethod.RULE)
    pools = []
    if eco and eco_first:
        pools.append(db.by_eco(eco))
    pools.append(db.entries)
    for pool in pools:
        best = _best_fuzzy(name, pool)
        if best is not None and best[0] >= threshold:
            return MatchResult(best[1], best[0], MatchMethod.FUZZY)
    return None


def best_score(name: str, db: OpeningDB) -> int:
    best = _best_fuzzy(name, db.entries)
    return best[0] if best else 0


def canonical_prefix(entry: OpeningEntry, played: Sequence[str]) -> tuple:
    """Longest prefix of any database line that is also a prefix of ``played``."""
    played = tuple(played)
    best: tuple = ()
    for line in entry.lines:
        n = 0
        while n < len(line) and n < len(played) and line[n] == played[n]:
            n += 1
        if n > len(best):
            best = line[:n]
    return best


def write_review_queue(path, rows: Iterable[tuple]) -> int:
    """Write unresolved ``(eco, name, best_score)`` rows as TSV; returns the row count."""
    rows = list(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["eco", "name", "best_score"])
        for eco, name, score in rows:
            w.writerow([eco or "", name or "", score])
    return len(rows)


def normalize_games(records, db: OpeningDB, threshold: int = DEFAULT_THRESHOLD):
    """Yield ``(record, MatchResult | None, prefix)`` for Stage 2 records."""
    for rec in records:
        res = match_opening(rec.ECO, rec.Opening or "", db, threshold)
        prefix = canonical_prefix(res.entry, rec.Moves) if res else ()
        yield rec, res, prefix
