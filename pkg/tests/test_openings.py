from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from promptchess.openings import (
    MatchMethod,
    MatchResult,
    OpeningDB,
    OpeningEntry,
    canonical_prefix,
    load_openings,
    match_opening,
    normalize_name,
    token_sort_ratio,
    validate_db,
    write_review_queue,
)


def edit_distance_sub2(a, b):
    """Weighted Levenshtein with substitution cost 2 (equivalent to insert+delete)."""
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (0 if a[i - 1] == b[j - 1] else 2))
    return d[-1][-1]


def oracle_ratio(a, b):
    sa, sb = " ".join(normalize_name(a)), " ".join(normalize_name(b))
    total = len(sa) + len(sb)
    if total == 0:
        return 100
    x = Fraction(100 * (total - edit_distance_sub2(sa, sb)), total)
    return int(x + Fraction(1, 2))  # half-up


class TestNormalize:
    def test_examples(self):
        assert normalize_name("Sicilian Defense: Najdorf Variation") == ["defense", "najdorf", "sicilian", "variation"]
        assert normalize_name("Réti Opening") == ["opening", "reti"]
        assert normalize_name("") == []

    def test_apostrophes_and_hyphens(self):
        assert normalize_name("King's Gambit") == ["gambit", "kings"]
        assert normalize_name("Caro-Kann") == ["caro", "kann"]


class TestTokenSortRatio:
    def test_examples(self):
        assert token_sort_ratio("Sicilian Defense", "Defense, Sicilian") == 100
        assert token_sort_ratio("abc", "abd") == 67
        assert token_sort_ratio("Italian Game", "Italian Game") == 100
        assert token_sort_ratio("", "") == 100
        assert token_sort_ratio("abc", "") == 0

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet="abcde éx-,", max_size=14), st.text(alphabet="abcde éx-,", max_size=14))
    def test_matches_oracle_and_symmetric(self, a, b):
        r = token_sort_ratio(a, b)
        assert r == oracle_ratio(a, b)
        assert r == token_sort_ratio(b, a)
        assert 0 <= r <= 100
        assert (r == 100) == (normalize_name(a) == normalize_name(b))


@pytest.fixture(scope="module")
def db():
    return load_openings()


class TestDatabase:
    def test_bundled_lines_legal(self, db):
        assert len(db) >= 40
        validate_db(db)

    def test_reti_loaded(self, db):
        assert db.get("A06", "Réti Opening").lines == (("g1f3", "d7d5"),)


class TestMatch:
    def test_exact(self, db):
        r = match_opening("B22", "Sicilian Defense: Alapin Variation", db)
        assert r.method == MatchMethod.EXACT and r.score == 100

    def test_reordered_is_fuzzy_100(self, db):
        r = match_opening("B22", "Alapin Variation Sicilian Defense", db)
        assert r.method == MatchMethod.FUZZY and r.score == 100
        assert r.entry.name == "Sicilian Defense: Alapin Variation"

    def test_rule_spelling(self, db):
        r = match_opening("B22", "Sicilian Defence: Alapin Variation", db)
        assert r.method == MatchMethod.RULE
        assert r.entry.eco == "B22"

    def test_threshold(self):
        small = OpeningDB([OpeningEntry("A00", "abcdefghij", (("e2e4",),))])
        assert token_sort_ratio("abcdefzzzz", "abcdefghij") == 60
        assert match_opening("A00", "abcdefzzzz", small, threshold=85) is None
        assert match_opening("A00", "abcdefzzzz", small, threshold=60).score == 60

    def test_global_fallback(self, db):
        r = match_opening("Z99", "Najdorf Variation Sicilian Defense", db)
        assert r.entry.eco == "B90" and r.method == MatchMethod.FUZZY

    def test_tie_break_lexicographic(self):
        a = OpeningEntry("B01", "Foo Opening", (("e2e4",),))
        b = OpeningEntry("A00", "Foo Opening", (("d2d4",),))
        for order in ([a, b], [b, a]):
            r = match_opening(None, "Opening Foo", OpeningDB(order))
            assert r.entry is b

    def test_exact_requires_100(self):
        with pytest.raises(ValueError):
            MatchResult(OpeningEntry("A00", "x", (("e2e4",),)), 99, MatchMethod.EXACT)


class TestPrefix:
    entry = OpeningEntry("B50", "t", (("e2e4", "c7c5", "g1f3", "d7d6"), ("e2e4", "c7c5", "c2c3")))

    def oracle(self, played):
        best = ()
        for line in self.entry.lines:
            for n in range(len(line) + 1):
                if tuple(played[:n]) == line[:n] and n > len(best):
                    best = line[:n]
        return best

    def test_examples(self):
        assert canonical_prefix(self.entry, ["e2e4", "c7c5", "c2c3", "d7d5"]) == ("e2e4", "c7c5", "c2c3")
        assert canonical_prefix(self.entry, ["d2d4", "d7d5"]) == ()
        assert canonical_prefix(self.entry, ["e2e4", "c7c5", "g1f3", "d7d6"]) == self.entry.lines[0]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from(["e2e4", "c7c5", "g1f3", "d7d6", "c2c3"]), max_size=6))
    def test_property(self, played):
        got = canonical_prefix(self.entry, played)
        assert got == self.oracle(played)
        assert tuple(played[: len(got)]) == got
        assert any(line[: len(got)] == got for line in self.entry.lines)


def test_review_queue(tmp_path):
    p = tmp_path / "q.tsv"
    assert write_review_queue(p, [("A00", "Weird Opening", 42)]) == 1
    assert p.read_text().splitlines() == ["eco\tname\tbest_score", "A00\tWeird Opening\t42"]
