import logging

import pytest

from promptchess.benchmarks import (
    BenchmarkPosition,
    BenchmarkSpec,
    BuildStats,
    build_aux_variant,
    build_lgb,
    build_lif,
    build_lob,
    move_delay,
    read_benchmark,
    round_half_up,
    skip_first_plies,
    stratify_m1s,
    validate_positions,
    write_benchmark,
)
from promptchess.chess import BoardState, Move, legal_moves, push, random_game
from promptchess.openings import load_openings
from promptchess.pgn import Stage2Record, parse_game, scan_headers
from promptchess.prompts import PromptTemplate, default_catalog

SIMPLE = [PromptTemplate("simple", "instruct", "Play {time_control_lower} chess at {white_elo}.")]
ALAPIN = ["e2e4", "c7c5", "c2c3", "d7d5", "e4d5", "d8d5", "d2d4", "g8f6", "g1f3", "c8g4", "f1e2", "e7e6"]


def record(moves, site="g1", opening=None, eco=None, white=1500, black=1600, result="1-0",
           clocks=None, base=180, inc=2, **kw):
    mean = None if white is None or black is None else (white + black) // 2
    fields = dict(
        Event="Rated Blitz game", Site=site, White=f"{site}-w", Black=f"{site}-b", Result=result,
        WhiteElo=white, BlackElo=black, MeanElo=mean, TimeControl=f"{base}+{inc}", TcDelay=base,
        TcIncrement=inc, TimeControlName="Blitz", Year=2023, Month=1, Day=15, ECO=eco, Opening=opening,
        Moves=list(moves), Length=len(moves), Clocks=clocks, TerminationReason="Resigned",
    )
    fields.update(kw)
    return Stage2Record(**fields)


def random_moves(seed, n):
    pos = random_game(seed, max_plies=n)
    out = []
    for a, b in zip(pos, pos[1:]):
        out.append(next(m.uci for m in legal_moves(a) if push(a, m) == b))
    return out


@pytest.fixture(scope="module")
def db():
    return load_openings()


@pytest.fixture(scope="module")
def fixture_games(fixtures_dir):
    return [parse_game(r) for r in scan_headers((fixtures_dir / "games100.pgn").read_bytes())]


class TestLob:
    def test_canonical_contains_continuation(self, db):
        rec = record(ALAPIN, opening="Sicilian Defense: Alapin Variation", eco="B22")
        out = build_lob([rec], db, "canonical")
        assert [p.ply for p in out] == [0, 1, 2]
        at2 = out[2]
        assert at2.history == ["e2e4", "c7c5"] and at2.target == "c2c3"
        assert "1. e4 c5 2. c3" in at2.prompt
        assert "Sicilian Defense: Alapin Variation" in at2.prompt

    def test_partial_stops_at_current_ply(self, db):
        rec = record(ALAPIN, opening="Sicilian Defense: Alapin Variation", eco="B22")
        out = build_lob([rec], db, "partial")
        at2 = out[2]
        assert at2.prompt.endswith("by playing 1. e4 c5.")
        assert "c3" not in at2.prompt
        assert "by playing" not in out[0].prompt
        assert "black pieces" in out[1].prompt

    def test_unmatched_skipped_and_counted(self, db):
        stats = BuildStats()
        recs = [record(ALAPIN, opening="Completely Unknown Line", eco="Z99"),
                record(ALAPIN, site="g2", opening=None)]
        assert build_lob(recs, db, "partial", stats) == []
        assert stats.skipped["unmatched_opening"] == 2

    def test_no_prefix_counted(self, db):
        stats = BuildStats()
        rec = record(["d2d4", "d7d5"], opening="Sicilian Defense: Alapin Variation", eco="B22")
        assert build_lob([rec], db, "canonical", stats) == []
        assert stats.skipped["no_canonical_prefix"] == 1

    def test_bad_mode(self, db):
        with pytest.raises(ValueError):
            build_lob([], db, "both")


class TestLif:
    def test_lif_d_window(self):
        inside = record(random_moves(1, 30), site="in", white=1000, black=1000)
        outside = record(random_moves(2, 30), site="out", white=1200, black=1200)
        stats = BuildStats()
        out = build_lif([inside, outside], SIMPLE, BenchmarkSpec.lif_d(), seed=3, stats=stats)
        assert {p.game_id for p in out} == {"in"}
        assert stats.skipped["elo_window"] == 1

    def test_lif_d_month(self):
        rec = record(random_moves(1, 30), white=1000, black=1000)
        empty = build_lif([rec], SIMPLE, BenchmarkSpec.lif_d(months=((2023, 2),)))
        assert empty == []
        kept = build_lif([rec], SIMPLE, BenchmarkSpec.lif_d(months=((2023, 1),)))
        assert len(kept) == 1

    def test_deterministic(self, fixture_games, tmp_path):
        cat = default_catalog()
        a = build_lif(fixture_games, cat, seed=11)
        b = build_lif(list(reversed(fixture_games)), cat, seed=11)
        write_benchmark(tmp_path / "a.jsonl", a)
        write_benchmark(tmp_path / "b.jsonl", sorted(b, key=lambda p: [q.id for q in a].index(p.id)))
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        assert [p.to_row() for p in read_benchmark(tmp_path / "a.jsonl")] == [p.to_row() for p in a]
        assert build_lif(fixture_games, cat, seed=12) != a

    def test_fallback_logged(self, caplog):
        needs_opening = PromptTemplate("o", "instruct", "Open with the {opening}.")
        plain = PromptTemplate("p", "instruct", "Play at {white_elo}.")
        rec = record(random_moves(5, 20))
        stats = BuildStats()
        with caplog.at_level(logging.DEBUG, logger="promptchess.benchmarks"):
            out = []
            for seed in range(20):
                out += build_lif([rec], [needs_opening, plain], seed=seed, stats=stats)
        assert all(p.prompt == "Play at 1500." for p in out)
        assert stats.template_fallbacks > 0
        assert "fell back" in caplog.text

    def test_t10_player_list(self):
        a = record(random_moves(7, 20), site="a")
        b = record(random_moves(8, 20), site="b")
        out = build_lif([a, b], SIMPLE, BenchmarkSpec("LIF-T10", players=("b-b",), plies_per_game=5))
        assert {p.game_id for p in out} == {"b"}
        assert all(p.ply % 2 == 1 for p in out)

    def test_targets_legal(self, fixture_games):
        out = build_lif(fixture_games, default_catalog(), spec=BenchmarkSpec("LIF", plies_per_game=3), seed=0)
        assert out
        validate_positions(out)
        for p in out:
            assert p.ply == len(p.history)


class TestLgb:
    def test_shift_each_player(self):
        t = PromptTemplate("e", "instruct", "{white_elo} v {black_elo}")
        rec = record(random_moves(3, 20), white=2200, black=2050)
        (p,) = build_lgb([rec], [t])
        assert p.prompt == "2700 v 2550"
        assert p.elo_shift == 500 and p.white_elo == 2200

    def test_missing_rating_excluded(self):
        t = PromptTemplate("e", "instruct", "{white_elo} v {black_elo}")
        stats = BuildStats()
        assert build_lgb([record(random_moves(3, 20), black=None)], [t], stats=stats) == []
        assert stats.skipped["missing_rating"] == 1

    def test_shift_only_for_lgb(self):
        with pytest.raises(ValueError):
            BenchmarkSpec("LIF", elo_shift=500)
        with pytest.raises(ValueError):
            BenchmarkSpec("NOPE")


def _positions_for(rec, plies):
    state = BoardState.start()
    out = []
    for i, u in enumerate(rec.Moves):
        if i in plies:
            out.append(BenchmarkPosition(f"x:{i}", "LIF", rec.Site, i, state.fen, list(rec.Moves[:i]),
                                         "P.", u, rec.WhiteElo, rec.BlackElo, rec.TimeControl, rec.TimeControlName))
        state = push(state, Move.from_uci(u))
    return out


class TestAux:
    def test_plies_remaining(self):
        rec = record(random_moves(4, 40))
        assert rec.Length == 40
        (p,) = build_aux_variant(_positions_for(rec, {10}), {rec.Site: rec})
        assert p.aux["plies_remaining"] == 29

    @pytest.mark.parametrize("result,z", [("1-0", 1), ("0-1", -1), ("1/2-1/2", 0)])
    def test_result(self, result, z):
        rec = record(random_moves(4, 12), result=result)
        out = build_aux_variant(_positions_for(rec, set(range(12))), {rec.Site: rec})
        assert {p.aux["result"] for p in out} == {z}
        validate_positions(out)

    def test_move_delay_and_suffix(self):
        clocks = [180, 179, 175, 171, 170]
        rec = record(random_moves(9, 5), clocks=clocks, base=180, inc=2)
        out = build_aux_variant(_positions_for(rec, {0, 4}), {rec.Site: rec})
        assert out[0].aux["move_delay"] == 2.0  # 180 - 180 + 2
        assert out[1].aux["move_delay"] == 7.0  # 175 - 170 + 2
        assert "Time remaining for the active player: 175s." in out[1].prompt
        assert move_delay(rec, 4) == 7.0

    def test_missing_clocks_keeps_position(self):
        rec = record(random_moves(9, 6), clocks=None)
        (p,) = build_aux_variant(_positions_for(rec, {3}), {rec.Site: rec})
        assert p.aux["move_delay"] is None
        assert p.aux["plies_remaining"] == 2
        assert "The time control for this blitz chess game was 3 minutes" in p.prompt


class TestStratify:
    @pytest.mark.parametrize("elo,stratum", [(1543, 1500), (1550, 1600), (1549, 1500), (1650, 1700)])
    def test_rounding(self, elo, stratum):
        assert round_half_up(elo) == stratum

    def test_one_per_stratum(self):
        rec = record(random_moves(3, 6), white=1520, black=1480)
        ps = _positions_for(rec, {0, 2, 1})
        picks = [stratify_m1s(ps, k=1, seed=5) for _ in range(3)]
        assert picks[0] == picks[1] == picks[2]
        # white to move at plies 0 and 2 (1500), black at ply 1 (1500): one stratum
        assert len(picks[0]) == 1
        assert len(stratify_m1s(ps, k=1, seed=5, on="mean")) == 1

    def test_strata_split_on_active_elo(self):
        rec = record(random_moves(3, 6), white=1520, black=1780)
        ps = _positions_for(rec, {0, 1, 2, 3})
        assert len(stratify_m1s(ps, k=1)) == 2
        assert len(stratify_m1s(ps, k=5)) == 4


class TestSkip:
    def test_boundary(self):
        rec = record(random_moves(6, 12))
        ps = _positions_for(rec, set(range(12)))
        kept = skip_first_plies(ps, 10)
        assert [p.ply for p in kept] == [10, 11]
        assert skip_first_plies(ps, 0) == ps


def test_invalid_ply_history():
    with pytest.raises(ValueError):
        BenchmarkPosition("x", "LIF", "g", 2, BoardState.start().fen, ["e2e4"], "", "e7e5")


def test_validate_catches_illegal_target():
    p = BenchmarkPosition("x", "LIF", "g", 0, BoardState.start().fen, [], "", "e2e5")
    with pytest.raises(ValueError):
        validate_positions([p])
