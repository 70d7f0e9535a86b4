import io

import numpy as np
import pytest

from promptchess.chess import BoardState, Move, legal_moves, parse_fen, push, random_game
from promptchess.encoding import (
    PLANE_HALFMOVE,
    PLANE_ONES,
    PLANE_SIDE_TO_MOVE,
    PLANE_ZEROS,
    POLICY_SIZE,
    PositionHistory,
    build_move_table,
    encode_position,
    mask_and_normalize,
    move_to_policy_index,
    policy_index_to_move,
    read_planes,
    write_planes,
)


def independent_table():
    """Re-derive the documented table order by filtering and sorting all square pairs."""
    queen_dirs = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)]
    knight = [(1, 2), (2, 1), (2, -1), (1, -2), (-1, -2), (-2, -1), (-2, 1), (-1, 2)]
    name = lambda f, r: "abcdefgh"[f] + str(r + 1)
    keyed = []
    for fs in range(64):
        for ts in range(64):
            if fs == ts:
                continue
            f0, r0, f1, r1 = fs % 8, fs // 8, ts % 8, ts // 8
            df, dr = f1 - f0, r1 - r0
            dist = max(abs(df), abs(dr))
            if df == 0 or dr == 0 or abs(df) == abs(dr):
                unit = (int(np.sign(df)), int(np.sign(dr)))
                keyed.append(((fs, 0, queen_dirs.index(unit), dist), name(f0, r0) + name(f1, r1)))
            elif (df, dr) in knight:
                keyed.append(((fs, 1, knight.index((df, dr)), 0), name(f0, r0) + name(f1, r1)))
            if r0 == 6 and r1 == 7 and abs(df) <= 1:
                for k, p in enumerate("qrb"):
                    keyed.append(((fs, 2, df + 1, k), name(f0, r0) + name(f1, r1) + p))
    return [u for _, u in sorted(keyed)]


class TestMoveTable:
    def test_size_and_bijection(self):
        table = build_move_table()
        assert len(table) == POLICY_SIZE == 1858
        for i in range(len(table)):
            assert table.forward(table.inverse(i)) == i
        assert len(set(table.moves)) == 1858

    def test_matches_independent_enumeration(self):
        assert list(build_move_table().moves) == independent_table()

    def test_knight_promotion_convention(self):
        s = parse_fen("4k3/P7/8/8/8/8/8/4K3 w - - 0 1")
        idx = build_move_table().forward("a7a8")
        assert idx == independent_table().index("a7a8")
        m = policy_index_to_move(idx, s)
        assert m == Move.from_uci("a7a8n")
        assert move_to_policy_index(Move.from_uci("a7a8n"), s) == idx
        assert move_to_policy_index(Move.from_uci("a7a8q"), s) != idx
        # non-pawn on a7 keeps the plain move
        s2 = parse_fen("4k3/R7/8/8/8/8/8/4K3 w - - 0 1")
        assert policy_index_to_move(idx, s2) == Move.from_uci("a7a8")

    def test_perspective_symmetry(self):
        start = BoardState.start()
        black = push(start, Move.from_uci("g1f3"))
        assert move_to_policy_index(Move.from_uci("e2e4"), start) == \
            move_to_policy_index(Move.from_uci("e7e5"), black)

    def test_all_legal_moves_encodable(self, random_positions):
        for s in random_positions:
            moves = legal_moves(s)
            idx = [move_to_policy_index(m, s) for m in moves]
            assert len(set(idx)) == len(idx)
            for i, m in zip(idx, moves):
                assert 0 <= i < POLICY_SIZE
                assert policy_index_to_move(i, s) == m


class TestPlanes:
    def test_start_position(self):
        s = BoardState.start()
        p = encode_position(PositionHistory.single(s), s)
        assert p.shape == (112, 8, 8) and p.dtype == np.float32
        assert p[0].sum() == 8 and p[0, 1].sum() == 8
        assert p[13:104].sum() == 0
        assert p[104:108].sum() == 4 * 64

    def test_halfmove_plane(self):
        s = parse_fen("4k3/8/8/8/8/8/8/4K2R w K - 50 80")
        p = encode_position(PositionHistory.single(s))
        assert np.allclose(p[PLANE_HALFMOVE], 50 / 99, atol=1e-7, rtol=0)
        assert abs(float(p[PLANE_HALFMOVE, 3, 3]) - 0.5050505050) < 1e-7

    def test_constant_planes(self, random_positions):
        for i, s in enumerate(random_positions[:200]):
            p = encode_position(PositionHistory.single(s))
            assert np.all(p[PLANE_ZEROS] == 0)
            assert np.all(p[PLANE_ONES] == 1)
            assert np.allclose(p[PLANE_HALFMOVE], s.halfmove_clock / 99, atol=1e-7, rtol=0)
            assert set(np.unique(p[:104])) <= {0.0, 1.0}

    def test_history_order_and_padding(self):
        game = random_game(3, 4)
        hist = PositionHistory.from_game(game)
        assert hist.states[0] == game[-1]
        p = encode_position(hist)
        assert p[5 * 13:104].sum() == 0  # frames 5..7 missing
        assert p[4 * 13:4 * 13 + 12].sum() == 32

    def test_repetition_plane(self):
        game = [BoardState.start()]
        for u in ["g1f3", "g8f6", "f3g1", "f6g8"]:
            game.append(push(game[-1], Move.from_uci(u)))
        p = encode_position(PositionHistory.from_game(game))
        assert np.all(p[12] == 1)  # current position repeats the start
        assert np.all(p[13 + 12] == 0)

    def test_history_too_long(self):
        s = BoardState.start()
        with pytest.raises(ValueError):
            PositionHistory((s,) * 9, (False,) * 9)

    def test_pure(self):
        game = random_game(11, 30)
        h = PositionHistory.from_game(game)
        assert encode_position(h).tobytes() == encode_position(h).tobytes()

    def test_perspective_involution(self):
        pairs = 0
        seed = 0
        while pairs < 100:
            game = random_game(seed, 5 + seed % 40)
            seed += 1
            h = PositionHistory.from_game(game)
            mirrored = PositionHistory(tuple(s.mirror() for s in h.states), h.repetition_flags)
            a, b = encode_position(h), encode_position(mirrored)
            mask = np.ones(112, bool)
            mask[PLANE_SIDE_TO_MOVE] = False
            assert np.array_equal(a[mask], b[mask])
            assert a[PLANE_SIDE_TO_MOVE, 0, 0] != b[PLANE_SIDE_TO_MOVE, 0, 0]
            pairs += 1

    def test_piece_counts_bounded(self, random_positions):
        for s in random_positions[:200]:
            p = encode_position(PositionHistory.single(s))
            assert p[0].sum() <= 8 and p[6].sum() <= 8
            assert p[5].sum() == 1 and p[11].sum() == 1

    def test_file_round_trip(self):
        p = encode_position(PositionHistory.from_game(random_game(5, 20)))
        buf = io.BytesIO()
        write_planes(buf, p)
        raw = buf.getvalue()
        assert raw[:4] == b"PCPL" and len(raw) == 4 + 4 + 12 + 112 * 64 * 4
        buf.seek(0)
        assert np.array_equal(read_planes(buf), p)


class TestMaskAndNormalize:
    def test_uniform(self):
        s = BoardState.start()
        d = mask_and_normalize(np.zeros(POLICY_SIZE), s)
        assert len(d.legal) == 20
        for i in d.legal:
            assert d.probs[i] == pytest.approx(0.05, abs=1e-15)
        assert d.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_spike(self):
        s = BoardState.start()
        logits = np.zeros(POLICY_SIZE)
        idx = move_to_policy_index(Move.from_uci("e2e4"), s)
        logits[idx] = 500.0
        d = mask_and_normalize(logits, s)
        assert d.probs[idx] == pytest.approx(1.0)
        assert d.argmax() == Move.from_uci("e2e4")

    def test_sums_to_one(self, random_positions):
        rng = np.random.default_rng(0)
        n = 0
        for s in random_positions:
            if not legal_moves(s):
                continue
            d = mask_and_normalize(rng.normal(0, 5, POLICY_SIZE), s)
            assert abs(d.probs.sum() - 1.0) <= 1e-9
            illegal = np.ones(POLICY_SIZE, bool)
            illegal[list(d.legal)] = False
            assert np.all(d.probs[illegal] == 0)
            n += 1
            if n == 100:
                break

    def test_terminal_errors(self):
        s = parse_fen("7k/5Q2/6K1/8/8/8/8/8 b - - 0 1")
        with pytest.raises(ValueError):
            mask_and_normalize(np.zeros(POLICY_SIZE), s)
