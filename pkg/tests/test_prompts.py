import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from promptchess.pgn import Stage2Record
from promptchess.prompts import (
    FIELDS,
    INSTRUCT_TOGGLES,
    EXAMPLE_TEMPLATES,
    MetadataContext,
    MissingFieldError,
    PromptTemplate,
    augment,
    aux_suffix,
    baseline_prompts,
    choose_family,
    default_catalog,
    elo_tc_header,
    format_duration,
    format_time_control,
    gm_header,
    load_catalog,
    metadata_prompt,
    pick_template,
    render,
)


class FixedRng:
    """Returns queued values from ``random()``."""

    def __init__(self, *values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


def blitz_ctx(**kw):
    base = dict(white_elo=1500, black_elo=1600, time_control_name="Blitz", base_seconds=300, increment_seconds=0)
    base.update(kw)
    return MetadataContext(**base)


def rich_ctx():
    return MetadataContext(
        white_elo=2850, black_elo=2790, white_title="GM", black_title="IM",
        white_alias="DrNykterstein", black_alias="Réti_fan", white_name="Magnus Carlsen", black_name="Ann Example",
        base_seconds=180, increment_seconds=2, rated=True, time_control_name="Blitz",
        date=dt.date(2023, 1, 15), opening="Sicilian Defense: Alapin Variation", opening_moves="1. e4 c5 2. c3",
    )


class TestGolden:
    def test_f2(self, fixtures_dir):
        expected = (fixtures_dir / "prompts" / "f2_metadata_prompt.txt").read_bytes()
        assert metadata_prompt(blitz_ctx()).encode() == expected

    def test_f3(self, fixtures_dir):
        assert gm_header().encode() == (fixtures_dir / "prompts" / "f3_gm_header.txt").read_bytes()
        assert gm_header().endswith("]\n\n")

    def test_f4(self, fixtures_dir):
        got = elo_tc_header(1500, 1600, "300+0").encode()
        assert got == (fixtures_dir / "prompts" / "f4_elo_tc_header.txt").read_bytes()

    def test_f5_time_control_only(self, fixtures_dir):
        got = aux_suffix(blitz_ctx())
        assert got.encode() == (fixtures_dir / "prompts" / "f5_time_control.txt").read_bytes()
        assert "with no additional increment" in got

    def test_f5_with_clocks(self, fixtures_dir):
        ctx = blitz_ctx(base_seconds=180, increment_seconds=2, clocks=[180, 179, 175, 171, 170], ply=4)
        got = aux_suffix(ctx)
        assert got.encode() == (fixtures_dir / "prompts" / "f5_with_clocks.txt").read_bytes()

    def test_baseline_bundle(self):
        out = baseline_prompts(blitz_ctx())
        assert set(out) == {"gm_header", "elo_tc_header", "metadata_prompt"}
        with pytest.raises(MissingFieldError):
            elo_tc_header(None, 1600, "300+0")


class TestFormatting:
    @pytest.mark.parametrize("base,inc,text", [
        (300, 0, "5 minutes with no additional increment"),
        (3661, 2, "1 hour, 1 minute, and 1 second with 2 seconds of increment"),
        (60, 1, "1 minute with 1 second of increment"),
        (90, 0, "1 minute and 30 seconds with no additional increment"),
        (7200, 0, "2 hours with no additional increment"),
    ])
    def test_time_control(self, base, inc, text):
        assert format_time_control(base, inc) == text

    def test_zero_duration(self):
        assert format_duration(0) == "0 seconds"
        with pytest.raises(ValueError):
            format_duration(-1)


class TestRender:
    def test_verbatim(self):
        t = PromptTemplate("x", "pretrain", "No placeholders here.")
        assert render(t, MetadataContext()) == "No placeholders here."

    def test_missing_field_named(self):
        t = PromptTemplate("x", "instruct", "Open with the {opening}.")
        with pytest.raises(MissingFieldError) as err:
            render(t, blitz_ctx())
        assert err.value.field == "opening"
        assert "opening" in str(err.value)

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError):
            PromptTemplate("x", "instruct", "{not_a_field}")

    def test_example_templates_render(self):
        ctx = rich_ctx()
        for t in EXAMPLE_TEMPLATES:
            text = render(t, ctx)
            assert "{" not in text and "}" not in text
        t2 = render(EXAMPLE_TEMPLATES[4], ctx)
        assert t2 == ("Play as Grandmaster DrNykterstein, taking the white pieces and opening the game with "
                      "1. e4 c5 2. c3, known as the Alapin Variation of the Sicilian Defense.")
        t0 = render(EXAMPLE_TEMPLATES[0], ctx)
        assert "on January 15, 2023, with each player given 180 seconds and 2 seconds per move" in t0
        assert "Sicilian Defense, Alapin Variation" in t0

    def test_injective(self):
        t = PromptTemplate("x", "instruct", "{white_elo} vs {black_elo} ({time_control})")
        seen = set()
        for w in (1000, 1500):
            for b in (1000, 1500):
                for tc in ((60, 0), (300, 5)):
                    seen.add(render(t, blitz_ctx(white_elo=w, black_elo=b, base_seconds=tc[0], increment_seconds=tc[1])))
        assert len(seen) == 8

    def test_from_record(self):
        rec = Stage2Record(Event="Rated Blitz game", White="a", Black="b", WhiteElo=1500, BlackElo=1600,
                           TcDelay=300, TcIncrement=0, TimeControlName="Blitz", Year=2023, Month=1, Day=2)
        ctx = MetadataContext.from_record(rec)
        assert ctx.rated is True and ctx.date == dt.date(2023, 1, 2)
        assert metadata_prompt(ctx).startswith("An anonymous white player with an ELO of 1500")


class TestCatalog:
    def test_counts_and_fields(self):
        cat = default_catalog()
        assert len(cat) == 6 + 2048
        assert len(INSTRUCT_TOGGLES) == 9
        assert len({t.id for t in cat}) == len(cat)
        for t in cat:
            assert t.required_fields <= set(FIELDS)

    def test_bundled_catalog_matches(self):
        assert [t.to_dict() for t in load_catalog()] == [t.to_dict() for t in default_catalog()]

    def test_pick_with_fallback(self):
        ctx = blitz_ctx(white_alias="a", black_alias="b")  # no titles, no opening
        rng = np.random.default_rng(0)
        for _ in range(50):
            t = pick_template(default_catalog(), ctx, rng, family="instruct")
            assert t is not None
            render(t, ctx)
        assert pick_template(EXAMPLE_TEMPLATES, ctx, rng, family="pretrain") is None

    def test_grid_renders_with_full_context(self):
        ctx = rich_ctx()
        for t in default_catalog()[6:]:
            text = render(t, ctx)
            assert "{" not in text


class TestAugment:
    def test_both(self):
        assert augment("Réti, PLAY!", FixedRng(0.0, 0.0)) == "reti, play!"

    def test_neither(self):
        assert augment("Réti, PLAY!", FixedRng(0.99, 0.99)) == "Réti, PLAY!"

    def test_rates(self):
        rng = np.random.default_rng(1)
        n = 100_000
        lowered = stripped = 0
        for _ in range(n):
            out = augment("Aé", rng)
            lowered += out[0] == "a"
            stripped += out[1] == "e"
        assert abs(lowered / n - 0.1) <= 0.005
        assert abs(stripped / n - 0.5) <= 0.005

    @settings(max_examples=100, deadline=None)
    @given(st.text(max_size=30))
    def test_idempotent(self, text):
        once = augment(text, FixedRng(0.0, 0.0))
        assert augment(once, FixedRng(0.0, 0.0)) == once


class TestFamily:
    def test_fair(self):
        rng = np.random.default_rng(2024)
        n = 100_000
        frac = sum(choose_family(rng) == "pretrain" for _ in range(n)) / n
        assert abs(frac - 0.5) <= 0.005

    def test_reproducible(self):
        a = [choose_family(np.random.default_rng(3)) for _ in range(3)]
        r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
        assert [choose_family(r1) for _ in range(20)] == [choose_family(r2) for _ in range(20)]
        assert len(set(a)) == 1

    def test_override(self):
        rng = np.random.default_rng(0)
        assert all(choose_family(rng, "instruct") == "instruct" for _ in range(100))
