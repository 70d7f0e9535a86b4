"""Prompt templates, metadata formatters, augmentation and baseline prompt formats.

Templates use ``{field}`` placeholders drawn from a fixed catalogue
(``FIELDS``).  Each catalogue entry maps a :class:`MetadataContext` to text,
or to ``None`` when the metadata it needs is missing; rendering a template
with an unavailable field raises :class:`MissingFieldError` so callers can
fall back to another template.
"""
from __future__ import annotations

import datetime as _dt
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from itertools import product
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .openings import strip_diacritics

PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
FAMILIES = ("pretrain", "instruct")

TITLE_NAMES = {
    "GM": "Grandmaster",
    "IM": "International Master",
    "FM": "FIDE Master",
    "CM": "Candidate Master",
    "NM": "National Master",
    "WGM": "Woman Grandmaster",
    "WIM": "Woman International Master",
    "WFM": "Woman FIDE Master",
    "WCM": "Woman Candidate Master",
    "LM": "Lichess Master",
    "BOT": "Bot",
}

# Skill words for the instruct grid's "textual skill description" toggle.
SKILL_BANDS = ((1200, "beginner"), (1600, "intermediate"), (2000, "advanced"), (2400, "expert"))


class MissingFieldError(KeyError):
    def __init__(self, name: str, template_id: str = ""):
        super().__init__(name)
        self.field = name
        self.template_id = template_id

    def __str__(self):
        where = f" in template {self.template_id!r}" if self.template_id else ""
        return f"metadata field {self.field!r} unavailable{where}"


@dataclass
class MetadataContext:
    white_elo: Optional[int] = None
    black_elo: Optional[int] = None
    white_title: Optional[str] = None
    black_title: Optional[str] = None
    white_alias: Optional[str] = None
    black_alias: Optional[str] = None
    white_name: Optional[str] = None
    black_name: Optional[str] = None
    base_seconds: Optional[int] = None
    increment_seconds: Optional[int] = None
    rated: Optional[bool] = None
    time_control_name: Optional[str] = None
    date: Optional[_dt.date] = None
    opening: Optional[str] = None
    opening_moves: Optional[str] = None  # SAN text, e.g. "1. e4 c5 2. c3"
    side: str = "white"
    clocks: Optional[Sequence] = None  # remaining seconds after each ply
    ply: Optional[int] = None  # index of the move about to be played
    result: Optional[str] = None

    @property
    def time_control(self) -> Optional[str]:
        if self.base_seconds is None or self.increment_seconds is None:
            return None
        return f"{self.base_seconds}+{self.increment_seconds}"

    @classmethod
    def from_record(cls, rec, opening_moves: Optional[str] = None, real_names: Optional[dict] = None,
                    side: str = "white", ply: Optional[int] = None) -> "MetadataContext":
        date = None
        if rec.Year and rec.Month and rec.Day:
            date = _dt.date(rec.Year, rec.Month, rec.Day)
        event = (rec.Event or "").lower()
        rated = True if event.startswith("rated") else False if event.startswith("casual") else None
        names = real_names or {}
        clocks = getattr(rec, "Clocks", None)
        return cls(
            white_elo=rec.WhiteElo, black_elo=rec.BlackElo,
            white_title=rec.WhiteTitle, black_title=rec.BlackTitle,
            white_alias=rec.White, black_alias=rec.Black,
            white_name=names.get(rec.White), black_name=names.get(rec.Black),
            base_seconds=rec.TcDelay, increment_seconds=rec.TcIncrement,
            rated=rated, time_control_name=rec.TimeControlName, date=date,
            opening=rec.Opening if rec.Opening not in (None, "?") else None,
            opening_moves=opening_moves, side=side,
            clocks=clocks if clocks and all(c is not None for c in clocks) else None,
            ply=ply, result=rec.Result,
        )


# -- formatters ---------------------------------------------------------------

def plural(n: int, unit: str) -> str:
    return f"{n} {unit}" if n == 1 else f"{n} {unit}s"


def join_list(parts: Sequence[str]) -> str:
    if len(parts) <= 1:
        return "".join(parts)
    if len(parts) == 2:
        return f"{parts[0]} and {parts[1]}"
    return ", ".join(parts[:-1]) + ", and " + parts[-1]


def format_duration(seconds: int) -> str:
    """Hours, minutes and seconds with pluralisation and list commas: '1 hour, 1 minute, and 1 second'."""
    if seconds < 0:
        raise ValueError("duration must be >= 0")
    h, rem = divmod(int(seconds), 3600)
    m, s = divmod(rem, 60)
    parts = [plural(v, u) for v, u in ((h, "hour"), (m, "minute"), (s, "second")) if v]
    return join_list(parts) if parts else "0 seconds"


def increment_text(inc: int) -> str:
    return "with no additional increment" if inc == 0 else f"with {plural(inc, 'second')} of increment"


def format_time_control(base_s: int, inc_s: int) -> str:
    """'5 minutes with no additional increment', '1 minute with 1 second of increment'."""
    return f"{format_duration(base_s)} {increment_text(inc_s)}"


def time_info(base_s: int, inc_s: int) -> str:
    inc = "no increment" if inc_s == 0 else f"an increment of {format_duration(inc_s)}"
    return f"a time control of {format_duration(base_s)} with {inc}"


def format_date(d: _dt.date) -> str:
    return f"{d.strftime('%B')} {d.day}, {d.year}"


def skill_description(elo: int) -> str:
    for bound, word in SKILL_BANDS:
        if elo < bound:
            return word
    return "master-level"


def format_seconds(value: float) -> str:
    return f"{int(math.floor(value + 0.5))}s"


def opening_parts(name: str) -> tuple:
    if ":" in name:
        family, variation = name.split(":", 1)
        return family.strip(), variation.strip()
    return name.strip(), None


# -- field catalogue ------------------------------------------------------------

def _needs(*values):
    return all(v is not None and v != "" for v in values)


def _title_full(t):
    return TITLE_NAMES.get(t, t) if t else None


def _side_fields(color: str) -> dict:
    up = color.capitalize()

    def g(name):
        return lambda c: getattr(c, f"{color}_{name}")

    elo, title, alias, real = g("elo"), g("title"), g("alias"), g("name")
    return {
        f"{color}_elo": lambda c: str(elo(c)) if _needs(elo(c)) else None,
        f"{color}_title": lambda c: title(c) if _needs(title(c)) else None,
        f"{color}_title_full": lambda c: _title_full(title(c)),
        f"{color}_title_full_paren_title": lambda c: f"{_title_full(title(c))} ({title(c)})" if _needs(title(c)) else None,
        f"{color}_title_full_quot_name": lambda c: f'{_title_full(title(c))} "{real(c)}"' if _needs(title(c), real(c)) else None,
        f"{color}_alias": lambda c: alias(c) if _needs(alias(c)) else None,
        f"{color}_alias_alias_paren": lambda c: f"(alias {alias(c)})" if _needs(alias(c)) else None,
        f"{color}_alias_known_as_quot_name": lambda c: f'{alias(c)} (known as "{real(c)}")' if _needs(alias(c), real(c)) else None,
        f"{color}_name": lambda c: real(c) if _needs(real(c)) else None,
        f"{color}_skill": lambda c: skill_description(elo(c)) if _needs(elo(c)) else None,
        f"{color}_rank_player_a": lambda c: _title_full(title(c)).lower() if _needs(title(c)) else None,
        f"{up[0]}_lit": lambda c: up,
        f"{color[0]}_lit_lower_pieces": lambda c: f"{color} pieces",
    }


def _tc(c, fn):
    return fn(c) if _needs(c.base_seconds, c.increment_seconds) else None


def _opening_variant(c):
    if not _needs(c.opening):
        return None
    fam, var = opening_parts(c.opening)
    return f"{var} of the {fam}" if var else fam


FIELDS: dict = {
    **_side_fields("white"),
    **_side_fields("black"),
    "date": lambda c: format_date(c.date) if c.date else None,
    "ratedness_lower": lambda c: None if c.rated is None else ("rated" if c.rated else "casual"),
    "time_control": lambda c: c.time_control,
    "time_control_lower": lambda c: c.time_control_name.lower() if _needs(c.time_control_name) else None,
    "td_all_seconds": lambda c: _tc(c, lambda c: plural(c.base_seconds, "second")),
    "text_td": lambda c: _tc(c, lambda c: format_duration(c.base_seconds)),
    "text_time_increment": lambda c: _tc(c, lambda c: plural(c.increment_seconds, "second")),
    "with_text_time_increment": lambda c: _tc(c, lambda c: increment_text(c.increment_seconds)),
    "time_increment_words_without_any_increment": lambda c: _tc(
        c, lambda c: "without any increment" if c.increment_seconds == 0
        else f"with an increment of {format_duration(c.increment_seconds)}"),
    "time_info": lambda c: _tc(c, lambda c: time_info(c.base_seconds, c.increment_seconds)),
    "opening": lambda c: c.opening if _needs(c.opening) else None,
    "opening_commas": lambda c: c.opening.replace(":", ",") if _needs(c.opening) else None,
    "opening_variant_name_of_the_main": _opening_variant,
    "opening_moves": lambda c: c.opening_moves if _needs(c.opening_moves) else None,
}


def field_value(name: str, ctx: MetadataContext) -> Optional[str]:
    if name not in FIELDS:
        raise KeyError(f"unknown template field {name!r}")
    return FIELDS[name](ctx)


def available_fields(ctx: MetadataContext) -> set:
    return {k for k, fn in FIELDS.items() if fn(ctx) is not None}


# -- templates -----------------------------------------------------------------

@dataclass(frozen=True)
class PromptTemplate:
    id: str
    family: str
    body: str
    required_fields: frozenset = field(default=frozenset())

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown template family {self.family!r}")
        found = frozenset(PLACEHOLDER_RE.findall(self.body))
        unknown = found - set(FIELDS)
        if unknown:
            raise ValueError(f"template {self.id}: unknown fields {sorted(unknown)}")
        if not self.required_fields:
            object.__setattr__(self, "required_fields", found)
        elif not found <= self.required_fields:
            raise ValueError(f"template {self.id}: placeholders not declared required")

    def to_dict(self) -> dict:
        return {"id": self.id, "family": self.family, "body": self.body,
                "required_fields": sorted(self.required_fields)}

    @classmethod
    def from_dict(cls, d: dict) -> "PromptTemplate":
        return cls(d["id"], d["family"], d["body"], frozenset(d.get("required_fields", ())))


def render(template: PromptTemplate, ctx: MetadataContext) -> str:
    values = {}
    for name in sorted(template.required_fields):
        v = field_value(name, ctx)
        if v is None:
            raise MissingFieldError(name, template.id)
        values[name] = v
    return PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template.body)


def can_render(template: PromptTemplate, ctx: MetadataContext) -> bool:
    return all(field_value(n, ctx) is not None for n in template.required_fields)


# Hand-written example templates, kept verbatim (including their wording quirks).
EXAMPLE_TEMPLATES = (
    PromptTemplate("pretrain-t10-1", "pretrain", (
        "This {time_control_lower} chess game was played online at Lichess.org on {date}, with each player "
        "given {td_all_seconds} and {text_time_increment} per move. The game featured "
        "{white_title_full_quot_name} {white_alias_alias_paren} as {W_lit}, with an Elo rating of {white_elo}, "
        "against {black_title_full_quot_name} {black_alias_alias_paren} as {B_lit}, who had a rating of "
        "{black_elo}. The opening used was the {opening_commas}, delineated by the moves: {opening_moves}.")),
    PromptTemplate("pretrain-t10-2", "pretrain", (
        "In a {ratedness_lower} {time_control_lower} chess game hosted on Lichess.org on {date}, "
        "{white_title_full_paren_title} {white_alias_known_as_quot_name}, rated {white_elo}, played as {W_lit} "
        "against {black_title_full_paren_title} {black_alias_known_as_quot_name} and rated {black_elo}. The "
        "game opened with the {opening}, starting with moves {opening_moves}. The time control for the match "
        "was {td_all_seconds} {with_text_time_increment} per move.")),
    PromptTemplate("pretrain-t10-3", "pretrain", (
        "On {date}, at Lichess.org, {white_title_full} {white_alias} (white) with an Elo rating of {white_elo} "
        "played against {black_title_full} {black_alias} (black) who had an Elo rating of {black_elo}. This "
        "rated {time_control_lower} game had a time control of {text_td} per player "
        "{time_increment_words_without_any_increment}. The game featured the {opening}, which began with the "
        "moves {opening_moves}.")),
    PromptTemplate("instruct-t10-1", "instruct", (
        "Join {black_title} {black_alias}, ELO {black_elo}, as he plays {B_lit} utilizing the {opening} with "
        "the opening moves {opening_moves}. Challenge this {black_rank_player_a} to a game on Lichess and test "
        "your skills against his opening strategy.")),
    PromptTemplate("instruct-t10-2", "instruct", (
        "Play as {white_title_full} {white_alias}, taking the {w_lit_lower_pieces} and opening the game with "
        "{opening_moves}, known as the {opening_variant_name_of_the_main}.")),
    PromptTemplate("instruct-t10-3", "instruct", (
        "In this chess game on Lichess, the player, controlling the {b_lit_lower_pieces}, opens with the "
        "{opening} by playing {opening_moves}.")),
)

METADATA_PROMPT = PromptTemplate("metadata-f2", "instruct", (
    "An anonymous white player with an ELO of {white_elo} plays chess against another anonymous black "
    "player, with an ELO of {black_elo} in a {time_control_lower} game on Lichess played with {time_info}."))

INSTRUCT_TOGGLES = ("title", "elo", "skill", "username", "real_name", "opening_name", "opening_moves",
                    "black_side", "request")


def _instruct_body(bits: dict, uncommon: bool, paraphrase: int) -> str:
    color = "black" if bits["black_side"] else "white"
    who = []
    if bits["title"]:
        who.append(f"{{{color}_title_full}}")
    if bits["real_name"]:
        who.append(f"{{{color}_name}}")
    player = " ".join(who) if who else "a player"
    if bits["username"]:
        player += f" (Lichess username {{{color}_alias}})" if who else f" known on Lichess as {{{color}_alias}}"
    if bits["elo"]:
        player += f" rated {{{color}_elo}}"
    if bits["skill"]:
        player += f" with {{{color}_skill}} skill"
    verb = "steering the game into" if uncommon else "opening with"
    if bits["opening_name"] and bits["opening_moves"]:
        opening = f", {verb} the {{opening}} ({{opening_moves}})"
    elif bits["opening_name"]:
        opening = f", {verb} the {{opening}}"
    elif bits["opening_moves"]:
        opening = f", {verb} the moves {{opening_moves}}"
    else:
        opening = ", choosing an offbeat opening" if uncommon else ""
    pieces = f"{{{color[0]}_lit_lower_pieces}}"
    if bits["request"]:
        if paraphrase == 0:
            return f"Play as {player}, taking the {pieces}{opening}."
        return f"Take the {pieces} and play like {player}{opening}."
    if paraphrase == 0:
        return f"In this chess game on Lichess, {player} controls the {pieces}{opening}."
    return f"This Lichess game features {player} with the {pieces}{opening}."


def instruct_grid() -> list:
    """2^9 inclusion toggles x {common, uncommon} x 2 paraphrases = 2048 templates.

    This is a programmatic reconstruction of the instruct family's
    combinatorics; the wording is ours.
    """
    out = []
    for values in product((False, True), repeat=len(INSTRUCT_TOGGLES)):
        bits = dict(zip(INSTRUCT_TOGGLES, values))
        code = "".join("1" if v else "0" for v in values)
        for uncommon in (False, True):
            for para in (0, 1):
                tid = f"instruct-grid-{code}-{'u' if uncommon else 'c'}{para}"
                out.append(PromptTemplate(tid, "instruct", _instruct_body(bits, uncommon, para)))
    return out


def default_catalog() -> list:
    return list(EXAMPLE_TEMPLATES) + instruct_grid()


def save_catalog(path, templates: Sequence[PromptTemplate]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in templates:
            fh.write(json.dumps(t.to_dict(), ensure_ascii=False) + "\n")


def load_catalog(path=None) -> list:
    if path is None:
        text = resources.files("promptchess.data").joinpath("templates.jsonl").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return [PromptTemplate.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


# -- sampling -----------------------------------------------------------------

def choose_family(rng: np.random.Generator, override: Optional[str] = None) -> str:
    draw = rng.random()  # consumed either way, so overrides do not shift later draws
    if override is not None:
        if override not in FAMILIES:
            raise ValueError(f"unknown family {override!r}")
        return override
    return "pretrain" if draw < 0.5 else "instruct"


def augment(prompt: str, rng: np.random.Generator, p_lower: float = 0.1, p_strip: float = 0.5) -> str:
    """Lowercase with probability ``p_lower``, then strip diacritics with ``p_strip``."""
    lower = rng.random() < p_lower
    strip = rng.random() < p_strip
    if lower:
        prompt = prompt.lower()
    if strip:
        prompt = strip_diacritics(prompt)
    return prompt


def pick_template(templates: Sequence[PromptTemplate], ctx: MetadataContext, rng: np.random.Generator,
                  family: Optional[str] = None) -> Optional[PromptTemplate]:
    """Uniform choice among templates of ``family`` whose fields are all available."""
    pool = [t for t in templates if (family is None or t.family == family) and can_render(t, ctx)]
    if not pool:
        return None
    return pool[int(rng.integers(len(pool)))]


# -- baseline formats ---------------------------------------------------------

def gm_header() -> str:
    return ('[White "Magnus Carlsen"]\n[Black "Garry Kasparov"]\n'
            '[WhiteElo "2900"]\n[BlackElo "2800"]\n\n')


def elo_tc_header(white_elo: int, black_elo: int, time_control: str) -> str:
    if white_elo is None or black_elo is None or not time_control:
        raise MissingFieldError("white_elo/black_elo/time_control")
    return (f'[White "???"]\n[Black "???"]\n[WhiteElo "{white_elo}"]\n'
            f'[BlackElo "{black_elo}"]\n[TimeControl "{time_control}"]\n\n')


def metadata_prompt(ctx: MetadataContext) -> str:
    return render(METADATA_PROMPT, ctx)


def baseline_prompts(ctx: MetadataContext) -> dict:
    out = {"gm_header": gm_header()}
    out["elo_tc_header"] = elo_tc_header(ctx.white_elo, ctx.black_elo, ctx.time_control)
    out["metadata_prompt"] = metadata_prompt(ctx)
    return out


def clock_fields(clocks: Sequence, ply: int, base: float, inc: float) -> dict:
    """Move times and remaining clocks for the player about to make move ``ply``.

    ``clocks[k]`` is the mover's remaining time after ply ``k``.  A move's
    duration is the clock before it, minus the clock after it, plus the
    increment; missing earlier plies count from the base time.
    """
    def remaining(k):
        return base if k < 0 else clocks[k]

    def taken(k):
        if k < 0:
            return 0.0
        return remaining(k - 2) - clocks[k] + inc

    return {
        "active_player_last_move_time": taken(ply - 2),
        "opponent_last_move_time": taken(ply - 1),
        "active_player_time_remaining": remaining(ply - 2),
        "opponent_time_remaining": remaining(ply - 1),
    }


def aux_suffix(ctx: MetadataContext) -> str:
    if ctx.base_seconds is None or ctx.increment_seconds is None:
        return ""
    tc = (ctx.time_control_name or "").lower()
    text = (f" The time control for this {tc} chess game was {format_duration(ctx.base_seconds)} "
            f"{increment_text(ctx.increment_seconds)}.")
    if ctx.clocks and ctx.ply is not None:
        f = clock_fields(ctx.clocks, ctx.ply, ctx.base_seconds, ctx.increment_seconds)
        text += (f" Time taken last turn by active player: {format_seconds(f['active_player_last_move_time'])}."
                 f" Time taken last turn by opponent: {format_seconds(f['opponent_last_move_time'])}."
                 f" Time remaining for the active player: {format_seconds(f['active_player_time_remaining'])}."
                 f" Time remaining for the opponent: {format_seconds(f['opponent_time_remaining'])}.")
    return text
