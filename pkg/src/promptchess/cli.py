"""``promptchess`` command line: ingestion, sampling, benchmarks, evaluation, model demos.

Every subcommand reads its options from the command line, optionally
backed by a YAML config file (``--config``).  A config file holds global
keys (``seed``, ``threads``, ``log_level``) and one mapping per subcommand
whose keys are the long option names, e.g.::

    seed: 7
    ingest-stage2:
      in: runs/stage1
      out: runs/stage2
      filters: {min_plies: 20}

Environment variables override the file: ``PROMPTCHESS_SEED=3`` for a
global key, ``PROMPTCHESS_INGEST_STAGE2__MIN_PLIES=20``-style names for a
subcommand key.  Explicit command-line options override both.

Exit status is 0 on success, 1 for configuration errors and 2 for data
errors; failures print a single ``promptchess: error kind=... message=...``
line on stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence

log = logging.getLogger("promptchess")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2
ENV_PREFIX = "PROMPTCHESS_"
GLOBAL_KEYS = ("seed", "threads", "log_level")


class ConfigError(Exception):
    """Bad options, a malformed config file, or a missing input path."""


class DataError(Exception):
    """Inputs exist but their contents are unusable."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# -- configuration --------------------------------------------------------------

def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    import yaml

    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return cfg


def _env_key(name: str) -> str:
    return name.upper().replace("-", "_")


def apply_env(cfg: dict, environ=None) -> dict:
    """Overlay ``PROMPTCHESS_*`` variables (values parsed as YAML scalars)."""
    import yaml

    environ = os.environ if environ is None else environ
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in cfg.items()}
    for var, raw in sorted(environ.items()):
        if not var.startswith(ENV_PREFIX):
            continue
        key = var[len(ENV_PREFIX):]
        value = yaml.safe_load(raw) if raw != "" else None
        if "__" in key:
            section, opt = key.split("__", 1)
            name = next((c for c in COMMANDS if _env_key(c) == section), None)
            if name is None:
                raise ConfigError(f"{var}: unknown subcommand section")
            cfg.setdefault(name, {})[opt.lower()] = value
        elif key.lower() in GLOBAL_KEYS:
            cfg[key.lower()] = value
    return cfg


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _section_defaults(parser: argparse.ArgumentParser, section: dict, where: str) -> dict:
    """Map config keys (long option names such as ``in`` or ``min-clock-seconds``) to dests."""
    known = {}
    for action in parser._actions:
        if action.dest == "help":
            continue
        known[action.dest] = action.dest
        for opt in action.option_strings:
            if opt.startswith("--"):
                known[opt[2:].replace("-", "_")] = action.dest
    out = {}
    for key, value in section.items():
        name = str(key).replace("-", "_")
        if name not in known:
            raise ConfigError(f"{where}: unknown option {key!r}")
        out[known[name]] = value
    return out


# -- shared helpers ---------------------------------------------------------------

def _existing(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing required path: {what}")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {path}")
    return p


def _stage_dir(path, what: str) -> Path:
    p = _existing(path, what)
    if not (p / "manifest.json").is_file():
        raise ConfigError(f"{what} has no manifest.json: {path}")
    return p


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n" for r in rows)


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True, default=str))


def _filters(value):
    from .pipeline import FilterPolicy

    if value is None:
        return FilterPolicy()
    if isinstance(value, (str, Path)):
        value = load_config(str(value))
    if not isinstance(value, dict):
        raise ConfigError("filters must be a mapping or a YAML file")
    try:
        return FilterPolicy.from_dict(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"filters: {exc}") from None


def _months(value) -> Optional[tuple]:
    if value is None:
        return None
    items = value.split(",") if isinstance(value, str) else list(value)
    out = []
    for item in items:
        try:
            y, m = str(item).strip().split("-")
            out.append((int(y), int(m)))
        except ValueError:
            raise ConfigError(f"month {item!r} is not YYYY-MM") from None
    return tuple(out)


def _players(value) -> Optional[tuple]:
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return tuple(value)
    p = _existing(value, "player list")
    return tuple(line.strip() for line in p.read_text(encoding="utf-8").splitlines() if line.strip())


# -- subcommands ------------------------------------------------------------------

def cmd_ingest_stage1(a) -> int:
    from .pipeline import MAX_GAMES_PER_SHARD, run_stage1

    m = run_stage1(_existing(a.pgn, "PGN input"), a.out, a.max_games or MAX_GAMES_PER_SHARD, a.format)
    _emit({"stage": 1, "games": m["games"], "shards": len(m["shards"]), "out": str(a.out)})
    return EXIT_OK


def cmd_ingest_stage2(a) -> int:
    from .pipeline import MAX_GAMES_PER_SHARD, run_stage2

    m = run_stage2(_stage_dir(a.input, "Stage 1 directory"), a.out, _filters(a.filters), a.threads,
                   a.max_games or MAX_GAMES_PER_SHARD, a.format)
    _emit({"stage": 2, "games_in": m["games_in"], "games_kept": m["games_kept"], "corrupt": m["corrupt"],
           "drops": m["drops"], "out": str(a.out)})
    return EXIT_OK


def run_pipeline(pgn, out_dir, policy=None, threads: int = 1, max_games=None, fmt: str = "jsonl",
                 cfg_hash: Optional[str] = None) -> dict:
    """Stage 1 then Stage 2 into ``out_dir/{stage1,stage2}`` plus ``summary.json``."""
    from .pipeline import MAX_GAMES_PER_SHARD, FilterPolicy, run_stage1, run_stage2

    out_dir = Path(out_dir)
    max_games = max_games or MAX_GAMES_PER_SHARD
    m1 = run_stage1(pgn, out_dir / "stage1", max_games, fmt)
    m2 = run_stage2(out_dir / "stage1", out_dir / "stage2", policy or FilterPolicy(), threads, max_games, fmt)
    mean_bins: Counter = Counter()
    for s in m2["shards"]:
        mean_bins[s["partition"][0]] += s["games"]
    summary = {
        "games_scanned": m1["games"],
        "games_kept": m2["games_kept"],
        "corrupt": m2["corrupt"],
        "drops": m2["drops"],
        "mean_elo_bins": [[b, n] for b, n in sorted(mean_bins.items())],
        "partitions": len(m2["shards"]),
        "config_hash": cfg_hash,
    }
    _atomic_write(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_pipeline(a) -> int:
    summary = run_pipeline(_existing(a.pgn, "PGN input"), a.out, _filters(a.filters), a.threads,
                           a.max_games, a.format, a.config_hash)
    _emit(summary)
    return EXIT_OK


def cmd_normalize_openings(a) -> int:
    from .openings import best_score, load_openings, normalize_games, write_review_queue
    from .pipeline import read_records

    src = _stage_dir(a.input, "Stage 2 directory")
    db = load_openings(_existing(a.db, "opening DB") if a.db else None)
    rows, unresolved, methods = [], Counter(), Counter()
    for rec, res, prefix in normalize_games(read_records(src), db, a.threshold):
        methods[res.method.value if res else "unmatched"] += 1
        if res is None and rec.Opening:
            unresolved[(rec.ECO, rec.Opening)] += 1
        rows.append({
            "site": rec.Site, "eco": rec.ECO, "opening": rec.Opening,
            "canonical_eco": res.entry.eco if res else None, "canonical_name": res.entry.name if res else None,
            "method": res.method.value if res else None, "score": res.score if res else None,
            "prefix": list(prefix),
        })
    _atomic_write(a.out, _jsonl(rows))
    if a.review:
        Path(a.review).parent.mkdir(parents=True, exist_ok=True)
        write_review_queue(a.review, [(eco, name, best_score(name, db)) for eco, name in sorted(
            unresolved, key=lambda k: (k[0] or "", k[1]))])
    _emit({"games": len(rows), "methods": dict(methods), "review_rows": len(unresolved)})
    return EXIT_OK


def cmd_sample(a) -> int:
    from .pipeline import read_records
    from .sampler import draw_samples

    if a.budget is None or a.budget < 0:
        raise ConfigError("--budget must be a nonnegative integer")
    if not 0 < a.epoch_cap:
        raise ConfigError("--epoch-cap must be positive")
    records = list(read_records(_stage_dir(a.input, "Stage 2 directory")))
    picks = draw_samples(records, a.budget, a.seed, a.epoch_cap, a.ply_mode, a.min_ply, a.unit)
    rows = [{"site": records[g].Site, "ply": p} for g, p in picks]
    _atomic_write(a.out, _jsonl(rows))
    _emit({"games": len(records), "samples": len(rows), "budget": a.budget})
    return EXIT_OK


def cmd_build_benchmark(a) -> int:
    from . import benchmarks as bm
    from .openings import load_openings
    from .pipeline import read_records
    from .prompts import load_catalog

    if a.kind not in bm.KINDS:
        raise ConfigError(f"--kind must be one of {', '.join(bm.KINDS)}")
    games = list(read_records(_stage_dir(a.input, "Stage 2 directory")))
    db = load_openings(_existing(a.db, "opening DB") if a.db else None)
    stats = bm.BuildStats()
    if a.kind in ("LOB-P", "LOB-C"):
        positions = bm.build_lob(games, db, "partial" if a.kind == "LOB-P" else "canonical", stats,
                                 size_cap=a.size_cap)
    else:
        templates = load_catalog(_existing(a.templates, "template catalog") if a.templates else None)
        elo_range = None
        if a.elo_min is not None or a.elo_max is not None:
            elo_range = (a.elo_min if a.elo_min is not None else 0, a.elo_max if a.elo_max is not None else 10_000)
        elif a.kind == "LIF-D":
            elo_range = (900, 1100)
        players = _players(a.players)
        if a.kind == "LIF-T10" and not players:
            raise ConfigError("LIF-T10 needs --players")
        try:
            spec = bm.BenchmarkSpec(a.kind, elo_range=elo_range, months=_months(a.months), players=players,
                                    elo_shift=bm.LGB_SHIFT if a.kind == "LGB" else 0,
                                    size_cap=None if a.kind == "M1-S" else a.size_cap,
                                    plies_per_game=a.plies_per_game)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        positions = bm.build_lif(games, templates, spec, a.seed, db, stats=stats)
        if a.kind == "M1-S":
            positions = bm.stratify_m1s(positions, a.per_stratum, a.seed, a.stratify_on)
            if a.size_cap is not None:
                positions = positions[:a.size_cap]
    if a.skip_first:
        positions = bm.skip_first_plies(positions, a.skip_first)
    if a.aux:
        positions = bm.build_aux_variant(positions, {bm._game_id(g): g for g in games})
    bm.validate_positions(positions)
    Path(a.out).parent.mkdir(parents=True, exist_ok=True)
    n = bm.write_benchmark(a.out, positions)
    _emit({"kind": a.kind, "games": stats.games, "positions": n, "skipped": dict(stats.skipped),
           "template_fallbacks": stats.template_fallbacks})
    return EXIT_OK


def run_eval(bench, preds, out_dir, skip_first: int = 0, min_clock_seconds=None, also_unfiltered: bool = False,
             seed: int = 0, cfg_hash: Optional[str] = None) -> dict:
    """Report JSON and heatmap CSV under ``out_dir``; returns the report."""
    from .benchmarks import read_benchmark
    from .metrics import apply_eval_filters, elo_heatmap, evaluate, heatmap_csv, join_predictions
    from .metrics import per_record_hits, read_predictions, resolve_records

    positions = read_benchmark(bench)
    predictions = read_predictions(preds)
    records, missing = join_predictions(positions, predictions)
    extra = sorted(set(predictions) - {p.id for p in positions})
    if extra:
        raise DataError(f"{len(extra)} prediction ids are not in the benchmark, first: {extra[0]}")
    out_dir = Path(out_dir)
    variants = [("filtered", skip_first, min_clock_seconds)]
    if also_unfiltered:
        variants.append(("unfiltered", 0, None))
    report = {"benchmark": Path(bench).name, "predictions": Path(preds).name, "missing_ids": missing,
              "config_hash": cfg_hash, "seed": seed}
    for name, skip, clock in variants:
        report[name] = evaluate(records, skip, clock, seed, len(missing)).to_dict()
        kept = resolve_records(apply_eval_filters(records, skip, clock), seed)
        grid = elo_heatmap(kept, per_record_hits(kept))
        _atomic_write(out_dir / f"heatmap_{name}.csv", heatmap_csv(grid))
    _atomic_write(out_dir / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def cmd_evaluate(a) -> int:
    report = run_eval(_existing(a.bench, "benchmark"), _existing(a.preds, "predictions"), a.out, a.skip_first,
                      a.min_clock_seconds, a.also_unfiltered, a.seed, a.config_hash)
    for pid in report["missing_ids"]:
        print(f"promptchess: warning kind=missing_prediction id={pid}", file=sys.stderr)
    f = report["filtered"]
    _emit({"acc_at_1": f["acc_at_1"], "expected_acc": f["expected_acc"], "evaluated": f["counts"]["evaluated"],
           "missing": len(report["missing_ids"])})
    return EXIT_OK


def cmd_stats(a) -> int:
    from .pipeline import format_termination_table, read_records, termination_stats

    rows = termination_stats(read_records(_stage_dir(a.input, "Stage 2 directory")))
    table = format_termination_table(rows)
    if a.out:
        _atomic_write(a.out, table)
    sys.stdout.write(table)
    return EXIT_OK


def _elo_grid(a) -> list:
    if a.elo_step <= 0 or a.elo_max < a.elo_min:
        raise ConfigError("Elo grid needs elo-step > 0 and elo-max >= elo-min")
    grid = list(range(a.elo_min, a.elo_max + 1, a.elo_step))
    if len(grid) < 2:
        raise ConfigError("Elo grid needs at least two values")
    return grid


def _load_model(path):
    from .model import BackboneConfig, PromptConditionedModel, load_checkpoint

    if path is None:
        return PromptConditionedModel(BackboneConfig())
    try:
        return load_checkpoint(_existing(path, "checkpoint"))
    except (ValueError, KeyError, RuntimeError) as exc:
        raise DataError(f"{path}: {exc}") from None


DEFAULT_SWEEP_TEMPLATE = "A game between two players rated {elo}. Play the next move."


def run_diagnostics(checkpoint, out_dir, seed: int = 0, n_positions: int = 16, elo_grid=(1000, 1500, 2000),
                    template: str = DEFAULT_SWEEP_TEMPLATE, fen: Optional[str] = None) -> dict:
    """Residual statistics, attention-sink rates and an Elo continuity sweep as CSV files."""
    import numpy as np
    import torch

    from .chess import BoardState, parse_fen, random_game
    from .diagnostics import attention_sink_rate, mean_residual_stats, policy_continuity, residual_rows, rows_to_csv
    from .encoding import PositionHistory, encode_position

    model = _load_model(checkpoint)
    rng_states = [random_game(seed * 7919 + i, max_plies=12 + i % 20)[-1] for i in range(n_positions)]
    prompts = [template.replace("{elo}", str(elo_grid[i % len(elo_grid)])) for i in range(n_positions)]
    planes = np.stack([encode_position(PositionHistory.single(s)) for s in rng_states])
    with torch.no_grad():
        _, trace = model(planes, prompts)
    stats = mean_residual_stats([trace])
    # a site whose residuals are identically zero has no concentration ratio; it is omitted
    res_rows = [r for r in residual_rows(stats) if r["ratio"] is not None]
    sinks = attention_sink_rate([trace])
    state = parse_fen(fen) if fen else BoardState.start()
    sweep = policy_continuity(model, state, template, elo_grid)
    out_dir = Path(out_dir)
    _atomic_write(out_dir / "residual_stats.csv", rows_to_csv(res_rows, ["site", "mean_abs", "max_abs", "ratio"]))
    _atomic_write(out_dir / "sink_rates.csv",
                  rows_to_csv([{"site": k, "rate": v} for k, v in sorted(sinks.items())], ["site", "rate"]))
    _atomic_write(out_dir / "continuity_steps.csv", rows_to_csv(sweep["steps"], ["elo_from", "elo_to", "cosine", "l2"]))
    _atomic_write(out_dir / "continuity_topk.csv", rows_to_csv(sweep["topk"], ["elo", "rank", "move", "prob"]))
    return {"residual_sites": len(res_rows), "sink_sites": len(sinks), "steps": len(sweep["steps"])}


def cmd_diagnostics(a) -> int:
    _existing(a.checkpoint, "checkpoint")
    _emit(run_diagnostics(a.checkpoint, a.out, a.seed, a.positions, _elo_grid(a), a.template, a.fen))
    return EXIT_OK


def cmd_model_demo(a) -> int:
    from .model import BackboneConfig, accuracy, save_checkpoint, steerability_task, train_toy

    if a.action == "train-toy":
        data = steerability_task(seed=a.seed)
        model, curve = train_toy(data, a.steps, a.lr, a.seed, BackboneConfig(seed=a.seed), target_acc=a.target_acc)
        if a.checkpoint:
            Path(a.checkpoint).parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(a.checkpoint, model)
        if a.curve:
            _atomic_write(a.curve, "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(curve)))
        _emit({"steps": len(curve), "final_loss": curve[-1] if curve else None,
               "acc_conditioned": accuracy(model, data), "acc_frozen": accuracy(model, data, conditioned=False)})
    elif a.action == "continuity":
        from .chess import BoardState, parse_fen
        from .diagnostics import policy_continuity, rows_to_csv

        model = _load_model(a.checkpoint)
        state = parse_fen(a.fen) if a.fen else BoardState.start()
        sweep = policy_continuity(model, state, a.template, _elo_grid(a))
        text = rows_to_csv(sweep["steps"], ["elo_from", "elo_to", "cosine", "l2"])
        if a.out:
            _atomic_write(a.out, text)
        sys.stdout.write(text)
    elif a.action == "zero-init":
        import numpy as np
        import torch

        from .chess import random_game
        from .encoding import PositionHistory, encode_position
        from .model import PromptConditionedModel

        model = PromptConditionedModel(BackboneConfig(seed=a.seed))
        rng = np.random.default_rng(a.seed)
        states = [random_game(a.seed * 1000 + i, max_plies=int(rng.integers(0, 40)))[-1] for i in range(a.pairs)]
        planes = np.stack([encode_position(PositionHistory.single(s)) for s in states])
        prompts = [f"prompt {int(rng.integers(1 << 30))}" for _ in states]
        with torch.no_grad():
            diff = (model(planes, prompts)[0] - model.forward_frozen(planes)).abs().max()
        _emit({"pairs": a.pairs, "max_abs_diff": float(diff)})
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def _add_shard_opts(p):
    p.add_argument("--max-games", type=int, default=None, help="games per shard")
    p.add_argument("--format", choices=("jsonl", "parquet"), default="jsonl")


def _add_grid_opts(p):
    p.add_argument("--elo-min", type=int, default=1000)
    p.add_argument("--elo-max", type=int, default=2000)
    p.add_argument("--elo-step", type=int, default=500)
    p.add_argument("--template", default=DEFAULT_SWEEP_TEMPLATE, help="prompt text containing {elo}")
    p.add_argument("--fen", default=None, help="position to sweep (default: start)")


def build_parser() -> tuple:
    parser = _Parser(prog="promptchess", description="Prompt-conditioned chess move prediction toolkit.")
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    parser.add_argument("--threads", type=int, default=None, help="worker cap (default 1)")
    parser.add_argument("--log-level", default=None, choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    subs = {}

    p = subs["ingest-stage1"] = sub.add_parser("ingest-stage1", help="scan a PGN file into Stage 1 shards")
    p.add_argument("--pgn", default=None)
    p.add_argument("--out", default=None)
    _add_shard_opts(p)

    p = subs["ingest-stage2"] = sub.add_parser("ingest-stage2", help="replay, filter and partition Stage 1 shards")
    p.add_argument("--in", dest="input", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--filters", default=None, help="YAML file (or config mapping) of filter options")
    _add_shard_opts(p)

    p = subs["pipeline"] = sub.add_parser("pipeline", help="Stage 1 and Stage 2 in one run, with a summary")
    p.add_argument("--pgn", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--filters", default=None)
    _add_shard_opts(p)

    p = subs["normalize-openings"] = sub.add_parser("normalize-openings", help="match opening names to the DB")
    p.add_argument("--in", dest="input", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--review", default=None, help="TSV review queue for unmatched names")
    p.add_argument("--db", default=None, help="opening TSV (default: bundled)")
    p.add_argument("--threshold", type=int, default=85)

    p = subs["sample"] = sub.add_parser("sample", help="Unimax sampling of training plies")
    p.add_argument("--in", dest="input", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--epoch-cap", type=float, default=1.0)
    p.add_argument("--unit", choices=("plies", "games"), default="plies")
    p.add_argument("--ply-mode", choices=("proportional", "unimax"), default="proportional")
    p.add_argument("--min-ply", type=int, default=0)

    p = subs["build-benchmark"] = sub.add_parser("build-benchmark", help="construct an evaluation benchmark")
    p.add_argument("--kind", default=None)
    p.add_argument("--in", dest="input", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--templates", default=None, help="template catalog JSONL (default: bundled)")
    p.add_argument("--db", default=None)
    p.add_argument("--months", default=None, help="comma-separated YYYY-MM list")
    p.add_argument("--players", default=None, help="file with one username per line")
    p.add_argument("--elo-min", type=int, default=None)
    p.add_argument("--elo-max", type=int, default=None)
    p.add_argument("--plies-per-game", type=int, default=1)
    p.add_argument("--per-stratum", type=int, default=1, help="M1-S picks per (Elo, time control) stratum")
    p.add_argument("--stratify-on", choices=("active", "mean"), default="active")
    p.add_argument("--size-cap", type=int, default=None)
    p.add_argument("--skip-first", type=int, default=0)
    p.add_argument("--aux", action="store_true", default=False)

    p = subs["evaluate"] = sub.add_parser("evaluate", help="score predictions against a benchmark")
    p.add_argument("--bench", default=None)
    p.add_argument("--preds", default=None)
    p.add_argument("--out", default=None, help="directory for report.json and heatmap CSVs")
    p.add_argument("--skip-first", type=int, default=0)
    p.add_argument("--min-clock-seconds", type=float, default=None)
    p.add_argument("--also-unfiltered", action="store_true", default=False)

    p = subs["stats"] = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("what", choices=("terminations",))
    p.add_argument("--in", dest="input", default=None)
    p.add_argument("--out", default=None)

    p = subs["diagnostics"] = sub.add_parser("diagnostics", help="residual, sink and continuity CSVs")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--positions", type=int, default=16)
    _add_grid_opts(p)

    p = subs["model-demo"] = sub.add_parser("model-demo", help="toy-scale model runs")
    p.add_argument("action", choices=("train-toy", "continuity", "zero-init"))
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--target-acc", type=float, default=0.95)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--curve", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--pairs", type=int, default=100)
    _add_grid_opts(p)
    return parser, subs


COMMANDS = {
    "ingest-stage1": cmd_ingest_stage1,
    "ingest-stage2": cmd_ingest_stage2,
    "pipeline": cmd_pipeline,
    "normalize-openings": cmd_normalize_openings,
    "sample": cmd_sample,
    "build-benchmark": cmd_build_benchmark,
    "evaluate": cmd_evaluate,
    "stats": cmd_stats,
    "diagnostics": cmd_diagnostics,
    "model-demo": cmd_model_demo,
}
REQUIRED = {
    "ingest-stage1": ("pgn", "out"), "ingest-stage2": ("input", "out"), "pipeline": ("pgn", "out"),
    "normalize-openings": ("input", "out"), "sample": ("input", "out", "budget"),
    "build-benchmark": ("kind", "input", "out"), "evaluate": ("bench", "preds", "out"),
    "stats": ("input",), "diagnostics": ("checkpoint", "out"),
}


def parse_args(argv: Optional[Sequence[str]] = None, environ=None) -> argparse.Namespace:
    parser, subs = build_parser()
    first = parser.parse_args(argv)
    if first.command is None:
        raise ConfigError("no subcommand given")
    cfg = apply_env(load_config(first.config), environ)
    unknown = set(cfg) - set(GLOBAL_KEYS) - set(COMMANDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    section = cfg.get(first.command) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"config section {first.command!r} must be a mapping")
    subs[first.command].set_defaults(**_section_defaults(subs[first.command], section, first.command))
    args = parser.parse_args(argv)
    for key, default in (("seed", 0), ("threads", 1), ("log_level", "WARNING")):
        if getattr(args, key) is None:
            setattr(args, key, cfg.get(key, default))
    if not isinstance(args.seed, int) or isinstance(args.seed, bool):
        raise ConfigError("seed must be an integer")
    if not isinstance(args.threads, int) or args.threads < 1:
        raise ConfigError("threads must be a positive integer")
    for dest in REQUIRED.get(args.command, ()):
        if getattr(args, dest, None) is None:
            raise ConfigError(f"{args.command}: missing required option {dest}")
    effective = {k: v for k, v in vars(args).items() if k not in ("config",)}
    args.config_hash = config_hash(effective)
    return args


def _error_line(kind: str, message: str) -> str:
    return f"promptchess: error kind={kind} message={json.dumps(str(message), ensure_ascii=False)}"


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .chess import FenError, IllegalMoveError
    from .pgn import CorruptGameError

    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(_error_line("config", exc), file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        import torch

        torch.set_num_threads(args.threads)
    except ImportError:  # pragma: no cover
        pass
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(_error_line("config", exc), file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CorruptGameError, IllegalMoveError, FenError, ValueError, KeyError,
            json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(_error_line("data", exc), file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
