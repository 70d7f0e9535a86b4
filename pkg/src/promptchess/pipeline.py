"""Stage 1 and Stage 2 ingestion: filtering, Elo partitioning, shards, stats."""
from __future__ import annotations

import json
import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .chess import FORCED_DRAWS, TerminationKind
from .pgn import CorruptGameError, ScanStats, Stage1Record, Stage2Record, parse_game, scan_headers

log = logging.getLogger(__name__)

MAX_GAMES_PER_SHARD = 4096 * 1024
DROP_REASONS = (
    "variant", "bot", "lichess_master", "correspondence",
    "missing_elo", "missing_time_control", "min_plies",
)
_EXEMPT = {TerminationKind.CHECKMATE.value} | {k.value for k in FORCED_DRAWS}


@dataclass(frozen=True)
class FilterPolicy:
    exclude_bots: bool = True
    exclude_correspondence: bool = True
    require_elo: bool = True
    require_time_control: bool = True
    min_plies: int = 32
    exclude_titled_lichess_master: bool = True
    standard_only: bool = True

    def __post_init__(self):
        if self.min_plies < 0:
            raise ValueError("min_plies must be >= 0")

    @classmethod
    def from_dict(cls, cfg: Optional[dict]) -> "FilterPolicy":
        cfg = dict(cfg or {})
        unknown = set(cfg) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown filter options: {sorted(unknown)}")
        return cls(**cfg)


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: Optional[str] = None


def is_correspondence(rec: Stage1Record) -> bool:
    if (rec.TimeControl or "").strip() == "-":
        return True
    for text in (rec.TimeControlName, rec.Event):
        if text and "correspondence" in text.lower():
            return True
    return False


def apply_filters(rec: Stage2Record, policy: FilterPolicy = FilterPolicy()) -> FilterDecision:
    """Keep/drop decision; the first failing rule (in ``DROP_REASONS`` order) is reported."""
    titles = (rec.WhiteTitle, rec.BlackTitle)
    if policy.standard_only and (rec.IsFischerRandom or (rec.Variant or "Standard") != "Standard"):
        return FilterDecision(False, "variant")
    if policy.exclude_bots and "BOT" in titles:
        return FilterDecision(False, "bot")
    if policy.exclude_titled_lichess_master and "LM" in titles:
        return FilterDecision(False, "lichess_master")
    if policy.exclude_correspondence and is_correspondence(rec):
        return FilterDecision(False, "correspondence")
    if policy.require_elo and (rec.WhiteElo is None or rec.BlackElo is None):
        return FilterDecision(False, "missing_elo")
    if policy.require_time_control and rec.TcDelay is None:
        return FilterDecision(False, "missing_time_control")
    length = rec.Length if rec.Length is not None else 0
    if length < policy.min_plies and rec.TerminationReason not in _EXEMPT:
        return FilterDecision(False, "min_plies")
    return FilterDecision(True)


def elo_bin(value: int) -> int:
    return (value // 100) * 100


def partition_key(rec: Stage2Record) -> tuple:
    if rec.MeanElo is None or rec.DiffElo is None:
        raise ValueError("partition_key needs both Elo ratings")
    return elo_bin(rec.MeanElo), elo_bin(rec.DiffElo)


# -- shards ---------------------------------------------------------------------

def _dumps(row: dict) -> str:
    return json.dumps(row, ensure_ascii=False, separators=(",", ":"))


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


class ShardWriter:
    """Order-preserving writer that rolls over every ``max_games`` records.

    JSONL is always available; ``fmt="parquet"`` needs pyarrow.
    """

    def __init__(self, directory, max_games: int = MAX_GAMES_PER_SHARD, prefix: str = "shard", fmt: str = "jsonl"):
        if max_games <= 0:
            raise ValueError("max_games must be positive")
        if fmt not in ("jsonl", "parquet"):
            raise ValueError(f"unknown shard format {fmt!r}")
        self.directory = Path(directory)
        self.max_games = max_games
        self.prefix = prefix
        self.fmt = fmt
        self.shards: list = []
        self._rows: list = []
        self.total = 0

    def write(self, record) -> None:
        row = record.to_row() if hasattr(record, "to_row") else dict(record)
        self._rows.append(row)
        self.total += 1
        if len(self._rows) == self.max_games:
            self._flush()

    def _flush(self) -> None:
        if not self._rows:
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        name = f"{self.prefix}-{len(self.shards):05d}.{self.fmt}"
        path = self.directory / name
        if self.fmt == "jsonl":
            _atomic_write_text(path, "".join(_dumps(r) + "\n" for r in self._rows))
        else:
            import pyarrow as pa
            import pyarrow.parquet as pq

            tmp = path.with_name(name + ".tmp")
            pq.write_table(pa.Table.from_pylist(self._rows), tmp)
            os.replace(tmp, path)
        self.shards.append({"id": len(self.shards), "path": name, "games": len(self._rows)})
        self._rows = []

    def close(self) -> list:
        self._flush()
        return list(self.shards)


def write_shards(records: Iterable, writer: ShardWriter) -> list:
    for rec in records:
        writer.write(rec)
    return writer.close()


def read_shard(path) -> Iterator[dict]:
    path = Path(path)
    if path.suffix == ".parquet":
        import pyarrow.parquet as pq

        yield from pq.read_table(path).to_pylist()
        return
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def read_records(directory, cls=Stage2Record) -> Iterator:
    """Records from every shard listed in ``directory/manifest.json``, in shard order."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    for shard in manifest["shards"]:
        for row in read_shard(directory / shard["path"]):
            yield cls.from_row(row)


def write_manifest(directory, manifest: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "manifest.json"
    _atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    return path


# -- stage drivers ----------------------------------------------------------------

def run_stage1(pgn_path, out_dir, max_games: int = MAX_GAMES_PER_SHARD, fmt: str = "jsonl") -> dict:
    stats = ScanStats()
    writer = ShardWriter(out_dir, max_games, prefix="stage1", fmt=fmt)
    shards = write_shards(scan_headers(pgn_path, stats), writer)
    manifest = {
        "stage": 1,
        "source": Path(pgn_path).name,
        "shards": shards,
        "games": stats.games,
        "garbage_lines": stats.garbage_lines,
        "truncated": stats.truncated,
    }
    write_manifest(out_dir, manifest)
    return manifest


@dataclass
class Stage2Result:
    kept: list = field(default_factory=list)
    drops: Counter = field(default_factory=Counter)
    corrupt: int = 0
    seen: int = 0


def _process_rows(args) -> Stage2Result:
    rows, policy = args
    res = Stage2Result()
    for row in rows:
        res.seen += 1
        rec = Stage1Record.from_row(row)
        if policy.standard_only and (rec.IsFischerRandom or (rec.Variant or "Standard") != "Standard"):
            res.drops["variant"] += 1
            continue
        try:
            rec2 = parse_game(rec)
        except CorruptGameError as exc:
            log.info("corrupt game at byte %d: %s", rec.ByteOffsetStart, exc)
            res.corrupt += 1
            continue
        decision = apply_filters(rec2, policy)
        if decision.keep:
            res.kept.append(rec2)
        else:
            res.drops[decision.reason] += 1
    return res


def run_stage2(in_dir, out_dir, policy: FilterPolicy = FilterPolicy(), threads: int = 1,
               max_games: int = MAX_GAMES_PER_SHARD, fmt: str = "jsonl") -> dict:
    """Replay, filter and bin Stage 1 shards into per-(mean, diff) Elo partitions.

    Shards are processed in parallel when ``threads > 1``; results are merged
    in shard order so the output does not depend on scheduling.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    manifest = json.loads((in_dir / "manifest.json").read_text(encoding="utf-8"))
    jobs = [(list(read_shard(in_dir / s["path"])), policy) for s in manifest["shards"]]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_process_rows, jobs))
    else:
        results = [_process_rows(j) for j in jobs]

    drops: Counter = Counter()
    corrupt = seen = 0
    partitions: dict = {}
    for res in results:
        drops.update(res.drops)
        corrupt += res.corrupt
        seen += res.seen
        for rec in res.kept:
            partitions.setdefault(partition_key(rec), []).append(rec)

    shards = []
    for (mean_bin, diff_bin) in sorted(partitions):
        sub = f"mean_{mean_bin}_diff_{diff_bin}"
        writer = ShardWriter(out_dir / sub, max_games, prefix="stage2", fmt=fmt)
        for s in write_shards(partitions[(mean_bin, diff_bin)], writer):
            s = dict(s, id=len(shards), path=f"{sub}/{s['path']}", partition=[mean_bin, diff_bin])
            shards.append(s)
    out = {
        "stage": 2,
        "shards": shards,
        "games_in": seen,
        "games_kept": sum(s["games"] for s in shards),
        "corrupt": corrupt,
        "drops": {r: drops.get(r, 0) for r in DROP_REASONS},
        "filters": policy.__dict__.copy(),
    }
    write_manifest(out_dir, out)
    return out


# -- termination statistics -------------------------------------------------------

@dataclass(frozen=True)
class TerminationRow:
    reason: str
    count: int
    percent: Decimal


def termination_stats(records: Iterable) -> list:
    """Counts and half-up-rounded percentages (3 decimals) per termination reason.

    Rows are ordered by count (descending) then name; a trailing ``Total``
    row is appended when the input is non-empty.
    """
    counts = Counter(getattr(r, "TerminationReason", None) or "Other" for r in records)
    total = sum(counts.values())
    if total == 0:
        return []
    q = Decimal("0.001")
    rows = [
        TerminationRow(reason, n, (Decimal(100 * n) / Decimal(total)).quantize(q, rounding=ROUND_HALF_UP))
        for reason, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    ]
    rows.append(TerminationRow("Total", total, Decimal(100).quantize(q)))
    return rows


def format_termination_table(rows: list) -> str:
    """Plain-text table with the columns Termination Reason / Counts / Percentage (%)."""
    head = ("Termination Reason", "Counts", "Percentage (%)")
    body = [(r.reason, f"{r.count:,}", f"{r.percent:.3f}") for r in rows]
    w0 = max([len(head[0])] + [len(b[0]) for b in body])
    w1 = max([len(head[1])] + [len(b[1]) for b in body])
    w2 = max([len(head[2])] + [len(b[2]) for b in body])
    lines = [f"{head[0]:<{w0}}  {head[1]:>{w1}}  {head[2]:>{w2}}"]
    for i, (a, b, c) in enumerate(body):
        if a == "Total" and i == len(body) - 1:
            lines.append("-" * (w0 + w1 + w2 + 4))
        lines.append(f"{a:<{w0}}  {b:>{w1}}  {c:>{w2}}")
    return "\n".join(lines) + "\n"
