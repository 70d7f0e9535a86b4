"""Move-prediction and auxiliary-target metrics, dev score, Elo heatmaps."""
from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .benchmarks import BenchmarkPosition, round_half_up
from .chess import BoardState, IllegalMoveError, Move, legal_moves, parse_fen, parse_san, parse_uci
from .encoding import move_to_policy_index

NORMALIZATION_TOL = 1e-6
AUX_CATEGORICAL = ("result", "termination")
AUX_SCALAR = ("plies_remaining", "move_delay")


@dataclass
class PredictionRecord:
    """One prediction: either a move distribution (``{uci: p}``) or raw move text."""

    id: str
    target: str
    fen: str
    probs: Optional[dict] = None
    move_text: Optional[str] = None
    white_elo: Optional[int] = None
    black_elo: Optional[int] = None
    time_control_name: Optional[str] = None
    ply: int = 0
    clock: Optional[float] = None
    aux: dict = field(default_factory=dict)  # predicted aux values
    aux_truth: Optional[dict] = None

    def __post_init__(self):
        if (self.probs is None) == (self.move_text is None):
            raise ValueError(f"{self.id}: exactly one of probs / move_text must be set")

    @property
    def state(self) -> BoardState:
        return parse_fen(self.fen)


def _check_distribution(rec: PredictionRecord) -> dict:
    probs = rec.probs
    if any(p < 0 or not math.isfinite(p) for p in probs.values()):
        raise ValueError(f"{rec.id}: probabilities must be finite and nonnegative")
    total = math.fsum(probs.values())
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise ValueError(f"{rec.id}: distribution sums to {total!r}, not 1")
    return probs


def legal_fallback(move_text: str, state: BoardState, rng: np.random.Generator) -> Move:
    """The parsed move if it is legal (SAN or UCI), else a uniform legal move."""
    legal = legal_moves(state)
    if not legal:
        raise ValueError("no legal moves in terminal position")
    text = (move_text or "").strip()
    for parser in (parse_san, parse_uci):
        try:
            return parser(state, text)
        except (IllegalMoveError, ValueError):
            continue
    return legal[int(rng.integers(len(legal)))]


def resolve_distribution(rec: PredictionRecord, rng: Optional[np.random.Generator] = None) -> dict:
    """``{uci: p}`` for a record; raw text becomes a point mass after legality fallback."""
    if rec.probs is not None:
        return _check_distribution(rec)
    rng = rng if rng is not None else np.random.default_rng(0)
    return {legal_fallback(rec.move_text, rec.state, rng).uci: 1.0}


def _target_index(rec: PredictionRecord, state: BoardState) -> int:
    try:
        move = parse_uci(state, rec.target)
    except IllegalMoveError:
        raise ValueError(f"{rec.id}: target {rec.target} is illegal at {rec.fen}") from None
    return move_to_policy_index(move, state)


def top_move(dist: Mapping, state: BoardState) -> str:
    """Argmax move; ties go to the lowest policy index."""
    return max(dist, key=lambda u: (dist[u], -move_to_policy_index(Move.from_uci(u), state)))


def acc_at_1(records: Sequence[PredictionRecord], rng: Optional[np.random.Generator] = None) -> float:
    if not records:
        raise ValueError("acc@1 of an empty record set")
    hits = 0
    for rec in records:
        state = rec.state
        _target_index(rec, state)
        hits += top_move(resolve_distribution(rec, rng), state) == rec.target
    return hits / len(records)


def expected_acc(records: Sequence[PredictionRecord], rng: Optional[np.random.Generator] = None) -> float:
    if not records:
        raise ValueError("expected accuracy of an empty record set")
    vals = []
    for rec in records:
        _target_index(rec, rec.state)
        vals.append(resolve_distribution(rec, rng).get(rec.target, 0.0))
    return math.fsum(vals) / len(vals)


def weighted_f1(preds: Sequence, truths: Sequence) -> float:
    """Support-weighted mean of per-class F1 over the classes present in ``truths``."""
    if len(preds) != len(truths):
        raise ValueError("preds and truths differ in length")
    if len(truths) == 0:
        raise ValueError("weighted F1 of an empty set")
    support = Counter(truths)
    predicted = Counter(preds)
    tp = Counter(t for p, t in zip(preds, truths) if p == t)
    parts = []
    for cls, n in support.items():
        denom = predicted[cls] + n
        f1 = 2 * tp[cls] / denom if denom else 0.0
        parts.append(n * f1)
    return math.fsum(parts) / len(truths)


def mae(preds: Sequence[float], truths: Sequence[float]) -> float:
    if len(preds) != len(truths):
        raise ValueError("preds and truths differ in length")
    if len(truths) == 0:
        raise ValueError("MAE of an empty set")
    return math.fsum(abs(float(p) - float(t)) for p, t in zip(preds, truths)) / len(truths)


def dev_score(acc_lob_p: float, acc_lif_d: float, acc_m1s: float) -> float:
    """Plain mean of the three development-set accuracies."""
    accs = (acc_lob_p, acc_lif_d, acc_m1s)
    if any(not 0.0 <= a <= 1.0 for a in accs):
        raise ValueError("accuracies must lie in [0, 1]")
    return math.fsum(accs) / 3


def per_record_hits(records: Sequence[PredictionRecord], rng=None) -> list:
    return [float(top_move(resolve_distribution(r, rng), r.state) == r.target) for r in records]


def elo_heatmap(records: Sequence[PredictionRecord], values: Optional[Sequence[float]] = None) -> dict:
    """``{(white_bucket, black_bucket): (mean value, count)}``; unseen buckets are absent.

    ``values`` defaults to per-record top-1 hits.
    """
    values = per_record_hits(records) if values is None else list(values)
    cells: dict = {}
    for rec, v in zip(records, values):
        if rec.white_elo is None or rec.black_elo is None:
            continue
        cells.setdefault((round_half_up(rec.white_elo), round_half_up(rec.black_elo)), []).append(v)
    return {k: (math.fsum(v) / len(v), len(v)) for k, v in sorted(cells.items())}


def heatmap_csv(grid: Mapping) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["white_bucket", "black_bucket", "metric", "count"])
    for (wb, bb), (value, count) in sorted(grid.items()):
        w.writerow([wb, bb, repr(float(value)), count])
    return buf.getvalue()


# -- file level ---------------------------------------------------------------

def read_predictions(path) -> dict:
    """``{id: row}`` from a JSONL file of ``{"id", "probs"}`` or ``{"id", "move"}`` rows."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if "id" not in row or (("probs" in row) == ("move" in row)):
                raise ValueError(f"{path}:{n}: row needs an id and exactly one of probs / move")
            if row["id"] in out:
                raise ValueError(f"{path}:{n}: duplicate prediction id {row['id']!r}")
            out[row["id"]] = row
    return out


def join_predictions(positions: Iterable[BenchmarkPosition], predictions: Mapping) -> tuple:
    """Pair benchmark positions with prediction rows; returns (records, missing ids)."""
    records, missing = [], []
    for p in positions:
        row = predictions.get(p.id)
        if row is None:
            missing.append(p.id)
            continue
        records.append(PredictionRecord(
            id=p.id, target=p.target, fen=p.fen, probs=row.get("probs"), move_text=row.get("move"),
            white_elo=p.white_elo, black_elo=p.black_elo, time_control_name=p.time_control_name,
            ply=p.ply, clock=p.clock, aux=row.get("aux") or {}, aux_truth=p.aux,
        ))
    return records, missing


@dataclass
class MetricReport:
    acc_at_1: Optional[float]
    expected_acc: Optional[float]
    counts: dict
    filters: dict
    aux_f1: dict = field(default_factory=dict)
    aux_mae: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"acc_at_1": self.acc_at_1, "expected_acc": self.expected_acc, "counts": self.counts,
                "filters": self.filters, "aux_f1": self.aux_f1, "aux_mae": self.aux_mae}


def apply_eval_filters(records: Sequence[PredictionRecord], skip_first: int = 0,
                       min_clock_seconds: Optional[float] = None) -> list:
    """Drop early plies and, when a threshold is given, low-clock positions (clock unknown is kept)."""
    out = [r for r in records if r.ply >= skip_first]
    if min_clock_seconds is not None:
        out = [r for r in out if r.clock is None or r.clock >= min_clock_seconds]
    return out


def resolve_records(records: Sequence[PredictionRecord], seed: int = 0) -> list:
    """Copies with raw move text replaced by its (seeded) one-hot fallback distribution.

    Resolving once lets every metric and the heatmap see the same fallback draw.
    """
    rng = np.random.default_rng(seed)
    return [replace(r, probs=resolve_distribution(r, rng), move_text=None) for r in records]


def evaluate(records: Sequence[PredictionRecord], skip_first: int = 0, min_clock_seconds: Optional[float] = None,
             seed: int = 0, missing: int = 0) -> MetricReport:
    kept = apply_eval_filters(records, skip_first, min_clock_seconds)
    filters = {"skip_first": skip_first, "min_clock_seconds": min_clock_seconds}
    counts = {"records": len(records), "evaluated": len(kept), "filtered": len(records) - len(kept),
              "missing_predictions": missing, "raw_text": sum(r.move_text is not None for r in kept)}
    if not kept:
        return MetricReport(None, None, counts, filters)
    resolved = resolve_records(kept, seed)
    report = MetricReport(acc_at_1(resolved), expected_acc(resolved), counts, filters)
    for name in AUX_CATEGORICAL + AUX_SCALAR:
        pairs = [(r.aux[name], r.aux_truth[name]) for r in kept
                 if r.aux_truth and r.aux_truth.get(name) is not None and r.aux.get(name) is not None]
        if not pairs:
            continue
        p, t = zip(*pairs)
        if name in AUX_CATEGORICAL:
            report.aux_f1[name] = weighted_f1(list(p), list(t))
        else:
            report.aux_mae[name] = mae(p, t)
    return report
