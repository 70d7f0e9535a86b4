"""Interpretability diagnostics: residual magnitudes, attention sinks, Elo-sweep continuity."""
from __future__ import annotations

import csv
import io
import math
from typing import Callable, Optional, Sequence, Union

import numpy as np
import torch

from .chess import BoardState
from .encoding import PositionHistory, encode_position, legal_policy_indices
from .model import ModelTrace, PromptConditionedModel, legal_mask, masked_softmax


def _np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def concentration(values) -> dict:
    """Mean and max absolute value and their ratio; the ratio is None when the mean is zero."""
    a = np.abs(_np(values)).ravel()
    mean = float(math.fsum(a) / a.size) if a.size else 0.0
    top = float(a.max()) if a.size else 0.0
    return {"mean_abs": mean, "max_abs": top, "ratio": (top / mean) if mean > 0 else None}


def residual_stats(trace: ModelTrace) -> dict:
    """Per-site residual statistics: ``layer0..layer{N-1}`` and ``policy_head``."""
    out = {f"layer{n}": concentration(r) for n, r in enumerate(trace.residuals)}
    out["policy_head"] = concentration(trace.policy_residual)
    return out


def sink_flags(weights) -> np.ndarray:
    """Per-example flags: does the head- and square-averaged attention peak at token 0?

    ``weights`` is ``(B, H, Q, L)`` (or ``(H, Q, L)`` / a pre-averaged ``(L,)``).
    """
    w = _np(weights)
    if w.ndim == 1:
        return np.array([int(np.argmax(w)) == 0])
    if w.ndim == 3:
        w = w[None]
    avg = w.mean(axis=(1, 2))
    return np.argmax(avg, axis=-1) == 0


def attention_sink_rate(traces: Sequence[Union[ModelTrace, dict]]) -> dict:
    """Per cross-attention site, the fraction of examples whose averaged weights peak at the first token."""
    flags: dict = {}
    for tr in traces:
        maps = tr.attention if isinstance(tr, ModelTrace) else tr
        for site, w in maps.items():
            flags.setdefault(site, []).extend(sink_flags(w).tolist())
    return {site: sum(f) / len(f) for site, f in flags.items() if f}


def cosine_similarity(p, q) -> float:
    p, q = _np(p), _np(q)
    denom = math.sqrt(math.fsum(p * p)) * math.sqrt(math.fsum(q * q))
    if denom == 0:
        raise ValueError("cosine similarity of a zero vector")
    return max(-1.0, min(1.0, math.fsum(p * q) / denom))


def l2_distance(p, q) -> float:
    d = _np(p) - _np(q)
    return math.sqrt(math.fsum(d * d))


def policy_at(model: PromptConditionedModel, state: BoardState, prompt: str) -> np.ndarray:
    planes = encode_position(PositionHistory.single(state))
    with torch.no_grad():
        logits, _ = model(planes, [prompt])
    return _np(masked_softmax(logits[0], legal_mask(state)))


def policy_continuity(model: PromptConditionedModel, state: BoardState,
                      template: Union[str, Callable[[int], str]], elo_grid: Sequence[int], k: int = 5) -> dict:
    """Adjacent-Elo cosine/L2 between legal-masked policies, plus per-Elo top-k moves.

    ``template`` is a string containing ``{elo}`` or a callable ``elo -> prompt``.
    """
    elo_grid = list(elo_grid)
    if len(elo_grid) < 2:
        raise ValueError("Elo grid needs at least two values")
    if isinstance(template, str):
        if "{elo}" not in template:
            raise ValueError("template has no {elo} placeholder")
        text = template

        def render_fn(elo):
            return text.replace("{elo}", str(elo))
    else:
        render_fn = template
    legal = legal_policy_indices(state)
    policies = [policy_at(model, state, render_fn(elo)) for elo in elo_grid]
    steps = []
    for (e0, p0), (e1, p1) in zip(zip(elo_grid, policies), zip(elo_grid[1:], policies[1:])):
        steps.append({"elo_from": e0, "elo_to": e1, "cosine": cosine_similarity(p0, p1), "l2": l2_distance(p0, p1)})
    topk = []
    for elo, p in zip(elo_grid, policies):
        order = sorted(legal, key=lambda i: (-p[i], i))[:k]
        topk.extend({"elo": elo, "rank": r + 1, "move": legal[i].uci, "prob": float(p[i])} for r, i in enumerate(order))
    return {"steps": steps, "topk": topk}


def rows_to_csv(rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> str:
    rows = list(rows)
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: ("" if r.get(c) is None else r.get(c)) for c in columns})
    return buf.getvalue()


def residual_rows(stats: dict) -> list:
    return [{"site": site, **vals} for site, vals in stats.items()]


def mean_residual_stats(traces: Sequence[ModelTrace]) -> dict:
    """Site statistics pooled over several traces (all residual entries together)."""
    pooled: dict = {}
    for tr in traces:
        for n, r in enumerate(tr.residuals):
            pooled.setdefault(f"layer{n}", []).append(_np(r).ravel())
        pooled.setdefault("policy_head", []).append(_np(tr.policy_residual).ravel())
    return {site: concentration(np.concatenate(v)) for site, v in pooled.items()}
