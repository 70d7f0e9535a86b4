"""Prompt-conditioned policy network: frozen backbone plus a ControlNet-style branch.

Layer ``n`` of the frozen backbone and its trainable control block both read
the residual-updated state ``h[n-1] + r[n-1]``::

    h[n]  = B[n](h[n-1] + r[n-1])
    hc[n] = C[n](h[n-1] + r[n-1], e)
    r[n]  = Z[n](hc[n])

and the final logits are ``PH(PE(h[N-1] + r[N-1])) + r_pi`` where ``r_pi`` is
produced by the controllable policy head.  Every ``Z`` map starts at zero, so
a fresh model reproduces the frozen backbone exactly.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import re
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .chess import BoardState, TerminationKind, legal_moves
from .encoding import NUM_PLANES, POLICY_SIZE, build_move_table, legal_policy_indices, move_to_policy_index

NUM_SQUARES = 64
TERMINATION_CLASSES = tuple(k.value for k in TerminationKind)
OUTCOME_CLASSES = (1, 0, -1)  # win, draw, loss from White's point of view
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


@dataclass(frozen=True)
class BackboneConfig:
    num_layers: int = 4
    embed_dim: int = 32
    num_heads: int = 4
    ffn_mult: int = 2
    policy_dim: int = 32
    text_dim: int = 32
    text_buckets: int = 4096
    lora_rank: int = 4
    lora_alpha: float = 8.0
    rs_lora: bool = True
    wiring: str = "layer_coupled"  # or "sequential"
    control_init: str = "clone"  # or "fresh"
    huber_delta: float = 1.0
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.wiring not in ("layer_coupled", "sequential"):
            raise ValueError(f"unknown wiring {self.wiring!r}")
        if self.control_init not in ("clone", "fresh"):
            raise ValueError(f"unknown control_init {self.control_init!r}")
        if self.lora_rank < 1:
            raise ValueError("LoRA rank must be >= 1")

    @property
    def torch_dtype(self):
        return getattr(torch, self.dtype)

    @classmethod
    def bt4(cls, **kw) -> "BackboneConfig":
        """Shape of the BT4 backbone (15 layers, 1024 wide, 32 heads of 32 dims); not used in tests."""
        return cls(num_layers=15, embed_dim=1024, num_heads=32, ffn_mult=1, policy_dim=1024, text_dim=1024, **kw)


# -- building blocks ----------------------------------------------------------

class ZeroLinear(nn.Linear):
    """Linear map whose weight and bias start at exactly zero."""

    def reset_parameters(self):
        nn.init.zeros_(self.weight)
        if self.bias is not None:
            nn.init.zeros_(self.bias)


class DiagonalZero(nn.Module):
    """Per-coordinate affine map ``x * w + b`` with ``w = b = 0`` at init."""

    def __init__(self, size: int):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(size))
        self.bias = nn.Parameter(torch.zeros(size))

    def forward(self, x):
        return x * self.weight + self.bias


class Attention(nn.Module):
    """Multi-head attention that also returns its weights ``(B, H, Lq, Lk)``."""

    def __init__(self, dim: int, heads: int, kv_dim: Optional[int] = None, zero_out: bool = False):
        super().__init__()
        kv_dim = dim if kv_dim is None else kv_dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(kv_dim, dim)
        self.v = nn.Linear(kv_dim, dim)
        self.out = ZeroLinear(dim, dim) if zero_out else nn.Linear(dim, dim)

    def forward(self, x, ctx=None, key_mask=None):
        ctx = x if ctx is None else ctx
        b, lq, _ = x.shape
        lk = ctx.shape[1]
        q = self.q(x).view(b, lq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k(ctx).view(b, lk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v(ctx).view(b, lk, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if key_mask is not None:  # True marks a real token
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = scores.softmax(-1)
        y = (weights @ v).transpose(1, 2).reshape(b, lq, -1)
        return self.out(y), weights


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, mult: int):
        super().__init__(nn.Linear(dim, dim * mult), nn.GELU(), nn.Linear(dim * mult, dim))


class EncoderBlock(nn.Module):
    """Pre-norm transformer layer of the backbone."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        d = cfg.embed_dim
        self.ln1 = nn.LayerNorm(d)
        self.attn = Attention(d, cfg.num_heads)
        self.ln2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, cfg.ffn_mult)

    def forward(self, x):
        x = x + self.attn(self.ln1(x))[0]
        return x + self.ffn(self.ln2(x))


class ControlBlock(nn.Module):
    """Self-attention, cross-attention over the prompt, feed-forward."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        d = cfg.embed_dim
        self.ln1 = nn.LayerNorm(d)
        self.attn = Attention(d, cfg.num_heads)
        self.ln_cross = nn.LayerNorm(d)
        self.cross = Attention(d, cfg.num_heads, kv_dim=cfg.text_dim, zero_out=True)
        self.ln2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, cfg.ffn_mult)

    def clone_from(self, block: EncoderBlock) -> None:
        for name in ("ln1", "attn", "ln2", "ffn"):
            getattr(self, name).load_state_dict(getattr(block, name).state_dict())

    def forward(self, x, e, key_mask=None):
        x = x + self.attn(self.ln1(x))[0]
        y, w = self.cross(self.ln_cross(x), e, key_mask)
        x = x + y
        return x + self.ffn(self.ln2(x)), w


def _policy_gather_indices():
    table = build_move_table()
    from_idx, to_idx, promo_idx = [], [], []
    for uci in table.moves:
        f = (int(uci[1]) - 1) * 8 + "abcdefgh".index(uci[0])
        t = (int(uci[3]) - 1) * 8 + "abcdefgh".index(uci[2])
        from_idx.append(f)
        to_idx.append(t)
        # slot 0 is "no promotion offset"; then (to-file, piece) pairs for q, r, b
        promo_idx.append(0 if len(uci) == 4 else 1 + (t & 7) * 3 + "qrb".index(uci[4]))
    return torch.tensor(from_idx), torch.tensor(to_idx), torch.tensor(promo_idx)


class AttentionPolicyHead(nn.Module):
    """Square-to-square attention logits gathered into the 1858 move slots."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.promo = nn.Linear(dim, 3)
        f, t, p = _policy_gather_indices()
        self.register_buffer("from_idx", f, persistent=False)
        self.register_buffer("to_idx", t, persistent=False)
        self.register_buffer("promo_idx", p, persistent=False)

    def forward(self, z):
        q, k = self.q(z), self.k(z)
        square_logits = q @ k.transpose(-1, -2) / math.sqrt(self.dim)  # (B, 64, 64)
        promo = self.promo(k[:, 56:64])  # keys of the last rank, (B, 8, 3)
        promo = torch.cat([torch.zeros_like(promo[:, :1, 0]), promo.reshape(z.shape[0], 24)], dim=1)
        return square_logits[:, self.from_idx, self.to_idx] + promo[:, self.promo_idx]


class PolicyEmbedder(nn.Sequential):
    def __init__(self, dim: int, policy_dim: int):
        super().__init__(nn.Linear(dim, policy_dim), nn.GELU())


# -- LoRA ---------------------------------------------------------------------

def lora_scale(alpha: float, rank: int, rs_scaling: bool) -> float:
    if rank < 1:
        raise ValueError("LoRA rank must be >= 1")
    return alpha / math.sqrt(rank) if rs_scaling else alpha / rank


def lora_effective_weight(W, A, B, alpha: float, rs_scaling: bool = False):
    """``W + scale * B @ A`` with ``scale = alpha/r`` (or ``alpha/sqrt(r)`` for rsLoRA)."""
    rank = A.shape[0]
    if B.shape[1] != rank or W.shape != (B.shape[0], A.shape[1]):
        raise ValueError(f"incompatible shapes W{tuple(W.shape)} B{tuple(B.shape)} A{tuple(A.shape)}")
    return W + lora_scale(alpha, rank, rs_scaling) * (B @ A)


class LoraLinear(nn.Module):
    """Frozen linear layer with a trainable low-rank update (``B`` starts at zero)."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float, rs_scaling: bool = True):
        super().__init__()
        if rank < 1:
            raise ValueError("LoRA rank must be >= 1")
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.alpha = alpha
        self.rs_scaling = rs_scaling
        self.A = nn.Parameter(torch.empty(rank, base.in_features, dtype=base.weight.dtype))
        nn.init.kaiming_uniform_(self.A, a=math.sqrt(5))
        self.B = nn.Parameter(torch.zeros(base.out_features, rank, dtype=base.weight.dtype))

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    def effective_weight(self):
        return lora_effective_weight(self.base.weight, self.A, self.B, self.alpha, self.rs_scaling)

    def forward(self, x):
        return F.linear(x, self.effective_weight(), self.base.bias)


# -- text encoder stub ----------------------------------------------------------

def _bucket(token: str, buckets: int) -> int:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little") % buckets


def tokenize(text: str, buckets: int) -> list:
    """Lower-cased word/punctuation tokens hashed into ``buckets`` ids."""
    return [_bucket(t, buckets) for t in _TOKEN_RE.findall(text.lower())]


class TextEncoderStub(nn.Module):
    """Hash-seeded embedding table followed by a LoRA-adapted projection."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        g = torch.Generator().manual_seed(cfg.seed + 7919)
        table = torch.randn(cfg.text_buckets, cfg.text_dim, generator=g, dtype=cfg.torch_dtype)
        self.register_buffer("table", table)
        self.buckets = cfg.text_buckets
        self.proj = LoraLinear(nn.Linear(cfg.text_dim, cfg.text_dim), cfg.lora_rank, cfg.lora_alpha, cfg.rs_lora)

    def tokenize(self, text: str) -> list:
        return tokenize(text, self.buckets)

    def forward(self, ids, key_mask=None):
        return self.proj(self.table[ids])


def embed_prompt(encoder: TextEncoderStub, ids) -> torch.Tensor:
    """``(L, d_text)`` prompt embedding for one token-id sequence."""
    ids = torch.as_tensor(ids, dtype=torch.long)
    if ids.ndim != 1 or ids.numel() == 0:
        raise ValueError("prompt must be a non-empty 1-D token sequence")
    return encoder(ids)


def pad_prompts(id_lists: Sequence[Sequence[int]]):
    """Right-pad token ids; returns ``(ids (B, L), mask (B, L))`` with True on real tokens."""
    if any(len(x) == 0 for x in id_lists):
        raise ValueError("empty prompt")
    L = max(len(x) for x in id_lists)
    ids = torch.zeros(len(id_lists), L, dtype=torch.long)
    mask = torch.zeros(len(id_lists), L, dtype=torch.bool)
    for i, x in enumerate(id_lists):
        ids[i, :len(x)] = torch.as_tensor(list(x))
        mask[i, :len(x)] = True
    return ids, mask


# -- the model ------------------------------------------------------------------

class FrozenBackbone(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        d = cfg.embed_dim
        self.input_proj = nn.Linear(NUM_PLANES, d)
        self.pos = nn.Parameter(torch.randn(NUM_SQUARES, d) * 0.1)
        self.blocks = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.num_layers))
        self.pe = PolicyEmbedder(d, cfg.policy_dim)
        self.ph = AttentionPolicyHead(cfg.policy_dim)
        self.value = nn.Linear(d, 3)
        self.moves_left = nn.Linear(d, 1)

    def embed(self, planes):
        tokens = planes.reshape(planes.shape[0], NUM_PLANES, NUM_SQUARES).transpose(1, 2)
        return self.input_proj(tokens) + self.pos

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        return self


@dataclass
class ModelTrace:
    """Per-layer hidden states ``h``, residual updates ``r`` and cross-attention maps."""

    hidden: list
    residuals: list
    control: list
    attention: dict  # site name -> (B, H, 64, L)
    policy_residual: torch.Tensor
    base_logits: torch.Tensor
    key_mask: Optional[torch.Tensor] = None


@dataclass
class AuxOutput:
    outcome_probs: torch.Tensor  # (B, 3), order win/draw/loss
    value: torch.Tensor  # P(win) - P(loss)
    moves_left: torch.Tensor
    termination_probs: torch.Tensor
    move_delay: torch.Tensor
    outcome_logits: torch.Tensor = None
    termination_logits: torch.Tensor = None


def value_from_outcome(probs) -> torch.Tensor:
    probs = torch.as_tensor(probs)
    return probs[..., 0] - probs[..., 2]


class PromptConditionedModel(nn.Module):
    def __init__(self, cfg: BackboneConfig = BackboneConfig()):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        prev = torch.get_default_dtype()
        torch.set_default_dtype(cfg.torch_dtype)
        try:
            d = cfg.embed_dim
            self.backbone = FrozenBackbone(cfg).freeze()
            self.control = nn.ModuleList(ControlBlock(cfg) for _ in range(cfg.num_layers))
            if cfg.control_init == "clone":
                for c, b in zip(self.control, self.backbone.blocks):
                    c.clone_from(b)
            self.z = nn.ModuleList(ZeroLinear(d, d) for _ in range(cfg.num_layers))
            # controllable policy head
            self.pe_hat = copy.deepcopy(self.backbone.pe)
            self.ph_hat = copy.deepcopy(self.backbone.ph)
            for p in list(self.pe_hat.parameters()) + list(self.ph_hat.parameters()):
                p.requires_grad_(True)
            self.cph_ln = nn.LayerNorm(cfg.policy_dim)
            self.cph_cross = Attention(cfg.policy_dim, cfg.num_heads if cfg.policy_dim % cfg.num_heads == 0 else 1,
                                       kv_dim=cfg.text_dim, zero_out=True)
            self.z_pi = DiagonalZero(POLICY_SIZE)
            self.text = TextEncoderStub(cfg)
            # auxiliary heads: residuals over the frozen value / moves-left heads, plus new heads
            self.z_value = ZeroLinear(d, 3)
            self.z_moves_left = ZeroLinear(d, 1)
            self.termination = nn.Linear(d, len(TERMINATION_CLASSES))
            self.delay = nn.Linear(d, 1)
        finally:
            torch.set_default_dtype(prev)

    # -- parameter groups --
    def conditioning_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def named_conditioning_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def frozen_hash(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.backbone.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        for name, t in sorted(self.text.state_dict().items()):
            if name.startswith("proj.A") or name.startswith("proj.B"):
                continue
            h.update(name.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    # -- inputs --
    def _planes(self, planes):
        planes = torch.as_tensor(np.asarray(planes), dtype=self.cfg.torch_dtype)
        if planes.ndim == 3:
            planes = planes[None]
        if planes.shape[1:] != (NUM_PLANES, 8, 8):
            raise ValueError(f"expected planes of shape (B, {NUM_PLANES}, 8, 8), got {tuple(planes.shape)}")
        return planes

    def encode_prompts(self, prompts) -> tuple:
        """Text or token-id lists -> ``(e (B, L, d_text), key mask)``."""
        ids = [self.text.tokenize(p) if isinstance(p, str) else list(p) for p in prompts]
        ids, mask = pad_prompts(ids)
        return self.text(ids), mask

    # -- forward passes --
    def forward_frozen(self, planes):
        planes = self._planes(planes)
        x = self.backbone.embed(planes)
        for block in self.backbone.blocks:
            x = block(x)
        return self.backbone.ph(self.backbone.pe(x))

    def frozen_trace(self, planes) -> list:
        x = self.backbone.embed(self._planes(planes))
        out = []
        for block in self.backbone.blocks:
            x = block(x)
            out.append(x)
        return out

    def forward(self, planes, prompts=None, e=None, key_mask=None):
        """Returns ``(logits, trace)``; pass either prompts or a precomputed embedding ``e``."""
        planes = self._planes(planes)
        if e is None:
            if prompts is None:
                raise ValueError("forward needs prompts or a prompt embedding")
            e, key_mask = self.encode_prompts(prompts)
        if e.ndim == 2:
            e = e[None]
        if e.shape[0] != planes.shape[0] or e.shape[-1] != self.cfg.text_dim:
            raise ValueError(f"prompt embedding shape {tuple(e.shape)} does not match batch {planes.shape[0]}")
        x = self.backbone.embed(planes)
        r = torch.zeros_like(x)
        ctrl_state = x
        hidden, residuals, control, attention = [], [], [], {}
        for n, (block, cblock, z) in enumerate(zip(self.backbone.blocks, self.control, self.z)):
            inp = x + r
            h = block(inp)
            c_in = inp if self.cfg.wiring == "layer_coupled" else ctrl_state
            hc, w = cblock(c_in, e, key_mask)
            r = z(hc)
            ctrl_state = hc
            x = h
            hidden.append(h)
            residuals.append(r)
            control.append(hc)
            attention[f"layer{n}"] = w
        final = x + r
        base_logits = self.backbone.ph(self.backbone.pe(final))
        zc = self.pe_hat(final)
        y, w = self.cph_cross(self.cph_ln(zc), e, key_mask)
        attention["policy_head"] = w
        r_pi = self.z_pi(self.ph_hat(zc + y))
        trace = ModelTrace(hidden, residuals, control, attention, r_pi, base_logits, key_mask)
        return base_logits + r_pi, trace

    def aux_forward(self, trace: ModelTrace) -> AuxOutput:
        pooled = (trace.hidden[-1] + trace.residuals[-1]).mean(1)
        pooled_ctrl = trace.control[-1].mean(1)
        wdl = self.backbone.value(pooled) + self.z_value(pooled_ctrl)
        ml = self.backbone.moves_left(pooled) + self.z_moves_left(pooled_ctrl)
        term = self.termination(pooled_ctrl)
        probs = wdl.softmax(-1)
        return AuxOutput(probs, value_from_outcome(probs), ml.squeeze(-1), term.softmax(-1),
                         self.delay(pooled_ctrl).squeeze(-1), wdl, term)


# -- legality, losses ---------------------------------------------------------

def legal_mask(state: BoardState) -> torch.Tensor:
    mask = torch.zeros(POLICY_SIZE, dtype=torch.bool)
    idx = list(legal_policy_indices(state))
    if not idx:
        raise ValueError("no legal moves in terminal position")
    mask[idx] = True
    return mask


def masked_log_softmax(logits, mask):
    return logits.masked_fill(~mask, float("-inf")).log_softmax(-1)


def masked_softmax(logits, mask):
    return logits.masked_fill(~mask, float("-inf")).softmax(-1)


def huber(residual, delta: float = 1.0):
    residual = torch.as_tensor(residual, dtype=torch.float64)
    return F.huber_loss(residual, torch.zeros_like(residual), delta=delta, reduction="none")


DEFAULT_LOSS_WEIGHTS = {"policy": 1.0, "outcome": 1.0, "moves_left": 1.0, "termination": 1.0, "move_delay": 1.0}


@dataclass
class Batch:
    planes: torch.Tensor
    prompts: list
    legal: torch.Tensor  # (B, 1858) bool
    target: torch.Tensor  # (B,) policy index
    outcome: Optional[torch.Tensor] = None  # Z in {-1, 0, 1}
    moves_left: Optional[torch.Tensor] = None
    termination: Optional[torch.Tensor] = None  # class index
    move_delay: Optional[torch.Tensor] = None  # NaN where unknown


def compute_loss(model: PromptConditionedModel, batch: Batch, weights: Optional[dict] = None) -> tuple:
    """Total loss and per-term breakdown (policy CE, outcome/termination CE, Huber regressions)."""
    w = dict(DEFAULT_LOSS_WEIGHTS, **(weights or {}))
    logits, trace = model(batch.planes, batch.prompts)
    terms = {"policy": F.nll_loss(masked_log_softmax(logits, batch.legal), batch.target)}
    if any(t is not None for t in (batch.outcome, batch.moves_left, batch.termination, batch.move_delay)):
        aux = model.aux_forward(trace)
        if batch.outcome is not None:
            cls = torch.as_tensor([OUTCOME_CLASSES.index(int(z)) for z in batch.outcome])
            terms["outcome"] = F.cross_entropy(aux.outcome_logits, cls)
        if batch.termination is not None:
            terms["termination"] = F.cross_entropy(aux.termination_logits, batch.termination)
        delta = model.cfg.huber_delta
        if batch.moves_left is not None:
            terms["moves_left"] = huber(aux.moves_left - batch.moves_left, delta).mean()
        if batch.move_delay is not None:
            known = ~torch.isnan(batch.move_delay)
            if known.any():
                terms["move_delay"] = huber(aux.move_delay[known] - batch.move_delay[known], delta).mean()
    total = sum(w[k] * v for k, v in terms.items())
    return total, {k: float(v.detach()) for k, v in terms.items()}


def backward(model: PromptConditionedModel, batch: Batch, weights: Optional[dict] = None) -> tuple:
    """Backpropagate into the conditioning parameters; raises on non-finite gradients."""
    model.zero_grad(set_to_none=True)
    total, terms = compute_loss(model, batch, weights)
    if not torch.isfinite(total):
        raise FloatingPointError(f"non-finite loss {float(total.detach())}")
    total.backward()
    for name, p in model.named_conditioning_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise FloatingPointError(f"non-finite gradient in {name}")
    return total, terms


# -- toy training -------------------------------------------------------------

@dataclass
class ToyDataset:
    planes: torch.Tensor
    prompts: list
    legal: torch.Tensor
    target: torch.Tensor
    targets_uci: list = field(default_factory=list)
    fens: list = field(default_factory=list)

    def __len__(self):
        return len(self.prompts)

    def batch(self, idx) -> Batch:
        idx = list(idx)
        return Batch(self.planes[idx], [self.prompts[i] for i in idx], self.legal[idx], self.target[idx])


def make_dataset(rows: Sequence[tuple], dtype=torch.float64) -> ToyDataset:
    """Rows of ``(state, prompt, target_uci)``."""
    from .chess import parse_uci
    from .encoding import PositionHistory, encode_position

    planes, prompts, legal, target, ucis, fens = [], [], [], [], [], []
    for state, prompt, uci in rows:
        move = parse_uci(state, uci)
        planes.append(encode_position(PositionHistory.single(state)))
        prompts.append(prompt)
        legal.append(legal_mask(state))
        target.append(move_to_policy_index(move, state))
        ucis.append(uci)
        fens.append(state.fen)
    return ToyDataset(torch.as_tensor(np.stack(planes), dtype=dtype), prompts, torch.stack(legal),
                      torch.as_tensor(target), ucis, fens)


STEER_WORDS = ("aggressive", "solid")
FILLER = ("please", "now", "here", "today", "quickly", "calmly")


def steerability_task(n_positions: int = 8, n_prompts: int = 8, seed: int = 0) -> ToyDataset:
    """Each position has two candidate moves; the prompt's style word picks one.

    Both moves appear equally often for every position, so a model that
    ignores the prompt cannot beat 50% accuracy.
    """
    from .chess import random_game

    rng = np.random.default_rng(seed)
    rows = []
    positions = [BoardState.start()]
    s = 0
    while len(positions) < n_positions:
        game = random_game(seed * 1000 + s, max_plies=int(rng.integers(2, 30)))
        s += 1
        if len(legal_moves(game[-1])) >= 2:
            positions.append(game[-1])
    for state in positions:
        moves = sorted(legal_moves(state), key=lambda m: move_to_policy_index(m, state))
        pick = rng.choice(len(moves), size=2, replace=False)
        for k, word in enumerate(STEER_WORDS):
            for _ in range(n_prompts // 2):
                a, b, c = rng.choice(FILLER, size=3)
                rows.append((state, f"{a} play {word} {b} {c}", moves[int(pick[k])].uci))
    return make_dataset(rows)


def predict(model: PromptConditionedModel, data: ToyDataset, conditioned: bool = True) -> torch.Tensor:
    with torch.no_grad():
        logits = model(data.planes, data.prompts)[0] if conditioned else model.forward_frozen(data.planes)
        # argmax returns the first maximum, so ties go to the lowest policy index
        return masked_softmax(logits, data.legal).argmax(-1)


def accuracy(model: PromptConditionedModel, data: ToyDataset, conditioned: bool = True) -> float:
    return float((predict(model, data, conditioned) == data.target).double().mean())


def train_toy(data: ToyDataset, steps: int = 2000, lr: float = 3e-3, seed: int = 0,
              cfg: Optional[BackboneConfig] = None, batch_size: int = 32, lora_plus_ratio: float = 1.0,
              target_acc: Optional[float] = None, eval_every: int = 50, model=None) -> tuple:
    """Adam on the conditioning parameters.  Returns ``(model, loss_curve)``.

    With ``target_acc`` set, training stops at the first evaluation whose
    accuracy on ``data`` reaches it.
    """
    model = model if model is not None else PromptConditionedModel(cfg or BackboneConfig(seed=seed))
    torch.manual_seed(seed)
    lora_b = [p for n, p in model.named_conditioning_parameters() if n.endswith("proj.B")]
    others = [p for n, p in model.named_conditioning_parameters() if not n.endswith("proj.B")]
    opt = torch.optim.Adam([{"params": others, "lr": lr}, {"params": lora_b, "lr": lr * lora_plus_ratio}])
    rng = np.random.default_rng(seed)
    curve = []
    for step in range(steps):
        idx = rng.choice(len(data), size=min(batch_size, len(data)), replace=False)
        total, _ = backward(model, data.batch(idx))
        opt.step()
        curve.append(float(total.detach()))
        if target_acc is not None and (step + 1) % eval_every == 0 and accuracy(model, data) >= target_acc:
            break
    return model, curve


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_MAGIC = b"PCCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: PromptConditionedModel) -> None:
    """Versioned container: config JSON, then ``(name, shape, float32 row-major data)`` records."""
    from pathlib import Path

    path = Path(path)
    tensors = {k: v for k, v in model.state_dict().items() if v.is_floating_point()}
    cfg = json.dumps(asdict(model.cfg), sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(cfg)) + cfg)
        fh.write(struct.pack("<I", len(tensors)))
        for name, t in sorted(tensors.items()):
            raw = name.encode()
            arr = t.detach().cpu().numpy().astype("<f4")
            fh.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> PromptConditionedModel:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, n = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        cfg = BackboneConfig(**json.loads(fh.read(n)))
        (count,) = struct.unpack("<I", fh.read(4))
        state = {}
        for _ in range(count):
            (ln,) = struct.unpack("<H", fh.read(2))
            name = fh.read(ln).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(fh.read(4 * size), dtype="<f4").reshape(shape)
            state[name] = torch.as_tensor(arr.copy(), dtype=cfg.torch_dtype)
    model = PromptConditionedModel(cfg)
    model.load_state_dict(state)
    return model


# -- gradient check -------------------------------------------------------------

def randomize_zero_maps(model: PromptConditionedModel, scale: float = 0.1, seed: int = 0) -> None:
    """Give every zero-initialised map random weights so no gradient path is structurally dead."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (ZeroLinear, DiagonalZero)):
                for p in module.parameters():
                    p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
        for lora in (m for m in model.modules() if isinstance(m, LoraLinear)):
            lora.B.copy_(torch.randn(lora.B.shape, generator=g, dtype=lora.B.dtype) * scale)


def gradient_check(model: PromptConditionedModel, batch: Batch, n_params: int = 200, eps: float = 1e-4,
                   seed: int = 0, weights: Optional[dict] = None) -> dict:
    """Central finite differences against autograd on ``n_params`` sampled conditioning scalars.

    The relative error of one scalar is ``|a - n| / max(|a|, |n|, 1e-8)``;
    ``nonzero`` counts the checked scalars whose gradient exceeds that floor.
    """
    backward(model, batch, weights)
    named = model.named_conditioning_parameters()
    rng = np.random.default_rng(seed)
    # pick a tensor uniformly, then an element, so small tensors are covered too
    picks = set()
    total = sum(p.numel() for _, p in named)
    while len(picks) < min(n_params, total):
        k = int(rng.integers(len(named)))
        picks.add((k, int(rng.integers(named[k][1].numel()))))
    rows = []
    with torch.no_grad():
        for k, i in sorted(picks):
            name, p = named[k]
            analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[i])
            view = p.view(-1)
            orig = float(view[i])
            view[i] = orig + eps
            plus = float(compute_loss(model, batch, weights)[0])
            view[i] = orig - eps
            minus = float(compute_loss(model, batch, weights)[0])
            view[i] = orig
            numeric = (plus - minus) / (2 * eps)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            rows.append({"param": f"{name}[{i}]", "analytic": analytic, "numeric": numeric, "rel_error": rel})
    nonzero = sum(max(abs(r["analytic"]), abs(r["numeric"])) > 1e-8 for r in rows)
    return {"max_rel_error": max(r["rel_error"] for r in rows), "checked": len(rows), "nonzero": nonzero,
            "rows": rows}


def toy_batch(cfg: BackboneConfig, n: int = 4, seed: int = 0, with_aux: bool = True) -> Batch:
    """A small batch of random positions and prompts with every target populated."""
    from .chess import random_game
    from .encoding import PositionHistory, encode_position

    rng = np.random.default_rng(seed)
    states = []
    s = seed * 100
    while len(states) < n:
        g = random_game(s, max_plies=int(rng.integers(1, 40)))
        s += 1
        if legal_moves(g[-1]):
            states.append(g[-1])
    planes = torch.as_tensor(np.stack([encode_position(PositionHistory.single(st)) for st in states]),
                             dtype=cfg.torch_dtype)
    legal = torch.stack([legal_mask(st) for st in states])
    target = torch.as_tensor([move_to_policy_index(legal_moves(st)[0], st) for st in states])
    prompts = [f"play like a {int(rng.integers(800, 2800))} rated player" for _ in states]
    if not with_aux:
        return Batch(planes, prompts, legal, target)
    return Batch(
        planes, prompts, legal, target,
        outcome=torch.as_tensor(rng.choice([-1, 0, 1], size=n)),
        moves_left=torch.as_tensor(rng.uniform(0, 3, size=n), dtype=cfg.torch_dtype),
        termination=torch.as_tensor(rng.integers(0, len(TERMINATION_CLASSES), size=n)),
        move_delay=torch.as_tensor(rng.uniform(0, 3, size=n), dtype=cfg.torch_dtype),
    )
