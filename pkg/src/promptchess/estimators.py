"""scikit-learn style wrappers around the encoder, the opening matcher and the policy model."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .encoding import PositionHistory, encode_position, legal_policy_indices, policy_index_to_move
from .openings import DEFAULT_THRESHOLD, load_openings, match_opening
from .validation import check_opening_rows, check_prompt_pairs, check_states, check_targets


class PlaneEncoder(TransformerMixin, BaseEstimator):
    """FEN strings or board states -> ``(n, 112, 8, 8)`` float32 planes (no history)."""

    def fit(self, X=None, y=None):
        self.n_planes_ = 112
        return self

    def transform(self, X):
        states = check_states(X)
        return np.stack([encode_position(PositionHistory.single(s)) for s in states])


class OpeningMatcher(TransformerMixin, BaseEstimator):
    """``(eco, name)`` rows -> canonical opening names (None when unmatched)."""

    def __init__(self, threshold: int = DEFAULT_THRESHOLD, eco_first: bool = True, db_path=None):
        self.threshold = threshold
        self.eco_first = eco_first
        self.db_path = db_path

    def fit(self, X=None, y=None):
        if not 0 <= self.threshold <= 100:
            raise ValueError("threshold must lie in [0, 100]")
        self.db_ = load_openings(self.db_path)
        return self

    def match(self, X) -> list:
        check_is_fitted(self, "db_")
        return [match_opening(eco, name, self.db_, self.threshold, self.eco_first)
                for eco, name in check_opening_rows(X)]

    def transform(self, X):
        return np.array([m.entry.name if m else None for m in self.match(X)], dtype=object)


class PromptConditionedPolicy(ClassifierMixin, BaseEstimator):
    """Trains the conditioning branch on ``(position, prompt) -> UCI move`` rows."""

    def __init__(self, num_layers: int = 4, embed_dim: int = 32, num_heads: int = 4, steps: int = 500,
                 lr: float = 3e-3, batch_size: int = 32, seed: int = 0, target_acc=None):
        self.num_layers = num_layers
        self.embed_dim = embed_dim
        self.num_heads = num_heads
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.target_acc = target_acc

    def _config(self):
        from .model import BackboneConfig

        return BackboneConfig(num_layers=self.num_layers, embed_dim=self.embed_dim, num_heads=self.num_heads,
                              policy_dim=self.embed_dim, text_dim=self.embed_dim, seed=self.seed)

    def fit(self, X, y):
        from .model import make_dataset, train_toy

        states, prompts = check_prompt_pairs(X)
        y = check_targets(states, y)
        data = make_dataset(list(zip(states, prompts, y)))
        self.model_, self.loss_curve_ = train_toy(data, self.steps, self.lr, self.seed, self._config(),
                                                  self.batch_size, target_acc=self.target_acc)
        self.classes_ = np.array(sorted(set(y)))
        return self

    def predict_proba(self, X) -> list:
        """One ``{uci: probability}`` dict per row, over the legal moves."""
        from .model import legal_mask, masked_softmax

        check_is_fitted(self, "model_")
        states, prompts = check_prompt_pairs(X)
        planes = PlaneEncoder().fit().transform(states)
        with torch.no_grad():
            logits, _ = self.model_(planes, prompts)
        out = []
        for s, row in zip(states, logits):
            p = masked_softmax(row, legal_mask(s)).numpy()
            out.append({m.uci: float(p[i]) for i, m in sorted(legal_policy_indices(s).items())})
        return out

    def predict(self, X):
        from .model import legal_mask, masked_softmax

        check_is_fitted(self, "model_")
        states, prompts = check_prompt_pairs(X)
        planes = PlaneEncoder().fit().transform(states)
        with torch.no_grad():
            logits, _ = self.model_(planes, prompts)
        idx = [int(masked_softmax(row, legal_mask(s)).argmax()) for s, row in zip(states, logits)]
        return np.array([policy_index_to_move(i, s).uci for i, s in zip(idx, states)], dtype=object)
