import math

import numpy as np
import pytest
import torch

from promptchess.chess import BoardState, legal_moves, random_game
from promptchess.encoding import PositionHistory, encode_position
from promptchess.model import (
    BackboneConfig,
    DiagonalZero,
    LoraLinear,
    PromptConditionedModel,
    ZeroLinear,
    accuracy,
    backward,
    compute_loss,
    embed_prompt,
    gradient_check,
    huber,
    legal_mask,
    load_checkpoint,
    lora_effective_weight,
    lora_scale,
    masked_log_softmax,
    masked_softmax,
    randomize_zero_maps,
    save_checkpoint,
    steerability_task,
    toy_batch,
    train_toy,
    value_from_outcome,
)

TINY = BackboneConfig(num_layers=2, embed_dim=8, num_heads=2, policy_dim=8, text_dim=8, lora_rank=2, seed=3)


def planes_for(states):
    return np.stack([encode_position(PositionHistory.single(s)) for s in states])


@pytest.fixture(scope="module")
def positions():
    out = []
    seed = 0
    while len(out) < 100:
        g = random_game(seed, max_plies=int(seed % 60) + 1)
        seed += 1
        if legal_moves(g[-1]):
            out.append(g[-1])
    return out


PROMPTS = [f"play as a {e} rated player in a blitz game" for e in range(800, 2800, 20)]


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ValueError):
            BackboneConfig(embed_dim=30, num_heads=4)
        with pytest.raises(ValueError):
            BackboneConfig(num_layers=0)
        assert BackboneConfig.bt4().embed_dim // BackboneConfig.bt4().num_heads == 32


class TestZeroInit:
    def test_equivalence(self, positions):
        planes = planes_for(positions)
        worst = 0.0
        for seed in range(3):
            m = PromptConditionedModel(BackboneConfig(seed=seed))
            with torch.no_grad():
                logits, _ = m(planes, PROMPTS)
                frozen = m.forward_frozen(planes)
            worst = max(worst, float((logits - frozen).abs().max()))
        assert worst <= 1e-9

    def test_fresh_zero_maps(self):
        m = PromptConditionedModel(TINY)
        for mod in m.modules():
            if isinstance(mod, (ZeroLinear, DiagonalZero)):
                assert all(float(p.detach().abs().max()) == 0 for p in mod.parameters())
        for c in m.control:
            assert float(c.cross.out.weight.detach().abs().max()) == 0

    def test_prompt_gated(self, positions):
        m = PromptConditionedModel(TINY)
        planes = planes_for(positions[:5])
        with torch.no_grad():
            e, mask = m.encode_prompts(PROMPTS[:5])
            a, _ = m(planes, e=e, key_mask=mask)
            b, _ = m(planes, e=e + torch.randn_like(e), key_mask=mask)
        assert torch.equal(a, b)

    def test_z_pi_only_changes_logits(self, positions):
        m = PromptConditionedModel(TINY)
        with torch.no_grad():
            m.z_pi.weight.normal_()
        planes = planes_for(positions[:4])
        with torch.no_grad():
            logits, trace = m(planes, PROMPTS[:4])
            frozen_h = m.frozen_trace(planes)
            frozen = m.forward_frozen(planes)
        for h, fh in zip(trace.hidden, frozen_h):
            assert torch.equal(h, fh)
        assert not torch.equal(logits, frozen)

    @pytest.mark.parametrize("k", [0, 1, 2])
    def test_layer_coupled_wiring(self, positions, k):
        cfg = BackboneConfig(num_layers=4, embed_dim=16, num_heads=2, policy_dim=16, text_dim=16, seed=1)
        m = PromptConditionedModel(cfg)
        with torch.no_grad():
            m.z[k].weight.normal_()
        planes = planes_for(positions[:3])
        with torch.no_grad():
            _, trace = m(planes, PROMPTS[:3])
            frozen_h = m.frozen_trace(planes)
        for j, (h, fh) in enumerate(zip(trace.hidden, frozen_h)):
            if j <= k:
                assert torch.equal(h, fh), j
            else:
                assert not torch.allclose(h, fh), j

    def test_sequential_variant(self, positions):
        cfg = BackboneConfig(num_layers=3, embed_dim=8, num_heads=2, policy_dim=8, text_dim=8, wiring="sequential")
        m = PromptConditionedModel(cfg)
        planes = planes_for(positions[:2])
        with torch.no_grad():
            logits, _ = m(planes, PROMPTS[:2])
            assert torch.equal(logits, m.forward_frozen(planes))

    def test_shape_errors(self):
        m = PromptConditionedModel(TINY)
        with pytest.raises(ValueError):
            m(np.zeros((1, 100, 8, 8)), ["x"])
        with pytest.raises(ValueError):
            m(planes_for([BoardState.start()] * 2), ["x"])
        with pytest.raises(ValueError):
            m(planes_for([BoardState.start()]))


class TestFrozenPolicy:
    def test_deterministic_and_normalised(self, positions):
        m = PromptConditionedModel(TINY)
        planes = planes_for(positions[:20])
        with torch.no_grad():
            a, b = m.forward_frozen(planes), m.forward_frozen(planes)
        assert torch.equal(a, b)
        for s, row in zip(positions[:20], a):
            p = masked_softmax(row, legal_mask(s))
            assert abs(float(p.sum()) - 1) <= 1e-9
            assert float(p[~legal_mask(s)].abs().max()) == 0


class TestPrompt:
    def test_embedding(self):
        m = PromptConditionedModel(TINY)
        ids = m.text.tokenize("Play the Sicilian , please")
        assert len(ids) == 5
        e1, e2 = embed_prompt(m.text, ids), embed_prompt(m.text, ids)
        assert torch.equal(e1, e2) and e1.shape == (5, TINY.text_dim)
        other = embed_prompt(m.text, m.text.tokenize("Play the French , please"))
        assert not torch.equal(e1[2], other[2]) and torch.equal(e1[0], other[0])
        with pytest.raises(ValueError):
            embed_prompt(m.text, [])


class TestLora:
    def test_zero_b(self):
        W = torch.randn(3, 5, dtype=torch.float64)
        A = torch.randn(2, 5, dtype=torch.float64)
        assert torch.equal(lora_effective_weight(W, A, torch.zeros(3, 2, dtype=torch.float64), 4.0), W)

    def test_scale(self):
        assert lora_scale(8, 4, False) == 2
        assert lora_scale(8, 4, True) == 4
        with pytest.raises(ValueError):
            lora_scale(8, 0, False)

    def test_hand_2x2(self):
        W = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
        A = torch.tensor([[1.0, -1.0]])  # r = 1
        B = torch.tensor([[2.0], [0.5]])
        # B @ A = [[2, -2], [0.5, -0.5]], scale alpha/r = 3
        expected = torch.tensor([[7.0, -4.0], [4.5, 2.5]])
        assert torch.equal(lora_effective_weight(W, A, B, alpha=3.0), expected)

    def test_module(self):
        base = torch.nn.Linear(4, 3).double()
        lora = LoraLinear(base, rank=2, alpha=2.0, rs_scaling=False)
        x = torch.randn(5, 4, dtype=torch.float64)
        assert torch.allclose(lora(x), base(x))
        assert not base.weight.requires_grad and lora.B.requires_grad


class TestAux:
    @pytest.mark.parametrize("probs,v", [((0.5, 0.3, 0.2), 0.3), ((1, 0, 0), 1.0), ((1 / 3, 1 / 3, 1 / 3), 0.0)])
    def test_value(self, probs, v):
        assert math.isclose(float(value_from_outcome(torch.tensor(probs, dtype=torch.float64))), v, abs_tol=1e-15)

    def test_heads_normalised(self, positions):
        m = PromptConditionedModel(TINY)
        randomize_zero_maps(m, 1.0)
        with torch.no_grad():
            _, trace = m(planes_for(positions[:10]), PROMPTS[:10])
            aux = m.aux_forward(trace)
        assert torch.allclose(aux.outcome_probs.sum(-1), torch.ones(10, dtype=torch.float64))
        assert torch.allclose(aux.termination_probs.sum(-1), torch.ones(10, dtype=torch.float64))
        assert float(aux.value.abs().max()) <= 1


class TestLoss:
    def test_ce_zero(self):
        logits = torch.randn(1, 1858, dtype=torch.float64)
        mask = torch.zeros(1, 1858, dtype=torch.bool)
        mask[0, 7] = True
        assert float(-masked_log_softmax(logits, mask)[0, 7]) == 0.0

    @pytest.mark.parametrize("r,expected", [(2.0, 1.5), (0.5, 0.125), (-2.0, 1.5)])
    def test_huber(self, r, expected):
        assert float(huber(r, 1.0)) == expected

    def test_breakdown(self):
        m = PromptConditionedModel(TINY)
        total, terms = compute_loss(m, toy_batch(TINY))
        assert set(terms) == {"policy", "outcome", "termination", "moves_left", "move_delay"}
        assert math.isclose(float(total.detach()), sum(terms.values()), rel_tol=1e-12)

    def test_missing_delay_ignored(self):
        m = PromptConditionedModel(TINY)
        b = toy_batch(TINY)
        b.move_delay = torch.full_like(b.move_delay, float("nan"))
        _, terms = compute_loss(m, b)
        assert "move_delay" not in terms


class TestBackward:
    def test_zero_init_structure(self):
        m = PromptConditionedModel(TINY)
        backward(m, toy_batch(TINY, with_aux=False))
        assert float(m.z_pi.weight.grad.abs().max()) > 0
        assert all(p.grad is None for p in m.backbone.parameters())
        assert m.text.proj.base.weight.grad is None

    def test_finite_differences(self):
        m = PromptConditionedModel(TINY)
        randomize_zero_maps(m, 0.3, seed=1)
        report = gradient_check(m, toy_batch(TINY), n_params=200, eps=1e-4)
        assert report["checked"] == 200 and report["nonzero"] >= 150
        assert report["max_rel_error"] < 1e-4

    def test_weight_linearity(self):
        m = PromptConditionedModel(TINY)
        randomize_zero_maps(m, 0.3, seed=2)
        b = toy_batch(TINY)
        base = {"policy": 0.0, "outcome": 1.0, "moves_left": 0.0, "termination": 0.0, "move_delay": 0.0}
        backward(m, b, base)
        g1 = m.z_value.weight.grad.clone()
        backward(m, b, dict(base, outcome=2.0))
        assert torch.allclose(m.z_value.weight.grad, 2 * g1, rtol=1e-12, atol=0)

    def test_nonfinite_detected(self):
        m = PromptConditionedModel(TINY)
        with torch.no_grad():
            m.z_pi.bias.fill_(float("nan"))
        with pytest.raises(FloatingPointError):
            backward(m, toy_batch(TINY, with_aux=False))


class TestTraining:
    def test_frozen_hash_unchanged(self):
        data = steerability_task(n_positions=2, n_prompts=4)
        m = PromptConditionedModel(TINY)
        before = m.frozen_hash()
        train_toy(data, steps=5, model=m)
        assert m.frozen_hash() == before

    def test_same_seed_same_curve(self):
        data = steerability_task(n_positions=2, n_prompts=4)
        _, a = train_toy(data, steps=10, seed=4, cfg=TINY)
        _, b = train_toy(data, steps=10, seed=4, cfg=TINY)
        assert a == b

    def test_steerability(self):
        data = steerability_task()
        m, curve = train_toy(data, steps=2000, seed=0, target_acc=1.0)
        assert len(curve) <= 2000
        assert accuracy(m, data) >= 0.95
        assert accuracy(m, data, conditioned=False) <= 0.55

    def test_checkpoint_roundtrip(self, tmp_path):
        m = PromptConditionedModel(TINY)
        randomize_zero_maps(m, 0.5)
        save_checkpoint(tmp_path / "m.ckpt", m)
        m2 = load_checkpoint(tmp_path / "m.ckpt")
        assert m2.cfg == m.cfg
        for (n1, p1), (n2, p2) in zip(m.state_dict().items(), m2.state_dict().items()):
            assert n1 == n2 and torch.allclose(p1, p2, atol=1e-6)
        (tmp_path / "bad").write_bytes(b"nope")
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "bad")
