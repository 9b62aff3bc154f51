import math

import pytest
import torch

from src.fusion import (CrossingPredictor, LearnedGate, fuse, gate_weights, gumbel_softmax, lgu, loss_cla,
                        one_hot, predict, sample_uniform)
from src.gradcheck import check_parameter_gradients


@pytest.mark.parametrize("norm", ["softmax", "l1"])
def test_gate_weights_on_simplex(norm):
    logits = torch.randn(50, 3) * 5
    w = gate_weights(logits, norm)
    assert torch.all(w >= 0)
    torch.testing.assert_close(w.sum(dim=-1), torch.ones(50))


def test_unknown_gate_norm_rejected():
    with pytest.raises(ValueError):
        gate_weights(torch.zeros(3), "l2")


def test_equal_weights_give_mean():
    features = torch.randn(4, 3, 8)
    w = gate_weights(torch.zeros(4, 3))
    torch.testing.assert_close(fuse(features, w), features.mean(dim=-2))


def test_one_hot_gate_selects_branch():
    features = torch.randn(2, 3, 5)
    w = torch.tensor([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    torch.testing.assert_close(fuse(features, w), torch.stack([features[0, 1], features[1, 2]]))


def test_learned_gate_reconstruction():
    torch.manual_seed(0)
    gate = LearnedGate(8)
    f_s, f_st, f_real = torch.randn(3, 4, 8, dtype=torch.float64)
    gate = gate.double()
    f_gate, w = lgu(gate, f_s, f_st, f_real)
    rebuilt = w[:, 0:1] * f_s + w[:, 1:2] * f_st + w[:, 2:3] * f_real
    assert torch.max(torch.abs(f_gate - rebuilt)) < 1e-7
    torch.testing.assert_close(w.sum(dim=-1), torch.ones(4, dtype=torch.float64))


def test_learned_gate_single_clip():
    gate = LearnedGate(6, norm="l1")
    f_gate, w = gate(torch.randn(6), torch.randn(6), torch.randn(6))
    assert f_gate.shape == (6,) and w.shape == (3,)


def test_learned_gate_rejects_mismatched_embeddings():
    gate = LearnedGate(8)
    with pytest.raises(ValueError):
        gate(torch.zeros(2, 8), torch.zeros(2, 8), torch.zeros(2, 4))
    with pytest.raises(ValueError):
        gate(torch.zeros(2, 4), torch.zeros(2, 4), torch.zeros(2, 4))


def test_gumbel_softmax_sums_to_one():
    logits = torch.randn(100, 2)
    p = gumbel_softmax(logits, sample_uniform(logits.shape, torch.Generator().manual_seed(0)))
    torch.testing.assert_close(p.sum(dim=-1), torch.ones(100))


def test_gumbel_with_equal_noise_is_softmax():
    logits = torch.randn(10, 2)
    for value in (0.1, 0.5, 0.9):
        eps = torch.full_like(logits, value)
        torch.testing.assert_close(gumbel_softmax(logits, eps, eta=2.0), torch.softmax(logits / 2.0, dim=-1))


def test_gumbel_argmax_frequency_matches_softmax():
    logits = torch.tensor([0.3, -0.4])
    n = 100_000
    eps = sample_uniform((n, 2), torch.Generator().manual_seed(0))
    samples = gumbel_softmax(logits.expand(n, 2), eps)
    frequency = float((samples.argmax(dim=-1) == 0).double().mean())
    assert frequency == pytest.approx(float(torch.softmax(logits, dim=0)[0]), abs=0.01)


def test_gumbel_argmax_invariant_to_temperature():
    logits = torch.randn(20, 2)
    eps = sample_uniform((20, 2), torch.Generator().manual_seed(3))
    hot = gumbel_softmax(logits, eps, eta=0.1).argmax(dim=-1)
    cold = gumbel_softmax(logits, eps, eta=10.0).argmax(dim=-1)
    assert torch.equal(hot, cold)


def test_gumbel_rejects_bad_arguments():
    logits = torch.zeros(2)
    with pytest.raises(ValueError):
        gumbel_softmax(logits, torch.full((2,), 0.5), eta=0.0)
    with pytest.raises(ValueError):
        gumbel_softmax(logits, torch.full((3,), 0.5))
    with pytest.raises(ValueError):
        gumbel_softmax(logits, torch.tensor([0.0, 0.5]))
    with pytest.raises(ValueError):
        CrossingPredictor(8, eta=-1.0)


def test_predictor_eval_is_deterministic():
    torch.manual_seed(0)
    predictor = CrossingPredictor(8, hidden=8, eta=1.0)
    f_gate = torch.randn(5, 8)
    first = predict(predictor, f_gate, "eval")
    second = predict(predictor, f_gate, "eval")
    assert torch.equal(first, second)
    predictor.eval()
    with torch.no_grad():
        torch.testing.assert_close(first, torch.softmax(predictor.logits(f_gate), dim=-1))


def test_predictor_train_noise_is_seeded():
    torch.manual_seed(0)
    predictor = CrossingPredictor(8, hidden=8, dropout=0.0)
    f_gate = torch.randn(5, 8)
    a = predict(predictor, f_gate, "train", torch.Generator().manual_seed(4))
    b = predict(predictor, f_gate, "train", torch.Generator().manual_seed(4))
    assert torch.equal(a, b)
    assert predictor.training
    with pytest.raises(ValueError):
        predict(predictor, f_gate, "test")


def test_loss_cla_oracles():
    target = one_hot(torch.tensor([1, 0]))
    assert float(loss_cla(target.clone(), target)) == pytest.approx(0.0, abs=1e-9)
    assert float(loss_cla(torch.full((2, 2), 0.5), target)) == pytest.approx(2 * math.log(2), rel=1e-6)


def test_loss_cla_clamps_confident_mistakes():
    target = one_hot(torch.tensor([0]))
    loss = loss_cla(torch.tensor([[0.0, 1.0]]), target)
    assert math.isfinite(float(loss))
    assert float(loss) == pytest.approx(-2 * math.log(1e-12), rel=1e-5)


def test_loss_cla_shape_mismatch():
    with pytest.raises(ValueError):
        loss_cla(torch.zeros(2, 2), torch.zeros(2, 3))


@pytest.mark.parametrize("norm", ["softmax", "l1"])
def test_gate_argmax_invariant_to_positive_scaling(norm):
    generator = torch.Generator().manual_seed(5)
    logits = torch.randn(1000, 3, generator=generator, dtype=torch.float64)
    scale = torch.rand(1000, 1, generator=generator, dtype=torch.float64) * 10 + 0.1
    assert torch.equal(gate_weights(logits, norm).argmax(dim=-1), gate_weights(logits * scale, norm).argmax(dim=-1))


def test_gate_gradients_match_finite_differences():
    torch.manual_seed(6)
    gate = LearnedGate(4, hidden=6).double().eval()
    f_s, f_st, f_real = torch.randn(3, 2, 4, dtype=torch.float64)

    def probe():
        f_gate, w = gate(f_s, f_st, f_real)
        return (f_gate ** 2).sum() + w[:, 0].sum()

    result = check_parameter_gradients(gate, probe, n_entries=8)
    assert result.checked > 0
    assert result.passed(1e-3)


def test_predictor_gradients_match_finite_differences():
    torch.manual_seed(7)
    predictor = CrossingPredictor(4, hidden=6, dropout=0.0).double().eval()
    f_gate = torch.randn(3, 4, dtype=torch.float64)
    target = one_hot(torch.tensor([1, 0, 1])).double()

    result = check_parameter_gradients(predictor, lambda: loss_cla(predictor(f_gate), target), n_entries=8)
    assert result.checked > 0
    assert result.passed(1e-3)


def test_every_weighted_branch_receives_classification_gradient():
    torch.manual_seed(6)
    gate = LearnedGate(8)
    predictor = CrossingPredictor(8, dropout=0.0).eval()
    branches = [torch.randn(4, 8, requires_grad=True) for _ in range(3)]
    f_gate, weights = gate(*branches)
    assert float(weights.min()) >= 0.05
    loss_cla(predictor(f_gate), one_hot(torch.tensor([0, 1, 1, 0]))).backward()
    for branch in branches:
        assert float(branch.grad.norm()) > 0
