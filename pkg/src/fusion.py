"""Learnable Gated Unit over the three branch embeddings and the Gumbel-softmax
crossing predictor G."""

import torch
import torch.nn as nn
import torch.nn.functional as F

EPS_RANGE = (1e-6, 1.0 - 1e-6)
LOG_CLAMP = 1e-12
NUM_CLASSES = 2


def gate_weights(logits, norm="softmax"):
    """Normalize (..., 3) gate logits onto the simplex"""
    if norm == "softmax":
        return F.softmax(logits, dim=-1)
    if norm == "l1":
        # non-negative through softplus, then divided by the sum
        positive = F.softplus(logits)
        return positive / positive.sum(dim=-1, keepdim=True).clamp_min(LOG_CLAMP)
    raise ValueError(f"Unknown gate normalization: {norm}")


def fuse(features, weights):
    """f_gate = sum_i w_i F_i for features (..., 3, D) and weights (..., 3)"""
    return (weights.unsqueeze(-1) * features).sum(dim=-2)


class LearnedGate(nn.Module):
    """Three linear layers over [f_s; f_st; f_real] producing three gate logits."""

    def __init__(self, feature_dim, hidden=None, norm="softmax", dropout=0.0):
        super().__init__()
        hidden = hidden or feature_dim
        self.feature_dim = feature_dim
        self.norm = norm
        self.layers = nn.Sequential(
            nn.Linear(3 * feature_dim, hidden), nn.ReLU(), nn.Dropout(dropout),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, 3),
        )

    def forward(self, f_s, f_st, f_real):
        if not (f_s.shape == f_st.shape == f_real.shape):
            raise ValueError(
                f"Branch embeddings differ in shape: {tuple(f_s.shape)}, {tuple(f_st.shape)}, {tuple(f_real.shape)}"
            )
        if f_s.shape[-1] != self.feature_dim:
            raise ValueError(f"Expected embeddings of dimension {self.feature_dim}, got {f_s.shape[-1]}")
        stacked = torch.stack([f_s, f_st, f_real], dim=-2)
        weights = gate_weights(self.layers(stacked.flatten(-2)), self.norm)
        return fuse(stacked, weights), weights


def lgu(gate: LearnedGate, f_s, f_st, f_real):
    """(f_gate, w) for one clip or a batch"""
    return gate(f_s, f_st, f_real)


def sample_uniform(shape, generator=None, dtype=torch.float32):
    low, high = EPS_RANGE
    return low + (high - low) * torch.rand(shape, generator=generator, dtype=dtype)


def gumbel_softmax(logits, eps, eta=1.0):
    """softmax_i((l_i - log(-log eps_i)) / eta)"""
    if eta <= 0:
        raise ValueError(f"Gumbel-softmax temperature must be positive, got {eta}")
    if eps.shape != logits.shape:
        raise ValueError(f"Noise shape {tuple(eps.shape)} does not match logits {tuple(logits.shape)}")
    if bool(((eps <= 0) | (eps >= 1)).any()):
        raise ValueError("Gumbel noise samples must lie strictly inside (0, 1)")
    return F.softmax((logits - torch.log(-torch.log(eps))) / eta, dim=-1)


class CrossingPredictor(nn.Module):
    """G: three linear layers to 2 logits, then a Gumbel-softmax.

    In eval mode every eps is 0.5, so the perturbation is equal on both classes
    and cancels; prediction is then softmax(l / eta).
    """

    def __init__(self, feature_dim, hidden=None, dropout=0.5, eta=1.0):
        super().__init__()
        if eta <= 0:
            raise ValueError(f"Gumbel-softmax temperature must be positive, got {eta}")
        hidden = hidden or feature_dim
        self.eta = eta
        self.layers = nn.Sequential(
            nn.Linear(feature_dim, hidden), nn.ReLU(), nn.Dropout(dropout),
            nn.Linear(hidden, hidden // 2), nn.ReLU(), nn.Dropout(dropout),
            nn.Linear(hidden // 2, NUM_CLASSES),
        )

    def logits(self, f_gate):
        return self.layers(f_gate)

    def forward(self, f_gate, generator=None):
        logits = self.logits(f_gate)
        if self.training:
            eps = sample_uniform(logits.shape, generator, logits.dtype)
        else:
            eps = torch.full_like(logits, 0.5)
        return gumbel_softmax(logits, eps, self.eta)


def predict(predictor: CrossingPredictor, f_gate, mode="eval", generator=None):
    """p-hat for f_gate; mode 'eval' is deterministic, 'train' draws seeded noise"""
    if mode not in ("train", "eval"):
        raise ValueError(f"Unknown prediction mode: {mode}")
    was_training = predictor.training
    predictor.train(mode == "train")
    try:
        return predictor(f_gate, generator)
    finally:
        predictor.train(was_training)


def one_hot(labels):
    return F.one_hot(labels.long(), NUM_CLASSES).to(torch.get_default_dtype())


def loss_cla(p_hat, target):
    """BCE summed over both classes, averaged over the batch; logs clamped at 1e-12"""
    if p_hat.shape != target.shape:
        raise ValueError(f"Prediction shape {tuple(p_hat.shape)} does not match target {tuple(target.shape)}")
    target = target.to(p_hat.dtype)
    per_class = -(target * torch.log(p_hat.clamp_min(LOG_CLAMP))
                  + (1 - target) * torch.log((1 - p_hat).clamp_min(LOG_CLAMP)))
    per_item = per_class.sum(dim=-1)
    return per_item.mean() if per_item.dim() else per_item
