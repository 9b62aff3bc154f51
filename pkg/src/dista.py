"""Distribution Approximator: gradient-reversal alignment of synthetic depth and
semantic streams with real RGB in the shared psi feature space."""

import logging
import math
from enum import Enum

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.datamodel import Clip, Domain
from src.stys import crop_local_region


class GradReverse(torch.autograd.Function):
    """Identity forward; backward multiplies the incoming gradient by -lambda."""

    @staticmethod
    def forward(ctx, x, lambd):
        ctx.lambd = lambd
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.lambd, None


def grl(x, lambd=1.0):
    return GradReverse.apply(x, float(lambd))


def grl_schedule(base_lambda, progress, warmup=False):
    """Constant lambda, or the 2/(1+exp(-10p)) - 1 warm-up ramp over progress p in [0, 1]"""
    if not warmup:
        return base_lambda
    p = min(max(progress, 0.0), 1.0)
    return base_lambda * (2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0)


class Stream(Enum):
    SYN_DEPTH = "syn_depth"
    SYN_SEMANTIC = "syn_semantic"
    REAL_RGB = "real_rgb"

    @property
    def domain(self):
        return Domain.REAL if self is Stream.REAL_RGB else Domain.SYNTHETIC


class DomainDiscriminator(nn.Module):
    """Gradient reversal, unit-length features, then one linear layer to a domain logit.

    The encoder cannot inflate the domain loss by rescaling its features:
    each item's loss is bounded by softplus(|w| + |b|).
    """

    def __init__(self, feature_dim, lambd=1.0):
        super().__init__()
        if not math.isfinite(lambd):
            raise ValueError(f"Gradient reversal coefficient must be finite, got {lambd}")
        self.lambd = lambd
        self.linear = nn.Linear(feature_dim, 1)

    def logits(self, features):
        return self.linear(F.normalize(features, dim=-1)).squeeze(-1)

    def forward(self, features):
        return self.logits(grl(features, self.lambd))


def domain_loss_from_features(discriminator, batch):
    """Sum of BCE over items of every (features (B, D), Stream) pair"""
    total = None
    for features, stream in batch:
        if not isinstance(stream, Stream):
            raise ValueError(f"Unknown modality stream: {stream!r}")
        logits = discriminator(features)
        target = torch.full_like(logits, float(stream.domain))
        loss = F.binary_cross_entropy_with_logits(logits, target, reduction="sum")
        total = loss if total is None else total + loss
    if total is None:
        raise ValueError("Domain loss needs at least one stream")
    return total


def domain_loss(psi, discriminator, batch):
    """batch: list of (region stacks (B, T, c, h, w), Stream); syn labels 0, real labels 1"""
    encoded = []
    for regions, stream in batch:
        if not isinstance(stream, Stream):
            raise ValueError(f"Unknown modality stream: {stream!r}")
        encoded.append((psi(regions), stream))
    return domain_loss_from_features(discriminator, encoded)


def dista_encode(psi, real_clip: Clip, beta=1.5):
    """f_psi(I_real): the same crop + psi pipeline as the Style Shifter content path"""
    size = (psi.params.region_size, psi.params.region_size)
    regions = crop_local_region(real_clip, beta, size).regions
    return psi(regions.unsqueeze(0))[0]


def discriminator_accuracy(discriminator, features, domains):
    with torch.no_grad():
        predicted = (discriminator.logits(features) > 0).long()
    return float((predicted == domains.long()).float().mean())


def domain_confusion(syn_features, real_features, epochs=200, lr=0.05, test_fraction=0.5, seed=0):
    """Held-out accuracy of a fresh linear probe separating syn from real features.

    Values near 0.5 mean the feature distributions are confused.
    """
    generator = torch.Generator().manual_seed(seed)
    features = torch.cat([syn_features, real_features]).detach()
    domains = torch.cat([torch.zeros(len(syn_features)), torch.ones(len(real_features))])
    order = torch.randperm(len(features), generator=generator)
    n_test = max(1, int(len(features) * test_fraction))
    test_idx, train_idx = order[:n_test], order[n_test:]

    torch.manual_seed(seed)
    probe = DomainDiscriminator(features.shape[1], lambd=0.0)
    optimizer = torch.optim.Adam(probe.parameters(), lr=lr)
    for _ in range(epochs):
        logits = probe(features[train_idx])
        loss = F.binary_cross_entropy_with_logits(logits, domains[train_idx])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    accuracy = discriminator_accuracy(probe, features[test_idx], domains[test_idx])
    logging.info(f"Domain probe held-out accuracy: {accuracy:.3f}")
    return accuracy


def export_features(path, embeddings, domains, labels, clip_ids=None, streams=None):
    """Write (embedding, domain, label) rows to CSV for external embedding analysis"""
    values = embeddings.detach().cpu().numpy() if isinstance(embeddings, torch.Tensor) else np.asarray(embeddings)
    df = pd.DataFrame(values, columns=[f"f{i}" for i in range(values.shape[1])])
    df.insert(0, "label", [int(v) for v in labels])
    if streams is not None:
        df.insert(0, "stream", [Stream(s).value for s in streams])
    df.insert(0, "domain", [Domain.parse(d).slug for d in domains])
    if clip_ids is not None:
        df.insert(0, "clip_id", list(clip_ids))
    df.to_csv(path, index=False)
    logging.info(f"Exported {len(df)} feature rows to {path}")
    return df
