"""Style Shifter: pedestrian-centred crops and feature-level AdaIN transfer.

Real RGB regions are the content, synthetic RGB regions the style. AdaIN is
applied to psi tokens (B, T, N, E) after block `adain_block`, with statistics
taken per frame over the N patch positions of every channel.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.datamodel import Clip

ADAIN_EPS = 1e-5


@dataclass
class RegionStack:
    regions: torch.Tensor  # (T, c, h, w)
    boxes: np.ndarray      # (T, 4) source box trace
    beta: float


def crop_rasters(rasters, track, beta, size):
    """Bilinear crops of beta-scaled boxes, clipped to the frame.

    rasters (T, c, H, W), track (T, 4) normalized (x, y, w, h) -> (T, c, h, w).
    """
    if track.shape[0] == 0:
        raise ValueError("Cannot crop regions from an empty track")
    if beta < 1:
        raise ValueError(f"Crop scale beta must be >= 1, got {beta}")
    if rasters.shape[0] != track.shape[0]:
        raise ValueError(f"{rasters.shape[0]} rasters for a track of {track.shape[0]} boxes")
    out_h, out_w = size
    track = track.to(torch.float64)
    x1 = (track[:, 0] - beta * track[:, 2] / 2).clamp(0, 1)
    x2 = (track[:, 0] + beta * track[:, 2] / 2).clamp(0, 1)
    y1 = (track[:, 1] - beta * track[:, 3] / 2).clamp(0, 1)
    y2 = (track[:, 1] + beta * track[:, 3] / 2).clamp(0, 1)

    # sample at output pixel centres, grid_sample coordinates in [-1, 1]
    u = (torch.arange(out_w, dtype=torch.float64) + 0.5) / out_w
    v = (torch.arange(out_h, dtype=torch.float64) + 0.5) / out_h
    gx = x1[:, None] + (x2 - x1)[:, None] * u[None, :]
    gy = y1[:, None] + (y2 - y1)[:, None] * v[None, :]
    grid = torch.stack([
        (2 * gx - 1)[:, None, :].expand(-1, out_h, -1),
        (2 * gy - 1)[:, :, None].expand(-1, -1, out_w),
    ], dim=-1).to(rasters.dtype)
    return F.grid_sample(rasters, grid, mode="bilinear", padding_mode="border", align_corners=False)


def crop_local_region(clip: Clip, beta=1.5, size=(64, 64)) -> RegionStack:
    track = clip.track.to_array()
    regions = crop_rasters(torch.from_numpy(clip.frames), torch.from_numpy(track), beta, size)
    return RegionStack(regions=regions, boxes=track, beta=beta)


def channel_stats(features):
    """Mean and std over positions (dim -2) of (..., N, C) features"""
    mean = features.mean(dim=-2, keepdim=True)
    # floor keeps sqrt differentiable on constant channels
    std = features.var(dim=-2, unbiased=False, keepdim=True).clamp_min(1e-12).sqrt()
    return mean, std


def adain(content_feat, style_feat, eps=ADAIN_EPS, style_stats=None):
    """Re-target per-channel statistics of content to those of style.

    Features are (..., N, C): positions on dim -2, channels on dim -1. The
    content std is clamped from below at eps, so a constant channel maps to
    the style mean.
    """
    if style_stats is None:
        if content_feat.shape[-1] != style_feat.shape[-1]:
            raise ValueError(f"Channel counts differ: {content_feat.shape[-1]} vs {style_feat.shape[-1]}")
        style_mean, style_std = channel_stats(style_feat)
    else:
        style_mean, style_std = style_stats
    content_mean, content_std = channel_stats(content_feat)
    normalized = (content_feat - content_mean) / content_std.clamp_min(eps)
    return style_std * normalized + style_mean


@dataclass
class StyleTransferResult:
    f_st: torch.Tensor
    f_real: torch.Tensor
    loss_con: torch.Tensor
    loss_sty: torch.Tensor
    alpha: float

    @property
    def l_st(self):
        return self.loss_con + self.alpha * self.loss_sty


def _mean_var(embedding):
    return torch.stack([embedding.mean(dim=-1), embedding.var(dim=-1, unbiased=False)], dim=-1)


class StyleShifter(nn.Module):
    """AdaIN insertion into psi plus a running bank of synthetic style statistics.

    The bank (per frame and channel, averaged over the batch) is what eval mode
    uses, since only real inputs exist at test time.
    """

    def __init__(self, num_frames, channels, adain_block=1, alpha=10.0, momentum=0.1):
        super().__init__()
        self.adain_block = adain_block
        self.alpha = alpha
        self.momentum = momentum
        self.register_buffer("style_mean", torch.zeros(num_frames, 1, channels))
        self.register_buffer("style_std", torch.ones(num_frames, 1, channels))
        self.register_buffer("bank_updates", torch.zeros((), dtype=torch.long))

    def _update_bank(self, mean, std):
        with torch.no_grad():
            batch_mean, batch_std = mean.mean(dim=0), std.mean(dim=0)
            if int(self.bank_updates) == 0:
                self.style_mean.copy_(batch_mean)
                self.style_std.copy_(batch_std)
            else:
                self.style_mean.lerp_(batch_mean, self.momentum)
                self.style_std.lerp_(batch_std, self.momentum)
            self.bank_updates += 1

    def transfer(self, psi, content_regions, style_regions=None):
        """f_psi(I_st) and f_psi(I_real); style_regions=None uses the bank"""
        content_mid = psi.run_blocks(psi.tokenize(content_regions), 0, self.adain_block)
        f_real = psi.pool(psi.run_blocks(content_mid, self.adain_block))
        if style_regions is None:
            stats = (self.style_mean, self.style_std)
            mixed = adain(content_mid, None, style_stats=stats)
            return psi.pool(psi.run_blocks(mixed, self.adain_block)), f_real, None

        style_mid = psi.run_blocks(psi.tokenize(style_regions), 0, self.adain_block)
        mean, std = channel_stats(style_mid)
        if self.training:
            self._update_bank(mean.detach(), std.detach())
        mixed = adain(content_mid, None, style_stats=(mean, std))
        f_st = psi.pool(psi.run_blocks(mixed, self.adain_block))
        f_syn = psi.pool(psi.run_blocks(style_mid, self.adain_block))
        return f_st, f_real, f_syn

    def forward(self, psi, content_regions, style_regions):
        f_st, f_real, f_syn = self.transfer(psi, content_regions, style_regions)
        return StyleTransferResult(
            f_st=f_st,
            f_real=f_real,
            loss_con=F.mse_loss(f_real, f_st),
            loss_sty=F.mse_loss(_mean_var(f_syn), _mean_var(f_st)),
            alpha=self.alpha,
        )


def style_transfer_encode(psi, shifter: StyleShifter, real_clip: Clip, syn_clip: Clip, beta=1.5):
    """Crop both clips, transfer syn style onto real content, return the result with losses"""
    if syn_clip.frames is None or np.asarray(syn_clip.frames).ndim != 4 or syn_clip.frames.shape[1] != 3:
        raise ValueError(f"Style clip {syn_clip.clip_id} must carry RGB frames")
    size = (psi.params.region_size, psi.params.region_size)
    content = crop_local_region(real_clip, beta, size).regions.unsqueeze(0)
    style = crop_local_region(syn_clip, beta, size).regions.unsqueeze(0)
    return shifter(psi, content, style)
