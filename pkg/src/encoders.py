"""The three learnable encoders.

TeacherEncoder   Transformer over box sequences, trained on synthetic tracks.
StudentEncoder   residual conv stem over the box sequence + 2-layer LSTM.
PsiBackbone      divided space-time attention over pedestrian region stacks,
                 shared by the Style Shifter and the Distribution Approximator.

Box encoders return (embedding (B, D), future boxes (B, P, 4)); future boxes are
predicted as offsets from the last observed box and clamped to [0, 1].
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class TeacherParams:
    obs_length: int = 16
    pred_length: int = 16
    model_dim: int = 64
    layers: int = 3
    heads: int = 8
    ff_dim: int = 512
    dropout: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide model_dim ({self.model_dim})")


@dataclass(frozen=True)
class StudentParams:
    obs_length: int = 16
    pred_length: int = 16
    embed_dim: int = 64
    channels: int = 16
    res_blocks: int = 2
    hidden: int = 100
    lstm_layers: int = 2
    dropout: float = 0.1


@dataclass(frozen=True)
class BackbonePsiParams:
    num_frames: int = 16
    region_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.region_size % self.patch_size:
            raise ValueError(f"region_size {self.region_size} is not divisible by patch_size {self.patch_size}")
        if self.embed_dim % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide embed_dim ({self.embed_dim})")

    @property
    def tokens_per_frame(self):
        side = self.region_size // self.patch_size
        return side * side


def _check_track(track, obs_length):
    if track.dim() != 3 or track.shape[-1] != 4:
        raise ValueError(f"Expected a track batch of shape (B, T, 4), got {tuple(track.shape)}")
    if track.shape[1] != obs_length:
        raise ValueError(f"Track length {track.shape[1]} does not match obs_length {obs_length}")


class FutureBoxHead(nn.Module):
    """Regresses P future boxes as offsets from the last observed box."""

    def __init__(self, in_dim, pred_length):
        super().__init__()
        self.pred_length = pred_length
        self.proj = nn.Linear(in_dim, pred_length * 4)

    def forward(self, features, track):
        offsets = self.proj(features).view(-1, self.pred_length, 4)
        return torch.clamp(track[:, -1:, :] + offsets, 0.0, 1.0)


class TeacherEncoder(nn.Module):
    def __init__(self, params: TeacherParams = TeacherParams()):
        super().__init__()
        self.params = params
        self.input_proj = nn.Linear(4, params.model_dim)
        self.pos_embed = nn.Parameter(torch.zeros(1, params.obs_length, params.model_dim))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=params.model_dim, nhead=params.heads, dim_feedforward=params.ff_dim,
            dropout=params.dropout, batch_first=True,
        )
        self.transformer = nn.TransformerEncoder(layer, num_layers=params.layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(params.model_dim)
        self.fol_head = FutureBoxHead(params.model_dim, params.pred_length)
        self.cls_head = nn.Linear(params.model_dim, 2)
        self.frozen = False

    def forward(self, track):
        _check_track(track, self.params.obs_length)
        tokens = self.input_proj(track) + self.pos_embed
        encoded = self.norm(self.transformer(tokens))
        embedding = encoded.mean(dim=1)
        return embedding, self.fol_head(embedding, track)

    def classify(self, embedding):
        return self.cls_head(embedding)


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, kernel_size=3, padding=1)

    def forward(self, x):
        return F.relu(x + self.conv2(F.relu(self.conv1(x))))


class StudentEncoder(nn.Module):
    """Conv stem over the (T x 4) box map, then an LSTM over time."""

    def __init__(self, params: StudentParams = StudentParams()):
        super().__init__()
        self.params = params
        self.stem = nn.Conv2d(1, params.channels, kernel_size=3, padding=1)
        self.blocks = nn.Sequential(*[ResidualBlock(params.channels) for _ in range(params.res_blocks)])
        self.lstm = nn.LSTM(
            input_size=params.channels * 4, hidden_size=params.hidden, num_layers=params.lstm_layers,
            batch_first=True, dropout=params.dropout if params.lstm_layers > 1 else 0.0,
        )
        self.embed = nn.Linear(params.hidden, params.embed_dim)
        self.fol_head = FutureBoxHead(params.hidden, params.pred_length)

    def forward(self, track):
        _check_track(track, self.params.obs_length)
        feature_map = self.blocks(F.relu(self.stem(track.unsqueeze(1))))  # (B, C, T, 4)
        steps = feature_map.permute(0, 2, 1, 3).flatten(2)  # (B, T, C*4)
        outputs, _ = self.lstm(steps)
        last = outputs[:, -1]
        return self.embed(last), self.fol_head(last, track)


class DividedSpaceTimeBlock(nn.Module):
    """Temporal attention per patch position, then spatial attention per frame."""

    def __init__(self, dim, heads, dropout=0.0):
        super().__init__()
        self.temporal_norm = nn.LayerNorm(dim)
        self.temporal_attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.spatial_norm = nn.LayerNorm(dim)
        self.spatial_attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.mlp_norm = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Dropout(dropout), nn.Linear(4 * dim, dim),
        )

    def forward(self, x):
        B, T, N, E = x.shape
        t = x.permute(0, 2, 1, 3).reshape(B * N, T, E)
        h = self.temporal_norm(t)
        t = t + self.temporal_attn(h, h, h, need_weights=False)[0]
        x = t.reshape(B, N, T, E).permute(0, 2, 1, 3)

        s = x.reshape(B * T, N, E)
        h = self.spatial_norm(s)
        s = s + self.spatial_attn(h, h, h, need_weights=False)[0]
        x = s.reshape(B, T, N, E)
        return x + self.mlp(self.mlp_norm(x))


class PsiBackbone(nn.Module):
    """Spatio-temporal region encoder; input (B, T, c, h, w) with c in {1, 3}."""

    def __init__(self, params: BackbonePsiParams = BackbonePsiParams(), out_dim=None):
        super().__init__()
        self.params = params
        out_dim = out_dim or params.embed_dim
        self.patch_embed = nn.Conv2d(3, params.embed_dim, kernel_size=params.patch_size, stride=params.patch_size)
        self.spatial_pos = nn.Parameter(torch.zeros(1, 1, params.tokens_per_frame, params.embed_dim))
        self.temporal_pos = nn.Parameter(torch.zeros(1, params.num_frames, 1, params.embed_dim))
        nn.init.trunc_normal_(self.spatial_pos, std=0.02)
        nn.init.trunc_normal_(self.temporal_pos, std=0.02)
        self.blocks = nn.ModuleList(
            DividedSpaceTimeBlock(params.embed_dim, params.heads, params.dropout) for _ in range(params.depth)
        )
        self.norm = nn.LayerNorm(params.embed_dim)
        self.head = nn.Linear(params.embed_dim, out_dim)

    @property
    def depth(self):
        return len(self.blocks)

    def tokenize(self, regions):
        """(B, T, c, h, w) -> tokens (B, T, N, E)"""
        if regions.dim() == 4:
            regions = regions.unsqueeze(0)
        if regions.dim() != 5:
            raise ValueError(f"Expected region stacks (B, T, c, h, w), got {tuple(regions.shape)}")
        B, T, c, h, w = regions.shape
        size = self.params.region_size
        if c not in (1, 3):
            raise ValueError(f"Region stacks must have 1 or 3 channels, got {c}")
        if (h, w) != (size, size) or T != self.params.num_frames:
            raise ValueError(f"Expected ({self.params.num_frames}, c, {size}, {size}) regions, got {(T, c, h, w)}")
        if c == 1:
            regions = regions.expand(B, T, 3, h, w)
        patches = self.patch_embed(regions.reshape(B * T, 3, h, w))  # (B*T, E, h/p, w/p)
        tokens = patches.flatten(2).transpose(1, 2).reshape(B, T, -1, self.params.embed_dim)
        return tokens + self.spatial_pos + self.temporal_pos

    def run_blocks(self, tokens, start=0, stop=None):
        for block in self.blocks[start:stop]:
            tokens = block(tokens)
        return tokens

    def pool(self, tokens):
        return self.head(self.norm(tokens).mean(dim=(1, 2)))

    def forward(self, regions):
        return self.pool(self.run_blocks(self.tokenize(regions)))


def teacher_encode(teacher: TeacherEncoder, track):
    """f_T and the teacher's future boxes for a (B, T, 4) or (T, 4) track"""
    squeeze = track.dim() == 2
    embedding, future = teacher(track.unsqueeze(0) if squeeze else track)
    return (embedding[0], future[0]) if squeeze else (embedding, future)


def student_encode(student: StudentEncoder, track):
    squeeze = track.dim() == 2
    embedding, future = student(track.unsqueeze(0) if squeeze else track)
    return (embedding[0], future[0]) if squeeze else (embedding, future)


def psi_encode(psi: PsiBackbone, regions):
    """One embedding per clip; a single (T, c, h, w) stack yields a (D,) vector"""
    squeeze = regions.dim() == 4
    embedding = psi(regions)
    return embedding[0] if squeeze else embedding


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())
