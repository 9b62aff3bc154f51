"""Core domain types shared by every module: boxes, tracks, clips and labels."""

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

# Feature vectors and gate weights travel between modules as torch tensors:
# FeatureEmbedding is (D,) or (B, D); GateWeights is (3,) or (B, 3).
FeatureEmbedding = torch.Tensor
GateWeights = torch.Tensor


class Domain(IntEnum):
    SYNTHETIC = 0
    REAL = 1

    @property
    def slug(self):
        return self.name.lower()

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            aliases = {"synthetic": cls.SYNTHETIC, "syn": cls.SYNTHETIC, "real": cls.REAL}
            if value.lower() in aliases:
                return aliases[value.lower()]
            raise ValueError(f"Unknown domain: {value}")
        return cls(int(value))


# Domain labels of the adversarial loss are the Domain values: 0 synthetic, 1 real.
DomainLabel = Domain


class CrossingLabel(IntEnum):
    NOT_CROSSING = 0
    CROSSING = 1

    @property
    def slug(self):
        return self.name.lower()

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.lower().replace("-", "_")
            for member in cls:
                if member.slug == key:
                    return member
            raise ValueError(f"Unknown crossing label: {value}")
        return cls(int(value))


@dataclass(frozen=True)
class BoundingBox:
    """Pedestrian box, center/size as fractions of the frame.

    Edges are clipped to [0, 1] on construction and the center/size recomputed,
    so a box partly outside the frame shrinks and one fully outside has zero area.
    """

    x_center: float
    y_center: float
    w: float
    h: float

    def __post_init__(self):
        values = (self.x_center, self.y_center, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"BoundingBox fields must be finite, got {values}")
        if self.w < 0 or self.h < 0:
            raise ValueError(f"BoundingBox size must be non-negative, got w={self.w}, h={self.h}")

        x1, x2 = _clip_interval(self.x_center - self.w / 2, self.x_center + self.w / 2)
        y1, y2 = _clip_interval(self.y_center - self.h / 2, self.y_center + self.h / 2)
        object.__setattr__(self, "x_center", (x1 + x2) / 2)
        object.__setattr__(self, "y_center", (y1 + y2) / 2)
        object.__setattr__(self, "w", x2 - x1)
        object.__setattr__(self, "h", y2 - y1)

    @property
    def corners(self):
        return (self.x_center - self.w / 2, self.y_center - self.h / 2,
                self.x_center + self.w / 2, self.y_center + self.h / 2)

    @property
    def area(self):
        return self.w * self.h

    def as_tuple(self):
        return (self.x_center, self.y_center, self.w, self.h)


def _clip_interval(lo, hi):
    lo = min(max(lo, 0.0), 1.0)
    hi = min(max(hi, 0.0), 1.0)
    return lo, max(lo, hi)


@dataclass(frozen=True)
class BoxTrack:
    """Ordered boxes of one pedestrian, one per frame."""

    boxes: Tuple[BoundingBox, ...]

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not self.boxes:
            raise ValueError("BoxTrack must contain at least one box")

    def __len__(self):
        return len(self.boxes)

    def __getitem__(self, index):
        return self.boxes[index]

    def __iter__(self):
        return iter(self.boxes)

    def to_array(self):
        return np.array([b.as_tuple() for b in self.boxes], dtype=np.float32)

    @classmethod
    def from_array(cls, array):
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 2 or array.shape[1] != 4:
            raise ValueError(f"Track array must have shape (n, 4), got {array.shape}")
        return cls(tuple(BoundingBox(*map(float, row)) for row in array))


@dataclass(frozen=True, eq=False)
class Clip:
    """A T-frame observation of one pedestrian plus its future track and label.

    frames is (T, 3, H, W) float32 in [0, 1]; depth (T, H, W) float32 and
    semantic (T, H, W) uint8 exist only for synthetic clips.
    """

    clip_id: str
    domain: Domain
    frames: np.ndarray
    track: BoxTrack
    future_track: BoxTrack
    label: CrossingLabel
    ttc_frames: int
    depth: Optional[np.ndarray] = None
    semantic: Optional[np.ndarray] = None

    @property
    def frame_size(self):
        """(W, H) in pixels"""
        return (int(self.frames.shape[-1]), int(self.frames.shape[-2]))

    @property
    def modalities(self):
        names = ["rgb", "boxes"]
        if self.depth is not None:
            names.append("depth")
        if self.semantic is not None:
            names.append("semantic")
        return names


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    inter_w = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    inter_h = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    if union <= 0 or inter <= 0:
        return 0.0
    return min(1.0, inter / union)


def center_distance(a: BoundingBox, b: BoundingBox, frame_size: Sequence[float]) -> float:
    """Euclidean distance between box centers in pixels; frame_size is (W, H)."""
    width, height = frame_size
    if width <= 0 or height <= 0:
        raise ValueError(f"frame_size must be positive, got {frame_size}")
    dx = (a.x_center - b.x_center) * width
    dy = (a.y_center - b.y_center) * height
    return math.hypot(dx, dy)


def validate_clip(clip: Clip, obs_length: int = 16, pred_length: Optional[int] = None) -> List[str]:
    """Check every Clip invariant; an empty list means the clip is well formed."""
    violations = []

    has_depth = clip.depth is not None
    has_semantic = clip.semantic is not None
    if clip.domain == Domain.SYNTHETIC and not (has_depth and has_semantic):
        violations.append("modalities/domain mismatch: synthetic clip needs depth and semantic rasters")
    if clip.domain == Domain.REAL and (has_depth or has_semantic):
        violations.append("modalities/domain mismatch: real clip must carry RGB only")

    frames = np.asarray(clip.frames)
    if frames.ndim != 4 or frames.shape[1] != 3:
        violations.append(f"frames: expected (T, 3, H, W), got {frames.shape}")
    else:
        if frames.shape[0] != obs_length:
            violations.append(f"length: expected {obs_length} frames, got {frames.shape[0]}")
        if not np.all(np.isfinite(frames)) or frames.min() < 0 or frames.max() > 1:
            violations.append("frames: values must be finite and within [0, 1]")
        for name, raster in (("depth", clip.depth), ("semantic", clip.semantic)):
            if raster is not None and np.asarray(raster).shape != (frames.shape[0],) + frames.shape[2:]:
                violations.append(f"raster dims: {name} shape {np.asarray(raster).shape} "
                                  f"does not match frames {frames.shape}")

    if len(clip.track) != obs_length:
        violations.append(f"length: expected a track of {obs_length} boxes, got {len(clip.track)}")
    if pred_length is not None and len(clip.future_track) != pred_length:
        violations.append(f"future length: expected {pred_length} boxes, got {len(clip.future_track)}")
    if clip.ttc_frames < 0:
        violations.append(f"ttc: must be >= 0, got {clip.ttc_frames}")
    if not isinstance(clip.label, CrossingLabel):
        violations.append(f"label: not a crossing label: {clip.label!r}")
    return violations
