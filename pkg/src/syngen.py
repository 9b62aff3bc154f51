"""Seeded procedural generator for a two-domain pedestrian crossing toy dataset.

The synthetic domain carries RGB, depth and semantic rasters; the real surrogate
is RGB only, rendered with a shifted palette, blur and noise, and with a shifted
speed and box-size distribution.
"""

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from src.config import ConfigError, load_config
from src.dataset_io import write_clip
from src.datamodel import BoundingBox, BoxTrack, Clip, CrossingLabel, Domain

FORMAT_VERSION = 1
MAX_ATTEMPTS = 32

# Crossing/not-crossing proportions of the synthetic benchmark the toy mimics
CROSSING_SHARE = 1226 / (1226 + 1955)

BACKGROUND, ROAD, PEDESTRIAN = 0, 1, 2


@dataclass(frozen=True)
class DomainStyle:
    """Rendering and behaviour parameters of one domain."""

    sky: Tuple[float, float, float]
    ground: Tuple[float, float, float]
    road: Tuple[float, float, float]
    marking: Tuple[float, float, float]
    pedestrian: Tuple[float, float, float]
    stripe: Tuple[float, float, float]
    noise_level: float = 0.0
    blur: int = 0
    speed_scale: float = 1.0
    box_height: Tuple[float, float] = (0.28, 0.4)


SYNTHETIC_STYLE = DomainStyle(
    sky=(0.55, 0.70, 0.92), ground=(0.62, 0.62, 0.60), road=(0.32, 0.33, 0.36),
    marking=(0.95, 0.95, 0.95), pedestrian=(0.85, 0.25, 0.20), stripe=(0.20, 0.25, 0.75),
    noise_level=0.0, blur=0, speed_scale=1.0, box_height=(0.28, 0.40),
)
REAL_STYLE = DomainStyle(
    sky=(0.62, 0.58, 0.50), ground=(0.45, 0.40, 0.33), road=(0.22, 0.21, 0.20),
    marking=(0.85, 0.78, 0.30), pedestrian=(0.35, 0.30, 0.28), stripe=(0.60, 0.55, 0.45),
    noise_level=0.04, blur=1, speed_scale=1.25, box_height=(0.34, 0.50),
)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    frame_size: Tuple[int, int] = (64, 64)  # (H, W)
    obs_length: int = 16
    pred_length: int = 16
    road_band: Tuple[float, float] = (0.55, 0.85)
    horizon: float = 0.35
    ttc_range: Tuple[int, int] = (8, 16)
    speed_range: Tuple[float, float] = (0.006, 0.02)
    lateral_speed: float = 0.006
    crossing_probability: float = CROSSING_SHARE
    stop_probability: float = 0.5
    real_test_fraction: float = 0.5
    synthetic: DomainStyle = SYNTHETIC_STYLE
    real: DomainStyle = REAL_STYLE

    def __post_init__(self):
        problems = []
        if not 0 <= self.crossing_probability <= 1:
            problems.append("crossing_probability must lie in [0, 1]")
        top, bottom = self.road_band
        if not 0 < top < bottom < 1:
            problems.append("road_band must lie strictly inside the frame")
        if not 0 < self.horizon < top:
            problems.append("horizon must lie above the road band")
        lo, hi = self.ttc_range
        if not 1 <= lo <= hi <= self.pred_length:
            problems.append("ttc_range must satisfy 1 <= lo <= hi <= pred_length")
        if not 0 < self.speed_range[0] <= self.speed_range[1]:
            problems.append("speed_range must be positive and ordered")
        if not 0 <= self.real_test_fraction <= 1:
            problems.append("real_test_fraction must lie in [0, 1]")
        if problems:
            raise ValueError("Invalid SceneSpec: " + "; ".join(problems))

    @property
    def centerline(self):
        return (self.road_band[0] + self.road_band[1]) / 2

    def style(self, domain):
        return self.synthetic if Domain.parse(domain) == Domain.SYNTHETIC else self.real

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown scene keys: {', '.join(unknown)}")
        for name, default in (("synthetic", SYNTHETIC_STYLE), ("real", REAL_STYLE)):
            if name in data:
                data[name] = dataclasses.replace(default, **{
                    k: tuple(v) if isinstance(v, list) else v for k, v in data[name].items()
                })
        for key, value in list(data.items()):
            if isinstance(value, list):
                data[key] = tuple(value)
        return cls(**data)


def load_scene_spec(path):
    data = load_config(path)
    try:
        return SceneSpec.from_dict(data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid scene spec {path}: {str(e)}")


@dataclass
class DatasetManifest:
    spec: SceneSpec
    counts: Dict[str, int]
    clips: list
    root: str = ""
    format_version: int = FORMAT_VERSION

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "spec": self.spec.to_dict(),
            "counts": dict(sorted(self.counts.items())),
            "clips": self.clips,
        }

    def domains(self):
        return sorted({Domain.parse(e["domain"]) for e in self.clips})

    def count(self, domain, split=None):
        domain = Domain.parse(domain)
        return sum(1 for e in self.clips
                   if Domain.parse(e["domain"]) == domain and (split is None or e["split"] == split))


def count_key(domain, label):
    return f"{Domain.parse(domain).slug}/{CrossingLabel.parse(label).slug}"


def crosses_road(future_track, centerline, ttc):
    """Crossing predicate: some box of future_track[:ttc] reaches the centerline"""
    return any(box.y_center >= centerline for box in list(future_track)[:ttc])


def default_counts(n_synthetic, n_real, crossing_share=CROSSING_SHARE):
    """Per-(domain, label) counts with the benchmark's crossing proportion"""
    counts = {}
    for domain, total in ((Domain.SYNTHETIC, n_synthetic), (Domain.REAL, n_real)):
        crossing = int(round(total * crossing_share))
        counts[count_key(domain, CrossingLabel.CROSSING)] = crossing
        counts[count_key(domain, CrossingLabel.NOT_CROSSING)] = total - crossing
    return counts


def _clip_rng(spec, domain, label, index):
    return np.random.default_rng([spec.seed, int(domain), int(label), index])


def _snap_box(x, y, wpx, hpx, width, height):
    """Box whose edges lie on the pixel grid, as (BoundingBox, left, top)"""
    left = int(round(x * width - wpx / 2))
    top = int(round(y * height - hpx / 2))
    box = BoundingBox((left + wpx / 2) / width, (top + hpx / 2) / height, wpx / width, hpx / height)
    return box, left, top


def _sample_path(spec, style, label, rng, n_frames):
    """Continuous center path (n_frames, 2), box size in pixels and drawn ttc"""
    height, width = spec.frame_size
    T = spec.obs_length
    c = spec.centerline
    h = rng.uniform(*style.box_height)
    hpx = max(2, int(round(h * height)))
    wpx = max(2, int(round(0.5 * h * width)))
    y_min = hpx / height / 2 + 1.0 / height

    v_lo, v_hi = (s * style.speed_scale for s in spec.speed_range)
    ttc_lo, ttc_hi = spec.ttc_range
    t = np.arange(n_frames, dtype=np.float64)

    if label == CrossingLabel.CROSSING:
        feasible = [tau for tau in range(ttc_lo, ttc_hi + 1)
                    if v_lo <= (c - y_min) / (T + tau - 1)]
        if not feasible:
            raise ValueError("Scene trajectory parameters cannot realize a crossing "
                             f"within {T + spec.pred_length} frames")
        tau = int(rng.choice(feasible))
        k = T + tau - 1
        v = rng.uniform(v_lo, min(v_hi, (c - y_min) / k))
        delta = rng.uniform(0.0, v)
        y = c - v * k + delta + v * t
    else:
        tau = int(rng.integers(ttc_lo, ttc_hi + 1))
        curb = spec.road_band[0] - hpx / height / 4
        y0_hi = curb - 2.0 / height
        if y0_hi <= y_min:
            raise ValueError("Scene leaves no sidewalk for not-crossing pedestrians")
        y0 = rng.uniform(y_min, y0_hi)
        if rng.random() < spec.stop_probability:
            # walks towards the curb like a crosser, then stops short of the road
            v = rng.uniform(v_lo, v_hi)
            t_stop = (curb - y0) / v
            y = y0 + v * np.minimum(t, t_stop)
        else:
            v_max = (c - 2.0 / height - y0) / (n_frames - 1)
            v = rng.uniform(-0.3 * v_lo, max(-0.3 * v_lo, min(v_max, v_hi) * 0.5))
            y = y0 + v * t
        y = np.minimum(y, c - 2.0 / height)

    vx = rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 1.0) * spec.lateral_speed * style.speed_scale
    half_w = wpx / width / 2
    lo, hi = half_w + 0.02, 1 - half_w - 0.02
    span = vx * (n_frames - 1)
    x0 = rng.uniform(max(lo, lo - span), min(hi, hi - span))
    x = x0 + vx * t
    return np.stack([x, y], axis=1), wpx, hpx, tau


def _render(spec, style, boxes_px, rng, with_aux):
    height, width = spec.frame_size
    n = len(boxes_px)
    rows = (np.arange(height) + 0.5) / height
    road_top, road_bottom = spec.road_band
    on_road = (rows >= road_top) & (rows < road_bottom)
    sky = rows < spec.horizon
    centre_row = int(spec.centerline * height)

    base = np.empty((3, height, width), dtype=np.float32)
    for ch in range(3):
        column = np.where(sky, style.sky[ch], style.ground[ch])
        column = np.where(on_road, style.road[ch], column)
        base[ch] = column[:, None]
    dashes = (np.arange(width) // 4) % 2 == 0
    for ch in range(3):
        base[ch, centre_row, dashes] = style.marking[ch]

    ground_depth = np.clip((rows - spec.horizon) / (1 - spec.horizon), 0.0, 1.0).astype(np.float32)
    base_semantic = np.where(on_road, ROAD, BACKGROUND).astype(np.uint8)

    frames = np.repeat(base[None], n, axis=0)
    depth = np.repeat(np.repeat(ground_depth[None, :, None], width, axis=2), n, axis=0) if with_aux else None
    semantic = np.repeat(np.repeat(base_semantic[None, :, None], width, axis=2), n, axis=0) if with_aux else None

    for i, (left, top, wpx, hpx) in enumerate(boxes_px):
        r0, r1 = max(top, 0), min(top + hpx, height)
        c0, c1 = max(left, 0), min(left + wpx, width)
        if r1 <= r0 or c1 <= c0:
            continue
        patch = np.empty((3, r1 - r0, c1 - c0), dtype=np.float32)
        striped = ((np.arange(r0, r1) - top) // 3) % 2 == 1
        for ch in range(3):
            patch[ch] = np.where(striped[:, None], style.stripe[ch], style.pedestrian[ch])
        frames[i, :, r0:r1, c0:c1] = patch
        if with_aux:
            # the whole pedestrian sits at the ground distance of its foot row
            depth[i, r0:r1, c0:c1] = ground_depth[r1 - 1]
            semantic[i, r0:r1, c0:c1] = PEDESTRIAN

    for _ in range(style.blur):
        padded = np.pad(frames, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
        frames = sum(padded[:, :, dy:dy + height, dx:dx + width]
                     for dy in range(3) for dx in range(3)) / 9.0
    if style.noise_level > 0:
        frames = frames + rng.normal(0.0, style.noise_level, size=frames.shape)
    frames = np.clip(frames, 0.0, 1.0).astype(np.float32)
    return frames, depth, semantic


def generate_clip(spec: SceneSpec, domain, label, index: int) -> Clip:
    """Deterministic clip for (spec.seed, domain, label, index)"""
    domain = Domain.parse(domain)
    label = CrossingLabel.parse(label)
    style = spec.style(domain)
    height, width = spec.frame_size
    T, P = spec.obs_length, spec.pred_length
    rng = _clip_rng(spec, domain, label, index)
    c = spec.centerline

    for attempt in range(MAX_ATTEMPTS):
        path, wpx, hpx, tau = _sample_path(spec, style, label, rng, T + P)
        snapped = [_snap_box(x, y, wpx, hpx, width, height) for x, y in path]
        boxes = [s[0] for s in snapped]
        crossed = [b.y_center >= c for b in boxes]

        if label == CrossingLabel.CROSSING:
            first = crossed.index(True) if any(crossed) else None
            if first is None or first < T:
                continue
            ttc = first - T + 1
        else:
            if any(crossed):
                continue
            ttc = tau
        break
    else:
        raise ValueError(f"Could not realize a {label.slug} clip for index {index} "
                         f"after {MAX_ATTEMPTS} attempts; check the trajectory parameters")

    boxes_px = [(left, top, wpx, hpx) for _, left, top in snapped[:T]]
    frames, depth, semantic = _render(spec, style, boxes_px, rng, domain == Domain.SYNTHETIC)
    return Clip(
        clip_id=f"{domain.slug}_{label.slug}_{index:05d}",
        domain=domain,
        frames=frames,
        track=BoxTrack(tuple(boxes[:T])),
        future_track=BoxTrack(tuple(boxes[T:])),
        label=label,
        ttc_frames=int(ttc),
        depth=depth,
        semantic=semantic,
    )


def generate_dataset(spec: SceneSpec, counts, out_dir) -> DatasetManifest:
    """Write every requested clip, then the manifest, and return the manifest"""
    normalized = {}
    for key, n in counts.items():
        if isinstance(key, tuple):
            key = count_key(*key)
        else:
            domain, label = key.split("/")
            key = count_key(domain, label)
        if int(n) < 0:
            raise ValueError(f"Negative clip count for {key}")
        normalized[key] = int(n)

    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for key in sorted(normalized):
        domain_name, label_name = key.split("/")
        domain = Domain.parse(domain_name)
        label = CrossingLabel.parse(label_name)
        n = normalized[key]
        n_test = int(round(n * spec.real_test_fraction)) if domain == Domain.REAL else 0
        for index in range(n):
            clip = generate_clip(spec, domain, label, index)
            entry = write_clip(clip, out_dir)
            entry["split"] = "test" if index >= n - n_test else "train"
            entries.append(entry)
        logging.info(f"Generated {n} {key} clips ({n_test} test)")

    manifest = DatasetManifest(spec=spec, counts=normalized, clips=entries, root=os.path.abspath(out_dir))
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        f.write(manifest_json(manifest))
    logging.info(f"Manifest written to {path} ({len(entries)} clips)")
    return manifest


def manifest_json(manifest):
    return json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n"


def manifest_hash(path):
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def load_manifest(path) -> DatasetManifest:
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise FileNotFoundError(f"No dataset manifest at {path}")
    if data.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"Unsupported manifest format {data.get('format_version')}")
    return DatasetManifest(
        spec=SceneSpec.from_dict(data["spec"]),
        counts=data["counts"],
        clips=data["clips"],
        root=os.path.dirname(os.path.abspath(path)),
        format_version=data["format_version"],
    )
