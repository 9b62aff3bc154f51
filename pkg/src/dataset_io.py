"""On-disk clip layout and a torch Dataset over a generated manifest.

Layout under a dataset root:
    <root>/<domain>/<clip_id>/frames.bin    RGB rasters (T, 3, H, W)
    <root>/<domain>/<clip_id>/depth.bin     synthetic only, (T, H, W)
    <root>/<domain>/<clip_id>/semantic.bin  synthetic only, (T, H, W) class ids
    <root>/<domain>/<clip_id>/track.csv     frame_idx,x,y,w,h for T + P frames
    <root>/<domain>/<clip_id>/meta.json     label, ttc, domain, modalities
    <root>/manifest.json

Raster files: 8-byte magic, uint32 ndim, ndim x uint32 dims, float32 payload,
all little-endian.
"""

import hashlib
import json
import logging
import os
import struct

import numpy as np
import pandas as pd
import torch
from torch.utils.data import Dataset

from src.datamodel import BoxTrack, Clip, CrossingLabel, Domain
from src.stys import crop_rasters

RASTER_MAGIC = b"S2RPCP01"
SEMANTIC_SCALE = 2.0


def write_raster(path, array):
    array = np.ascontiguousarray(array, dtype="<f4")
    header = RASTER_MAGIC + struct.pack("<I", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(array.tobytes(order="C"))


def read_raster(path):
    with open(path, "rb") as f:
        payload = f.read()
    if payload[:8] != RASTER_MAGIC:
        raise ValueError(f"{path} is not a raster file (bad magic)")
    (ndim,) = struct.unpack_from("<I", payload, 8)
    shape = struct.unpack_from(f"<{ndim}I", payload, 12)
    offset = 12 + 4 * ndim
    expected = int(np.prod(shape)) * 4
    if len(payload) - offset != expected:
        raise ValueError(f"{path}: payload has {len(payload) - offset} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype="<f4", offset=offset).reshape(shape).astype(np.float32)


def file_digest(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def write_clip(clip, root):
    """Write one clip under root and return its manifest entry (relative paths)"""
    rel_dir = os.path.join(clip.domain.slug, clip.clip_id)
    clip_dir = os.path.join(root, rel_dir)
    os.makedirs(clip_dir, exist_ok=True)

    files = {"frames": "frames.bin", "track": "track.csv", "meta": "meta.json"}
    write_raster(os.path.join(clip_dir, "frames.bin"), clip.frames)
    if clip.depth is not None:
        write_raster(os.path.join(clip_dir, "depth.bin"), clip.depth)
        files["depth"] = "depth.bin"
    if clip.semantic is not None:
        write_raster(os.path.join(clip_dir, "semantic.bin"), clip.semantic)
        files["semantic"] = "semantic.bin"

    boxes = np.concatenate([clip.track.to_array(), clip.future_track.to_array()]).astype(np.float64)
    track_df = pd.DataFrame(boxes, columns=["x", "y", "w", "h"])
    track_df.insert(0, "frame_idx", np.arange(len(boxes)))
    track_df.to_csv(os.path.join(clip_dir, "track.csv"), index=False, float_format="%.9g")

    meta = {
        "clip_id": clip.clip_id,
        "domain": clip.domain.slug,
        "label": clip.label.slug,
        "ttc": int(clip.ttc_frames),
        "obs_length": len(clip.track),
        "pred_length": len(clip.future_track),
        "modalities": clip.modalities,
    }
    with open(os.path.join(clip_dir, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)

    digests = {name: file_digest(os.path.join(clip_dir, fname)) for name, fname in sorted(files.items())}
    return {
        "clip_id": clip.clip_id,
        "domain": clip.domain.slug,
        "label": clip.label.slug,
        "ttc": int(clip.ttc_frames),
        "path": rel_dir.replace(os.sep, "/"),
        "files": files,
        "sha256": digests,
    }


def read_clip(root, entry):
    clip_dir = os.path.join(root, entry["path"])
    with open(os.path.join(clip_dir, "meta.json"), "r") as f:
        meta = json.load(f)

    frames = read_raster(os.path.join(clip_dir, "frames.bin"))
    depth = semantic = None
    if "depth" in meta["modalities"]:
        depth = read_raster(os.path.join(clip_dir, "depth.bin"))
    if "semantic" in meta["modalities"]:
        semantic = read_raster(os.path.join(clip_dir, "semantic.bin")).astype(np.uint8)

    track_df = pd.read_csv(os.path.join(clip_dir, "track.csv"))
    boxes = track_df[["x", "y", "w", "h"]].to_numpy(dtype=np.float64)
    obs_length = meta["obs_length"]
    return Clip(
        clip_id=meta["clip_id"],
        domain=Domain.parse(meta["domain"]),
        frames=frames,
        track=BoxTrack.from_array(boxes[:obs_length]),
        future_track=BoxTrack.from_array(boxes[obs_length:]),
        label=CrossingLabel.parse(meta["label"]),
        ttc_frames=int(meta["ttc"]),
        depth=depth,
        semantic=semantic,
    )


class ClipDataset(Dataset):
    """Tensors for one domain/split of a manifest, cropped around the pedestrian.

    Items are dicts with track (T, 4), future (P, 4), label, ttc, rgb (T, 3, h, w)
    and, when with_aux is set on synthetic data, depth and semantic (T, 1, h, w).
    """

    def __init__(self, manifest, domain, split=None, beta=1.5, region_size=64,
                 pred_length=None, with_aux=False, max_ttc=None):
        self.root = manifest.root
        self.domain = Domain.parse(domain)
        self.beta = beta
        self.region_size = (region_size, region_size)
        self.pred_length = pred_length
        self.with_aux = with_aux and self.domain == Domain.SYNTHETIC
        self.entries = [
            e for e in manifest.clips
            if Domain.parse(e["domain"]) == self.domain
            and (split is None or e["split"] == split)
            and (max_ttc is None or e["ttc"] <= max_ttc)
        ]

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, index):
        clip = read_clip(self.root, self.entries[index])
        return clip_to_item(clip, self.beta, self.region_size, self.pred_length, self.with_aux)


def clip_to_item(clip, beta, region_size, pred_length=None, with_aux=False):
    track = torch.from_numpy(clip.track.to_array())
    future = torch.from_numpy(clip.future_track.to_array())
    if pred_length is not None:
        if pred_length > future.shape[0]:
            raise ValueError(f"Clip {clip.clip_id} has {future.shape[0]} future boxes, "
                             f"{pred_length} requested")
        future = future[:pred_length]

    item = {
        "clip_id": clip.clip_id,
        "track": track,
        "future": future,
        "label": torch.tensor(int(clip.label)),
        "ttc": torch.tensor(int(clip.ttc_frames)),
        "rgb": crop_rasters(torch.from_numpy(clip.frames), track, beta, region_size),
    }
    if with_aux:
        if clip.depth is None or clip.semantic is None:
            raise ValueError(f"Clip {clip.clip_id} lacks depth/semantic rasters")
        depth = torch.from_numpy(clip.depth).unsqueeze(1)
        semantic = torch.from_numpy(clip.semantic.astype(np.float32) / SEMANTIC_SCALE).unsqueeze(1)
        item["depth"] = crop_rasters(depth, track, beta, region_size)
        item["semantic"] = crop_rasters(semantic, track, beta, region_size)
    return item


def read_track_arrays(manifest, domain, split=None, pred_length=None):
    """Box tracks only, skipping rasters: (tracks (N, T, 4), labels (N,), futures (N, P, 4))"""
    domain = Domain.parse(domain)
    obs_length = manifest.spec.obs_length
    tracks, labels, futures = [], [], []
    for entry in manifest.clips:
        if Domain.parse(entry["domain"]) != domain or (split is not None and entry["split"] != split):
            continue
        track_df = pd.read_csv(os.path.join(manifest.root, entry["path"], "track.csv"))
        boxes = track_df[["x", "y", "w", "h"]].to_numpy(dtype=np.float32)
        future = boxes[obs_length:]
        if pred_length is not None:
            future = future[:pred_length]
        tracks.append(boxes[:obs_length])
        futures.append(future)
        labels.append(int(CrossingLabel.parse(entry["label"])))
    if not tracks:
        raise ValueError(f"No {domain.slug} clips in the manifest")
    return (torch.from_numpy(np.stack(tracks)), torch.tensor(labels, dtype=torch.long),
            torch.from_numpy(np.stack(futures)))


def log_dataset_summary(name, dataset):
    logging.info(f"{name}: {len(dataset)} clips ({dataset.domain.slug})")
