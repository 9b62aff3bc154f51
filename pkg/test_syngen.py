import os

import numpy as np
import pytest

from conftest import TINY_COUNTS, TINY_SCENE
from src.config import ConfigError
from src.dataset_io import ClipDataset, read_clip, read_raster, write_raster
from src.datamodel import CrossingLabel, Domain, validate_clip
from src.syngen import (PEDESTRIAN, SceneSpec, count_key, crosses_road, default_counts, generate_clip,
                        generate_dataset, load_manifest, load_scene_spec, manifest_hash)


def test_generate_clip_is_deterministic():
    a = generate_clip(TINY_SCENE, Domain.SYNTHETIC, CrossingLabel.CROSSING, 3)
    b = generate_clip(TINY_SCENE, Domain.SYNTHETIC, CrossingLabel.CROSSING, 3)
    assert np.array_equal(a.frames, b.frames)
    assert np.array_equal(a.depth, b.depth)
    assert np.array_equal(a.semantic, b.semantic)
    assert np.array_equal(a.track.to_array(), b.track.to_array())
    assert a.ttc_frames == b.ttc_frames


def test_generated_clips_are_valid():
    for domain in Domain:
        for label in CrossingLabel:
            clip = generate_clip(TINY_SCENE, domain, label, 0)
            assert validate_clip(clip, obs_length=8, pred_length=8) == []


def test_label_matches_crossing_predicate():
    c = TINY_SCENE.centerline
    for domain in Domain:
        for index in range(6):
            crossing = generate_clip(TINY_SCENE, domain, CrossingLabel.CROSSING, index)
            assert crosses_road(crossing.future_track, c, crossing.ttc_frames)
            assert all(box.y_center < c for box in crossing.track)
            not_crossing = generate_clip(TINY_SCENE, domain, CrossingLabel.NOT_CROSSING, index)
            assert not crosses_road(not_crossing.future_track, c, len(not_crossing.future_track))


def test_ttc_within_configured_range():
    lo, hi = TINY_SCENE.ttc_range
    for index in range(6):
        clip = generate_clip(TINY_SCENE, Domain.REAL, CrossingLabel.CROSSING, index)
        assert 1 <= clip.ttc_frames <= TINY_SCENE.pred_length
        clip = generate_clip(TINY_SCENE, Domain.REAL, CrossingLabel.NOT_CROSSING, index)
        assert lo <= clip.ttc_frames <= hi


def test_semantic_pedestrian_area_matches_box():
    height, width = TINY_SCENE.frame_size
    clip = generate_clip(TINY_SCENE, Domain.SYNTHETIC, CrossingLabel.CROSSING, 1)
    for t, box in enumerate(clip.track):
        pixels = int((clip.semantic[t] == PEDESTRIAN).sum())
        assert pixels == pytest.approx(box.area * width * height, rel=0.1)


def test_depth_monotonic_down_each_column():
    clip = generate_clip(TINY_SCENE, Domain.SYNTHETIC, CrossingLabel.NOT_CROSSING, 2)
    assert np.all(np.diff(clip.depth, axis=1) >= 0)


def test_real_clips_are_rgb_only():
    clip = generate_clip(TINY_SCENE, Domain.REAL, CrossingLabel.CROSSING, 0)
    assert clip.depth is None and clip.semantic is None
    assert clip.modalities == ["rgb"]


def test_domain_shift_in_color_statistics():
    syn = np.stack([generate_clip(TINY_SCENE, Domain.SYNTHETIC, CrossingLabel.NOT_CROSSING, i).frames
                    for i in range(3)])
    real = np.stack([generate_clip(TINY_SCENE, Domain.REAL, CrossingLabel.NOT_CROSSING, i).frames
                     for i in range(3)])
    gap = np.abs(syn.mean(axis=(0, 1, 3, 4)) - real.mean(axis=(0, 1, 3, 4))).max()
    assert gap > 3 * TINY_SCENE.real.noise_level / np.sqrt(syn[0].size)
    assert gap > 0.05


def test_infeasible_scene_rejected():
    spec = SceneSpec(seed=0, obs_length=8, pred_length=8, ttc_range=(4, 8), speed_range=(0.2, 0.3))
    with pytest.raises(ValueError):
        generate_clip(spec, Domain.SYNTHETIC, CrossingLabel.CROSSING, 0)


def test_scene_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(crossing_probability=1.5)
    with pytest.raises(ValueError):
        SceneSpec(road_band=(0.5, 1.2))


def test_scene_spec_from_yaml(tmp_path):
    path = tmp_path / "scene.yaml"
    path.write_text("seed: 3\nframe_size: [32, 48]\nreal:\n  noise_level: 0.1\n")
    spec = load_scene_spec(str(path))
    assert spec.frame_size == (32, 48)
    assert spec.real.noise_level == 0.1
    assert spec.real.blur == 1

    path.write_text("seed: 3\nunknown_key: 1\n")
    with pytest.raises(ConfigError):
        load_scene_spec(str(path))


def test_manifest_counts_honored(tmp_path):
    counts = {("syn", "crossing"): 4, ("syn", "not_crossing"): 6, ("real", "crossing"): 2, ("real", "not_crossing"): 3}
    manifest = generate_dataset(TINY_SCENE, counts, str(tmp_path))
    assert manifest.counts == {count_key(*k): v for k, v in counts.items()}
    assert manifest.count(Domain.SYNTHETIC) == 10
    assert manifest.count(Domain.REAL) == 5
    for entry in manifest.clips:
        for name in entry["files"].values():
            assert os.path.exists(os.path.join(str(tmp_path), entry["path"], name))


def test_regeneration_reproduces_manifest_hash(tmp_path):
    counts = {"synthetic/crossing": 2, "real/not_crossing": 2}
    generate_dataset(TINY_SCENE, counts, str(tmp_path / "a"))
    generate_dataset(TINY_SCENE, counts, str(tmp_path / "b"))
    assert manifest_hash(str(tmp_path / "a")) == manifest_hash(str(tmp_path / "b"))


def test_default_counts_follow_crossing_share():
    counts = default_counts(400, 300)
    crossing = counts["synthetic/crossing"]
    assert crossing + counts["synthetic/not_crossing"] == 400
    assert abs(crossing - 400 * 1226 / 3181) <= 1


def test_real_test_split(tiny_manifest):
    assert tiny_manifest.count(Domain.REAL, "test") == 4
    assert tiny_manifest.count(Domain.REAL, "train") == 4
    assert tiny_manifest.count(Domain.SYNTHETIC, "test") == 0


def test_clip_round_trip_through_disk(tiny_manifest):
    entry = next(e for e in tiny_manifest.clips if e["domain"] == "synthetic")
    label, index = entry["label"], int(entry["clip_id"].rsplit("_", 1)[1])
    clip = read_clip(tiny_manifest.root, entry)
    original = generate_clip(TINY_SCENE, Domain.SYNTHETIC, label, index)
    assert np.array_equal(clip.frames, original.frames)
    assert np.array_equal(clip.semantic, original.semantic)
    np.testing.assert_allclose(clip.track.to_array(), original.track.to_array(), atol=1e-7)
    assert clip.ttc_frames == original.ttc_frames


def test_load_manifest_matches_written(tiny_manifest):
    loaded = load_manifest(tiny_manifest.root)
    assert loaded.clips == tiny_manifest.clips
    assert loaded.spec == TINY_SCENE
    assert sum(loaded.counts.values()) == sum(TINY_COUNTS.values())


def test_raster_codec_rejects_bad_magic(tmp_path):
    path = str(tmp_path / "r.bin")
    write_raster(path, np.arange(6, dtype=np.float32).reshape(2, 3))
    assert np.array_equal(read_raster(path), np.arange(6, dtype=np.float32).reshape(2, 3))
    with open(path, "r+b") as f:
        f.write(b"XXXXXXXX")
    with pytest.raises(ValueError):
        read_raster(path)


def test_clip_dataset_items(tiny_manifest):
    dataset = ClipDataset(tiny_manifest, Domain.SYNTHETIC, region_size=16, pred_length=8, with_aux=True)
    item = dataset[0]
    assert item["rgb"].shape == (8, 3, 16, 16)
    assert item["depth"].shape == (8, 1, 16, 16)
    assert float(item["semantic"].max()) <= 1.0
    assert item["future"].shape == (8, 4)
    real = ClipDataset(tiny_manifest, Domain.REAL, "test", region_size=16, with_aux=True)
    assert "depth" not in real[0]
