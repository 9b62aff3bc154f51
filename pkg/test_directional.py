"""Directional toy experiments. Slow: run with S2R_RUN_SLOW=1."""

import numpy as np
import pytest

from src.config import BRANCHES, RunConfig
from src.dataset_io import read_track_arrays
from src.datamodel import Domain
from src.harness import (ablate, compare_modes, domain_probe, evaluate, student_params, teacher_params,
                         train)
from src.knowd import heldout_fol_error, train_student, train_teacher
from src.syngen import SceneSpec, generate_dataset

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def toy_manifest(tmp_path_factory):
    spec = SceneSpec(seed=11, real_test_fraction=2 / 3)
    counts = {"synthetic/crossing": 154, "synthetic/not_crossing": 246,
              "real/crossing": 116, "real/not_crossing": 184}
    return generate_dataset(spec, counts, str(tmp_path_factory.mktemp("toy")))


def toy_config(run_dir, **changes):
    values = dict(lr=1e-4, epochs=0, teacher_epochs=10, feature_dim=32, region_size=32, psi_heads=4,
                  teacher_heads=4, teacher_ff_dim=128, student_hidden=64, seeds=SEEDS, ttc_sweep=(),
                  run_dir=str(run_dir), log_file=str(run_dir / "toy.log"))
    values.update(changes)
    return RunConfig(**values).replace()


def test_training_mode_ordering(toy_manifest, tmp_path):
    _, summary = compare_modes(toy_config(tmp_path), toy_manifest)
    acc = dict(zip(summary["mode"], summary["acc"]))
    assert acc["syn_to_real"] >= acc["real"] + 0.03
    assert acc["syn"] == min(acc.values())


def test_all_branches_beat_single_branches(toy_manifest, tmp_path):
    subsets = tuple((b,) for b in BRANCHES) + (BRANCHES,)
    means = {}
    for seed in SEEDS:
        config = toy_config(tmp_path / f"seed{seed}", seed=seed, ablation_subsets=subsets)
        table = ablate(config, toy_manifest)
        for name, acc in zip(table["name"], table["acc"]):
            means.setdefault(name, []).append(acc)
    full = np.mean(means["+".join(BRANCHES)])
    best_single = max(np.mean(means[b]) for b in BRANCHES)
    assert full >= best_single - 0.01


def test_fol_head_does_not_degrade_accuracy(toy_manifest, tmp_path):
    acc_delta, ade_with, ade_without = [], [], []
    for seed in SEEDS:
        with_fol = train(toy_config(tmp_path / f"fol{seed}", seed=seed), toy_manifest)
        without = train(toy_config(tmp_path / f"nofol{seed}", seed=seed, use_fol=False), toy_manifest)
        a = evaluate(with_fol.checkpoint_path, toy_manifest)
        b = evaluate(without.checkpoint_path, toy_manifest)
        acc_delta.append(a.acc - b.acc)
        ade_with.append(a.ade)
        ade_without.append(b.ade)
    assert np.mean(acc_delta) >= -0.01
    assert np.mean(ade_with) < np.mean(ade_without)


def test_adversarial_training_confuses_domains(toy_manifest, tmp_path):
    gaps = []
    for seed in SEEDS:
        adversarial = train(toy_config(tmp_path / f"grl{seed}", seed=seed), toy_manifest)
        control = train(toy_config(tmp_path / f"nogrl{seed}", seed=seed, grl_lambda=0.0), toy_manifest)
        probe_adv = domain_probe(adversarial.model, toy_manifest, adversarial.model.config)
        probe_ctl = domain_probe(control.model, toy_manifest, control.model.config)
        gaps.append(abs(probe_ctl - 0.5) - abs(probe_adv - 0.5))
    assert np.mean(gaps) >= 0.1


def test_distillation_lowers_heldout_fol_error(toy_manifest, tmp_path):
    config = toy_config(tmp_path)
    syn_tracks, syn_labels, syn_futures = read_track_arrays(toy_manifest, Domain.SYNTHETIC,
                                                            pred_length=config.pred_length)
    train_tracks, _, train_futures = read_track_arrays(toy_manifest, Domain.REAL, "train", config.pred_length)
    test_tracks, _, test_futures = read_track_arrays(toy_manifest, Domain.REAL, "test", config.pred_length)
    distilled, plain = [], []
    for seed in SEEDS:
        teacher, _ = train_teacher(syn_tracks, syn_labels, syn_futures, teacher_params(config), epochs=10,
                                   lr=1e-3, seed=seed)
        with_teacher = train_student(train_tracks, train_futures, student_params(config), teacher, seed=seed)
        alone = train_student(train_tracks, train_futures, student_params(config), None, seed=seed)
        distilled.append(heldout_fol_error(with_teacher, test_tracks, test_futures))
        plain.append(heldout_fol_error(alone, test_tracks, test_futures))
    assert np.mean(distilled) <= np.mean(plain)
