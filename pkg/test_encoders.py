import pytest
import torch

from src.encoders import (BackbonePsiParams, PsiBackbone, StudentEncoder, StudentParams, TeacherEncoder,
                          TeacherParams, count_parameters, psi_encode, student_encode, teacher_encode)
from src.gradcheck import check_parameter_gradients
from src.knowd import train_teacher

SMALL_PSI = BackbonePsiParams(num_frames=4, region_size=16, patch_size=8, embed_dim=16, depth=2, heads=2)


def random_tracks(batch, length, seed=0):
    generator = torch.Generator().manual_seed(seed)
    centers = torch.rand(batch, length, 2, generator=generator) * 0.6 + 0.2
    sizes = torch.rand(batch, length, 2, generator=generator) * 0.2 + 0.05
    return torch.cat([centers, sizes], dim=-1)


def test_teacher_output_shapes():
    teacher = TeacherEncoder(TeacherParams(obs_length=16, pred_length=8, model_dim=32, layers=1, heads=4, ff_dim=64))
    embedding, future = teacher(random_tracks(3, 16))
    assert embedding.shape == (3, 32)
    assert future.shape == (3, 8, 4)
    assert float(future.min()) >= 0.0 and float(future.max()) <= 1.0


def test_student_output_shapes():
    student = StudentEncoder(StudentParams(obs_length=16, pred_length=32, embed_dim=24, hidden=20))
    embedding, future = student(random_tracks(2, 16))
    assert embedding.shape == (2, 24)
    assert future.shape == (2, 32, 4)


def test_single_track_helpers_squeeze_batch():
    teacher = TeacherEncoder(TeacherParams(model_dim=16, layers=1, heads=2, ff_dim=32)).eval()
    student = StudentEncoder(StudentParams(embed_dim=16, hidden=12)).eval()
    track = random_tracks(1, 16)[0]
    f_t, fut_t = teacher_encode(teacher, track)
    f_s, fut_s = student_encode(student, track)
    assert f_t.shape == (16,) and fut_t.shape == (16, 4)
    assert f_s.shape == (16,) and fut_s.shape == (16, 4)


def test_box_encoders_reject_wrong_length():
    teacher = TeacherEncoder(TeacherParams(obs_length=16, model_dim=16, layers=1, heads=2, ff_dim=32))
    with pytest.raises(ValueError):
        teacher(random_tracks(2, 8))
    student = StudentEncoder(StudentParams(obs_length=16))
    with pytest.raises(ValueError):
        student(torch.zeros(2, 16, 3))


def test_psi_tokens_and_embedding_shape():
    psi = PsiBackbone(SMALL_PSI, out_dim=12)
    regions = torch.rand(2, 4, 3, 16, 16)
    tokens = psi.tokenize(regions)
    assert SMALL_PSI.tokens_per_frame == 4
    assert tokens.shape == (2, 4, 4, 16)
    assert psi(regions).shape == (2, 12)
    assert psi_encode(psi, regions[0]).shape == (12,)


def test_psi_single_channel_equals_replicated_rgb():
    psi = PsiBackbone(SMALL_PSI).eval()
    depth = torch.rand(2, 4, 1, 16, 16)
    with torch.no_grad():
        single = psi(depth)
        replicated = psi(depth.repeat(1, 1, 3, 1, 1))
    assert torch.allclose(single, replicated, atol=1e-6)


def test_psi_zero_input_is_finite():
    psi = PsiBackbone(SMALL_PSI).eval()
    with torch.no_grad():
        out = psi(torch.zeros(1, 4, 3, 16, 16))
    assert torch.isfinite(out).all()


def test_psi_rejects_bad_region_stacks():
    psi = PsiBackbone(SMALL_PSI)
    with pytest.raises(ValueError):
        psi(torch.zeros(1, 4, 2, 16, 16))
    with pytest.raises(ValueError):
        psi(torch.zeros(1, 5, 3, 16, 16))
    with pytest.raises(ValueError):
        psi(torch.zeros(1, 4, 3, 24, 24))


def test_param_validation():
    with pytest.raises(ValueError):
        BackbonePsiParams(region_size=60, patch_size=8)
    with pytest.raises(ValueError):
        TeacherParams(model_dim=30, heads=8)


def test_student_is_smaller_than_teacher():
    assert count_parameters(StudentEncoder()) < count_parameters(TeacherEncoder())


def test_teacher_gradients_match_finite_differences():
    torch.manual_seed(0)
    teacher = TeacherEncoder(TeacherParams(obs_length=6, pred_length=4, model_dim=8, layers=1, heads=2,
                                           ff_dim=16, dropout=0.0)).double().eval()
    track = random_tracks(2, 6).double()

    def probe():
        embedding, future = teacher(track)
        return (embedding ** 2).sum() + future.sum()

    result = check_parameter_gradients(teacher, probe, n_entries=8)
    assert result.checked > 0
    assert result.passed(1e-4)


def test_student_gradients_match_finite_differences():
    torch.manual_seed(1)
    student = StudentEncoder(StudentParams(obs_length=6, pred_length=4, embed_dim=8, channels=2, hidden=6,
                                           dropout=0.0)).double().eval()
    track = random_tracks(2, 6, seed=1).double()

    def probe():
        embedding, future = student(track)
        return (embedding ** 2).sum() + future.sum()

    result = check_parameter_gradients(student, probe, n_entries=8)
    assert result.checked > 0
    assert result.passed(1e-4)


def test_psi_gradients_match_finite_differences():
    torch.manual_seed(2)
    psi = PsiBackbone(BackbonePsiParams(num_frames=2, region_size=8, patch_size=4, embed_dim=8, depth=1,
                                        heads=2)).double().eval()
    regions = torch.rand(1, 2, 3, 8, 8, dtype=torch.float64)

    result = check_parameter_gradients(psi, lambda: (psi(regions) ** 2).sum(), n_entries=8)
    assert result.checked > 0
    assert result.passed(1e-4)


def test_teacher_is_independent_of_batch_order():
    torch.manual_seed(8)
    teacher = TeacherEncoder(TeacherParams(obs_length=8, pred_length=8, model_dim=16, layers=2, heads=2,
                                           ff_dim=32)).eval()
    tracks = random_tracks(6, 8, seed=8)
    order = torch.tensor([3, 0, 5, 1, 4, 2])
    with torch.no_grad():
        embedding, future = teacher(tracks)
        shuffled_embedding, shuffled_future = teacher(tracks[order])
    torch.testing.assert_close(shuffled_embedding, embedding[order])
    torch.testing.assert_close(shuffled_future, future[order])


def test_untrained_student_and_teacher_disagree():
    torch.manual_seed(9)
    teacher = TeacherEncoder(TeacherParams(obs_length=8, pred_length=8, model_dim=16, layers=1, heads=2,
                                           ff_dim=32)).eval()
    student = StudentEncoder(StudentParams(obs_length=8, pred_length=8, embed_dim=16, hidden=12)).eval()
    track = random_tracks(1, 8, seed=9)[0]
    with torch.no_grad():
        f_t, _ = teacher_encode(teacher, track)
        f_s, _ = student_encode(student, track)
    assert not torch.allclose(f_t, f_s)


def test_teacher_trained_on_constant_tracks_predicts_the_input_box():
    boxes = random_tracks(40, 1, seed=10)
    tracks, futures = boxes.expand(-1, 8, -1).clone(), boxes.expand(-1, 8, -1).clone()
    labels = torch.zeros(40, dtype=torch.long)
    params = TeacherParams(obs_length=8, pred_length=8, model_dim=16, layers=1, heads=2, ff_dim=32)
    teacher, _ = train_teacher(tracks[:32], labels[:32], futures[:32], params, epochs=60, batch_size=8,
                               lr=3e-3, lr_decay=0.5, lr_decay_step=10, seed=0)
    with torch.no_grad():
        _, predicted = teacher(tracks[32:])
    assert float((predicted - futures[32:]).abs().max()) < 1e-2
