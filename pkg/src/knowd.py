"""Knowledge Distiller: synthetic-trained teacher, frozen, distilled into the student.

Losses on real tracks:
    l_fea  KLD(softmax(f_T) || softmax(f_S)), temperature 1
    l_loc  MSE(student future boxes, teacher future boxes)
    l_pre  MSE(student future boxes, ground-truth future boxes)
"""

import hashlib
import logging
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, TensorDataset

from src.encoders import StudentEncoder, TeacherEncoder


class FrozenTeacherError(RuntimeError):
    """Gradient application to a frozen teacher, or distillation from an unfrozen one."""


class DivergenceError(RuntimeError):
    """A training loss became NaN or infinite."""


@dataclass
class DistillLossReport:
    l_fea: torch.Tensor
    l_loc: torch.Tensor
    l_pre: torch.Tensor

    @property
    def l_kd(self):
        return self.l_fea + self.l_loc + self.l_pre

    def as_dict(self):
        values = {"l_fea": float(self.l_fea), "l_loc": float(self.l_loc), "l_pre": float(self.l_pre)}
        values["l_kd"] = values["l_fea"] + values["l_loc"] + values["l_pre"]
        return values


def _batched(x):
    return x.unsqueeze(0) if x.dim() == 1 else x


def loss_fea(f_t, f_s):
    if f_t.shape != f_s.shape:
        raise ValueError(f"Embedding shapes differ: {tuple(f_t.shape)} vs {tuple(f_s.shape)}")
    log_p_t = F.log_softmax(_batched(f_t), dim=-1)
    log_p_s = F.log_softmax(_batched(f_s), dim=-1)
    kld = F.kl_div(log_p_s, log_p_t, reduction="batchmean", log_target=True)
    return kld.clamp_min(0.0)


def _box_mse(a, b):
    if a.shape != b.shape:
        raise ValueError(f"Box track shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return F.mse_loss(a, b)


def loss_loc(pred_s, pred_t):
    return _box_mse(pred_s, pred_t)


def loss_pre(pred_s, gt):
    return _box_mse(pred_s, gt)


def freeze(teacher: TeacherEncoder):
    for p in teacher.parameters():
        p.requires_grad_(False)
    teacher.eval()
    teacher.frozen = True
    return teacher


def ensure_trainable(*modules):
    for module in modules:
        if getattr(module, "frozen", False):
            raise FrozenTeacherError(f"{type(module).__name__} is frozen; its parameters cannot be updated")


def make_optimizer(modules, lr, lr_decay=0.8, lr_decay_step=10):
    """Adam over the given modules with step decay; frozen modules are refused"""
    ensure_trainable(*modules)
    params = [p for m in modules for p in m.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=lr)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=lr_decay_step, gamma=lr_decay)
    return optimizer, scheduler


def parameter_hash(module):
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def check_finite(value, where):
    if not math.isfinite(float(value)):
        logging.error(f"Non-finite loss {float(value)} at {where}")
        raise DivergenceError(f"Loss diverged ({float(value)}) at {where}")


def train_teacher(tracks, labels, futures, params, epochs=10, batch_size=2, lr=1e-5,
                  lr_decay=0.8, lr_decay_step=10, seed=0, use_fol=True):
    """Train the teacher on synthetic tracks (classification + FOL), then freeze it.

    Returns the frozen teacher and its per-epoch mean loss curve.
    """
    if len(tracks) == 0:
        raise ValueError("Teacher training needs a non-empty synthetic set")
    torch.manual_seed(seed)
    generator = torch.Generator().manual_seed(seed)
    teacher = TeacherEncoder(params)
    optimizer, scheduler = make_optimizer([teacher], lr, lr_decay, lr_decay_step)
    loader = DataLoader(TensorDataset(tracks, labels, futures), batch_size=batch_size,
                        shuffle=True, generator=generator)

    curve = []
    for epoch in range(epochs):
        teacher.train()
        total, batches = 0.0, 0
        for step, (track, label, future) in enumerate(loader):
            embedding, pred = teacher(track)
            loss = F.cross_entropy(teacher.classify(embedding), label)
            if use_fol:
                loss = loss + F.mse_loss(pred, future)
            check_finite(loss, f"teacher epoch {epoch} step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item()
            batches += 1
        scheduler.step()
        curve.append(total / max(batches, 1))
        logging.info(f"Teacher epoch {epoch}: loss {curve[-1]:.5f}")

    freeze(teacher)
    logging.info(f"Teacher trained on {len(tracks)} synthetic tracks and frozen")
    return teacher, curve


def distill_losses(track, future, teacher, student, use_fol=True):
    """(report, f_s, student future boxes) for a real track batch; nothing is stepped"""
    if not getattr(teacher, "frozen", False):
        raise FrozenTeacherError("Distillation requires a frozen teacher; call freeze() first")
    ensure_trainable(student)

    with torch.no_grad():
        f_t, pred_t = teacher(track)
    f_s, pred_s = student(track)

    zero = f_s.new_zeros(())
    report = DistillLossReport(
        l_fea=loss_fea(f_t, f_s),
        l_loc=loss_loc(pred_s, pred_t) if use_fol else zero,
        l_pre=loss_pre(pred_s, future) if use_fol else zero,
    )
    return report, f_s, pred_s


def distill_step(real_batch, teacher, student, optimizer=None, use_fol=True):
    """Distillation losses on a real batch; steps the student when an optimizer is given.

    real_batch holds "track" (B, T, 4) and "future" (B, P, 4) tensors.
    """
    report, _, _ = distill_losses(real_batch["track"], real_batch["future"], teacher, student, use_fol)
    if optimizer is not None:
        loss = report.l_kd
        check_finite(loss, "distill step")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return report


def train_student(tracks, futures, params, teacher=None, epochs=10, batch_size=2, lr=1e-3, seed=0):
    """Fit a student on real tracks; with a teacher all three losses, otherwise l_pre only"""
    torch.manual_seed(seed)
    generator = torch.Generator().manual_seed(seed)
    student = StudentEncoder(params)
    optimizer, _ = make_optimizer([student], lr)
    loader = DataLoader(TensorDataset(tracks, futures), batch_size=batch_size, shuffle=True, generator=generator)

    for epoch in range(epochs):
        student.train()
        for track, future in loader:
            batch = {"track": track, "future": future}
            if teacher is not None:
                distill_step(batch, teacher, student, optimizer)
            else:
                _, pred = student(track)
                loss = loss_pre(pred, future)
                check_finite(loss, f"student epoch {epoch}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
    student.eval()
    return student


def heldout_fol_error(student, tracks, futures):
    student.eval()
    with torch.no_grad():
        _, pred = student(tracks)
    return float(loss_pre(pred, futures))
