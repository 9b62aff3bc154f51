"""Model assembly, the joint objective, the four training modes, evaluation,
ablations and checkpoints.

Training in syn_to_real mode runs in two phases: the teacher is trained on
synthetic tracks and frozen, then student, psi, the AdaIN path, discriminator,
gate and predictor are optimized jointly on real batches, each real clip
paired with a uniformly drawn synthetic clip.
"""

import itertools
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
from torch.utils.data import ConcatDataset, DataLoader, default_collate

from src.config import BRANCHES, MODES, ConfigError, RunConfig
from src.dataset_io import ClipDataset, log_dataset_summary, read_track_arrays
from src.datamodel import Domain
from src.dista import DomainDiscriminator, Stream, domain_confusion, domain_loss_from_features, export_features, grl_schedule
from src.encoders import BackbonePsiParams, PsiBackbone, StudentEncoder, StudentParams, TeacherEncoder, TeacherParams
from src.fusion import CrossingPredictor, LearnedGate, loss_cla, one_hot
from src.knowd import DivergenceError, check_finite, distill_losses, freeze, make_optimizer, train_teacher
from src.metrics import build_report
from src.stys import StyleShifter
from src.syngen import manifest_hash

CHECKPOINT_NAME = "checkpoint.pt"
LOSS_LOG_NAME = "loss_log.csv"
LOSS_TERMS = ("l_st", "l_dom", "l_kd", "l_cla")
GATE_COLUMNS = ("w_s", "w_st", "w_real")


def teacher_params(config: RunConfig):
    return TeacherParams(
        obs_length=config.obs_length, pred_length=config.pred_length, model_dim=config.feature_dim,
        layers=config.teacher_layers, heads=config.teacher_heads, ff_dim=config.teacher_ff_dim,
    )


def student_params(config: RunConfig):
    return StudentParams(
        obs_length=config.obs_length, pred_length=config.pred_length, embed_dim=config.feature_dim,
        channels=config.student_channels, hidden=config.student_hidden,
        lstm_layers=config.student_layers, dropout=config.dropout,
    )


def psi_params(config: RunConfig):
    return BackbonePsiParams(
        num_frames=config.obs_length, region_size=config.region_size, patch_size=config.patch_size,
        embed_dim=config.feature_dim, depth=config.psi_depth, heads=config.psi_heads,
    )


class GatedS2RModel(nn.Module):
    """Student, shared psi, Style Shifter, discriminator, gate and predictor.

    Only branches in config.active_branches take part in the objective; every
    module is always built so checkpoints have one layout.
    """

    def __init__(self, config: RunConfig):
        super().__init__()
        self.config = config
        self.branches = config.active_branches
        self.student = StudentEncoder(student_params(config))
        self.psi = PsiBackbone(psi_params(config))
        self.shifter = StyleShifter(config.obs_length, config.feature_dim, config.adain_block, config.style_alpha)
        self.discriminator = DomainDiscriminator(config.feature_dim, config.grl_lambda)
        self.gate = LearnedGate(config.feature_dim, norm=config.gate_norm)
        self.predictor = CrossingPredictor(config.feature_dim, dropout=config.dropout, eta=config.gumbel_eta)

    def uses(self, branch):
        return branch in self.branches

    def encode(self, track, rgb):
        """Branch embeddings from real boxes and RGB regions: (f_s, fol, f_st, f_real)"""
        f_s, fol = self.student(track)
        if self.uses("stys"):
            f_st, f_real, _ = self.shifter.transfer(self.psi, rgb)
        else:
            f_real = self.psi(rgb)
            f_st = f_real
        return f_s, fol, f_st, f_real

    def forward(self, batch, generator=None):
        """(p_hat (B, 2), gate weights (B, 3), future boxes (B, P, 4)) from track and rgb"""
        for key in ("depth", "semantic"):
            if key in batch:
                raise ValueError(f"Inference takes real RGB regions and boxes only, got synthetic {key} rasters")
        f_s, fol, f_st, f_real = self.encode(batch["track"], batch["rgb"])
        f_gate, weights = self.gate(f_s, f_st, f_real)
        return self.predictor(f_gate, generator), weights, fol


@dataclass
class LossBreakdown:
    l_st: float
    l_dom: float
    l_kd: float
    l_cla: float
    weights: torch.Tensor = field(repr=False, default=None)

    @property
    def total(self):
        return self.l_st + self.l_dom + self.l_kd + self.l_cla

    @property
    def gate(self):
        return tuple(float(w) for w in self.weights.mean(dim=0))

    def as_dict(self):
        values = {term: getattr(self, term) for term in LOSS_TERMS}
        values["total"] = self.total
        values.update(zip(GATE_COLUMNS, self.gate))
        return values


def total_loss(model: GatedS2RModel, batch, teacher=None, progress=1.0, generator=None):
    """L = L_st + L_dom + L_kd + L_cla and its per-term breakdown.

    batch["primary"] holds the clips being classified (real in syn_to_real
    mode); batch["syn"] holds the paired synthetic clips when stys or dista run.
    Disabled branches contribute 0 and their gate slot falls back to the real
    pathway: f_st becomes f_psi(I_real).
    """
    config = model.config
    primary, syn = batch["primary"], batch.get("syn")
    track, rgb = primary["track"], primary["rgb"]
    if (model.uses("stys") or model.uses("dista")) and syn is None:
        raise ValueError("stys and dista need paired synthetic clips in batch['syn']")

    zero = rgb.new_zeros(())
    l_st = l_dom = l_kd = zero

    if model.uses("stys"):
        style = model.shifter(model.psi, rgb, syn["rgb"])
        f_st, f_real, l_st = style.f_st, style.f_real, style.l_st
    else:
        f_real = model.psi(rgb)
        f_st = f_real

    if model.uses("dista"):
        model.discriminator.lambd = grl_schedule(config.grl_lambda, progress, config.grl_warmup)
        l_dom = domain_loss_from_features(model.discriminator, [
            (model.psi(syn["depth"]), Stream.SYN_DEPTH),
            (model.psi(syn["semantic"]), Stream.SYN_SEMANTIC),
            (f_real, Stream.REAL_RGB),
        ])

    if model.uses("knowd"):
        if teacher is None:
            raise ValueError("knowd needs the frozen teacher")
        report, f_s, _ = distill_losses(track, primary["future"], teacher, model.student, config.use_fol)
        l_kd = report.l_kd
    else:
        f_s, _ = model.student(track)

    f_gate, weights = model.gate(f_s, f_st, f_real)
    l_cla = loss_cla(model.predictor(f_gate, generator), one_hot(primary["label"]))

    loss = l_st + l_dom + l_kd + l_cla
    breakdown = LossBreakdown(float(l_st), float(l_dom), float(l_kd), float(l_cla), weights=weights.detach())
    return loss, breakdown


def resolve_epochs(config: RunConfig, n_train):
    if config.epochs > 0:
        return config.epochs
    epochs = max(5, int(round(20 * min(1.0, n_train / 200))))
    logging.warning(f"epochs: 0 auto-scaled to {epochs} for {n_train} training clips")
    return epochs


def check_manifest(config: RunConfig, manifest):
    """Raise ConfigError when the dataset cannot serve the configured mode"""
    spec = manifest.spec
    if spec.obs_length != config.obs_length:
        raise ConfigError(f"Dataset observes {spec.obs_length} frames, config expects {config.obs_length}")
    if spec.pred_length < config.pred_length:
        raise ConfigError(f"Dataset has {spec.pred_length} future frames, config needs {config.pred_length}")

    n_syn = manifest.count(Domain.SYNTHETIC)
    n_real = manifest.count(Domain.REAL, "train")
    needs_syn = config.mode in ("syn", "syn_plus_real", "syn_to_real")
    needs_real = config.mode in ("real", "syn_plus_real", "syn_to_real")
    if needs_syn and n_syn == 0:
        raise ConfigError(f"Mode {config.mode} needs synthetic clips; the dataset has none")
    if needs_real and n_real == 0:
        raise ConfigError(f"Mode {config.mode} needs real training clips; the dataset has none")
    if config.mode != "syn_to_real" and config.enabled_branches:
        logging.warning(f"Branches {list(config.enabled_branches)} ignored in {config.mode} mode")


@dataclass
class TrainResult:
    checkpoint_path: str
    loss_log: pd.DataFrame
    teacher_curve: list
    epochs: int
    model: GatedS2RModel
    teacher: Optional[TeacherEncoder] = None


class SynToRealTrainer:
    def __init__(self, config: RunConfig, manifest):
        check_manifest(config, manifest)
        self.config = config
        self.manifest = manifest
        torch.set_num_threads(config.num_threads)
        torch.manual_seed(config.seed)
        self.shuffle = torch.Generator().manual_seed(config.seed)
        # pairing draws and Gumbel noise
        self.noise = torch.Generator().manual_seed(config.seed + 1)
        self.model = GatedS2RModel(config)
        self.teacher = None
        self.teacher_curve = []
        self.optimizer = self.scheduler = None
        self.loss_history = []
        self.epoch = 0
        self.primary, self.syn = self.build_datasets()

    @property
    def checkpoint_path(self):
        return os.path.join(self.config.run_dir, CHECKPOINT_NAME)

    def build_datasets(self):
        cfg = self.config
        kwargs = dict(beta=cfg.crop_beta, region_size=cfg.region_size, pred_length=cfg.pred_length)
        real = ClipDataset(self.manifest, Domain.REAL, "train", **kwargs)
        syn = ClipDataset(self.manifest, Domain.SYNTHETIC, None, with_aux=self.model.uses("dista"), **kwargs)
        log_dataset_summary("Real training set", real)
        log_dataset_summary("Synthetic set", syn)

        if cfg.mode == "real":
            return real, None
        if cfg.mode == "syn":
            return syn, None
        if cfg.mode == "syn_plus_real":
            return ConcatDataset([syn, real]), None
        return real, syn

    def train_teacher_phase(self):
        cfg = self.config
        logging.info("=== Phase 1: teacher on synthetic tracks ===")
        tracks, labels, futures = read_track_arrays(self.manifest, Domain.SYNTHETIC, pred_length=cfg.pred_length)
        self.teacher, self.teacher_curve = train_teacher(
            tracks, labels, futures, teacher_params(cfg), epochs=cfg.teacher_epochs,
            batch_size=cfg.batch_size, lr=cfg.lr, lr_decay=cfg.lr_decay,
            lr_decay_step=cfg.lr_decay_step, seed=cfg.seed, use_fol=cfg.use_fol,
        )

    def sample_syn(self, n):
        """n synthetic clips drawn uniformly, one per real clip of the batch"""
        if self.syn is None or not (self.model.uses("stys") or self.model.uses("dista")):
            return None
        indices = torch.randint(len(self.syn), (n,), generator=self.noise).tolist()
        return default_collate([self.syn[i] for i in indices])

    def train_step(self, batch, progress=1.0):
        paired = {"primary": batch, "syn": self.sample_syn(len(batch["label"]))}
        loss, breakdown = total_loss(self.model, paired, self.teacher, progress, self.noise)
        check_finite(loss, f"epoch {self.epoch}")
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return breakdown

    def prepare(self):
        """Teacher phase (when knowd runs) and the joint optimizer"""
        if self.model.uses("knowd"):
            self.train_teacher_phase()
        self.optimizer, self.scheduler = make_optimizer(
            [self.model], self.config.lr, self.config.lr_decay, self.config.lr_decay_step)

    def run(self):
        cfg = self.config
        os.makedirs(cfg.run_dir, exist_ok=True)
        epochs = resolve_epochs(cfg, len(self.primary))
        self.prepare()

        loader = DataLoader(self.primary, batch_size=cfg.batch_size, shuffle=True, generator=self.shuffle)
        total_steps = max(1, epochs * len(loader))
        logging.info(f"=== Phase 2: {cfg.mode} training, branches {list(self.model.branches)}, "
                     f"{epochs} epochs x {len(loader)} steps ===")
        self.save_checkpoint()

        step = 0
        for epoch in range(epochs):
            self.model.train()
            records = []
            lr = self.optimizer.param_groups[0]["lr"]
            for batch in loader:
                try:
                    breakdown = self.train_step(batch, progress=step / total_steps)
                except DivergenceError:
                    logging.error(f"Training diverged in epoch {epoch}; last good checkpoint kept at {self.checkpoint_path}")
                    raise
                records.append(breakdown.as_dict())
                step += 1
            self.scheduler.step()
            self.epoch = epoch + 1
            self.log_epoch(epoch, records, lr)
            self.save_checkpoint()

        if cfg.export_features:
            export_domain_features(self.model, self.manifest, cfg, os.path.join(cfg.run_dir, "features.csv"))
        logging.info(f"Training finished: {epochs} epochs, checkpoint {self.checkpoint_path}")
        return TrainResult(
            checkpoint_path=self.checkpoint_path,
            loss_log=pd.DataFrame(self.loss_history),
            teacher_curve=self.teacher_curve,
            epochs=epochs,
            model=self.model,
            teacher=self.teacher,
        )

    def log_epoch(self, epoch, records, lr):
        row = {"epoch": epoch, "lr": lr}
        row.update(pd.DataFrame(records).mean().to_dict())
        self.loss_history.append(row)
        pd.DataFrame(self.loss_history).to_csv(os.path.join(self.config.run_dir, LOSS_LOG_NAME), index=False)
        logging.info(f"Epoch {epoch}: total {row['total']:.5f} (st {row['l_st']:.5f}, dom {row['l_dom']:.5f}, "
                     f"kd {row['l_kd']:.5f}, cla {row['l_cla']:.5f}), "
                     f"gate ({row['w_s']:.3f}, {row['w_st']:.3f}, {row['w_real']:.3f})")

    def checkpoint_state(self):
        return {
            "model": self.model.state_dict(),
            "teacher": self.teacher.state_dict() if self.teacher is not None else None,
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "optimizer": self.optimizer.state_dict() if self.optimizer is not None else None,
            "rng_state": torch.get_rng_state(),
            "shuffle_state": self.shuffle.get_state(),
            "noise_state": self.noise.get_state(),
            "manifest_hash": manifest_hash(self.manifest.root),
        }

    def save_checkpoint(self):
        torch.save(self.checkpoint_state(), self.checkpoint_path)


def train(config: RunConfig, manifest) -> TrainResult:
    return SynToRealTrainer(config, manifest).run()


@dataclass
class LoadedCheckpoint:
    model: GatedS2RModel
    teacher: Optional[TeacherEncoder]
    config: RunConfig
    epoch: int
    state: dict = field(repr=False, default=None)


def load_checkpoint(path) -> LoadedCheckpoint:
    state = torch.load(path, map_location="cpu")
    config = RunConfig.from_dict(state["config"])
    model = GatedS2RModel(config)
    model.load_state_dict(state["model"])
    model.eval()
    teacher = None
    if state["teacher"] is not None:
        teacher = freeze(TeacherEncoder(teacher_params(config)))
        teacher.load_state_dict(state["teacher"])
    return LoadedCheckpoint(model=model, teacher=teacher, config=config, epoch=state["epoch"], state=state)


def evaluate(checkpoint, manifest, split="test", out_dir=None, max_ttc=None, domain=Domain.REAL):
    """Deterministic MetricsReport over real clips of `split` with ttc <= max_ttc.

    checkpoint is a path or a LoadedCheckpoint. When out_dir is given the raw
    predictions and metrics.json are written there.
    """
    if Domain.parse(domain) != Domain.REAL:
        raise ValueError("Evaluation takes real clips only; synthetic modalities exist at training time")
    loaded = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, os.PathLike)) else checkpoint
    model, config = loaded.model, loaded.config
    tau = config.ttc if max_ttc is None else max_ttc

    dataset = ClipDataset(manifest, Domain.REAL, split, beta=config.crop_beta, region_size=config.region_size,
                          pred_length=config.pred_length, max_ttc=tau)
    if len(dataset) == 0:
        raise ValueError(f"No real {split} clips with ttc <= {tau}")
    loader = DataLoader(dataset, batch_size=config.batch_size, shuffle=False)

    model.eval()
    clip_ids, labels, scores, predicted, ground_truth = [], [], [], [], []
    with torch.no_grad():
        for batch in loader:
            p_hat, _, fol = model({"track": batch["track"], "rgb": batch["rgb"]})
            clip_ids.extend(batch["clip_id"])
            labels.append(batch["label"])
            scores.append(p_hat[:, 1])
            predicted.append(fol)
            ground_truth.append(batch["future"])

    labels = torch.cat(labels).numpy()
    scores = torch.cat(scores).double().numpy()
    fol = None
    if model.uses("knowd"):
        height, width = manifest.spec.frame_size
        fol = (torch.cat(predicted).numpy(), torch.cat(ground_truth).numpy(), (width, height))
    report = build_report(scores, labels, T=config.obs_length, tau=tau, P=config.pred_length,
                          mode=config.mode, fol=fol)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        pd.DataFrame({"clip_id": clip_ids, "label": labels, "score": scores}).to_csv(
            os.path.join(out_dir, "predictions.csv"), index=False)
        if fol is not None:
            np.savez(os.path.join(out_dir, "fol_predictions.npz"), pred=fol[0], gt=fol[1],
                     frame_size=np.array(fol[2]))
        report.to_json(os.path.join(out_dir, "metrics.json"))
    logging.info(f"Evaluated {report.n_samples} real {split} clips (ttc <= {tau}): acc {report.acc:.4f}, "
                 f"auc {report.auc}, f1 {report.f1:.4f}")
    return report


def collect_domain_features(model: GatedS2RModel, manifest, config: RunConfig, limit=64):
    """psi features of synthetic depth/semantic and real test RGB stacks.

    Returns (features (N, D), streams, labels, clip_ids).
    """
    kwargs = dict(beta=config.crop_beta, region_size=config.region_size, pred_length=config.pred_length)
    syn = ClipDataset(manifest, Domain.SYNTHETIC, None, with_aux=True, **kwargs)
    real = ClipDataset(manifest, Domain.REAL, "test", **kwargs)
    chunks, streams, labels, clip_ids = [], [], [], []
    model.eval()
    with torch.no_grad():
        for dataset, keys in ((syn, (("depth", Stream.SYN_DEPTH), ("semantic", Stream.SYN_SEMANTIC))),
                              (real, (("rgb", Stream.REAL_RGB),))):
            if len(dataset) == 0:
                continue
            subset = torch.utils.data.Subset(dataset, range(min(limit, len(dataset))))
            for batch in DataLoader(subset, batch_size=config.batch_size, shuffle=False):
                for key, stream in keys:
                    chunks.append(model.psi(batch[key]))
                    streams.extend([stream] * len(batch["label"]))
                    labels.extend(batch["label"].tolist())
                    clip_ids.extend(batch["clip_id"])
    if not chunks:
        raise ValueError("The dataset has neither synthetic clips nor real test clips to encode")
    return torch.cat(chunks), streams, labels, clip_ids


def export_domain_features(model, manifest, config, path, limit=64):
    try:
        features, streams, labels, clip_ids = collect_domain_features(model, manifest, config, limit)
    except ValueError as e:
        logging.warning(f"Feature export skipped: {str(e)}")
        return None
    return export_features(path, features, [s.domain for s in streams], labels, clip_ids, streams)


def domain_probe(model, manifest, config, limit=64):
    """Held-out accuracy of a fresh linear probe on syn depth/semantic vs. real RGB psi features"""
    features, streams, _, _ = collect_domain_features(model, manifest, config, limit)
    is_real = torch.tensor([s is Stream.REAL_RGB for s in streams])
    return domain_confusion(features[~is_real], features[is_real], seed=config.seed)


def branch_subsets():
    """All 8 subsets of the transfer branches, empty first"""
    return [c for r in range(len(BRANCHES) + 1) for c in itertools.combinations(BRANCHES, r)]


def subset_name(subset):
    return "+".join(subset) if subset else "none"


def subset_config(config: RunConfig, subset, run_dir):
    """The empty subset is the real-data-only pathway"""
    if not subset:
        return config.replace(mode="real", enabled_branches=(), run_dir=run_dir)
    return config.replace(mode="syn_to_real", enabled_branches=tuple(subset), run_dir=run_dir)


def _report_row(experiment, name, report):
    row = {"experiment": experiment, "name": name}
    row.update(report.to_dict())
    return row


TABLE_COLUMNS = ("acc", "auc", "f1", "precision", "recall", "aiou", "fiou", "ade", "fde", "n_samples")


def _format_cell(value):
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def write_table(rows, out_dir, stem, title, key_columns=("experiment", "name")):
    """Markdown + JSON rendering of a list of report rows"""
    os.makedirs(out_dir, exist_ok=True)
    table = pd.DataFrame(rows)
    columns = [c for c in key_columns + TABLE_COLUMNS if c in table.columns]

    lines = [f"# {title}", "", "| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    for row in rows:
        lines.append("| " + " | ".join(_format_cell(row.get(c)) for c in columns) + " |")
    for line in lines:
        logging.info(line)

    with open(os.path.join(out_dir, f"{stem}.md"), "w") as f:
        f.write("\n".join(lines) + "\n")
    table.to_json(os.path.join(out_dir, f"{stem}.json"), orient="records", indent=2)
    return table


def ablate(config: RunConfig, manifest, out_dir=None):
    """Branch-subset table, then the TTC sweep and FOL horizon sweep when configured"""
    out_dir = out_dir or config.run_dir
    subsets = config.ablation_subsets if config.ablation_subsets is not None else branch_subsets()
    rows = []
    full_checkpoint = None

    for subset in subsets:
        name = subset_name(subset)
        run_config = subset_config(config, subset, os.path.join(out_dir, name))
        logging.info(f"=== Ablation: {name} ===")
        result = train(run_config, manifest)
        rows.append(_report_row("branches", name, evaluate(result.checkpoint_path, manifest, out_dir=run_config.run_dir)))
        if set(subset) == set(BRANCHES):
            full_checkpoint = result.checkpoint_path

    if config.ttc_sweep:
        if full_checkpoint is None:
            full_config = subset_config(config, BRANCHES, os.path.join(out_dir, subset_name(BRANCHES)))
            full_checkpoint = train(full_config, manifest).checkpoint_path
        loaded = load_checkpoint(full_checkpoint)
        for tau in sorted(config.ttc_sweep):
            try:
                report = evaluate(loaded, manifest, max_ttc=tau)
            except ValueError as e:
                logging.warning(f"TTC sweep: skipping tau={tau}: {str(e)}")
                continue
            rows.append(_report_row("ttc", f"ttc<={tau}", report))

    for horizon in config.fol_sweep:
        run_config = subset_config(config, BRANCHES, os.path.join(out_dir, f"fol_P{horizon}")).replace(
            pred_length=horizon)
        logging.info(f"=== FOL horizon P={horizon} ===")
        result = train(run_config, manifest)
        rows.append(_report_row("fol", f"P={horizon}", evaluate(result.checkpoint_path, manifest,
                                                                 out_dir=run_config.run_dir)))

    return write_table(rows, out_dir, "ablation", "Knowledge transfer ablation")


def compare_modes(config: RunConfig, manifest, out_dir=None, modes=MODES):
    """Train and evaluate every training mode for each configured seed.

    Returns (per-run table, per-mode mean table).
    """
    out_dir = out_dir or config.run_dir
    rows = []
    for mode in modes:
        for seed in config.seeds:
            run_config = config.replace(mode=mode, seed=seed, run_dir=os.path.join(out_dir, f"{mode}_seed{seed}"))
            logging.info(f"=== Mode {mode}, seed {seed} ===")
            result = train(run_config, manifest)
            report = evaluate(result.checkpoint_path, manifest, out_dir=run_config.run_dir)
            row = {"seed": seed}
            row.update(report.to_dict())
            rows.append(row)

    table = write_table(rows, out_dir, "compare_modes_runs", "Training modes (per run)", key_columns=("mode", "seed"))
    summary = table.groupby("mode", sort=False)[["acc", "f1"]].mean().reset_index()
    write_table(summary.to_dict("records"), out_dir, "compare_modes", "Training modes (mean over seeds)",
                key_columns=("mode",))
    return table, summary
