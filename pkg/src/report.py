"""Run reports: summary JSON/markdown, plotly loss chart and a 2-D feature projection."""

import json
import logging
import os

import numpy as np
import pandas as pd
import plotly.graph_objs as go
from sklearn.decomposition import PCA

from src.harness import LOSS_LOG_NAME, LOSS_TERMS

METRIC_KEYS = ("acc", "auc", "f1", "precision", "recall", "aiou", "fiou", "ade", "fde")


def pca_projection(features, n_components=2):
    """Principal-component scores of (N, D) features (deterministic full-SVD PCA)"""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or len(features) < 2:
        raise ValueError(f"Need at least two feature rows for a projection, got shape {features.shape}")
    pca = PCA(n_components=min(n_components, *features.shape), svd_solver="full")
    return pca.fit_transform(features)


def create_loss_chart(loss_log):
    fig = go.Figure()
    for column in LOSS_TERMS + ("total",):
        if column in loss_log.columns:
            fig.add_trace(go.Scatter(x=loss_log["epoch"], y=loss_log[column], mode="lines+markers", name=column))
    fig.update_layout(title="Training loss per epoch", xaxis_title="Epoch", yaxis_title="Loss")
    return fig


def write_projection(features_path, out_path):
    df = pd.read_csv(features_path)
    feature_columns = [c for c in df.columns if c.startswith("f") and c[1:].isdigit()]
    scores = pca_projection(df[feature_columns].to_numpy())
    keep = [c for c in ("clip_id", "domain", "stream", "label") if c in df.columns]
    projection = df[keep].copy()
    projection["pc1"] = scores[:, 0]
    projection["pc2"] = scores[:, 1] if scores.shape[1] > 1 else 0.0
    projection.to_csv(out_path, index=False)
    logging.info(f"Feature projection of {len(projection)} rows written to {out_path}")
    return projection


def generate_report(run_dir):
    """Write report.json, report.md, loss_curve.html and projection.csv for a run directory"""
    if not os.path.isdir(run_dir):
        raise FileNotFoundError(f"Run directory {run_dir} does not exist")

    summary = {"run_dir": os.path.abspath(run_dir)}
    metrics_path = os.path.join(run_dir, "metrics.json")
    if os.path.exists(metrics_path):
        with open(metrics_path, "r") as f:
            summary["metrics"] = json.load(f)
    else:
        logging.warning(f"No metrics.json in {run_dir}; run eval first for test metrics")

    loss_path = os.path.join(run_dir, LOSS_LOG_NAME)
    if os.path.exists(loss_path):
        loss_log = pd.read_csv(loss_path)
        summary["epochs"] = int(len(loss_log))
        if len(loss_log):
            summary["final_losses"] = {c: float(loss_log[c].iloc[-1]) for c in LOSS_TERMS + ("total",)
                                       if c in loss_log.columns}
            summary["final_gate"] = {c: float(loss_log[c].iloc[-1]) for c in ("w_s", "w_st", "w_real")
                                     if c in loss_log.columns}
        create_loss_chart(loss_log).write_html(os.path.join(run_dir, "loss_curve.html"), include_plotlyjs="cdn")

    features_path = os.path.join(run_dir, "features.csv")
    if os.path.exists(features_path):
        write_projection(features_path, os.path.join(run_dir, "projection.csv"))
        summary["projection"] = "projection.csv"

    with open(os.path.join(run_dir, "report.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)

    lines = [f"# Run report: {os.path.basename(os.path.abspath(run_dir))}", ""]
    metrics = summary.get("metrics", {})
    if metrics:
        lines += [f"Mode `{metrics.get('mode')}`, T={metrics.get('T')}, tau={metrics.get('tau')}, "
                  f"P={metrics.get('P')}, {metrics.get('n_samples')} test clips", "",
                  "| metric | value |", "|---|---|"]
        for key in METRIC_KEYS:
            value = metrics.get(key)
            lines.append(f"| {key} | {'-' if value is None else f'{value:.4f}'} |")
        lines.append("")
    if "final_losses" in summary:
        lines.append(f"Epochs: {summary['epochs']}")
        lines += [f"- {k}: {v:.5f}" for k, v in summary["final_losses"].items()]
        if summary.get("final_gate"):
            gate = ", ".join(f"{k}={v:.3f}" for k, v in summary["final_gate"].items())
            lines.append(f"- gate weights: {gate}")
    with open(os.path.join(run_dir, "report.md"), "w") as f:
        f.write("\n".join(lines) + "\n")

    logging.info(f"Report written to {run_dir}")
    return summary
