"""CSV/JSON emission and figure rendering.

CSV schemas (the machine contract; byte-identical across reruns):
  curves:    model_id,attack,axis_kind,axis_value,success_rate,n
  matrices:  surrogate,target,attack,success_rate,n
  forensics: model_id,layer,zero_fraction,min,max,mean,stddev
  histogram: model_id,layer,bin_left,bin_right,count
JSON files mirror the full nested structures including configs. Each
figure-analog CSV (fig2/fig3/fig4/fig7/fig8) is rendered to a PNG of the
same stem right next to it.
"""

from __future__ import annotations

import dataclasses
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .audit import MaskingReport
from .evaluation import SuccessCurve, TransferMatrix
from .forensics import GradientStats
from .store import atomic_write_bytes, atomic_write_text

CURVE_HEADER = ("model_id", "attack", "axis_kind", "axis_value", "success_rate", "n")
MATRIX_HEADER = ("surrogate", "target", "attack", "success_rate", "n")
FORENSICS_HEADER = ("model_id", "layer", "zero_fraction", "min", "max", "mean", "stddev")
HIST_HEADER = ("model_id", "layer", "bin_left", "bin_right", "count")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return atomic_write_text(path, buf.getvalue())


def write_json(path, payload) -> Path:
    return atomic_write_text(path, json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def curve_rows(curves) -> list:
    rows = []
    for c in curves:
        for axis_value, rate in c.points:
            rows.append((c.model_id, c.attack_name, c.axis_kind, axis_value, rate, c.n_samples))
    return rows


def matrix_rows(tm: TransferMatrix) -> list:
    rows = []
    for i, sid in enumerate(tm.surrogate_ids):
        for j, tid in enumerate(tm.target_ids):
            rows.append((sid, tid, tm.attack_name, float(tm.rates[i, j]), tm.n_samples))
    return rows


def forensics_rows(profiles: dict, stats: dict) -> list:
    """profiles: model_id -> [(layer, frac)]; stats: (model_id, layer) -> GradientStats."""
    rows = []
    for model_id, profile in profiles.items():
        for layer, frac in profile:
            st = stats.get((model_id, layer))
            if st is None:
                rows.append((model_id, layer, frac, 0.0, 0.0, 0.0, 0.0))
            else:
                rows.append((model_id, layer, frac, st.min, st.max, st.mean, st.stddev))
    return rows


def hist_rows(stats_list) -> list:
    rows = []
    for st in stats_list:
        for left, right, count in zip(st.bin_edges[:-1], st.bin_edges[1:], st.counts):
            rows.append((st.model_id, st.layer_index, float(left), float(right), int(count)))
    return rows


# ---------------------------------------------------------------------------
# figure rendering (PNG twins of the figure-analog CSVs)
# ---------------------------------------------------------------------------


def _save(fig, path) -> Path:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, bbox_inches="tight")
    plt.close(fig)
    return atomic_write_bytes(Path(path), buf.getvalue())


def render_curves(curves, path, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for c in curves:
        xs = [p[0] for p in c.points]
        ys = [p[1] for p in c.points]
        ax.plot(xs, ys, marker="o", markersize=3, linewidth=1.2, label=c.model_id)
    ax.set_xlabel(curves[0].axis_kind if curves else "")
    ax.set_ylabel("adversarial success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    return _save(fig, path)


def render_matrix(tm: TransferMatrix, path, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    im = ax.imshow(tm.rates, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(tm.target_ids)), tm.target_ids, rotation=90, fontsize=6)
    ax.set_yticks(range(len(tm.surrogate_ids)), tm.surrogate_ids, fontsize=6)
    ax.set_xlabel("target model")
    ax.set_ylabel("surrogate model")
    for i in range(len(tm.surrogate_ids)):
        for j in range(len(tm.target_ids)):
            ax.text(j, i, f"{tm.rates[i, j]:.2f}", ha="center", va="center", fontsize=5,
                    color="white" if tm.rates[i, j] < 0.6 else "black")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="success rate")
    return _save(fig, path)


def render_histograms(stats_list, path, title: str) -> Path:
    n = len(stats_list)
    fig, axes = plt.subplots(n, 1, figsize=(7, 1.9 * n), squeeze=False)
    for ax, st in zip(axes[:, 0], stats_list):
        centers = (st.bin_edges[:-1] + st.bin_edges[1:]) / 2.0
        width = st.bin_edges[1] - st.bin_edges[0]
        ax.bar(centers, np.maximum(st.counts, 0.8), width=width, log=True)
        ax.set_ylabel("count", fontsize=7)
        ax.set_title(f"{st.model_id} (layer {st.layer_index}, zero fraction {st.zero_fraction:.2f})",
                     fontsize=8)
    axes[-1, 0].set_xlabel("gradient value")
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def render_zero_fractions(profiles: dict, path, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for model_id, profile in profiles.items():
        layers = [str(li) for li, _ in profile]
        fracs = [f for _, f in profile]
        ax.plot(layers, fracs, marker="s", markersize=4, linewidth=1.2, label=model_id)
    ax.set_xlabel("parameterized layer index")
    ax.set_ylabel("zero-gradient fraction")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    ax.set_title(title)
    return _save(fig, path)


def masking_report_json(report: MaskingReport) -> dict:
    """Stable field names for downstream tooling."""
    return {
        "model_id": report.model_id,
        "masked": bool(report.masked),
        "thresholds": report.thresholds,
        "criteria": [
            {
                "id": c.criterion_id,
                "verdict": c.verdict,
                "margin": c.margin,
                "evidence": _jsonable(c.evidence),
            }
            for c in report.criteria
        ],
    }
