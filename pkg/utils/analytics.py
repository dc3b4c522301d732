"""
================================================================================
TRAINING AND EVALUATION CHARTS
================================================================================

Purpose: Plotly figures for the pipeline's reports: training loss curves with
checkpoint markers, class counts before and after balancing, and the metric
bars of one or more evaluation runs.

Figures share one layout (centered title, white paper, faint grid) and are
written as standalone HTML with a fixed div id, so rerunning a stage with the
same inputs rewrites byte-identical files.
================================================================================
"""

import logging
from pathlib import Path

import plotly.graph_objects as go

from utils import storage

logger = logging.getLogger(__name__)

PRIMARY_COLOR = '#2E86AB'
SECONDARY_COLOR = '#F77F00'
LOSS_COLORS = {
    "loss_d": '#2E86AB',
    "loss_g": '#F77F00',
    "loss_c": '#6A4C93',
    "loss_div": '#43AA8B',
    "loss_total": '#000000',
}
GRID_COLOR = 'rgba(108, 117, 125, 0.1)'


# =============================================================================
# LAYOUT
# =============================================================================

def _apply_layout(fig, title, xaxis_title, yaxis_title, height=300):
    fig.update_layout(
        title=dict(text=title, x=0.5, xanchor='center', font=dict(size=18, family='Arial', color='#000000')),
        xaxis_title=xaxis_title,
        yaxis_title=yaxis_title,
        height=height,
        margin=dict(l=20, r=20, t=50, b=20),
        paper_bgcolor='#FFFFFF',
        plot_bgcolor='rgba(0,0,0,0)',
        font=dict(family='Inter, system-ui, sans-serif', size=12),
        xaxis=dict(gridcolor=GRID_COLOR, showgrid=True),
        yaxis=dict(gridcolor=GRID_COLOR, showgrid=True),
    )
    return fig


def write_figure(fig, path, div_id):
    """Write a figure as standalone HTML (plotly.js from CDN, fixed div id)."""
    html = fig.to_html(include_plotlyjs="cdn", full_html=True, div_id=div_id)
    storage.write_text(Path(path), html)
    logger.info(f"Wrote chart {path}")


# =============================================================================
# FIGURES
# =============================================================================

def loss_curve_figure(log):
    """Line per loss component over steps; checkpoints marked on the total loss.

    Args:
        log (pd.DataFrame): Training log with a step column and loss_* columns.
    """
    fig = go.Figure()
    for column, color in LOSS_COLORS.items():
        if column in log:
            fig.add_trace(go.Scatter(x=log["step"], y=log[column], mode="lines", name=column,
                                     line=dict(color=color, width=1.5)))
    if "checkpoint" in log:
        saved = log[log["checkpoint"].fillna("").astype(str) != ""]
        if len(saved):
            fig.add_trace(go.Scatter(x=saved["step"], y=saved["loss_total"], mode="markers",
                                     name="checkpoint", marker=dict(color=SECONDARY_COLOR, size=9, symbol="star")))
    return _apply_layout(fig, "Training Losses", "Step", "Loss", height=400)


def class_count_figure(manifest):
    """Grouped bars of per-class counts before and after balancing."""
    frame = manifest.to_frame()
    fig = go.Figure(data=[
        go.Bar(x=frame["class_name"], y=frame["original"], name="original", marker_color=PRIMARY_COLOR),
        go.Bar(x=frame["class_name"], y=frame["final"], name="balanced", marker_color=SECONDARY_COLOR),
    ])
    fig.update_layout(barmode="group")
    fig = _apply_layout(fig, "Samples per Class", "Class", "Samples", height=400)
    fig.update_xaxes(tickangle=-45)
    return fig


def metric_figure(reports, labels=None):
    """One bar group per metric (FID, KID, HWD), one bar per report."""
    labels = labels or [f"run {i + 1}" for i in range(len(reports))]
    colors = [PRIMARY_COLOR, SECONDARY_COLOR, '#6A4C93', '#43AA8B']
    fig = go.Figure(data=[
        go.Bar(x=["FID", "KID", "HWD"], y=[r.fid, r.kid, r.hwd], name=label,
               marker_color=colors[i % len(colors)])
        for i, (r, label) in enumerate(zip(reports, labels))
    ])
    fig.update_layout(barmode="group")
    return _apply_layout(fig, "Line Image Metrics", "Metric", "Value")
