"""
================================================================================
TEXT TABLE FORMATTING
================================================================================

Purpose: Human-readable text tables for the CLI and the report files: the
dataset manifest, the metric report (FID / KID / HWD columns) and the
per-class generation accuracy of the smoke script.

All tables are pandas DataFrames rendered with DataFrame.to_string so the
printed and saved versions match character for character.
================================================================================
"""

import math

import pandas as pd


def format_number(value, digits=4):
    """Format a float for a table cell; None and NaN become "n/a".

    Example:
        >>> format_number(0.123456)
        '0.1235'
        >>> format_number(None)
        'n/a'
    """
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return f"{value:.{digits}f}"


def format_manifest_table(manifest):
    """Per-class counts before and after balancing.

    Args:
        manifest (DatasetManifest): Manifest from balance().

    Returns:
        str: Table with columns class_name, original, final, status and a
        summary line.
    """
    frame = manifest.to_frame()
    lines = [frame.to_string(index=False)]
    lines.append(
        f"\n{len(manifest.retained_classes)} classes retained, {len(manifest.dropped)} dropped, "
        f"{manifest.total} samples (threshold {manifest.threshold}, seed {manifest.seed})"
    )
    return "\n".join(lines) + "\n"


def format_metric_table(report):
    """The metric report as a one-row FID / KID / HWD table plus provenance lines."""
    frame = pd.DataFrame([{
        "FID": format_number(report.fid),
        "KID": format_number(report.kid) if report.kid_std is None
        else f"{format_number(report.kid)} ± {format_number(report.kid_std)}",
        "HWD": format_number(report.hwd),
    }])
    lines = [
        frame.to_string(index=False),
        "",
        f"candidate images: {report.n_candidate}",
        f"reference images: {report.n_reference}",
        f"extractor: {report.extractor}",
        f"style extractor: {report.style_extractor}",
        f"binarized: {'yes' if report.binarized else 'no'}",
    ]
    return "\n".join(lines) + "\n"


def format_accuracy_table(frame):
    """Per-class generation accuracy with a mean row."""
    shown = frame.copy()
    shown["accuracy"] = shown["accuracy"].map(lambda v: f"{v:.1%}")
    mean = frame["accuracy"].mean() if len(frame) else float("nan")
    return shown.to_string(index=False) + f"\n\nmean accuracy: {mean:.1%}\n"
