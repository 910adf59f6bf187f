"""Result emission: delimited output, JSON mirrors, manifests, and figures.

results.csv is the canonical artifact and must be byte-identical across
reruns of the same config: floats are written with repr (shortest
round-trip), row order is fixed by (sweep value, trial, attack), and
timestamps live only in the manifest.  Figures are rendered next to the
delimited output as PNG files; they are a convenience view, never an input.
"""

from __future__ import annotations

import csv
import datetime
import json
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

SCHEMA_VERSION = 1


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def write_rows_csv(path: str, columns: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def emit_results(cfg, rows) -> list[str]:
    """Write results.csv, results.json, manifest.json and the figures."""
    from .experiment import RANK_CONVENTION, ResultRow

    _ensure_dir(cfg.output_dir)
    emitted = []

    csv_path = os.path.join(cfg.output_dir, "results.csv")
    write_rows_csv(csv_path, ResultRow.columns(), [r.as_list() for r in rows])
    emitted.append(csv_path)

    json_path = os.path.join(cfg.output_dir, "results.json")
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "conventions": {"mean_rank_raw": RANK_CONVENTION},
        "config": cfg.to_dict(),
        "rows": [dict(zip(ResultRow.columns(), r.as_list())) for r in rows],
    }
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=2)
    emitted.append(json_path)

    manifest_path = os.path.join(cfg.output_dir, "manifest.json")
    from .rng import hash64
    from . import __version__

    manifest = {
        "config_hash": cfg.config_hash(),
        "tool_version": __version__,
        "per_trial_seeds": [hash64(cfg.seed, t) for t in range(cfg.trials)],
        "emitted_files": [os.path.basename(p) for p in emitted],
        "conventions": {"mean_rank_raw": RANK_CONVENTION},
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    emitted.append(manifest_path)

    if cfg.figures:
        fig_path = os.path.join(cfg.output_dir, "results.png")
        render_results_figure(rows, fig_path)
        emitted.append(fig_path)
    return emitted


def _group_mean(rows, key_fn, value_fn):
    acc = defaultdict(list)
    for r in rows:
        v = value_fn(r)
        if v is not None:
            acc[key_fn(r)].append(v)
    return {k: sum(v) / len(v) for k, v in acc.items()}


def render_results_figure(rows, path: str) -> None:
    """One panel per metric: sweeps become lines, plain runs become bars."""
    rows = list(rows)
    if not rows:
        return
    task = rows[0].task
    swept = bool(rows[0].sweep_parameter)
    if task == "poisoning":
        metrics = [("recall_drop", "Recall@1 drop (pp)"), ("recall_at_1", "Recall@1 after (%)")]
    else:
        metrics = [("asr", "ASR (%)"), ("asrd", "ASRD (%)"), ("mean_rank_raw", "mean rank")]
    attacks = sorted({r.attack for r in rows})
    fig, axes = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 3.6))
    if len(metrics) == 1:
        axes = [axes]
    for ax, (metric, label) in zip(axes, metrics):
        if swept:
            for attack in attacks:
                sub = [r for r in rows if r.attack == attack]
                means = _group_mean(
                    sub, lambda r: float(r.sweep_value), lambda r: getattr(r, metric)
                )
                xs = sorted(means)
                ax.plot(xs, [means[x] for x in xs], marker="o", label=attack)
            ax.set_xlabel(rows[0].sweep_parameter)
        else:
            means = _group_mean(rows, lambda r: r.attack, lambda r: getattr(r, metric))
            xs = [a for a in attacks if a in means]
            ax.bar(range(len(xs)), [means[a] for a in xs], tick_label=xs)
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    if swept:
        axes[0].legend()
    fig.suptitle(f"{task} ({len(rows)} rows)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_trace_figure(traces: dict[str, list[float]], path: str) -> None:
    """Objective-vs-step curves for a batch of attack runs."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for label, trace in traces.items():
        ax.plot(trace, label=label, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("objective")
    ax.grid(True, alpha=0.3)
    if len(traces) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_score_figure(scores, threshold: float, path: str) -> None:
    """Histogram of anomaly scores with the quantile threshold marked."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.hist(list(scores), bins=40, color="steelblue", alpha=0.8)
    ax.axvline(threshold, color="crimson", linestyle="--", label=f"threshold {threshold:.4g}")
    ax.set_xlabel("anomaly score")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_theory_figure(rows, path: str) -> None:
    """Closed form vs oracle scatter; points must hug the diagonal."""
    closed = [r["closed_form"] for r in rows if r.get("kind") == "tradeoff"]
    oracle = [r["oracle"] for r in rows if r.get("kind") == "tradeoff"]
    if not closed:
        return
    fig, ax = plt.subplots(figsize=(4.2, 4.0))
    lim = max(max(closed), max(oracle)) * 1.05
    ax.plot([0, lim], [0, lim], color="gray", linewidth=0.8)
    ax.scatter(closed, oracle, s=12, alpha=0.6)
    ax.set_xlabel("closed form")
    ax.set_ylabel("numeric oracle")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_theory(output_dir: str, rows, summary: dict, violations, figures: bool = True) -> list[str]:
    """theory_results.csv + theory_summary.json (+ replay file on failure)."""
    _ensure_dir(output_dir)
    emitted = []
    columns = [
        "kind",
        "index",
        "dim",
        "n_vertices",
        "delta_norm",
        "beta",
        "sigma_s",
        "sigma_t",
        "closed_form",
        "oracle",
        "gap",
        "bound",
        "cosine",
        "satisfied",
    ]
    csv_path = os.path.join(output_dir, "theory_results.csv")
    table = [[row.get(c) for c in columns] for row in rows]
    write_rows_csv(csv_path, columns, table)
    emitted.append(csv_path)

    summary_path = os.path.join(output_dir, "theory_summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
    emitted.append(summary_path)

    if violations:
        replay_path = os.path.join(output_dir, "theory_violations.json")
        with open(replay_path, "w") as fh:
            json.dump(list(violations), fh, indent=2)
        emitted.append(replay_path)

    if figures:
        fig_path = os.path.join(output_dir, "theory.png")
        render_theory_figure(rows, fig_path)
        emitted.append(fig_path)
    return emitted


def emit_detection(output_dir: str, result, figures: bool = True) -> list[str]:
    """scores.csv (index, score, flagged) + detection.json + histogram."""
    _ensure_dir(output_dir)
    emitted = []
    csv_path = os.path.join(output_dir, "scores.csv")
    rows = [
        [i, s, i in result.outlier_indices]
        for i, s in enumerate(result.scores)
    ]
    write_rows_csv(csv_path, ["index", "score", "flagged"], rows)
    emitted.append(csv_path)
    json_path = os.path.join(output_dir, "detection.json")
    with open(json_path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2)
    emitted.append(json_path)
    if figures:
        fig_path = os.path.join(output_dir, "scores.png")
        render_score_figure(result.scores, result.threshold, fig_path)
        emitted.append(fig_path)
    return emitted
