"""Render evaluation reports and selection results to CSV files and figures."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .ingest import GROUPS


def _write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_report_outputs(report: dict, out_dir: Path | str) -> list[Path]:
    """Emit metrics/per-group/confusion CSVs plus the matching figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    written.append(_write_csv(
        out_dir / "metrics.csv",
        ["metric", "value"],
        [["accuracy", report["accuracy"]], ["avg_agd", report["avg_agd"]]],
    ))

    per_group = report["per_group_agd"]
    rows = [[g, "" if per_group[str(g)] is None else per_group[str(g)]] for g in GROUPS]
    written.append(_write_csv(out_dir / "per_group_agd.csv", ["group", "avg_agd"], rows))

    confusion = np.asarray(report["confusion"], dtype=int)
    written.append(_write_csv(
        out_dir / "confusion.csv",
        ["true\\predicted"] + [str(g) for g in GROUPS],
        [[g] + confusion[i].tolist() for i, g in enumerate(GROUPS)],
    ))

    fig, ax = plt.subplots(figsize=(6, 3.5))
    values = [per_group[str(g)] if per_group[str(g)] is not None else 0.0 for g in GROUPS]
    ax.bar([str(g) for g in GROUPS], values, color="#19436b")
    ax.set_xlabel("age group")
    ax.set_ylabel("average AGD")
    ax.set_title(f"accuracy {report['accuracy']:.2f}%, avg AGD {report['avg_agd']:.3f}")
    fig.tight_layout()
    path = out_dir / "per_group_agd.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(confusion, cmap="Blues")
    ax.set_xticks(range(len(GROUPS)), [str(g) for g in GROUPS])
    ax.set_yticks(range(len(GROUPS)), [str(g) for g in GROUPS])
    ax.set_xlabel("predicted group")
    ax.set_ylabel("true group")
    for i in range(len(GROUPS)):
        for j in range(len(GROUPS)):
            if confusion[i, j]:
                ax.text(j, i, str(confusion[i, j]), ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    path = out_dir / "confusion.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)
    return written


def write_selection_outputs(selection: dict, out_dir: Path | str) -> list[Path]:
    """Emit the ranked score table or the search trace, as CSV and figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    selected = set(selection["selected"])

    if "score_table" in selection:
        table = selection["score_table"]
        higher = table["higher_is_better"]
        ranked = sorted(table["scores"].items(), key=lambda kv: -kv[1] if higher else kv[1])
        written.append(_write_csv(
            out_dir / "selection_scores.csv",
            ["channel", "score", "selected"],
            [[name, score, int(name in selected)] for name, score in ranked],
        ))
        fig, ax = plt.subplots(figsize=(9, 3.5))
        names = [name for name, _ in ranked]
        scores = [score for _, score in ranked]
        colors = ["#19436b" if n in selected else "#b0b8c0" for n in names]
        ax.bar(names, scores, color=colors)
        if selection.get("threshold") is not None:
            ax.axhline(selection["threshold"], color="#2fcc00", lw=1.5, label="percentile cut")
            ax.legend()
        ax.set_ylabel(table["kind"])
        ax.tick_params(axis="x", rotation=75, labelsize=8)
        fig.tight_layout()
        path = out_dir / "selection_scores.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    steps = selection.get("extras", {}).get("steps")
    if steps:
        written.append(_write_csv(
            out_dir / "sfs_trace.csv",
            ["step", "channel", "avg_agd", "accuracy"],
            [[k + 1, s["channel"], s["avg_agd"], s["accuracy"]] for k, s in enumerate(steps)],
        ))
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(range(1, len(steps) + 1), [s["avg_agd"] for s in steps], marker="o", color="#874601")
        ax.set_xticks(range(1, len(steps) + 1), [s["channel"] for s in steps], rotation=45)
        ax.set_xlabel("added channel")
        ax.set_ylabel("validation avg AGD")
        fig.tight_layout()
        path = out_dir / "sfs_trace.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written
