"""Report figures, written next to report.json."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# no version string or timestamp in the files, so reruns are byte-identical
_PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def vad_confusion_figure(vad: dict, path: Path) -> Path:
    cells = [[vad["tn"], vad["fp"]], [vad["fn"], vad["tp"]]]
    fig, ax = plt.subplots(figsize=(3.6, 3.2))
    ax.imshow(cells, cmap="Blues")
    for i in range(2):
        for j in range(2):
            ax.text(j, i, str(cells[i][j]), ha="center", va="center")
    ax.set_xticks([0, 1], ["SIL", "TALK"])
    ax.set_yticks([0, 1], ["SIL", "TALK"])
    ax.set_xlabel("predicted")
    ax.set_ylabel("reference")
    ax.set_title(f"VAD (F1 {vad['f1']:.4f})")
    return _save(fig, path)


def turn_accuracy_figure(turns: dict, path: Path) -> Path:
    names = list(turns)
    fig, ax = plt.subplots(figsize=(4.4, 3.0))
    ax.bar(names, [turns[n]["accuracy"] for n in names], color="tab:green")
    for i, n in enumerate(names):
        ax.text(i, turns[n]["accuracy"], f"n={turns[n]['support']}", ha="center", va="bottom", fontsize=8)
    ax.set_ylim(0, 1.1)
    ax.set_ylabel("accuracy")
    ax.set_title("Turn state accuracy")
    return _save(fig, path)


def latency_figure(latency: dict, path: Path) -> Path:
    hist = latency["histogram"]
    fig, ax = plt.subplots(figsize=(4.0, 3.0))
    ax.bar(list(hist), list(hist.values()), color="tab:orange")
    ax.set_xlabel("chunks to halt")
    ax.set_ylabel("interrupts")
    ax.set_title("Barge-in latency")
    return _save(fig, path)


def render_figures(report: dict, out_dir: Path) -> dict[str, Path]:
    out = {"vad_confusion": vad_confusion_figure(report["vad"], out_dir / "vad_confusion.png")}
    if report["turn_accuracy"]:
        out["turn_accuracy"] = turn_accuracy_figure(report["turn_accuracy"], out_dir / "turn_accuracy.png")
    if report["barge_in_latency"]["count"]:
        out["barge_in_latency"] = latency_figure(report["barge_in_latency"], out_dir / "barge_in_latency.png")
    return out
