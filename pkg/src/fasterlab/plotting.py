"""Figure rendering for the report paths; files only, no interactive UI."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_pareto_plot(rows, path) -> None:
    """Accuracy vs GFLOPs scatter; one point per (pattern, L, N) sweep row."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    by_frames: dict[int, list] = {}
    for pattern, frames, clips, gflops, top1 in rows:
        by_frames.setdefault(frames, []).append((gflops, top1, pattern, clips))
    for frames, pts in sorted(by_frames.items()):
        pts.sort()
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.plot(xs, ys, marker="o", label=f"{frames}-frame clips")
        for gflops, top1, pattern, clips in pts:
            ax.annotate(f"{pattern}", (gflops, top1), fontsize=7,
                        xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("GFLOPs per video")
    ax.set_ylabel("top-1 accuracy")
    ax.set_title("accuracy vs compute across clip schedules")
    ax.grid(True, alpha=0.3)
    if by_frames:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_cost_breakdown(report, path, top_n: int = 12) -> None:
    """Horizontal bars of the costliest layers in a cost report."""
    entries = sorted(report.entries, key=lambda e: e.macs, reverse=True)[:top_n]
    entries = [e for e in entries if e.macs > 0]
    fig, ax = plt.subplots(figsize=(6.5, 0.36 * max(len(entries), 4) + 1.2))
    names = [e.name for e in entries][::-1]
    values = [e.gflops for e in entries][::-1]
    ax.barh(names, values)
    ax.set_xlabel("GFLOPs")
    ax.set_title(f"{report.title}: total {report.total_gflops:.2f} GFLOPs")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
