"""Static plots of a run's loss and metric curves."""

from __future__ import annotations

from pathlib import Path

from .trainer import read_record


def write_report(run_dir, out_dir) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rec = read_record(run_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    terms = sorted({k for row in rec.losses for k in row if k != "step"})
    for term in terms:
        rows = [r for r in rec.losses if term in r]
        ax.plot([r["step"] for r in rows], [r[term] for r in rows], label=term)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    paths.append(out / "losses.png")
    fig.savefig(paths[-1], dpi=100)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    for split in sorted({e["split"] for e in rec.evals}):
        rows = [e for e in rec.evals if e["split"] == split]
        ax.plot([e["step"] for e in rows], [e["report"]["mean_chamfer"] for e in rows], marker="o",
                label=f"{split} CD")
    if rec.best:
        ax.axvline(rec.best["step"], color="grey", linestyle=":", label="best")
    ax.set_xlabel("step")
    ax.set_ylabel("Chamfer distance")
    ax.legend()
    fig.tight_layout()
    paths.append(out / "metrics.png")
    fig.savefig(paths[-1], dpi=100)
    plt.close(fig)
    return paths
