"""Report rendering: machine-readable JSON, human text tables, and matplotlib
figures written next to the delimited outputs."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def atomic_write_text(path, text: str) -> None:
    """Write via temp file + rename so interrupted runs leave no partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def config_digest(resolved_config_text: str) -> str:
    return hashlib.sha256(resolved_config_text.encode()).hexdigest()[:16]


def metrics_json(metric: str, value: float, per_class: dict | None = None,
                 digest: str = "") -> str:
    return json.dumps({
        "metric": metric,
        "value": value,
        "per_class": {str(k): v for k, v in (per_class or {}).items()},
        "config_digest": digest,
    }, indent=2, sort_keys=True) + "\n"


def metrics_table(title: str, rows: list) -> str:
    """Simple two-column text table from (name, value) pairs."""
    width = max(len(str(n)) for n, _ in rows) if rows else 8
    out = [title, "-" * max(len(title), width + 12)]
    for name, value in rows:
        if isinstance(value, float):
            value = f"{value:.4f}"
        out.append(f"{str(name).ljust(width)}  {value}")
    return "\n".join(out) + "\n"


def save_loss_figure(metrics_rows: list, path) -> None:
    """Training curves: mean loss and label entropy per epoch."""
    epochs = [r[0] for r in metrics_rows]
    loss = [r[1] for r in metrics_rows]
    entropy = [r[3] for r in metrics_rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, loss, label="mean CE loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, entropy, color="tab:orange", label="label entropy")
    ax2.set_ylabel("entropy (nats)")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_occupancy_figure(counts, path, title="pseudo-class occupancy") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(counts)), counts)
    ax.set_xlabel("pseudo class")
    ax.set_ylabel("count")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_pr_figure(curves: dict, path) -> None:
    """Per-class precision-recall curves; curves maps class -> (recall, precision)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for cls, (recall, precision) in sorted(curves.items()):
        ax.plot(recall, precision, label=f"class {cls}")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    if curves:
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bar_figure(values: dict, path, ylabel: str, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    keys = [str(k) for k in values]
    ax.bar(keys, list(values.values()))
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
