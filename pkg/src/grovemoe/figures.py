"""Matplotlib renderings of the report CSVs, written next to them."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

# Strip volatile metadata so identical runs produce byte-identical PNGs.
_PNG_METADATA = {"Software": "grovemoe"}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def render_histogram(histogram: dict[int, int], path: str | Path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    keys = sorted(histogram)
    ax.bar(keys, [histogram[k] for k in keys], color="#4c72b0")
    ax.set_xlabel("distinct adjugate groups per token")
    ax.set_ylabel("tokens")
    ax.set_xticks(keys)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def render_trajectory(trajectory: list[dict[str, float]], path: str | Path,
                      title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = [rec["step"] for rec in trajectory]
    ax.plot(steps, [rec["max_violation"] for rec in trajectory], label="max |F - Q|")
    ax.plot(steps, [rec["rms_violation"] for rec in trajectory], label="rms(F - Q)")
    ax.set_xlabel("step")
    ax.set_ylabel("imbalance")
    ax.set_yscale("log")
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def render_curves(curves: dict[str, list[float]], path: str | Path,
                  ylabel: str = "", title: str = "", logy: bool = False) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in curves.items():
        ax.plot(range(len(values)), values, label=label)
    ax.set_xlabel("step")
    ax.set_ylabel(ylabel)
    if logy:
        ax.set_yscale("log")
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
