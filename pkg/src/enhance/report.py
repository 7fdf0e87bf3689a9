"""Report writing: the delimited text report plus matplotlib figures.

Figures are written next to the report file, sharing its stem:
``<stem>_consensus.png``, ``<stem>_average.png``, ``<stem>_votes.png`` and,
when a reference image was scored, ``<stem>_tau.png``.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pipeline import CombineResult, format_report  # noqa: E402

# deterministic PNGs: no timestamp / software metadata
_PNG_META = {"Software": None}


def _figure(width=5.0, height=4.5):
    fig, ax = plt.subplots(figsize=(width, height), dpi=100)
    ax.tick_params(labelsize=8)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def plot_image(image, path, title: str, cmap: str = "gray") -> None:
    img = np.asarray(image, dtype=np.float64)
    fig, ax = _figure()
    lo, hi = np.percentile(img, [1, 99.5])
    if hi <= lo:
        lo, hi = float(img.min()), float(img.max()) or 1.0
    im = ax.imshow(img, cmap=cmap, origin="upper", vmin=lo, vmax=hi, interpolation="nearest")
    ax.set_title(title, fontsize=10)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    _save(fig, path)


def plot_tau_summary(result: CombineResult, path) -> None:
    """Per-image tau against the reference, with the two combined images marked."""
    m = result.report.channels[0]
    taus = [np.nan if t is None else t for t in m.per_image_tau_vs_reference]
    fig, ax = _figure(6.0, 3.5)
    ax.plot(np.arange(len(taus)), taus, "o", ms=3, color="0.5", label="input images")
    if m.consensus_vs_reference_tau is not None:
        ax.axhline(m.consensus_vs_reference_tau, color="C0", lw=1.5, label="consensus")
    if m.weighted_average_vs_reference_tau is not None:
        ax.axhline(m.weighted_average_vs_reference_tau, color="C1", lw=1.5, ls="--", label="weighted average")
    ax.set_xlabel("input (processing order)", fontsize=9)
    ax.set_ylabel("Kendall tau vs reference", fontsize=9)
    ax.set_ylim(-1.05, 1.05)
    ax.legend(fontsize=8, frameon=False, loc="lower right")
    _save(fig, path)


def write_report(result: CombineResult, path) -> list[Path]:
    """Write the text report and its figures; returns every path written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(result.report))
    written = [path]
    stem = path.with_suffix("")

    def out(tag):
        p = Path(f"{stem}_{tag}.png")
        written.append(p)
        return p

    ch = result.report.channels[0].channel
    plot_image(result.renders[0], out("consensus"), f"consensus ({ch}), histogram matched")
    plot_image(result.averages[0], out("average"), f"mask-weighted average ({ch})")
    plot_image(result.states[0].votes.reshape(result.states[0].canvas.shape), out("votes"), "votes", cmap="viridis")
    if result.report.channels[0].per_image_tau_vs_reference:
        plot_tau_summary(result, out("tau"))
    return written
