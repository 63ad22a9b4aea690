"""Optional PNG renderings of the CSV outputs (``--figures``)."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .analysis import SpectrumResult, TimeSeries  # noqa: E402
from .benchmark import BenchmarkResult  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def inspection_histogram(durations_ms: Sequence[float], out: Path,
                         band: tuple[float, float] = (990.0, 1530.0)) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if durations_ms:
        ax.hist(durations_ms, bins=30, color="tab:blue", alpha=0.8)
    for x in band:
        ax.axvline(x, color="k", ls="--", lw=0.8)
    ax.set_xlabel("inspection time [ms]")
    ax.set_ylabel("episodes")
    return _save(fig, out)


def spectrum_plot(s: SpectrumResult, out: Path, marks: Sequence[float] = (30, 60, 90, 120)) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(s.frequencies, s.magnitudes + 1e-12, lw=0.8)
    for f in marks:
        ax.axvline(f, color="tab:red", ls=":", lw=0.8)
    ax.set_xlim(0, min(200.0, s.sample_rate / 2))
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("magnitude [W]")
    return _save(fig, out)


def residual_plot(series: Sequence[TimeSeries], out: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for r in series:
        ax.plot(r.times, r.values, lw=0.6, label=r.label)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("torque residual [N m]")
    if series:
        ax.legend(fontsize="small")
    return _save(fig, out)


def fidelity_plot(result: BenchmarkResult, out: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    labels = [r.config for r in result.rows]
    ax.bar(labels, [r.mean_tick_us for r in result.rows], yerr=[r.std_tick_us for r in result.rows],
           color="tab:gray")
    ax.set_xlabel("h-l")
    ax.set_ylabel("mean tick time [us]")
    return _save(fig, out)
