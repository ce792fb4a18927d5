"""Figure rendering for scenario reports.  All figures are written to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "figure.figsize": (7.0, 4.2),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
})


def _finish(fig, path) -> str:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def iteration_histogram(iterations: np.ndarray, path, title: str = "") -> str:
    counts = np.bincount(np.asarray(iterations, dtype=int))
    fig, ax = plt.subplots()
    xs = np.arange(counts.size)
    ax.bar(xs[1:], counts[1:], color="#32649b", width=0.7)
    total = max(1, int(counts.sum()))
    for x, c in zip(xs[1:], counts[1:]):
        if c:
            ax.text(x, c, f"{100.0 * c / total:.1f}%", ha="center", va="bottom",
                    fontsize=8)
    ax.set_xlabel("iterations per control step")
    ax.set_ylabel("control steps")
    ax.set_title(title)
    ax.set_xticks(xs[1:])
    return _finish(fig, path)


def tracking_plot(t: np.ndarray, zmp_x: np.ndarray, zmp_des_x: np.ndarray,
                  zmp_error: np.ndarray, path, title: str = "") -> str:
    fig, (ax0, ax1) = plt.subplots(2, 1, sharex=True, figsize=(7.0, 5.2))
    ax0.plot(t, zmp_des_x, "k--", lw=1.0, label="desired")
    ax0.plot(t, zmp_x, color="#32649b", lw=1.0, label="realized")
    ax0.set_ylabel("ground point x [m]")
    ax0.legend(loc="best", fontsize=8)
    ax0.set_title(title)
    ax1.semilogy(t, np.maximum(zmp_error, 1e-16), color="#a03232", lw=0.8)
    ax1.set_ylabel("tracking error [m]")
    ax1.set_xlabel("time [s]")
    return _finish(fig, path)


def solve_time_plot(t: np.ndarray, solve_time: np.ndarray, path,
                    title: str = "") -> str:
    fig, ax = plt.subplots()
    ax.semilogy(t, np.maximum(solve_time, 1e-9) * 1e3, ".", ms=2,
                color="#32649b")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("solve time [ms]")
    ax.set_title(title)
    return _finish(fig, path)


def benchmark_bars(solvers: list[str], mean_times: list[float], path,
                   title: str = "") -> str:
    fig, ax = plt.subplots()
    xs = np.arange(len(solvers))
    ax.bar(xs, np.asarray(mean_times) * 1e3,
           color=["#32649b", "#6b8fbf", "#a03232"][: len(solvers)])
    for x, v in zip(xs, mean_times):
        ax.text(x, v * 1e3, f"{v * 1e3:.3f}", ha="center", va="bottom", fontsize=8)
    ax.set_xticks(xs)
    ax.set_xticklabels(solvers, rotation=10)
    ax.set_ylabel("mean solve time [ms]")
    ax.set_title(title)
    return _finish(fig, path)


def friction_histograms(hist_gv: np.ndarray, hist_st: np.ndarray, path,
                        title: str = "") -> str:
    size = max(hist_gv.size, hist_st.size)
    gv = np.zeros(size, dtype=int)
    st = np.zeros(size, dtype=int)
    gv[: hist_gv.size] = hist_gv
    st[: hist_st.size] = hist_st
    xs = np.arange(size)
    fig, ax = plt.subplots()
    w = 0.38
    ax.bar(xs[1:] - w / 2, gv[1:], width=w, label="generating vectors",
           color="#32649b")
    ax.bar(xs[1:] + w / 2, st[1:], width=w, label="normal + tangents",
           color="#a03232")
    ax.set_xlabel("iterations per control step")
    ax.set_ylabel("control steps (all seeds)")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.set_xticks(xs[1:])
    ax.legend(loc="best", fontsize=8)
    return _finish(fig, path)
