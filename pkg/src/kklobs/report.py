"""Figure rendering for synthesized designs and simulation traces.

All figures go straight to files through the Agg backend so runs stay
headless and deterministic; every figure title carries the scenario's
config hash so a plot can be traced back to the run that made it.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .injectivity import InjectivityReport
from .runtime import SimTrace

__all__ = [
    "fig_injectivity",
    "fig_error_decay",
    "fig_states",
    "fig_lyapunov",
    "render_trace_figures",
]

_DPI = 110


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def fig_injectivity(report: InjectivityReport, path, config_hash: int = 0) -> None:
    """Separation envelope: value-space gap against the state-space bound."""
    fig, ax = plt.subplots(figsize=(6, 4))
    knots = report.rho_knots
    ax.plot(knots[:, 0], knots[:, 1], "-", color="tab:blue", lw=1.5,
            label="inverse envelope")
    s = np.linspace(0, knots[-1, 0] * 1.2, 200)
    ax.plot(s, report.rho(s), "--", color="tab:orange", lw=1.0,
            label="fitted bound")
    ax.set_xlabel("value-space separation")
    ax.set_ylabel("state-space separation bound")
    ax.set_title(f"injectivity modulus {report.modulus:.4g}  "
                 f"[{config_hash:#x}]")
    ax.legend(loc="lower right")
    _finish(fig, path)


def fig_error_decay(trace: SimTrace, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    pos = trace.err_transform > 0
    ax.semilogy(trace.times[pos], trace.err_transform[pos],
                color="tab:blue", label="|T(x) - z|")
    fin = np.isfinite(trace.err_state) & (trace.err_state > 0)
    if fin.any():
        ax.semilogy(trace.times[fin], trace.err_state[fin],
                    color="tab:orange", label="|xhat - x|")
    ax.set_xlabel("t")
    ax.set_ylabel("error")
    ax.set_title(f"{trace.mode} mode error decay  [{trace.config_hash:#x}]")
    ax.legend(loc="upper right")
    _finish(fig, path)


def fig_states(trace: SimTrace, path) -> None:
    n = trace.x.shape[1]
    fig, axes = plt.subplots(n, 1, figsize=(6, 2.2 * n), sharex=True,
                             squeeze=False)
    for i in range(n):
        ax = axes[i, 0]
        ax.plot(trace.times, trace.x[:, i], color="tab:blue", label=f"x_{i+1}")
        if np.isfinite(trace.xhat[:, i]).any():
            ax.plot(trace.times, trace.xhat[:, i], "--", color="tab:orange",
                    label=f"xhat_{i+1}")
        ax.set_ylabel(f"x_{i+1}")
        ax.legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("t")
    axes[0, 0].set_title(f"states vs estimates  [{trace.config_hash:#x}]")
    _finish(fig, path)


def fig_lyapunov(trace: SimTrace, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    pos = np.isfinite(trace.U) & (trace.U > 0)
    ax.semilogy(trace.times[pos], trace.U[pos], color="tab:green")
    ax.set_xlabel("t")
    ax.set_ylabel("U(e)")
    ax.set_title(f"Lyapunov value along the trace  [{trace.config_hash:#x}]")
    _finish(fig, path)


def render_trace_figures(trace: SimTrace, out_dir, stem: str) -> list:
    """Standard figure set for one trace; returns the written paths."""
    import os
    paths = []
    for name, fn in (("error", fig_error_decay), ("states", fig_states),
                     ("lyapunov", fig_lyapunov)):
        if name == "lyapunov" and not np.any(np.isfinite(trace.U)):
            continue
        path = os.path.join(out_dir, f"{stem}_{name}.png")
        fn(trace, path)
        paths.append(path)
    return paths
