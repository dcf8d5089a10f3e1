"""Optional figures for CLI reports.  matplotlib is imported only when asked for."""

from __future__ import annotations

from pathlib import Path


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("plotting needs matplotlib (pip install 'riskeig[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_rungs(report, path):
    """Rung eigenvalues against domain size, with the rung-to-rung change."""
    plt = _pyplot()
    n = [r.n for r in report.rungs]
    rho = [r.rho for r in report.rungs]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].plot(n, rho, "o-")
    axes[0].set_xscale("log", base=2)
    axes[0].set_xlabel("domain size n")
    axes[0].set_ylabel("rho_n")
    if len(rho) > 1:
        diffs = [abs(b - a) for a, b in zip(rho, rho[1:])]
        axes[1].semilogy(n[1:], [max(d, 1e-17) for d in diffs], "o-")
        axes[1].set_xscale("log", base=2)
    axes[1].set_xlabel("domain size n")
    axes[1].set_ylabel("|rho_n - rho_prev|")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_iterates(trace, path):
    """PIA eigenvalues and terminal theta per iteration."""
    plt = _pyplot()
    k = [it.k for it in trace.iterates]
    lam = [it.lambda_k for it in trace.iterates]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].plot(k, lam, "o-")
    axes[0].set_xlabel("iteration k")
    axes[0].set_ylabel("lambda_k")
    th = [(it.k, it.max_theta) for it in trace.iterates if it.max_theta is not None]
    if th:
        axes[1].semilogy([a for a, _ in th], [max(b, 1e-17) for _, b in th], "o-")
    axes[1].set_xlabel("iteration k")
    axes[1].set_ylabel("max theta on watch set")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
