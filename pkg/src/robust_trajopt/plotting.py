"""Static SVG figures. Output is byte-stable for identical inputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "robust-trajopt", "svg.fonttype": "path", "font.size": 9}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def wrap_angle(theta):
    return (np.asarray(theta) + np.pi) % (2 * np.pi) - np.pi


def plot_state_space(path, nominal_X, rollouts, title, wrap=False):
    """Phase portrait (first two states) of the nominal path and each rollout."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        for r in rollouts:
            s = r.states
            x0 = wrap_angle(s[:, 0]) if wrap else s[:, 0]
            ax.plot(x0, s[:, 1], color="tab:blue", lw=0.6, alpha=0.5)
        x0 = wrap_angle(nominal_X[:, 0]) if wrap else nominal_X[:, 0]
        ax.plot(x0, nominal_X[:, 1], color="k", lw=1.5, label="nominal")
        ax.set_xlabel("x0")
        ax.set_ylabel("x1")
        ax.set_title(title)
        ax.legend(loc="best")
        return _save(fig, path)


def plot_error_band(path, stats, dt, title, ylabel="|dx|"):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        t = np.arange(len(stats.mean)) * dt
        ax.plot(t, stats.mean, color="tab:red", lw=1.2, label="mean")
        ax.fill_between(t, stats.mean - stats.std, stats.mean + stats.std,
                        color="tab:red", alpha=0.25, lw=0, label="+/- std")
        ax.set_xlabel("time [s]")
        ax.set_ylabel(ylabel)
        ax.set_title(f"{title} ({stats.runs - stats.diverged}/{stats.runs} runs kept)")
        ax.legend(loc="best")
        return _save(fig, path)


def plot_gain_comparison(path, U, W, lqr_gain, dt):
    """Open-loop control, constant static gain and time-varying LQR gains."""
    T = len(U)
    t = np.arange(T) * dt
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(3, 1, figsize=(5, 7), sharex=True)
        for j in range(U.shape[1]):
            axes[0].step(t, U[:, j], where="post", label=f"u{j}")
        axes[0].set_title("a) open-loop control")
        for i in range(W.shape[0]):
            for j in range(W.shape[1]):
                axes[1].plot(t, np.full(T, W[i, j]), label=f"W[{i},{j}]")
        axes[1].set_title("b) static feedback gain")
        for i in range(lqr_gain.shape[1]):
            for j in range(lqr_gain.shape[2]):
                axes[2].plot(t, lqr_gain[:, i, j], label=f"K[{i},{j}]")
        axes[2].set_title("c) time-varying LQR gain")
        axes[2].set_xlabel("time [s]")
        for ax in axes:
            ax.legend(loc="best", fontsize=7)
        fig.tight_layout()
        return _save(fig, path)
