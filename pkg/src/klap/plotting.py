"""Figures rendered next to the CSV outputs when ``--plot`` is given."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "savefig.dpi": 150,
}


def _positive(v):
    v = np.asarray(v, dtype=float)
    return np.where(v > 0, v, np.nan)


def plot_trajectory(traj, path, title=None):
    """Objective gap and fixed-point residual against iteration.

    The gap is taken relative to the last recorded objective value, so the
    final point is dropped from the log-scale panel.
    """
    k = traj.column("k")
    J = traj.column("J_lambda")
    res = traj.column("residual")
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
        ax = axes[0]
        if k.size > 1:
            ax.semilogy(k[:-1], _positive(J[:-1] - J[-1]), color="C0")
        ax.set_xlabel("iteration")
        ax.set_ylabel(r"$J_\lambda(p_k) - J_\lambda(p_K)$")
        hd = [r.kl_hdagger_p for r in traj.records]
        if all(v is not None for v in hd):
            ax.semilogy(k, _positive(hd), color="C2", label=r"KL$(h^\dagger\|p_k)$")
            ax.legend(frameon=False)
        ax = axes[1]
        ax.semilogy(k, _positive(res), color="C1")
        ax.set_xlabel("iteration")
        ax.set_ylabel("fixed-point residual (L1)")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_report(rows, path, title=None):
    """Recovery error (TV to p_data) across the sweep axes.

    One panel per axis that actually varies: clean-sample weight, update
    ratio and clean count.
    """
    rows = list(rows)
    axes_spec = [
        ("lambda_weight", "clean-sample weight $w$", ("clean_count", "gamma")),
        ("gamma", r"update ratio $\gamma$", ("clean_count", "lambda_weight")),
        ("clean_count", "clean samples $M$", ("lambda_weight", "gamma")),
    ]
    active = [a for a in axes_spec if len({getattr(r, a[0]) for r in rows}) > 1]
    if not active:
        active = axes_spec[:1]
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(active), figsize=(3.6 * len(active), 3.2), squeeze=False)
        for ax, (xname, xlabel, group_by) in zip(axes[0], active):
            groups = {}
            for r in rows:
                groups.setdefault(tuple(getattr(r, g) for g in group_by), []).append(r)
            for key, grp in sorted(groups.items()):
                grp.sort(key=lambda r: getattr(r, xname))
                xs = [getattr(r, xname) for r in grp]
                ys = [r.tv_to_pdata for r in grp]
                label = ", ".join(f"{g}={v:g}" for g, v in zip(group_by, key))
                ax.plot(xs, ys, marker="o", label=label)
            if xname == "gamma":
                ax.set_xscale("log")
            ax.set_xlabel(xlabel)
            ax.set_ylabel(r"TV$(p_{data}, \hat p)$")
            if len(groups) > 1:
                ax.legend(frameon=False, fontsize=7)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
