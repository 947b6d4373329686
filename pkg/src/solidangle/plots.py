"""Figures for the report CSVs, rendered as PNG files beside them.

Every figure function takes the same data its CSV was written from, so
the pictures never disagree with the tables.  The Agg backend keeps the
renderer headless.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def decay_figure(groups, path):
    """Log-log far-field decay, one panel for the map and one for Euler.

    groups: iterable of (label, radii, max_phi, max_euler, phi_slope,
    euler_slope) tuples, one per manifold.
    """
    fig, axes = plt.subplots(1, 2, figsize=(9.8, 4.2))
    for label, radii, mp, me, ps, es in groups:
        axes[0].loglog(radii, mp, "o-", label="%s (slope %.2f)" % (label, ps))
        axes[1].loglog(radii, me, "s--", label="%s (slope %.2f)" % (label, es))
    axes[0].set_ylabel("max mod-1 distance from 0")
    axes[1].set_ylabel("max Euler residual")
    for ax in axes:
        ax.set_xlabel("radius")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
    _finish(fig, path)


def euler_figure(radii, resid, slope, label, path):
    fig, ax = plt.subplots(figsize=(5.4, 4.2))
    ax.loglog(radii, resid, "o-", label="%s (slope %.2f)" % (label, slope))
    ref = resid[0] * (np.asarray(radii) / radii[0]) ** -3.0
    ax.loglog(radii, ref, ":", color="gray", label="reference slope -3")
    ax.set_xlabel("radius")
    ax.set_ylabel("max Euler residual")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    _finish(fig, path)


def tube_figure(report, r_values, path):
    """Radial growth against the log bound, and meridional flatness."""
    fig, axes = plt.subplots(1, 2, figsize=(9.8, 4.2))
    r = np.asarray(r_values, dtype=float)
    axes[0].semilogx(r, report["max_dphi_dr"], "o-", label="max |d phi/dr|")
    axes[0].semilogx(r, (1.0 - np.log(r)) * report["log_bound_ratio"], ":",
                     label="(1 - ln r) * fitted ratio")
    axes[0].set_xlabel("tube radius r")
    axes[0].set_ylabel("turns per unit length")
    axes[0].legend(fontsize=8)
    mer = np.array([row["dphi_dangle"] for row in report["rows"]])
    axes[1].plot(mer, ".", markersize=3)
    axes[1].axhline(report["eps"], color="gray", linestyle=":",
                    label="eps = %+d" % int(report["eps"]))
    axes[1].set_xlabel("sample index")
    axes[1].set_ylabel("meridional derivative (turns/turn)")
    axes[1].legend(fontsize=8)
    for ax in axes:
        ax.grid(True, alpha=0.3)
    _finish(fig, path)


def winding_figure(entries, path):
    """Meridional winding per base point, one trace per manifold."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for label, winds in entries:
        ax.plot(winds, "o-", markersize=3, label=label)
    ax.set_xlabel("base point index")
    ax.set_ylabel("meridional winding")
    ax.set_yticks([-1, 0, 1])
    ax.set_ylim(-1.5, 1.5)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    _finish(fig, path)
