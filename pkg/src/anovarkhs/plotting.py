"""Report figures. Always rendered off-screen to files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["sweep_figure", "concentration_figure", "covering_figure", "sudakov_figure"]

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (4.8, 3.4),
    "axes.spines.top": False,
    "axes.spines.right": False,
    # keep files stable across runs
    "svg.hashsalt": "anovarkhs",
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    meta = {"Software": None} if path.suffix == ".png" else {}
    fig.savefig(path, dpi=150, metadata=meta)
    plt.close(fig)
    return path


def sweep_figure(sweep: dict, path) -> Path:
    """Mean risk and critical radius against n on log-log axes with the fitted line."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ns = np.array([p["n"] for p in sweep["per_n"]], dtype=float)
        risk = np.array([p["mean_risk"] for p in sweep["per_n"]])
        sd = np.array([p["sd_risk"] for p in sweep["per_n"]])
        reps = max(1, len(sweep["rows"]) // max(1, len(ns)))
        ax.errorbar(ns, risk, yerr=sd / np.sqrt(reps), fmt="o", ms=4, capsize=2, label="mean risk")
        slope = sweep.get("risk_slope", float("nan"))
        if np.isfinite(slope):
            fitted = np.exp(sweep["risk_intercept"]) * ns ** slope
            ax.plot(ns, fitted, "-", lw=1, label=f"fit, slope {slope:.3f}")
        nu = np.array([p["mean_nu"] for p in sweep["per_n"]])
        if np.all(nu > 0):
            ax.plot(ns, nu ** 2, "s--", ms=3, lw=0.8, label="mean nu^2 (first group)")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("n")
        ax.set_ylabel("empirical risk")
        ax.legend(frameon=False)
        return _save(fig, path)


def concentration_figure(rec: dict, path) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        u = np.asarray(rec["u"])
        tail = np.asarray(rec["tail"])
        pos = tail > 0
        ax.plot(u[pos] ** 2, np.log(tail[pos]), "o", ms=3, label="empirical")
        if not rec.get("degenerate") and np.isfinite(rec["intercept"]):
            x = u[pos] ** 2
            ax.plot(x, rec["intercept"] + rec["slope"] * x, "-", lw=1,
                    label=f"slope {rec['slope']:.3f}, R2 {rec['r2']:.3f}")
        ax.set_xlabel("u^2")
        ax.set_ylabel("log tail probability")
        ax.legend(frameon=False)
        return _save(fig, path)


def covering_figure(rows, path) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        d = np.array([r["delta"] for r in rows])
        ax.step(d, [r["lower"] for r in rows], where="post", label="packing lower")
        ax.step(d, [r["proper"] for r in rows], where="post", label="greedy proper")
        ax.step(d, [r["half_lower"] for r in rows], where="post", ls=":", label="lower N(delta/2)")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("delta")
        ax.set_ylabel("covering count")
        ax.legend(frameon=False)
        return _save(fig, path)


def sudakov_figure(rec: dict, path) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        rows = rec["rows"]
        d = np.array([r["delta"] for r in rows])
        ax.plot(d, [r["log_N"] for r in rows], "o-", ms=3, label="log N (proper)")
        ax.plot(d, [r["bound"] for r in rows], "--", lw=1, label="bound shape")
        ax.axvline(2 * rec["M"], color="0.6", lw=0.8)
        ax.set_xscale("log")
        ax.set_yscale("symlog", linthresh=1e-2)
        ax.set_xlabel("delta")
        ax.legend(frameon=False)
        return _save(fig, path)
