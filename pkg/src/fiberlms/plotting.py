"""PNG figures written next to the result files."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_profile(result, path):
    p = result.profile
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(p.z_km, p.true_db, "k-", label="true")
    ax.plot(p.z_km, p.est_db, "o", ms=3, label="estimated")
    ax.set_xlabel("distance [km]")
    ax.set_ylabel("power profile [dB]")
    ax.set_ylim(max(min(p.true_db.min(), p.est_db.min()) - 2, -40), 3)
    ax.grid(True, alpha=0.3)
    ax.legend()
    ax.set_title(result.scenario)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_trace(result, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogx(result.trace_symbols[1:], result.trace_rmse_db[1:], "-o", ms=3)
    ax.set_xlabel("processed symbols")
    ax.set_ylabel("RMSE [dB]")
    ax.grid(True, which="both", alpha=0.3)
    ax.set_title(result.scenario)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_result(result, out_dir):
    out = Path(out_dir)
    paths = [plot_profile(result, out / "profile.png")]
    if len(result.trace_symbols) > 1:
        paths.append(plot_trace(result, out / "rmse_trace.png"))
    return paths


def plot_sweep(rows, parameter, path):
    """``rows`` of ``(value, final_rmse_db)``."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r[0] for r in rows], [r[1] for r in rows], "-o")
    ax.set_xlabel(parameter)
    ax.set_ylabel("final RMSE [dB]")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)
