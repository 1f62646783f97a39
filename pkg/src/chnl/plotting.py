"""PNG figures for run, sweep and calibration outputs (headless Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps the PNG bytes reproducible
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def _profile(ax, grid, u, **kw):
    ax.plot(grid.coords[0], u, **kw)


def _image(ax, grid, u, title):
    im = ax.imshow(u.T, origin="lower", extent=(0, grid.L, 0, grid.L), vmin=0, vmax=1, cmap="viridis")
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])
    return im


def sweep_figures(plan, result, outcomes, out_dir) -> list[Path]:
    """Local vs nonlocal states at every comparison time, plus error against eps."""
    from .sweep import eps_label

    out = Path(out_dir) / "figures"
    g = plan.grid
    loc = outcomes["local"].trajectory
    paths = []
    for t in plan.times:
        if g.d == 1:
            fig, axes = plt.subplots(1, len(result.eps), figsize=(4 * len(result.eps), 3.2), squeeze=False)
            for ax, e in zip(axes[0], result.eps):
                _profile(ax, g, loc.at_time(t), color="tab:blue", lw=1.2, label="local")
                _profile(ax, g, outcomes[eps_label(e)].trajectory.at_time(t), color="tab:red", lw=1.0,
                         label=f"nonlocal, eps={e:g}")
                ax.set_title(f"eps = {e:g}, t = {t:g}", fontsize=9)
                ax.set_xlabel("x")
                ax.legend(fontsize=7, loc="upper right")
        else:
            cols = len(result.eps) + 1
            fig, axes = plt.subplots(1, cols, figsize=(3 * cols, 3.2), squeeze=False)
            for ax, e in zip(axes[0], result.eps):
                _image(ax, g, outcomes[eps_label(e)].trajectory.at_time(t), f"nonlocal eps={e:g}")
            _image(axes[0][-1], g, loc.at_time(t), "local")
            fig.suptitle(f"t = {t:g}", fontsize=10)
        fig.tight_layout()
        paths.append(_save(fig, out / f"profiles_t{t:g}.png"))
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for t in plan.times:
        ax.loglog(result.eps, result.errors_at(t, "l2"), "o-", label=f"L2, t={t:g}")
        ax.loglog(result.eps, result.errors_at(t, "h1"), "s--", label=f"H1, t={t:g}", alpha=0.6)
    ax.set_xlabel("eps")
    ax.set_ylabel("distance to local solution")
    ax.legend(fontsize=7)
    fig.tight_layout()
    paths.append(_save(fig, out / "errors.png"))
    return paths


def calibration_figure(report, path) -> Path:
    eps = np.asarray(report.eps)
    err = np.asarray(report.errors)
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(eps, err, "o-", label=f"sup error, order {report.order:.2f}")
    ref = err[0] * (eps / eps[0]) ** 2
    ax.loglog(eps, ref, "k:", label="slope 2")
    ax.set_xlabel("eps")
    ax.set_ylabel("error")
    ax.set_title(f"{report.op_kind}: c_eff = {report.c_eff:.8g}", fontsize=9)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def run_figure(trajectory, record, path) -> Path:
    g = trajectory.grid
    fig, (a0, a1) = plt.subplots(1, 2, figsize=(8.5, 3.3))
    if g.d == 1:
        _profile(a0, g, trajectory.snapshots[0][2], color="0.6", lw=0.8, label="t = 0")
        _profile(a0, g, trajectory.final, color="tab:red", lw=1.2, label=f"t = {trajectory.snapshots[-1][1]:g}")
        a0.set_xlabel("x")
        a0.legend(fontsize=8)
    else:
        fig.colorbar(_image(a0, g, trajectory.final, f"t = {trajectory.snapshots[-1][1]:g}"), ax=a0)
    if record.t:
        a1.plot(record.t, record.energy, color="tab:green")
        a1.set_xlabel("t")
        a1.set_ylabel("energy")
    fig.tight_layout()
    return _save(fig, path)
