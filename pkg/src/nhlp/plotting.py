"""PNG renderings of the CSV tables emitted by the verification suites."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# table name -> (x column, log-x, log-y, title)
_LAYOUT = {
    "decay_curve": ("gap", False, True, "||D_j D_k|| against |j - k|"),
    "phi_curve": ("N", False, True, "||I_band - Phi_N|| against N"),
    "hczo_curve": ("N", False, True, "HCZO constants of I_band - Phi_N"),
    "t1_battery": ("eps", True, True, "T(1) battery against truncation scale"),
    "paraproduct": ("m", True, False, "Paraproduct bounds against m"),
    "tuning": ("round", False, False, "Tuning rounds"),
    "square_function": ("p", False, False, "Square function ratios"),
    "energies": ("k", False, True, "Energies ||D_k f||^2"),
}


def _numeric(header, rows):
    cols = {}
    for j, name in enumerate(header):
        try:
            cols[name] = np.array([float(r[j]) for r in rows])
        except (TypeError, ValueError):
            continue
    return cols


def plot_table(name: str, header: list, rows: list, path) -> Path | None:
    """Render one table; returns the written path, or None when there is nothing numeric to draw."""
    path = Path(path)
    cols = _numeric(header, rows)
    if not rows or not cols:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    if name == "quasi_orth_hist":
        left, right, count = cols["left"], cols["right"], cols["count"]
        ax.bar(left, count, width=right - left, align="edge", edgecolor="black")
        ax.set_xlabel("r(f)")
        ax.set_ylabel("count")
        ax.set_title("Quasi-orthogonality ratios")
    else:
        xname, logx, logy, title = _LAYOUT.get(name, (header[0], False, False, name))
        x = cols.get(xname, np.arange(len(rows), dtype=float))
        scatter = name == "decay_curve"
        for key, y in cols.items():
            if key in (xname, "j", "k") and key != "norm":
                continue
            ok = np.isfinite(y)
            if logy:
                ok &= y > 0
            if not ok.any():
                continue
            if scatter:
                ax.plot(x[ok], y[ok], "o", ms=3, alpha=0.6, label=key)
            else:
                order = np.argsort(x[ok])
                ax.plot(x[ok][order], y[ok][order], "o-", ms=3, label=key)
        if logx and np.all(x > 0):
            ax.set_xscale("log")
        if logy and ax.lines:
            ax.set_yscale("log")
        ax.set_xlabel(xname)
        ax.set_title(title)
        if len(ax.lines) > 1:
            ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path
