"""PNG figures for the CLI tables, drawn from the rows already computed."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def _scan_nmax(rows, meta, ax):
    n = [r["n_max"] for r in rows]
    for key in rows[0]:
        if key.startswith("F_"):
            ax.plot(n, [r[key] for r in rows], marker="o", label=key)
    ax.axhline(0.5, color="grey", lw=0.8, ls=":")
    ax.set_xscale("log")
    ax.set_xlabel("n_max")
    ax.set_ylabel("fidelity")
    ax.legend(fontsize=7, loc="lower left")
    twin = ax.twinx()
    twin.plot(n, [r["p_pair"] for r in rows], "k--", label="p_pair")
    twin.errorbar(n, [r["p_pair_mc"] for r in rows], [r["p_pair_mc_stderr"] for r in rows],
                  fmt="k.", label="p_pair (MC)")
    twin.set_yscale("log")
    twin.set_ylabel("pair probability")


def _scan_transmission(rows, meta, ax):
    pt = [r["p_t"] for r in rows]
    for key, style in (("p_pair_limit", ":"), ("p_pair_asyn", "-o"), ("p_pair_syn", "-s")):
        ax.plot(pt, [r[key] for r in rows], style, label=key)
    ax.set_yscale("log")
    ax.set_xlabel("channel transmission")
    ax.set_ylabel("pair probability")
    ax.legend(fontsize=8)


def _thresholds(rows, meta, ax):
    labels = [f"{r['scenario']}: {r['quantity']}" for r in rows]
    vals = [r["threshold"] if r["threshold"] is not None else np.nan for r in rows]
    y = np.arange(len(rows))
    ax.barh(y, vals)
    for yi, v in zip(y, vals):
        if np.isnan(v):
            ax.text(0.01, yi, "never", va="center", fontsize=7,
                    transform=ax.get_yaxis_transform())
    ax.set_yticks(y, labels, fontsize=6)
    ax.set_xscale("log")
    ax.set_xlabel("n_max threshold")


def _simulate(rows, meta, ax):
    hist = np.asarray(meta["trials_histogram"], dtype=float)
    k = np.arange(1, hist.size + 1)
    ax.bar(k, hist, width=1.0, label="successes")
    if meta.get("trial_weights") is not None:
        ax.plot(k, hist.sum() * np.asarray(meta["trial_weights"]), "r-", label="expected")
    ax.set_xlabel("trials used")
    ax.set_ylabel("count")
    ax.legend(fontsize=8)


def _fit(rows, meta, ax):
    pts = np.asarray(meta["curve"], dtype=float)
    ax.errorbar(pts[:, 0], pts[:, 1], pts[:, 2], fmt="o", label="data")
    ax.set_xscale("log")
    ax.set_xlabel("n_max")
    ax.set_ylabel("fidelity")
    text = "\n".join(f"{r['parameter']} = {r['value']:.5g} ± {r['error']:.2g}" for r in rows)
    ax.text(0.03, 0.05, text, transform=ax.transAxes, fontsize=8)


def _tomography(rows, meta, ax):
    re = np.asarray(meta["rho_real"])
    d = re.shape[0]
    im = ax.imshow(re, cmap="RdBu_r", vmin=-0.5, vmax=0.5)
    ax.set_xticks(range(d), [format(i, f"0{int(np.log2(d))}b") for i in range(d)], fontsize=7)
    ax.set_yticks(range(d), [format(i, f"0{int(np.log2(d))}b") for i in range(d)], fontsize=7)
    ax.set_title(f"Re rho, F = {rows[0]['fidelity']:.4f}")
    plt.colorbar(im, ax=ax)


def _budget(rows, meta, ax):
    keys = [k for k in rows[0] if k not in ("atom",)]
    x = np.arange(len(keys))
    for i, r in enumerate(rows):
        ax.bar(x + 0.4 * i, [r[k] for k in keys], width=0.4, label=r["atom"])
    ax.set_xticks(x + 0.2, keys, rotation=60, fontsize=7)
    ax.set_yscale("log")
    ax.legend(fontsize=8)


_PLOTTERS = {
    "scan-nmax": _scan_nmax,
    "scan-transmission": _scan_transmission,
    "thresholds": _thresholds,
    "simulate": _simulate,
    "fit": _fit,
    "tomography": _tomography,
    "budget": _budget,
}


def plot_command(command: str, rows: list[dict], meta: dict, path) -> None:
    size = (8.0, 6.0) if command == "thresholds" else (6.4, 4.2)
    fig, ax = plt.subplots(figsize=size, layout="constrained")
    _PLOTTERS[command](rows, meta, ax)
    _save(fig, path)
