"""Report figures. Each function takes the rows written to a CSV and saves a PNG."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps PNG bytes identical across runs
_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def toxicity_histograms(rows, path):
    """``rows``: dicts with ``beta``, ``bin_lo``, ``bin_hi``, ``count``; log-scale y."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for beta in sorted({r["beta"] for r in rows}):
            sel = [r for r in rows if r["beta"] == beta]
            ax.stairs([r["count"] for r in sel], [sel[0]["bin_lo"]] + [r["bin_hi"] for r in sel],
                      label=f"beta = {beta:g}")
        ax.set_yscale("symlog", linthresh=1)
        ax.set_xlabel("classifier score")
        ax.set_ylabel("count")
        ax.legend()
        _save(fig, path)


_FAMILY_STYLE = {
    "Base": ("0.5", "s"),
    "Reference": ("0.7", "D"),
    "Target": ("k", "*"),
    "TSMC": ("tab:blue", "o"),
    "DPO": ("tab:orange", "^"),
    "GRPO": ("tab:green", "v"),
}


def _family(method):
    return method.split()[0]


def similarity_toxicity(rows, path):
    """One point per method, one colour per method family; baselines are labelled by beta."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        seen = set()
        for r in rows:
            fam = _family(r["method"])
            color, marker = _FAMILY_STYLE.get(fam, ("tab:red", "o"))
            big = fam == "Target"
            ax.errorbar(r["toxicity"], r["similarity"], xerr=r.get("toxicity_se", 0.0), fmt=marker,
                        ms=9 if big else 5, zorder=4 if big else 2, color=color, capsize=2,
                        label=None if fam in seen else fam)
            seen.add(fam)
            if fam == "TSMC":
                ax.annotate(r["method"].split()[-1], (r["toxicity"], r["similarity"]), fontsize=6,
                            xytext=(-8, 3), textcoords="offset points")
            elif "beta" in r:
                ax.annotate(f"{r['beta']:g}", (r["toxicity"], r["similarity"]), fontsize=6,
                            xytext=(3, 2), textcoords="offset points")
        ax.set_xlabel("mean toxicity")
        ax.set_ylabel("mean pairwise similarity")
        ax.legend(loc="upper left")
        _save(fig, path)


def particle_efficiency(rows, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for m in sorted({r["generation"] for r in rows}):
            sel = sorted((r for r in rows if r["generation"] == m), key=lambda r: r["K"])
            ax.errorbar([r["K"] for r in sel], [r["toxicity_mean"] for r in sel],
                        yerr=[r["toxicity_se"] for r in sel], marker="o", ms=3, capsize=2,
                        label=f"generation {m}")
        target = [r["target_toxicity"] for r in rows if "target_toxicity" in r]
        if target:
            ax.axhline(target[0], color="k", ls="--", lw=1, label="exact target")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("particles K")
        ax.set_ylabel("mean toxicity")
        ax.legend()
        _save(fig, path)


def kl_per_generation(rows, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        gens = [r["generation"] for r in rows]
        if all("exact_kl" in r for r in rows):
            ax.plot(gens, [r["exact_kl"] for r in rows], marker="o", label="exact")
        ax.errorbar(gens, [r["estimated_kl"] for r in rows], yerr=[r["estimated_kl_se"] for r in rows],
                    marker="s", ms=3, capsize=2, label="importance estimate")
        ax.set_xticks(gens)
        ax.set_xlabel("generation")
        ax.set_ylabel("KL(target || proposal)")
        ax.legend()
        _save(fig, path)
