"""Summary figures rendered alongside the delimited report output."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def bench_figure(records, path):
    """Linear iterations per Newton step, grouped by method and level."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    markers = {"cg": "o", "mgcg": "s"}
    for rec in records:
        for n, rep in zip(rec.levels, rec.reports):
            iters = [it.lin_iters for it in rep.iterations
                     if it.lin_iters > 0]
            if not iters:
                continue
            label = (f"{rec.method} n={n} beta={rec.params.beta:g}"
                     f" gp={rec.params.gamma_p:g}")
            ax.plot(range(1, len(iters) + 1), iters,
                    marker=markers.get(rec.method, "x"), label=label)
    ax.set_xlabel("Newton step")
    ax.set_ylabel("linear iterations")
    ax.set_yscale("log")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def spectral_figure(rows, path):
    """Operator gap and spectral distance against mesh size."""
    ok = [r for r in rows if not r["nc"]]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    if ok:
        h = np.array([1.0 / r["n"] for r in ok])
        ax.loglog(h, [r["opnorm"] for r in ok], "o-",
                  label="operator norm gap")
        ax.loglog(h, [r["distance"] for r in ok], "s-",
                  label="spectral distance")
        ref = ok[0]["opnorm"] / h[0] ** 2
        ax.loglog(h, ref * h ** 2, "k--", alpha=0.5, label="h^2 reference")
    ax.set_xlabel("h")
    ax.set_ylabel("gap")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def mms_figure(rows, path):
    """Velocity and pressure errors against mesh size with rate guides."""
    h = np.array([1.0 / r["n"] for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(h, [r["vel_l2"] for r in rows], "o-", label="velocity L2")
    ax.loglog(h, [r["vel_h1"] for r in rows], "s-", label="velocity H1")
    ax.loglog(h, [r["pres_l2"] for r in rows], "^-", label="pressure L2")
    for p, style in ((3, "k--"), (2, "k:")):
        ref = rows[0]["vel_l2" if p == 3 else "vel_h1"] / h[0] ** p
        ax.loglog(h, ref * h ** p, style, alpha=0.5, label=f"h^{p}")
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
