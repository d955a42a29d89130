"""CSV reports, gnuplot-style data files and matplotlib figures."""

import csv
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import LatencyStats  # noqa: E402
from .pipeline import QRow  # noqa: E402

Q_FIELDS = ("power_dbm", "sparsity", "stage", "ber", "q_db", "polarization", "n_bits")
COMPLEXITY_FIELDS = ("variant", "sparsity", "bops", "bops_reduction_pct", "bytes", "size_reduction_pct")
LATENCY_FIELDS = ("model_variant", "mean_s", "sigma_s", "per_symbol_us", "n_repeats", "n_inferences",
                  "n_symbols", "energy")

PLOT_STYLE = {
    "axes.labelsize": 11,
    "axes.titlesize": 11,
    "font.size": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.5,
    "figure.figsize": (6.4, 4.2),
    "axes.grid": True,
    "grid.linestyle": "--",
}


def _f(x):
    return repr(float(x))


def write_q_csv(path, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(Q_FIELDS)
        for r in rows:
            wr.writerow([_f(r.power_dbm), _f(r.sparsity), r.stage, _f(r.ber), _f(r.q_db), r.polarization, r.n_bits])


def read_q_csv(path):
    with open(path, newline="") as f:
        return [QRow(float(r["power_dbm"]), float(r["sparsity"]), r["stage"], float(r["ber"]),
                     float(r["q_db"]), r["polarization"], int(r["n_bits"])) for r in csv.DictReader(f)]


def write_complexity_csv(path, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(COMPLEXITY_FIELDS)
        for r in rows:
            wr.writerow([r.label, _f(r.sparsity), f"{r.total_bops:.2f}", f"{r.reduction_pct:.4f}",
                         r.model_bytes, f"{r.size_reduction_pct:.4f}"])


def read_complexity_csv(path):
    with open(path, newline="") as f:
        return [dict(variant=r["variant"], sparsity=float(r["sparsity"]), bops=float(r["bops"]),
                     bops_reduction_pct=float(r["bops_reduction_pct"]), bytes=int(r["bytes"]),
                     size_reduction_pct=float(r["size_reduction_pct"])) for r in csv.DictReader(f)]


def write_latency_csv(path, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(LATENCY_FIELDS)
        for name, st in rows:
            wr.writerow([name, _f(st.mean_s), _f(st.sigma_s), _f(st.per_symbol_us), st.n_repeats,
                         st.n_inferences, st.n_symbols, "not measured"])


def read_latency_csv(path):
    with open(path, newline="") as f:
        return [(r["model_variant"], LatencyStats(float(r["mean_s"]), float(r["sigma_s"]), float(r["per_symbol_us"]),
                                                  int(r["n_repeats"]), int(r["n_inferences"]), int(r["n_symbols"])))
                for r in csv.DictReader(f)]


def write_latency_raw(path, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(("model_variant", "repeat", "seconds_per_inference"))
        for name, st in rows:
            for k, t in enumerate(st.raw_s):
                wr.writerow([name, k, _f(t)])


def _powers(rows):
    return sorted({r.power_dbm for r in rows})


def write_plot_data(out, results):
    """One whitespace-separated data file per figure (``#`` comments, blank-line blocks)."""
    rows = [r for r in results.q_rows if r.polarization == "h"] or results.q_rows
    paths = []
    p = os.path.join(out, "fig_q_vs_sparsity.dat")
    with open(p, "w") as f:
        for power in _powers(rows):
            le = [r.q_db for r in rows if r.power_dbm == power and r.stage == "LE"]
            fp = [r.q_db for r in rows if r.power_dbm == power and r.stage == "FP32"]
            f.write(f"# power_dbm {power:g}  LE_q_db {le[0] if le else math.nan:.4f}  "
                    f"FP32_q_db {fp[0] if fp else math.nan:.4f}\n")
            f.write("# sparsity_pct q_pruned_db q_pruned_quant_db\n")
            sp = sorted({r.sparsity for r in rows if r.power_dbm == power and r.stage in ("pruned", "pruned+quant")})
            for s in sp:
                pr = [r.q_db for r in rows if r.power_dbm == power and r.stage == "pruned" and r.sparsity == s]
                pq = [r.q_db for r in rows if r.power_dbm == power and r.stage == "pruned+quant" and r.sparsity == s]
                f.write(f"{100 * s:g} {pr[0] if pr else math.nan:.4f} {pq[0] if pq else math.nan:.4f}\n")
            f.write("\n\n")
    paths.append(p)
    p = os.path.join(out, "fig_complexity.dat")
    with open(p, "w") as f:
        f.write("# variant sparsity_pct bops bops_reduction_pct bytes size_reduction_pct\n")
        for r in results.complexity:
            f.write(f"{r.label} {100 * r.sparsity:g} {r.total_bops:.2f} {r.reduction_pct:.4f} "
                    f"{r.model_bytes} {r.size_reduction_pct:.4f}\n")
    paths.append(p)
    p = os.path.join(out, "fig_latency.dat")
    with open(p, "w") as f:
        f.write("# variant mean_s sigma_s per_symbol_us\n")
        for name, st in results.latency:
            f.write(f"{name} {st.mean_s:.6g} {st.sigma_s:.6g} {st.per_symbol_us:.6g}\n")
    paths.append(p)
    return paths


def plot_figures(out, results):
    """Render PNG figures next to the CSVs; returns the written paths."""
    rows = [r for r in results.q_rows if r.polarization == "h"] or results.q_rows
    paths = []
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    with plt.rc_context(PLOT_STYLE):
        if rows:
            fig, ax = plt.subplots()
            for i, power in enumerate(_powers(rows)):
                c = colors[i % len(colors)]
                pq = sorted((r.sparsity, r.q_db) for r in rows
                            if r.power_dbm == power and r.stage == "pruned+quant" and r.sparsity > 0)
                pr = sorted((r.sparsity, r.q_db) for r in rows if r.power_dbm == power and r.stage == "pruned")
                if pq:
                    ax.plot([100 * s for s, _ in pq], [q for _, q in pq], "*:", color=c, label=f"pruned+INT8 {power:g} dBm")
                if pr:
                    ax.plot([100 * s for s, _ in pr], [q for _, q in pr], "o--", color=c, alpha=0.6,
                            label=f"pruned {power:g} dBm")
                for stage, ls in (("FP32", "-"), ("LE", ":")):
                    q = [r.q_db for r in rows if r.power_dbm == power and r.stage == stage]
                    if q:
                        ax.axhline(q[0], color=c, linestyle=ls, linewidth=1, label=f"{stage} {power:g} dBm")
            ax.set_xlabel("Sparsity [%]")
            ax.set_ylabel("Q-factor [dB]")
            ax.legend(loc="lower left", ncol=2)
            p = os.path.join(out, "q_vs_sparsity.png")
            fig.savefig(p, dpi=120, bbox_inches="tight")
            plt.close(fig)
            paths.append(p)
        if results.complexity:
            fig, ax = plt.subplots()
            labels = [f"{r.label}\n{100 * r.sparsity:g}%" for r in results.complexity]
            x = range(len(labels))
            ax.bar([i - 0.2 for i in x], [r.reduction_pct for r in results.complexity], 0.4, label="BoPs reduction")
            ax.bar([i + 0.2 for i in x], [r.size_reduction_pct for r in results.complexity], 0.4, label="size reduction")
            ax.set_xticks(list(x))
            ax.set_xticklabels(labels, fontsize=7)
            ax.set_ylabel("Reduction vs FP32 [%]")
            ax.legend()
            p = os.path.join(out, "complexity.png")
            fig.savefig(p, dpi=120, bbox_inches="tight")
            plt.close(fig)
            paths.append(p)
        if results.latency:
            fig, ax = plt.subplots()
            names = [n for n, _ in results.latency]
            ax.bar(names, [st.per_symbol_us for _, st in results.latency],
                   yerr=[st.sigma_s / st.n_symbols * 1e6 for _, st in results.latency], capsize=4)
            ax.set_ylabel("Latency per recovered symbol [us]")
            p = os.path.join(out, "latency.png")
            fig.savefig(p, dpi=120, bbox_inches="tight")
            plt.close(fig)
            paths.append(p)
    return paths


def emit_report(results, out, figures=True):
    """Write q_vs_sparsity.csv, complexity.csv, latency.csv (+ raw timings), data files and figures."""
    try:
        os.makedirs(out, exist_ok=True)
        write_q_csv(os.path.join(out, "q_vs_sparsity.csv"), results.q_rows)
        write_complexity_csv(os.path.join(out, "complexity.csv"), results.complexity)
        write_latency_csv(os.path.join(out, "latency.csv"), results.latency)
        write_latency_raw(os.path.join(out, "latency_raw.csv"), results.latency)
        write_plot_data(out, results)
        if figures:
            plot_figures(out, results)
    except OSError as e:
        raise OSError(f"cannot write reports to {out}: {e}") from e
