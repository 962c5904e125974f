"""Report persistence: delimited records, JSON manifest, and figures.

CSV output is byte-stable for a fixed record stream: floats are rendered with
%.10g and field order is fixed per report kind.  The manifest is written
atomically (temp file + rename) and carries sha256 digests of every artifact
so a run can be verified and replayed.
"""

import hashlib
import json
import math
import os
import time

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from . import __version__

RECORD_KEYS = {
    "resistance": ["d", "n", "replica", "seed", "resistance", "tree_size",
                   "sites", "solver_iters", "residual", "status"],
    "gamma": ["d", "n", "replica", "seed", "resistance", "tree_size",
              "sites", "solver_iters", "residual", "status"],
    "volume": ["d", "n", "replica", "seed", "resistance", "tree_size",
               "sites", "solver_iters", "residual", "status"],
    "compare-dims": ["d", "n", "replica", "seed", "resistance", "tree_size",
                     "sites", "solver_iters", "residual", "status"],
    "intersections": ["d", "n", "replica", "seed", "count", "status"],
    "blocks": ["d", "n", "replica", "seed", "good", "tree_good",
               "failure_reason", "status"],
}

SUMMARY_KEYS = {
    "resistance": ["d", "n", "mean", "stderr", "replicas_ok"],
    "gamma": ["d", "n", "mean", "stderr", "replicas_ok"],
    "volume": ["d", "n", "mean", "stderr", "replicas_ok"],
    "compare-dims": ["d", "n", "mean", "stderr", "replicas_ok"],
    "intersections": ["d", "n", "mean", "second_moment", "stderr",
                      "p_zero", "replicas_ok"],
    "blocks": ["reps", "good", "tree_good", "tree_checked", "p_good",
               "p_tree_good"],
}


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.10g}"
    if v is None:
        return ""
    return str(v)


def format_csv(rows, keys) -> str:
    lines = [",".join(keys)]
    for row in rows:
        lines.append(",".join(format_value(row.get(k)) for k in keys))
    return "\n".join(lines) + "\n"


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _figure(report, path: str) -> bool:
    if report.kind == "blocks":
        hist = report.summary[0].get("failure_histogram", {}) if report.summary else {}
        fig, ax = plt.subplots(figsize=(5, 3.5))
        if hist:
            ax.bar([str(k) for k in hist], list(hist.values()), color="#4878a8")
        ax.set_xlabel("first failed condition")
        ax.set_ylabel("blocks")
        ax.set_title(f"block classification ({report.summary[0]['good']} good "
                     f"of {report.summary[0]['reps']})" if report.summary else "blocks")
    else:
        pts = [(s["n"], s["mean"], s.get("stderr", float("nan")))
               for s in report.summary if s.get("mean", 0) > 0]
        if not pts:
            return False
        fig, ax = plt.subplots(figsize=(5, 3.5))
        by_d = {}
        for s in report.summary:
            if s.get("mean", 0) > 0:
                by_d.setdefault(s.get("d", 0), []).append(s)
        for d, rows in sorted(by_d.items()):
            ns = [r["n"] for r in rows]
            means = [r["mean"] for r in rows]
            errs = [r.get("stderr", 0.0) for r in rows]
            ax.errorbar(ns, means, yerr=errs, marker="o", capsize=3, label=f"d={d}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("n")
        ax.set_ylabel("mean")
        ax.set_title(report.kind)
        if len(by_d) > 1:
            ax.legend()
        for name, fit in report.fits.items():
            if isinstance(fit, dict) and "slope" in fit:
                ax.annotate(f"{name}: slope {fit['slope']:.3f}",
                            xy=(0.03, 0.95 - 0.07 * list(report.fits).index(name)),
                            xycoords="axes fraction", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def write_report(report, outdir: str, name: str) -> dict:
    """Persist records.csv, summary.csv, a figure, and an atomic manifest."""
    os.makedirs(outdir, exist_ok=True)
    paths = {}
    rec_keys = RECORD_KEYS.get(report.kind, sorted(report.records[0]) if report.records else [])
    records_path = os.path.join(outdir, f"{name}_records.csv")
    with open(records_path, "w") as fh:
        fh.write(format_csv(report.records, rec_keys))
    paths["records"] = records_path

    sum_keys = SUMMARY_KEYS.get(report.kind, sorted(report.summary[0]) if report.summary else [])
    summary_path = os.path.join(outdir, f"{name}_summary.csv")
    with open(summary_path, "w") as fh:
        fh.write(format_csv(report.summary, sum_keys))
    paths["summary"] = summary_path

    fig_path = os.path.join(outdir, f"{name}.png")
    if _figure(report, fig_path):
        paths["figure"] = fig_path

    manifest = {
        "version": __version__,
        "kind": report.kind,
        "config": report.config,
        "fits": report.fits,
        "failures": report.failures,
        "invalid": report.invalid,
        "wall_clock_s": round(report.wall_clock, 3),
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "summary": report.summary,
        "digests": {k: _sha256(v) for k, v in paths.items()},
    }
    manifest_path = os.path.join(outdir, f"{name}_manifest.json")
    tmp = manifest_path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    os.replace(tmp, manifest_path)
    paths["manifest"] = manifest_path
    return paths
