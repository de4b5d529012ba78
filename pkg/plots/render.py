#!/usr/bin/env python3
"""Render experiment artifacts into publication-style figures.

Usage:
    render.py --kind <convergence|carleman|stability|reconstruction>
              --in <artifact.csv> [<more.csv> ...] --out <figure.png>

Consumes only the documented artifact contracts, never the producing
library:

    convergence.csv     axis,n,step,error
    scan.csv            lemma_id,lambda,s,lhs,rhs,ratio
    stability.csv       member,unknown_norm,snapshot_norm,aggregate,ratio,degenerate
    reconstruction.csv  x,truth,estimate

Exit codes: 0 rendered, 2 missing/mismatched columns or unreadable input.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

KINDS = ("convergence", "carleman", "stability", "reconstruction")

COLUMNS = {
    "convergence": ("axis", "n", "step", "error"),
    "carleman": ("lemma_id", "lambda", "s", "lhs", "rhs", "ratio"),
    "stability": ("member", "unknown_norm", "snapshot_norm", "aggregate", "ratio", "degenerate"),
    "reconstruction": ("x", "truth", "estimate"),
}


class ColumnError(Exception):
    """Input file does not match the documented column contract."""


def read_rows(path: Path, required: tuple[str, ...]) -> list[dict]:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ColumnError(f"{path}: cannot read input: {exc}") from exc
    reader = csv.DictReader(text.splitlines())
    found = reader.fieldnames or ()
    missing = [c for c in required if c not in found]
    if missing:
        raise ColumnError(
            f"{path}: missing columns {missing}; expected {list(required)}, "
            f"found {list(found)}"
        )
    rows = list(reader)
    if not rows:
        raise ColumnError(f"{path}: no data rows under columns {list(found)}")
    return rows


def fit_slope(steps: np.ndarray, errors: np.ndarray) -> float:
    """Least-squares slope of log(error) against log(step)."""
    return float(np.polyfit(np.log(steps), np.log(errors), 1)[0])


def _label(prefix: str, name: str, multi: bool) -> str:
    return f"{prefix}:{name}" if multi else name


def render_convergence(paths: list[Path], ax) -> dict:
    multi = len(paths) > 1
    slopes: dict[str, float] = {}
    for path in paths:
        rows = read_rows(path, COLUMNS["convergence"])
        by_axis: dict[str, list[tuple[float, float]]] = {}
        for row in rows:
            by_axis.setdefault(row["axis"], []).append((float(row["step"]), float(row["error"])))
        for axis_name, pts in sorted(by_axis.items()):
            pts.sort()
            steps = np.array([p[0] for p in pts])
            errors = np.array([p[1] for p in pts])
            label = _label(path.stem, axis_name, multi)
            slopes[label] = fit_slope(steps, errors)
            ax.loglog(steps, errors, marker="o", label=label)
    annotation = "\n".join(f"{k}: slope ≈ {v:.2f}" for k, v in slopes.items())
    ax.text(
        0.05, 0.95, annotation, transform=ax.transAxes,
        va="top", fontsize=9, bbox={"boxstyle": "round", "fc": "white", "alpha": 0.8},
    )
    ax.set_xlabel("step size")
    ax.set_ylabel("error")
    ax.legend(fontsize=8)
    return {"slopes": slopes, "annotation": annotation}


def render_carleman(paths: list[Path], ax) -> dict:
    multi = len(paths) > 1
    curves = 0
    for path in paths:
        rows = read_rows(path, COLUMNS["carleman"])
        groups: dict[tuple[str, str], list[tuple[float, float]]] = {}
        for row in rows:
            groups.setdefault((row["lemma_id"], row["lambda"]), []).append(
                (float(row["s"]), float(row["ratio"]))
            )
        for (lemma, lam), pts in sorted(groups.items()):
            pts.sort()
            s = np.array([p[0] for p in pts])
            ratio = np.array([p[1] for p in pts])
            live = np.isfinite(ratio)
            if not np.any(live):
                continue
            label = _label(path.stem, f"{lemma} λ={lam}", multi)
            ax.semilogx(s[live], ratio[live], marker=".", label=label)
            curves += 1
    ax.set_xlabel("s")
    ax.set_ylabel("lhs/rhs ratio")
    ax.legend(fontsize=7, ncols=2)
    return {"curves": curves}


def render_stability(paths: list[Path], ax_scatter, ax_hist) -> dict:
    members: list[int] = []
    ratios: list[float] = []
    for path in paths:
        for row in read_rows(path, COLUMNS["stability"]):
            if row["degenerate"] == "1":
                continue
            ratio = float(row["ratio"])
            if math.isfinite(ratio):
                members.append(int(row["member"]))
                ratios.append(ratio)
    if not ratios:
        raise ColumnError(f"{paths[0]}: every member is degenerate; nothing to plot")
    peak = int(np.argmax(ratios))
    ax_scatter.scatter(members, ratios, s=18)
    ax_scatter.scatter([members[peak]], [ratios[peak]], marker="*", s=140, zorder=3)
    ax_scatter.annotate(
        f"max ≈ {ratios[peak]:.3g}",
        (members[peak], ratios[peak]),
        textcoords="offset points", xytext=(6, 6), fontsize=9,
    )
    ax_scatter.set_xlabel("member")
    ax_scatter.set_ylabel("stability ratio")
    ax_hist.hist(ratios, bins=min(20, max(5, len(ratios) // 3)))
    ax_hist.set_xlabel("stability ratio")
    ax_hist.set_ylabel("count")
    return {"max_member": members[peak], "max_ratio": ratios[peak], "count": len(ratios)}


def render_reconstruction(paths: list[Path], ax) -> dict:
    multi = len(paths) > 1
    series = 0
    for path in paths:
        rows = read_rows(path, COLUMNS["reconstruction"])
        xs = np.array([float(r["x"]) for r in rows])
        truth = np.array([float(r["truth"]) for r in rows])
        estimate = np.array([float(r["estimate"]) for r in rows])
        ax.plot(xs, truth, label=_label(path.stem, "truth", multi))
        ax.plot(xs, estimate, linestyle="--", label=_label(path.stem, "estimate", multi))
        series += 2
    ax.set_xlabel("x")
    ax.set_ylabel("value")
    ax.legend(fontsize=8)
    return {"series": series}


def render(kind: str, inputs: list, out) -> dict:
    paths = [Path(p) for p in inputs]
    if kind == "stability":
        fig = Figure(figsize=(9, 4))
        ax_scatter, ax_hist = fig.subplots(1, 2)
        info = render_stability(paths, ax_scatter, ax_hist)
    else:
        fig = Figure(figsize=(6.5, 4.5))
        ax = fig.subplots()
        if kind == "convergence":
            info = render_convergence(paths, ax)
        elif kind == "carleman":
            info = render_carleman(paths, ax)
        elif kind == "reconstruction":
            info = render_reconstruction(paths, ax)
        else:
            raise ColumnError(f"unknown figure kind {kind!r}; expected one of {KINDS}")
    fig.suptitle(kind)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    return info


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="render experiment artifacts into figures")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="inputs", required=True, nargs="+", help="artifact CSVs")
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        info = render(args.kind, args.inputs, args.out)
    except ColumnError as exc:
        print(f"render: {exc}", file=sys.stderr)
        return 2
    summary = ", ".join(f"{k}={v}" for k, v in info.items() if not isinstance(v, dict))
    print(f"render: wrote {args.out} ({summary})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
