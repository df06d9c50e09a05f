"""Evaluation tables and figures: per-instance CSV rows, aggregate markdown, tradeoff plots.

The CSV is the source of truth; markdown tables and figures are derived
from the same rows, never computed separately.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

EVAL_SCHEMA_VERSION = 1
EVAL_COLUMNS = [
    "instance", "rule", "welfare", "welfare_norm", "phi",
    "strong_ejr", "vacuous", "groups_considered", "runtime_ms",
]
AGGREGATE_COLUMNS = ["rule", "instances", "mean_welfare_norm", "mean_phi", "pareto"]


@dataclass(frozen=True)
class EvalRow:
    instance: str
    rule: str
    welfare: str
    welfare_norm: float
    phi: float
    strong_ejr: bool
    vacuous: bool
    groups_considered: int
    runtime_ms: float

    def as_record(self) -> dict:
        return {
            "instance": self.instance,
            "rule": self.rule,
            "welfare": self.welfare,
            "welfare_norm": f"{self.welfare_norm:.6f}",
            "phi": f"{self.phi:.6f}",
            "strong_ejr": int(self.strong_ejr),
            "vacuous": int(self.vacuous),
            "groups_considered": self.groups_considered,
            "runtime_ms": f"{self.runtime_ms:.3f}",
        }


def write_eval_csv(rows: list[EvalRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=EVAL_COLUMNS)
        writer.writeheader()
        writer.writerows(row.as_record() for row in rows)


def pareto_front(points: list[tuple[float, float]]) -> list[bool]:
    """Non-dominated flags when maximizing both coordinates."""
    flags = []
    for i, (x, y) in enumerate(points):
        dominated = any(
            (ox >= x and oy >= y) and (ox > x or oy > y)
            for j, (ox, oy) in enumerate(points)
            if j != i
        )
        flags.append(not dominated)
    return flags


def aggregate(rows: list[EvalRow]) -> list[dict]:
    """Per-rule means of normalized welfare and the fairness approximation."""
    order: list[str] = []
    grouped: dict[str, list[EvalRow]] = {}
    for row in rows:
        if row.rule not in grouped:
            order.append(row.rule)
            grouped[row.rule] = []
        grouped[row.rule].append(row)
    stats = []
    for rule in order:
        bucket = grouped[rule]
        stats.append({
            "rule": rule,
            "instances": len(bucket),
            "mean_welfare_norm": sum(r.welfare_norm for r in bucket) / len(bucket),
            "mean_phi": sum(r.phi for r in bucket) / len(bucket),
        })
    flags = pareto_front([(s["mean_welfare_norm"], s["mean_phi"]) for s in stats])
    for s, flag in zip(stats, flags):
        s["pareto"] = flag
    return stats


def write_aggregate_csv(stats: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=AGGREGATE_COLUMNS)
        writer.writeheader()
        for s in stats:
            writer.writerow({
                "rule": s["rule"],
                "instances": s["instances"],
                "mean_welfare_norm": f"{s['mean_welfare_norm']:.6f}",
                "mean_phi": f"{s['mean_phi']:.6f}",
                "pareto": int(s["pareto"]),
            })


def aggregate_markdown(stats: list[dict]) -> str:
    out = io.StringIO()
    out.write("| rule | instances | mean w' | mean phi | Pareto |\n")
    out.write("|---|---:|---:|---:|:---:|\n")
    for s in stats:
        star = "*" if s["pareto"] else ""
        out.write(
            f"| {s['rule']} | {s['instances']} | {s['mean_welfare_norm']:.3f} "
            f"| {s['mean_phi']:.3f} | {star} |\n"
        )
    return out.getvalue()


def render_tradeoff(stats: list[dict], path, title: str = "") -> None:
    """Scatter of mean normalized welfare vs mean fairness approximation.

    Pareto-optimal rules are circled in red, mirroring the usual way these
    tradeoffs are presented.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    xs = [s["mean_welfare_norm"] for s in stats]
    ys = [s["mean_phi"] for s in stats]
    ax.scatter(xs, ys, c="tab:blue", zorder=3)
    front = sorted(
        ((s["mean_welfare_norm"], s["mean_phi"]) for s in stats if s["pareto"]),
    )
    if front:
        ax.scatter([x for x, _ in front], [y for _, y in front],
                   facecolors="none", edgecolors="red", s=140, linewidths=1.6,
                   zorder=4, label="Pareto front")
        ax.plot([x for x, _ in front], [y for _, y in front],
                color="red", linewidth=0.8, alpha=0.6, zorder=2)
        ax.legend(loc="lower left", fontsize=8)
    for s in stats:
        ax.annotate(s["rule"], (s["mean_welfare_norm"], s["mean_phi"]),
                    textcoords="offset points", xytext=(4, 4), fontsize=7)
    ax.set_xlabel("mean normalized welfare")
    ax.set_ylabel("mean Strong-EJR approximation")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_fitness_curve(events: list[dict], path, title: str = "") -> None:
    """Best/mean fitness per generation from an engine event log."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    gens = [e["generation"] for e in events if e.get("event") == "generation"]
    best = [e["best"] for e in events if e.get("event") == "generation"]
    mean = [e["mean"] for e in events if e.get("event") == "generation"]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(gens, best, marker="o", label="best fitness")
    ax.plot(gens, mean, marker=".", linestyle="--", label="mean fitness")
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
