"""Run reports: JSON summary, per-iteration CSV trace, convergence figures."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


@dataclass
class RunReport:
    """Summary of one CLI stylization run, mirroring the runtime-table columns."""

    input: str
    n_vertices: int
    n_faces: int
    lam: float
    coarse_faces: int | str     # face budget of the coarse solve, or "full"
    iterations: int
    converged: bool
    pre_seconds: float
    online_seconds: float
    final_rel_displacement: float
    final_energy: float
    cubeness_before: float
    cubeness_after: float

    def to_json(self) -> str:
        data = asdict(self)
        data["lambda"] = data.pop("lam")
        return json.dumps(data, indent=2)


TRACE_FIELDS = [
    "iter", "rel_displacement", "rel_displacement_bbox", "energy",
    "arap_before_global", "arap_after_global", "primal_residual",
    "cubeness", "millis", "inner_iterations_mean", "nonconverged_fits",
]


def write_trace_csv(trace: list[dict], path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for record in trace:
            writer.writerow(record)


def save_convergence_figure(trace: list[dict], path: str, stop_tol: float = 3e-3,
                            title: str | None = None):
    """Two-panel convergence plot: relative displacement and energy/cubeness."""
    iters = [r["iter"] for r in trace]
    rel = [max(r["rel_displacement"], 1e-16) for r in trace]
    energy = [r["energy"] for r in trace]
    cubeness = [r["cubeness"] for r in trace]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    ax1.semilogy(iters, rel, color="#2c6fbb", lw=1.4)
    ax1.axhline(stop_tol, color="#bb3e2c", ls="--", lw=1.0, label=f"stop = {stop_tol:g}")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("relative displacement")
    ax1.legend(frameon=False, fontsize=8)
    ax1.grid(alpha=0.25)

    ax2.plot(iters, energy, color="#2c6fbb", lw=1.4, label="energy")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("energy")
    ax2.grid(alpha=0.25)
    ax3 = ax2.twinx()
    ax3.plot(iters, cubeness, color="#3a9e4e", lw=1.2, label="cubeness")
    ax3.set_ylabel("cubeness score")
    lines = ax2.get_lines() + ax3.get_lines()
    ax2.legend(lines, [ln.get_label() for ln in lines], frameon=False, fontsize=8)

    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
