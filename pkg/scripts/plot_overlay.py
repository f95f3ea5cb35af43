"""Plot observed vs. predicted coarse trajectories for one evaluated run.

Usage: python scripts/plot_overlay.py output/eval/overlay_003.csv
"""
import sys
from pathlib import Path

import matplotlib.pyplot as plt

from graphebm.models import CASE_STUDY_LABELS, SUBPOP_LABELS
from graphebm.storage import read_outmigration, read_overlay

overlay_path = Path(sys.argv[1])
predicted, observed = read_overlay(overlay_path)
run_tag = overlay_path.stem.rsplit("_", 1)[-1]
years = range(observed.shape[0])

n_nodes = observed.shape[1]
fig, axes = plt.subplots(1, n_nodes + 1, figsize=(4 * (n_nodes + 1), 3.5))
for node in range(n_nodes):
    ax = axes[node]
    for s, label in enumerate(SUBPOP_LABELS):
        line, = ax.plot(years, observed[:, node, s] / 1000, label=f"{label} (ABM)")
        ax.plot(years, predicted[:, node, s] / 1000, "--", color=line.get_color())
    ax.set_title(CASE_STUDY_LABELS[node] if node < len(CASE_STUDY_LABELS) else f"node {node}")
    ax.set_xlabel("year")
axes[0].set_ylabel("thousands of people")
axes[0].legend(fontsize=7)

outmigration_path = overlay_path.with_name(f"outmigration_{run_tag}.csv")
if outmigration_path.exists():
    cum_obs, cum_pred = read_outmigration(outmigration_path)
    axes[-1].plot(years, cum_obs / 1000, label="ABM")
    axes[-1].plot(years, cum_pred / 1000, "--", label="model")
    axes[-1].set_title("cumulative outmigration")
    axes[-1].legend(fontsize=7)
fig.tight_layout()

out = overlay_path.with_suffix(".png")
fig.savefig(out, dpi=150)
print(f"Saved {out}")
