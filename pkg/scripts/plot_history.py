"""Plot training and validation loss from a train/history.csv file."""
import sys
from pathlib import Path

import matplotlib.pyplot as plt

from graphebm.storage import read_history

history_path = Path(sys.argv[1] if len(sys.argv) > 1 else "output/train/history.csv")
history = read_history(history_path)

fig, ax = plt.subplots(figsize=(7, 4))
ax.semilogy(history["epoch"], history["train_loss"], label="train")
ax.semilogy(history["epoch"], history["val_loss"], label="validation")
if "best_val_loss" in history:
    ax.semilogy(history["epoch"], history["best_val_loss"], "k--", lw=0.8, label="best validation")
best = history["val_loss"].idxmin()
ax.axvline(history["epoch"][best], color="grey", lw=0.8)
ax.set_xlabel("epoch")
ax.set_ylabel("summed squared error")
ax.legend()
fig.tight_layout()

out = history_path.with_suffix(".png")
fig.savefig(out, dpi=150)
print(f"Saved {out} (best epoch {history['epoch'][best]})")
