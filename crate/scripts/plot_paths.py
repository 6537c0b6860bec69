"""Plot the sample-path bundles and cost trace written by `mindisp run`.

Usage: python scripts/plot_paths.py <artifact dir> [output.png]
"""

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def load(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def main() -> None:
    out_dir = Path(sys.argv[1])
    target = Path(sys.argv[2]) if len(sys.argv) > 2 else out_dir / "paths.png"

    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    for ax, name in zip(axes[:2], ["paths_initial.csv", "paths_learned.csv"]):
        df = load(out_dir / name)
        for _, path in df.groupby("particle"):
            ax.plot(path["time"], path["x_1"], lw=0.6, alpha=0.6)
        ax.set_title(name.removesuffix(".csv"))
        ax.set_xlabel("t")
        ax.set_ylabel("x_1")

    trace = load(out_dir / "cost_trace.csv")
    axes[2].errorbar(trace["iteration"], trace["cost"], yerr=trace["std_error"], marker="o", label="cost")
    axes[2].plot(trace["iteration"], trace["best_so_far"], ls="--", label="best so far")
    axes[2].set_xlabel("iteration")
    axes[2].legend()

    fig.tight_layout()
    fig.savefig(target, dpi=120)
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
