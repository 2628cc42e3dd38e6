"""Walkthrough: driving experiments through the harness.

Runs the Stuart-Landau spectrum and the Taylor-order convergence study from
the shipped configs, exactly as ``sdmd-lab`` would, and summarises the
reports.

    python demos/harness_runs.py [output_dir]
"""

import json
import sys
from pathlib import Path

from sdmd.harness.cli import main as sdmd_lab

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(command, config, out):
    code = sdmd_lab([command, "--config", str(CONFIGS / config), "--out", str(out)])
    if code != 0:
        raise SystemExit(f"{command} {config} exited with {code}")
    return json.loads((out / "report.json").read_text())


def main(root):
    root = Path(root)
    sl = run("spectrum", "stuart_landau.json", root / "stuart_landau")
    print("Stuart-Landau l=0 ladder (Im should be 0.75 n):")
    for row in sl["matches"]:
        print(f"  {row['label']:>5}  {row['re_estimate']:+.4f} {row['im_estimate']:+.4f}j  error {row['error']:.3f}")

    dt = run("convergence", "convergence_dt.json", root / "convergence_dt")
    s = dt["slopes"][0]
    print(f"Taylor residual slopes: first order {s['slope_first']:.2f}, second order {s['slope_second']:.2f}")
    print(f"reports under {root}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "results/demos")
