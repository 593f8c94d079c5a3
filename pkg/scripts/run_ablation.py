#!/usr/bin/env python3
"""Run the full ablation sweep on the frozen scenario suite.

Thin wrapper over `mttrack ablate`; writes ablation_table.csv plus one
curves_<config>.csv per cell into --out (default ./ablation_out). Pass
--quick for 30-frame scenarios when iterating.
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mttrack.cli import main

if __name__ == "__main__":
    argv = sys.argv[1:]
    if not any(a == "--out" for a in argv):
        argv += ["--out", "ablation_out"]
    sys.exit(main(["ablate", *argv]))
