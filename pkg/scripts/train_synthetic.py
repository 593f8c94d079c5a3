#!/usr/bin/env python3
"""Train the path predictor on synthetic constant-velocity tracks.

Thin wrapper over `mttrack train-combinet`; writes combinet.json and
loss_log.csv into --out (default ./combinet_out). Any train-combinet flag
passes through, e.g. --sequences, --seed, or --config for epoch overrides.
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mttrack.cli import main

if __name__ == "__main__":
    argv = sys.argv[1:]
    if not any(a == "--out" for a in argv):
        argv += ["--out", "combinet_out"]
    sys.exit(main(["train-combinet", *argv]))
