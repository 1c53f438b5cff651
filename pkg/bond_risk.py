#!/usr/bin/env python3
"""
Bond default-risk toolkit entry point.

Usage:
  python bond_risk.py pipeline --all --seed 7 --out runs/run1
  python bond_risk.py train --dataset runs/run1/dataset_w2.brw --variant ours --out ours.brc
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
