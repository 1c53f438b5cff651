#!/usr/bin/env python3
"""
Re-hash the artifacts listed in stage manifests.

Usage:
  python scripts/verify_manifest.py --manifest runs/run1/manifest_label.json
  python scripts/verify_manifest.py --run-dir runs/run1 [--concurrency 8]

Exit status is 0 when every listed artifact exists with its recorded hash.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import sys
from pathlib import Path
from typing import List, Tuple

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.errors import BondRiskError  # noqa: E402
from src.storage import artifact_store  # noqa: E402


def check_manifest(path: Path) -> Tuple[str, List[str]]:
    try:
        return (str(path), artifact_store.verify_manifest(path))
    except BondRiskError as e:
        return (str(path), [str(e)])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser()
    group = ap.add_mutually_exclusive_group(required=True)
    group.add_argument("--manifest", action="append", help="Manifest file (repeatable)")
    group.add_argument("--run-dir", help="Check every manifest_*.json in a run directory")
    ap.add_argument("--concurrency", type=int, default=4)
    args = ap.parse_args(argv)

    manifests = [Path(m) for m in args.manifest] if args.manifest else sorted(Path(args.run_dir).glob("manifest_*.json"))
    print(f"Verifying {len(manifests)} manifest(s)...")

    ok = 0
    fail = 0
    with concurrent.futures.ThreadPoolExecutor(max_workers=args.concurrency) as ex:
        for name, problems in ex.map(check_manifest, manifests):
            if problems:
                fail += 1
                print(f"❌ {name}")
                for problem in problems:
                    print(f"   - {problem}")
            else:
                ok += 1
                print(f"✅ {name}")

    print(f"Done. OK: {ok}, FAIL: {fail}")
    return 0 if fail == 0 and manifests else 1


if __name__ == "__main__":
    sys.exit(main())
