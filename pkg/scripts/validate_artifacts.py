#!/usr/bin/env python3
"""
Validate emitted JSON artifacts against the Pydantic record models.

Usage:
    python scripts/validate_artifacts.py [RUN_DIR ...]

Walks each run directory (default: ./runs) for *.json files and validates
every report, table, config and dataset manifest it finds. Install the
`validation` extra to also check them against the generated JSON Schemas.
"""

import sys
from pathlib import Path
from typing import List

from moad_fusion.models.schemas import validate_artifact


def validate_file(file_path: Path) -> bool:
    try:
        record = validate_artifact(file_path)
        print(f"✓ Valid: {file_path} ({type(record).__name__})")
        return True
    except Exception as e:
        print(f"✗ Invalid: {file_path}")
        print(f"  Error: {e}")
        return False


def main(argv: List[str]) -> int:
    """Validate all artifact files under the given run directories."""
    roots = [Path(a) for a in argv] or [Path("runs")]

    print("Validating artifacts using Pydantic models...\n")

    files = sorted(p for root in roots for p in root.rglob("*.json"))
    if not files:
        print("⚠ No artifact files found")
        return 1

    valid_count = 0
    invalid_count = 0
    for path in files:
        if validate_file(path):
            valid_count += 1
        else:
            invalid_count += 1

    print(f"\n{'='*60}")
    print(f"Results: {valid_count} valid, {invalid_count} invalid")
    print(f"{'='*60}")

    return 0 if invalid_count == 0 else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
