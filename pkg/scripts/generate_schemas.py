#!/usr/bin/env python3
"""
Generate JSON Schema files from the Pydantic record models.

Every persisted record (config, dataset index and manifest, checkpoint
manifest, training log, reports and tables) is exported to JSON Schema
2020-12 under schemas/v1/ with a `urn:moad-fusion:schemas:v1:*` $id.
"""

from pathlib import Path

from moad_fusion.models.schemas import export_schemas


def main() -> None:
    """Generate all JSON schemas."""
    repo_root = Path(__file__).parent.parent
    schemas_dir = repo_root / "schemas" / "v1"

    print("Generating JSON Schemas from Pydantic models...\n")
    for path in export_schemas(schemas_dir):
        print(f"✓ Generated: {path}")

    print("\n✅ All schemas generated successfully!")
    print(f"   Output directory: {schemas_dir}")


if __name__ == "__main__":
    main()
