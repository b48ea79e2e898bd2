"""Record models for moad-fusion."""
