"""In-memory tensor containers."""
