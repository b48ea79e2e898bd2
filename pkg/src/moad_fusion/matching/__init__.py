"""Hungarian set matching and detection losses."""
