"""Two-stage training, checkpoints and inference."""
