"""Synthetic BEV world: scenes, sensor renderers, corruptions and dataset files."""
