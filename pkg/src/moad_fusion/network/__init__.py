"""Tokenizers, shared decoder, box heads and the modality ensemble."""
