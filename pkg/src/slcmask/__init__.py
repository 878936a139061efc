"""Sequence local context instance segmentation at desk scale."""
