"""Workbench for tag-aware toxic meme moderation pipelines."""

__version__ = "0.1.0"
