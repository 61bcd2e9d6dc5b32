"""Bundled data files (image subset, event fixtures)."""
