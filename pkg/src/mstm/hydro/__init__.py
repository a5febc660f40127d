"""Compressible-flow solver and impact-problem setup."""
