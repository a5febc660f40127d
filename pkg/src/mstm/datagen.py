"""Seeded sampling of simulation parameters and dataset generation."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields

import numpy as np

from .hydro.geometry import LATTICE_RANGES, POROUS_FLIER_SPEED, POROUS_RANGES, GeometryConfig
from .hydro.simulate import run_simulation

log = logging.getLogger(__name__)

# numerics presets; "toy" halves the mesh and keeps lattice struts >= 2 cells wide
PRESETS = {
    "default": {"grid": 240, "block": 4},
    "toy": {"grid": 120, "block": 2},
}
TOY_RANGES = {"lattice": {"porosity": (0.10, 0.80)}}

GEOMETRY_FIELDS = {f.name: f.type for f in fields(GeometryConfig)}


def default_ranges(kind, preset="default"):
    ranges = dict(POROUS_RANGES if kind == "porous" else LATTICE_RANGES)
    if preset == "toy":
        ranges.update(TOY_RANGES.get(kind, {}))
    return ranges


def sample_configs(n, seed, kind="lattice", preset="default", ranges=None, pinned=None):
    """``n`` geometry configs with parameters drawn uniformly over ``ranges``.

    Each index gets its own stream spawned from ``seed``, so config ``i``
    does not depend on ``n``.  Keys in ``pinned`` are fixed instead of drawn.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    if n < 0:
        raise ValueError("n must be >= 0")
    ranges = dict(default_ranges(kind, preset), **(ranges or {}))
    pinned = dict(pinned or {})
    base = {"kind": kind, **PRESETS[preset]}
    if kind == "porous":
        base["flier_speed"] = POROUS_FLIER_SPEED
    configs = []
    for child in np.random.SeedSequence(seed).spawn(n):
        rng = np.random.default_rng(child)
        values = dict(base)
        for name in sorted(ranges):
            lo, hi = ranges[name]
            values[name] = float(rng.uniform(lo, hi))
        values["rng_seed"] = int(rng.integers(2**31))
        values.update(pinned)
        configs.append(GeometryConfig(**values))
    return configs


def generate(configs, workers=1):
    """Simulate every config in order; ``workers > 1`` fans out over processes."""
    configs = list(configs)
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_simulation, configs))
    out = []
    for i, cfg in enumerate(configs):
        log.info("simulating %d/%d", i + 1, len(configs))
        out.append(run_simulation(cfg))
    return out
