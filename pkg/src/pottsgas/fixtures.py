"""Builders for boundary data and paired states used by the coupling
experiments: in-window frozen collars, identical or independently drawn
pairs, and hand-placed polymer marks."""

from __future__ import annotations

import itertools

import numpy as np

from .screening import LadderSpec, PairedState, Polymer, PolymerSet
from .simulate import ParticleSystem, PhaseTarget, SimRegion

__all__ = [
    "fill_boundary",
    "fill_interior",
    "make_pair",
    "make_identical_pair",
    "make_mismatched_pair",
    "inject_polymer",
]


def _collar_cells(system: ParticleSystem):
    """Extended-coordinate cells of the frozen collar (within one interaction
    range of the box, outside it)."""
    w, n = system.w, system.n_int
    full = itertools.product(*([range(n + 2 * w)] * system.region.d))
    for cell in full:
        if any(c < w or c >= w + n for c in cell):
            yield cell


def fill_boundary(system: ParticleSystem, seed: int, jitter: int = 0):
    """Populate the collar with near-reference counts at uniform positions;
    ``jitter`` adds a uniform integer in [-jitter, jitter] per cell/species."""
    rng = np.random.default_rng(seed)
    region = system.region
    ell = region.ell_minus
    vol = region.cell_volume
    base = np.round(system.phase.rho_ref * vol).astype(int)
    for cell in _collar_cells(system):
        corner = (np.asarray(cell, dtype=float) - system.w) * ell
        for s in range(region.S):
            n = int(base[s])
            if jitter:
                n = max(0, n + int(rng.integers(-jitter, jitter + 1)))
            for _ in range(n):
                system._insert(corner + rng.random(region.d) * ell, s, frozen=True)


def fill_interior(system: ParticleSystem, seed: int):
    """Uniform in-window interior content at the rounded reference counts."""
    rng = np.random.default_rng(seed)
    system.seed_phase_configuration(rng=rng)


def make_pair(region: SimRegion, phase: PhaseTarget, boundary_seeds: tuple,
              interior_seeds: tuple, ladder: LadderSpec | None = None,
              jitter: int = 0) -> PairedState:
    s1 = ParticleSystem(region, phase, seed=0)
    s2 = ParticleSystem(region, phase, seed=1)
    fill_boundary(s1, boundary_seeds[0], jitter=jitter)
    fill_boundary(s2, boundary_seeds[1], jitter=jitter)
    fill_interior(s1, interior_seeds[0])
    fill_interior(s2, interior_seeds[1])
    return PairedState(s1, s2, ladder=ladder)


def make_identical_pair(region: SimRegion, phase: PhaseTarget, seed: int,
                        ladder: LadderSpec | None = None) -> PairedState:
    """Both chains carry byte-identical boundary and interior content."""
    return make_pair(region, phase, (seed, seed), (seed + 7, seed + 7), ladder=ladder)


def make_mismatched_pair(region: SimRegion, phase: PhaseTarget, seed: int,
                         ladder: LadderSpec | None = None, jitter: int = 0) -> PairedState:
    """Independently drawn boundaries (equal interior start; the coupled
    dynamics resamples it anyway)."""
    return make_pair(region, phase, (seed, seed + 13_371), (seed + 7, seed + 7),
                     ladder=ladder, jitter=jitter)


def inject_polymer(pair: PairedState, cubes, into_first: bool = True,
                   label: int = 0) -> PairedState:
    """Attach a polymer with the given cube support to one chain's marks."""
    poly = Polymer(support=frozenset(map(tuple, cubes)), label=label)
    existing = pair.polymers1 if into_first else pair.polymers2
    new_set = PolymerSet(list(existing.polymers) + [poly])
    if into_first:
        pair.polymers1 = new_set
    else:
        pair.polymers2 = new_set
    return pair
