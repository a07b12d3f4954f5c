"""Composite steps shared by the CLI and the acceptance runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import ComparisonReport, compare_spectra
from .connection import build_links, plaquette_fluxes
from .eigensolve import SpectrumResult, eigenpairs_below, lowest_eigenpairs
from .geometry import (
    FieldSpec,
    IntensityField,
    grid_rule_points,
    intensity_field,
    locate_wells,
    max_abs_component,
    point_descriptor,
)
from .operators import (
    SparseHermitian,
    assemble_bochner,
    assemble_dirichlet_patch,
    patch_on_lattice,
    validate_patch,
)


def torus_operator(spec: FieldSpec, p: int) -> SparseHermitian:
    return assemble_bochner(build_links(plaquette_fluxes(spec), p))


def max_intensity_bound(spec: FieldSpec) -> float:
    """Upper bound on ``b`` (sum of the moduli of all components)."""
    return max_abs_component(spec) * len(spec.planes())


def refined_spec(spec: FieldSpec, p: int, factor: float = 8.0, points: int = None) -> FieldSpec:
    """Same field on a grid obeying the resolution rule (even point counts)."""
    dom = spec.domain
    if points is None:
        bmax = max_intensity_bound(spec)
        n = [grid_rule_points(bmax, p, L, factor) for L in dom.lengths]
        n = [v + v % 2 for v in n]
    else:
        n = [int(points)] * dom.dim
    return spec.with_domain(dom.with_grid(tuple(n)))


@dataclass(frozen=True)
class PatchSetup:
    patches: list
    wells: list
    field: IntensityField


def build_patches(
    spec: FieldSpec,
    half_widths,
    eta: float = None,
    epsilon: float = None,
    centers=None,
    validate: bool = True,
) -> PatchSetup:
    """One lattice-aligned Dirichlet patch per well (or per explicit centre)."""
    field = intensity_field(spec)
    if centers:
        wells = [point_descriptor(spec, c) for c in centers]
    else:
        wells = locate_wells(field, spec)
    patches = []
    for well in wells:
        patch = patch_on_lattice(well, spec.domain, half_widths)
        if validate:
            validate_patch(patch, field, eta, epsilon)
        patches.append(patch)
    return PatchSetup(patches, wells, field)


@dataclass(frozen=True)
class ComparisonRun:
    full: SpectrumResult
    locals: list
    report: ComparisonReport
    setup: PatchSetup


def run_comparison(
    spec: FieldSpec,
    p: int,
    eta: float,
    epsilon: float,
    half_widths,
    tol: float = 1e-9,
    seed: int = 0,
    centers=None,
    validate: bool = True,
    b0: float = None,
    start_count: int = 16,
    max_count: int = 2000,
) -> ComparisonRun:
    """Torus spectrum against the direct sum of the patch spectra.

    Both are computed past ``(b0 + 2 eta) p`` and compared at ``(b0 + eta) p``.
    """
    setup = build_patches(spec, half_widths, eta, epsilon, centers, validate)
    if b0 is None:
        b0 = min(w.b0 for w in setup.wells)
    upper = (b0 + 2.0 * eta) * p
    solve = lambda op: eigenpairs_below(
        op, upper, tol=tol, seed=seed, start_count=start_count, max_count=max_count
    )
    full = solve(torus_operator(spec, p))
    locals_ = [solve(assemble_dirichlet_patch(patch, spec, p)) for patch in setup.patches]
    report = compare_spectra(full, locals_, p, eta, b0)
    return ComparisonRun(full, locals_, report, setup)


def ground_state(spec: FieldSpec, p: int, tol: float = 1e-9, seed: int = 0, count: int = 1) -> SpectrumResult:
    """Lowest eigenpairs of the torus operator with normalized vectors."""
    return lowest_eigenpairs(torus_operator(spec, p), count, tol=tol, want_vectors=True, seed=seed)


def node_intensity(spec: FieldSpec) -> np.ndarray:
    return intensity_field(spec).values.ravel()
