"""Discrete Bochner Laplacians of line bundles over flat tori.

Lattice U(1) discretization of the magnetic Laplacian on ``L^p``, local
Dirichlet models at the magnetic wells, and the spectral diagnostics built on
them (spectrum comparison, decay profiles, Weyl counts, expansion fits).
"""

__version__ = "0.1.0"

from .analysis import (
    ComparisonReport,
    DecayProfile,
    ExpansionFit,
    agmon_profile,
    compare_spectra,
    fit_expansion,
    weyl_prediction,
)
from .connection import LinkField, PlaquetteFluxes, build_links, gauge_transform, plaquette_fluxes
from .eigensolve import SpectrumResult, counting_function, eigenpairs_below, full_spectrum, lowest_eigenpairs
from .geometry import (
    FieldSpec,
    FourierTerm,
    IntensityField,
    TorusDomain,
    WellDescriptor,
    check_prequantization,
    eval_field,
    intensity_field,
    locate_wells,
    skew_spectrum,
)
from .operators import (
    PatchSpec,
    SparseHermitian,
    assemble_bochner,
    assemble_dirichlet_patch,
    effective_band_value,
)
