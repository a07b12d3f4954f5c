"""Sparse Hermitian discretizations of the magnetic Laplacians.

Both operators use the nearest-neighbour stencil whose quadratic form is

    sum over edges |exp(i theta) u(x + e_mu) - u(x)|^2 / h_mu^2,

so row ``x`` has diagonal ``sum_mu 2 / h_mu^2`` and the entry
``-exp(i theta[x, mu]) / h_mu^2`` in column ``x + e_mu``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .connection import LinkField
from .errors import LengthMismatch, PatchOutOfBounds
from .geometry import FieldSpec, IntensityField, TorusDomain, WellDescriptor, integrate_rectangles

GERSHGORIN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SparseHermitian:
    """Hermitian matrix stored as its strict upper triangle plus a real diagonal."""

    size: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    diag: np.ndarray
    meta: dict = field(default_factory=dict)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        upper = sp.coo_matrix(
            (self.values, (self.rows, self.cols)), shape=(self.size, self.size)
        ).tocsr()
        full = upper + upper.conj().T + sp.diags(self.diag.astype(complex))
        full = full.tocsr()
        full.sum_duplicates()
        full.sort_indices()
        return full

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def matvec(self, v):
        return self.matrix @ v

    def gershgorin_lower(self) -> float:
        """Smallest left end of the Gershgorin intervals."""
        A = self.matrix
        offdiag = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(A.diagonal())
        return float(np.min(A.diagonal().real - offdiag))

    def to_coo_text(self) -> str:
        """All nonzeros as ``row col real imag`` lines, 0-based."""
        A = self.matrix.tocoo()
        order = np.lexsort((A.col, A.row))
        buf = io.StringIO()
        for r, c, v in zip(A.row[order], A.col[order], A.data[order]):
            buf.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")
        return buf.getvalue()


def _from_edges(size, edge_rows, edge_cols, edge_vals, diag, meta) -> SparseHermitian:
    edge_rows = np.asarray(edge_rows)
    edge_cols = np.asarray(edge_cols)
    edge_vals = np.asarray(edge_vals, dtype=complex)
    diag = np.asarray(diag, dtype=float).copy()
    loops = edge_rows == edge_cols
    if np.any(loops):
        # a self-loop contributes exp(i t) + exp(-i t) to the diagonal
        np.add.at(diag, edge_rows[loops], 2.0 * edge_vals[loops].real)
    keep = ~loops
    r, c, v = edge_rows[keep], edge_cols[keep], edge_vals[keep]
    lower = r > c
    r, c = np.where(lower, c, r), np.where(lower, r, c)
    v = np.where(lower, np.conj(v), v)
    op = SparseHermitian(size, r, c, v, diag, meta)
    low = op.gershgorin_lower()
    if low < -GERSHGORIN_TOL * max(1.0, float(np.max(np.abs(diag), initial=0.0))):
        raise ValueError(f"assembled operator is not diagonally dominant ({low:.3e})")
    return op


def _stencil(shape, spacing, theta, periodic: bool) -> SparseHermitian:
    shape = tuple(shape)
    size = int(np.prod(shape))
    index = np.arange(size).reshape(shape)
    h2 = np.asarray(spacing, dtype=float) ** 2
    rows, cols, vals = [], [], []
    for mu, n in enumerate(shape):
        nbr = np.roll(index, -1, axis=mu)
        phase = theta[..., mu]
        if periodic:
            src, dst, ph = index, nbr, phase
        else:
            sl = [slice(None)] * len(shape)
            sl[mu] = slice(0, n - 1)
            sl = tuple(sl)
            src, dst, ph = index[sl], nbr[sl], phase[sl]
        rows.append(src.ravel())
        cols.append(dst.ravel())
        vals.append(-np.exp(1j * ph.ravel()) / h2[mu])
    diag = np.full(size, np.sum(2.0 / h2))
    return _from_edges(
        size,
        np.concatenate(rows),
        np.concatenate(cols),
        np.concatenate(vals),
        diag,
        {"shape": shape, "spacing": tuple(float(v) for v in spacing)},
    )


def assemble_bochner(links: LinkField) -> SparseHermitian:
    """Periodic discrete Bochner Laplacian of the link field."""
    dom = links.domain
    op = _stencil(dom.shape, dom.spacing, links.theta, periodic=True)
    op.meta.update(kind="bochner", power=links.power)
    return op


# -- patches --------------------------------------------------------------


@dataclass(frozen=True)
class PatchSpec:
    """Box ``center + [-w, w]^d`` with ``grid_points`` interior nodes per axis.

    Nodes sit at ``-w + (m + 1) * h`` with ``h = 2 w / (grid_points + 1)``;
    the nodes at ``+-w`` carry the Dirichlet condition and are dropped.
    """

    well: WellDescriptor
    half_widths: tuple
    grid_points: tuple
    center: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "half_widths", tuple(float(v) for v in self.half_widths))
        object.__setattr__(self, "grid_points", tuple(int(v) for v in self.grid_points))
        if self.center is None:
            object.__setattr__(self, "center", tuple(self.well.location))
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        d = len(self.center)
        if len(self.half_widths) != d or len(self.grid_points) != d:
            raise PatchOutOfBounds("patch arrays must have one entry per axis")
        if any(w <= 0 for w in self.half_widths) or any(n < 1 for n in self.grid_points):
            raise PatchOutOfBounds("patch needs positive half widths and grid points")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def spacing(self) -> np.ndarray:
        return 2.0 * np.asarray(self.half_widths) / (np.asarray(self.grid_points) + 1)

    @property
    def size(self) -> int:
        return int(np.prod(self.grid_points))

    def offsets(self) -> np.ndarray:
        """Node displacements from the centre, shape ``(size, dim)``, C order."""
        axes = [
            -w + (np.arange(n) + 1) * h
            for w, n, h in zip(self.half_widths, self.grid_points, self.spacing)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def node_coordinates(self) -> np.ndarray:
        return np.asarray(self.center) + self.offsets()

    def check_bounds(self, domain: TorusDomain):
        if self.dim != domain.dim:
            raise PatchOutOfBounds("patch and torus dimensions differ")
        for axis, (w, L) in enumerate(zip(self.half_widths, domain.lengths)):
            if not w < 0.5 * L:
                raise PatchOutOfBounds(
                    f"half width {w} on axis {axis} does not fit in a period {L}"
                )


def patch_on_lattice(well: WellDescriptor, domain: TorusDomain, half_widths) -> PatchSpec:
    """Patch whose nodes coincide with torus nodes, centred at the node nearest the well."""
    h = domain.spacing
    center_idx = np.mod(np.round(np.asarray(well.location) / h), domain.grid_points)
    cells = np.floor(np.asarray(half_widths, dtype=float) / h + 1e-9).astype(int)
    if np.any(cells < 1):
        raise PatchOutOfBounds("half widths smaller than one torus cell")
    patch = PatchSpec(
        well,
        tuple(cells * h),
        tuple(2 * cells - 1),
        center=tuple(center_idx * h),
    )
    patch.check_bounds(domain)
    return patch


def torus_indices(patch: PatchSpec, domain: TorusDomain) -> np.ndarray:
    """Flat torus index of each patch node (patch must be lattice aligned)."""
    pos = patch.node_coordinates() / domain.spacing
    idx = np.round(pos)
    if np.max(np.abs(pos - idx)) > 1e-6:
        raise PatchOutOfBounds("patch nodes are not on the torus lattice")
    idx = np.mod(idx.astype(int), domain.grid_points)
    return np.ravel_multi_index(tuple(idx.T), domain.grid_points)


def validate_patch(patch: PatchSpec, field: IntensityField, eta: float, epsilon: float):
    """Check that the well's sublevel component plus ``2 * epsilon`` fits in the box."""
    dom = field.domain
    patch.check_bounds(dom)
    level = patch.well.b0 + eta
    inside = field.values <= level
    index = np.arange(dom.size).reshape(dom.shape)
    r, c = [], []
    for mu in range(dom.dim):
        nbr = np.roll(index, -1, axis=mu)
        both = inside & np.roll(inside, -1, axis=mu)
        r.append(index[both])
        c.append(nbr[both])
    r, c = np.concatenate(r), np.concatenate(c)
    graph = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(dom.size, dom.size))
    _, labels = connected_components(graph, directed=False)
    start = np.mod(np.round(np.asarray(patch.center) / dom.spacing).astype(int), dom.grid_points)
    start = int(np.ravel_multi_index(tuple(start), dom.grid_points))
    if not inside.ravel()[start]:
        raise PatchOutOfBounds("patch centre lies outside the sublevel set")
    members = np.flatnonzero(labels == labels[start])
    disp = dom.displacement(patch.center, dom.node_coordinates()[members])
    slack = np.asarray(patch.half_widths) - 2.0 * epsilon - np.abs(disp)
    if np.any(slack <= 0.0):
        raise PatchOutOfBounds(
            f"sublevel component (b <= {level:.6g}) plus 2*epsilon leaves the patch"
        )


def patch_link_phases(patch: PatchSpec, spec: FieldSpec, p: int) -> np.ndarray:
    """Cumulative-flux gauge from the patch corner; no seam is needed."""
    shape = patch.grid_points
    h = patch.spacing
    corners = patch.node_coordinates()
    theta = np.zeros(shape + (patch.dim,))
    for mu, nu in spec.planes():
        F = p * integrate_rectangles(spec, (mu, nu), corners, (h[mu], h[nu])).reshape(shape)
        theta[..., nu] += np.cumsum(F, axis=mu) - F
    return theta


def assemble_dirichlet_patch(patch: PatchSpec, spec: FieldSpec, p: int) -> SparseHermitian:
    patch.check_bounds(spec.domain)
    theta = patch_link_phases(patch, spec, p)
    op = _stencil(patch.grid_points, patch.spacing, theta, periodic=False)
    op.meta.update(kind="dirichlet", power=p, center=patch.center)
    return op


def effective_band_value(n, betas, convention: str = "2n+1") -> float:
    """``sum (2 n_l + 1) beta_l`` or, with ``convention="n"``, ``sum n_l beta_l``."""
    n = np.asarray(n, dtype=float)
    betas = np.asarray(betas, dtype=float)
    if n.shape != betas.shape:
        raise LengthMismatch(f"multi-index length {n.size} != {betas.size} betas")
    if convention == "2n+1":
        return float(np.sum((2 * n + 1) * betas))
    if convention == "n":
        return float(np.sum(n * betas))
    raise ValueError(f"unknown convention {convention!r}")


def lower_bound_sides(op: SparseHermitian, s, b_nodes, p: int, C: float):
    """Both sides of ``(1 + C p^-1/4) <D s, s> >= p sum (b - C p^-1/4) |s|^2``."""
    s = np.asarray(s)
    c = C * p ** -0.25
    energy = float(np.real(np.vdot(s, op.matvec(s))))
    lhs = (1.0 + c) * energy
    rhs = p * float(np.sum((np.asarray(b_nodes).ravel() - c) * np.abs(s) ** 2))
    return lhs, rhs
