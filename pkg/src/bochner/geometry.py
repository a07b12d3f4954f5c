"""Flat tori, closed magnetic 2-forms and the magnetic intensity.

A field is stored as its coordinate components ``B[mu, nu]`` for ``mu < nu``,
each one a constant plus a finite Fourier sum.  A Fourier term attached to the
plane ``(mu, nu)`` may only oscillate along ``x_mu`` and ``x_nu``; with that
restriction every member of the family is closed, and the plaquette fluxes
can be integrated exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import yaml

from .errors import (
    DegenerateWell,
    FieldSpecError,
    NonAntisymmetric,
    NotPrequantized,
    RankJump,
    ZeroIntensity,
)

TWO_PI = 2.0 * math.pi

TOL_RANK = 1e-8
TOL_HESS = 1e-8
TOL_MIN = 1e-6
TOL_FLUX = 1e-8
TOL_B0 = 1e-10
R_MAX = 12
ANTISYM_TOL = 1e-12


@dataclass(frozen=True)
class TorusDomain:
    dim: int
    lengths: tuple
    grid_points: tuple

    def __post_init__(self):
        lengths = tuple(float(v) for v in self.lengths)
        points = tuple(int(v) for v in self.grid_points)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "grid_points", points)
        if not 2 <= self.dim <= 4:
            raise FieldSpecError(f"dimension must be 2..4, got {self.dim}")
        if len(lengths) != self.dim or len(points) != self.dim:
            raise FieldSpecError("lengths and grid_points must have one entry per axis")
        if any(v <= 0 for v in lengths) or any(v <= 0 for v in points):
            raise FieldSpecError("lengths and grid_points must be positive")

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.lengths) / np.asarray(self.grid_points)

    @property
    def shape(self) -> tuple:
        return self.grid_points

    @property
    def size(self) -> int:
        return int(np.prod(self.grid_points))

    def with_grid(self, grid_points) -> "TorusDomain":
        return TorusDomain(self.dim, self.lengths, tuple(grid_points))

    def node_coordinates(self) -> np.ndarray:
        """Continuum coordinates of all nodes, shape ``(size, dim)``, C order."""
        axes = [np.arange(n) * h for n, h in zip(self.grid_points, self.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cell_midpoints(self) -> np.ndarray:
        return self.node_coordinates() + 0.5 * self.spacing

    def reduce(self, x) -> np.ndarray:
        """Map points into the fundamental domain ``[0, L)``."""
        return np.mod(np.asarray(x, dtype=float), self.lengths)

    def displacement(self, x, y) -> np.ndarray:
        """Shortest periodic displacement ``y - x``."""
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        L = np.asarray(self.lengths)
        return d - L * np.round(d / L)


@dataclass(frozen=True)
class FourierTerm:
    """``cos_amp * cos(phase) + sin_amp * sin(phase)`` added to ``B[plane]``.

    ``phase = 2*pi * sum_r k_r x_r / L_r``.
    """

    plane: tuple
    wavevector: tuple
    cos_amp: float = 0.0
    sin_amp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "plane", tuple(int(v) for v in self.plane))
        for k in self.wavevector:
            if float(k) != int(k):
                raise FieldSpecError(f"wavevector {self.wavevector} is not integer")
        object.__setattr__(self, "wavevector", tuple(int(v) for v in self.wavevector))
        object.__setattr__(self, "cos_amp", float(self.cos_amp))
        object.__setattr__(self, "sin_amp", float(self.sin_amp))


def _check_plane(plane, dim):
    mu, nu = plane
    if not (0 <= mu < nu < dim):
        raise FieldSpecError(f"plane {plane} must satisfy 0 <= mu < nu < {dim}")


@dataclass(frozen=True)
class FieldSpec:
    domain: TorusDomain
    constant: dict = field(default_factory=dict)
    terms: tuple = ()

    def __post_init__(self):
        dim = self.domain.dim
        const = {}
        for plane, value in dict(self.constant).items():
            plane = tuple(int(v) for v in plane)
            _check_plane(plane, dim)
            const[plane] = float(value)
        object.__setattr__(self, "constant", const)
        terms = tuple(self.terms)
        for t in terms:
            _check_plane(t.plane, dim)
            if len(t.wavevector) != dim:
                raise FieldSpecError(f"wavevector {t.wavevector} has wrong length")
            off_plane = [k for r, k in enumerate(t.wavevector) if r not in t.plane]
            if any(off_plane):
                raise FieldSpecError(
                    f"term on plane {t.plane} oscillates off its plane: {t.wavevector}"
                )
        object.__setattr__(self, "terms", terms)
        res = closedness_residual(self)
        scale = max(max_abs_component(self), 1.0e-300)
        if res > 1e-10 * scale:
            raise FieldSpecError(f"discrete closedness residual {res:.3e} too large")

    @property
    def dim(self) -> int:
        return self.domain.dim

    def planes(self):
        return list(itertools.combinations(range(self.dim), 2))

    def with_domain(self, domain: TorusDomain) -> "FieldSpec":
        return FieldSpec(domain, self.constant, self.terms)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "dimension": self.dim,
            "lengths": list(self.domain.lengths),
            "grid_points": list(self.domain.grid_points),
            "constant": [
                {"plane": list(plane), "value": value}
                for plane, value in sorted(self.constant.items())
            ],
            "terms": [
                {
                    "plane": list(t.plane),
                    "wavevector": list(t.wavevector),
                    "cos": t.cos_amp,
                    "sin": t.sin_amp,
                }
                for t in self.terms
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FieldSpec":
        try:
            dim = int(data["dimension"])
            domain = TorusDomain(dim, tuple(data["lengths"]), tuple(data["grid_points"]))
            constant = {tuple(c["plane"]): c["value"] for c in data.get("constant") or []}
            terms = tuple(
                FourierTerm(
                    tuple(t["plane"]),
                    tuple(t["wavevector"]),
                    t.get("cos", 0.0),
                    t.get("sin", 0.0),
                )
                for t in data.get("terms") or []
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FieldSpecError(f"malformed field description: {exc!r}") from exc
        return cls(domain, constant, terms)

    def to_text(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_text(cls, text: str) -> "FieldSpec":
        return cls.from_dict(yaml.safe_load(text))


def _phase(spec: FieldSpec, term: FourierTerm, points: np.ndarray) -> np.ndarray:
    k = np.asarray(term.wavevector, dtype=float) / np.asarray(spec.domain.lengths)
    return TWO_PI * points @ k


def component_values(spec: FieldSpec, plane, points) -> np.ndarray:
    """``B[plane]`` at an ``(N, dim)`` array of points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.full(points.shape[0], spec.constant.get(tuple(plane), 0.0))
    for t in spec.terms:
        if t.plane != tuple(plane):
            continue
        ph = _phase(spec, t, points)
        out += t.cos_amp * np.cos(ph) + t.sin_amp * np.sin(ph)
    return out


def field_matrices(spec: FieldSpec, points) -> np.ndarray:
    """Coordinate matrices of the 2-form at many points, shape ``(N, d, d)``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = spec.dim
    mats = np.zeros((points.shape[0], d, d))
    for mu, nu in spec.planes():
        vals = component_values(spec, (mu, nu), points)
        mats[:, mu, nu] = vals
        mats[:, nu, mu] = -vals
    return mats


def eval_field(spec: FieldSpec, x) -> np.ndarray:
    x = spec.domain.reduce(x)
    return field_matrices(spec, x[None, :])[0]


def max_abs_component(spec: FieldSpec) -> float:
    """Upper bound of ``max |B_{mu nu}|`` from the coefficients."""
    best = 0.0
    for plane in spec.planes():
        bound = abs(spec.constant.get(plane, 0.0))
        bound += sum(math.hypot(t.cos_amp, t.sin_amp) for t in spec.terms if t.plane == plane)
        best = max(best, bound)
    return best


def _interval_factor(freq: np.ndarray, lower: np.ndarray, width: float) -> np.ndarray:
    """``int_lower^{lower+width} exp(i freq t) dt`` for scalar ``freq``."""
    if freq == 0.0:
        return np.full(lower.shape, width, dtype=complex)
    return np.exp(1j * freq * lower) * (np.exp(1j * freq * width) - 1.0) / (1j * freq)


def integrate_rectangles(spec: FieldSpec, plane, lower: np.ndarray, widths) -> np.ndarray:
    """Exact integral of ``B[plane]`` over axis-aligned rectangles.

    ``lower`` holds the rectangle corners, shape ``(N, dim)``; the rectangle
    spans ``widths`` along the two plane axes.
    """
    mu, nu = plane
    wmu, wnu = float(widths[0]), float(widths[1])
    lower = np.atleast_2d(lower)
    out = np.full(lower.shape[0], spec.constant.get(tuple(plane), 0.0) * wmu * wnu)
    L = spec.domain.lengths
    for t in spec.terms:
        if t.plane != tuple(plane):
            continue
        fmu = TWO_PI * t.wavevector[mu] / L[mu]
        fnu = TWO_PI * t.wavevector[nu] / L[nu]
        # exp(i phase) integrates to a product of 1D factors
        val = _interval_factor(fmu, lower[:, mu], wmu) * _interval_factor(fnu, lower[:, nu], wnu)
        out += t.cos_amp * val.real + t.sin_amp * val.imag
    return out


def closedness_residual(spec: FieldSpec) -> float:
    """Max over grid cubes of the discrete ``dB``, per unit face area."""
    d = spec.dim
    if d < 3:
        return 0.0
    dom = spec.domain
    h = dom.spacing
    pts = dom.node_coordinates()
    worst = 0.0
    for a, b, c in itertools.combinations(range(d), 3):

        def flux(plane, shift_axis):
            low = pts.copy()
            if shift_axis is not None:
                low[:, shift_axis] += h[shift_axis]
            return integrate_rectangles(spec, plane, low, (h[plane[0]], h[plane[1]])) / (
                h[plane[0]] * h[plane[1]]
            )

        res = (
            flux((b, c), a) - flux((b, c), None)
            - flux((a, c), b) + flux((a, c), None)
            + flux((a, b), c) - flux((a, b), None)
        )
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


# -- skew spectra ---------------------------------------------------------


def _positive_parts(herm_eigs: np.ndarray, d: int) -> np.ndarray:
    """Sorted-descending beta rows from eigenvalues of ``i*M`` (ascending)."""
    betas = herm_eigs[..., ::-1][..., : d // 2].copy()
    betas = np.clip(betas, 0.0, None)
    top = betas[..., :1]
    betas[betas <= TOL_RANK * top] = 0.0
    return betas


def skew_spectrum(m) -> np.ndarray:
    """Positive parts ``beta_1 >= ... >= beta_s > 0`` of the eigenvalues ``+-i beta``."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NonAntisymmetric(f"expected a square matrix, got shape {m.shape}")
    if np.any(np.abs(m + m.T) > ANTISYM_TOL):
        raise NonAntisymmetric("matrix is not antisymmetric")
    eigs = np.linalg.eigvalsh(1j * m)
    betas = _positive_parts(eigs, m.shape[0])
    return betas[betas > 0.0]


def batch_skew_spectra(mats: np.ndarray) -> np.ndarray:
    """Beta rows (zero padded) for a stack of antisymmetric matrices."""
    if np.any(np.abs(mats + np.swapaxes(mats, -1, -2)) > ANTISYM_TOL):
        raise NonAntisymmetric("stack contains a non-antisymmetric matrix")
    eigs = np.linalg.eigvalsh(1j * mats)
    return _positive_parts(eigs, mats.shape[-1])


def intensity_at(spec: FieldSpec, points) -> np.ndarray:
    """Magnetic intensity ``b`` at arbitrary points."""
    return batch_skew_spectra(field_matrices(spec, points)).sum(axis=-1)


@dataclass(frozen=True)
class IntensityField:
    domain: TorusDomain
    values: np.ndarray
    beta_fields: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()


def intensity_field(spec: FieldSpec) -> IntensityField:
    dom = spec.domain
    betas = batch_skew_spectra(field_matrices(spec, dom.node_coordinates()))
    values = betas.sum(axis=-1)
    values.setflags(write=False)
    betas.setflags(write=False)
    return IntensityField(
        dom, values.reshape(dom.shape), betas.reshape(dom.shape + (dom.dim // 2,))
    )


# -- wells ----------------------------------------------------------------


@dataclass(frozen=True)
class WellDescriptor:
    location: tuple
    b0: float
    betas: tuple
    rank: int
    kernel_dim: int
    nus: tuple
    hessian_eigs: tuple
    resonance_order: int
    hessian: np.ndarray = field(repr=False, compare=False, default=None)

    def summary(self) -> dict:
        return {
            "location": list(self.location),
            "b0": self.b0,
            "betas": list(self.betas),
            "rank": self.rank,
            "kernel_dim": self.kernel_dim,
            "nus": list(self.nus),
            "hessian_eigs": list(self.hessian_eigs),
            "resonance_order": self.resonance_order,
        }


def resonance_order(betas: Sequence[float], r_max: int = R_MAX) -> int:
    """Largest ``r <= r_max`` with no vanishing combination of order ``< r``.

    Betas coinciding within the rank tolerance give ``r = 2``.
    """
    betas = np.asarray(betas, dtype=float)
    s = betas.size
    if s == 0:
        return r_max
    tol = TOL_RANK * float(np.max(betas))
    if s > 1:
        diffs = np.abs(betas[:, None] - betas[None, :])[np.triu_indices(s, 1)]
        if np.any(diffs <= tol):
            return 2
    for order in range(1, r_max):
        for n in _multi_indices_l1(s, order):
            if abs(float(np.dot(n, betas))) <= tol:
                return order
    return r_max


def _multi_indices_l1(s: int, order: int):
    """Integer vectors in Z^s with l1 norm exactly ``order``."""
    for combo in itertools.product(range(-order, order + 1), repeat=s):
        if sum(abs(c) for c in combo) == order:
            yield np.asarray(combo)


def _gradient(f, x, step):
    d = x.size
    g = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = step[i]
        g[i] = (f(x + e) - f(x - e)) / (2 * step[i])
    return g


def _hessian(f, x, step):
    d = x.size
    H = np.empty((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = step[i]
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / step[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = step[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4 * step[i] * step[j])
    return H


def _local_minima(values: np.ndarray) -> np.ndarray:
    """Flat indices of nodes not exceeding any periodic neighbour."""
    mask = np.ones(values.shape, dtype=bool)
    for offset in itertools.product((-1, 0, 1), repeat=values.ndim):
        if not any(offset):
            continue
        mask &= values <= np.roll(values, offset, axis=tuple(range(values.ndim)))
    idx = np.flatnonzero(mask)
    return idx[np.argsort(values.ravel()[idx], kind="stable")]


def _refine_minimum(spec: FieldSpec, x0: np.ndarray, max_iter: int = 50):
    dom = spec.domain
    h = dom.spacing
    L = np.asarray(dom.lengths)
    f = lambda y: float(intensity_at(spec, y[None, :])[0])
    gstep = 1e-6 * L
    hstep = 1e-4 * L
    x = x0.copy()
    for _ in range(max_iter):
        H = _hessian(f, x, hstep)
        eig = np.linalg.eigvalsh(H)
        if eig[0] <= TOL_HESS:
            raise DegenerateWell(
                f"Hessian of b near {tuple(dom.reduce(x))} has eigenvalue {eig[0]:.3e}"
            )
        step = np.linalg.solve(H, _gradient(f, x, gstep))
        # stay within one cell of the current iterate
        scale = np.max(np.abs(step) / h)
        if scale > 1.0:
            step = step / scale
        x = x - step
        if np.max(np.abs(step) / L) < 1e-13:
            break
    H = _hessian(f, x, hstep)
    return dom.reduce(x), f(x), H


def _kernel_basis(m: np.ndarray, tol: float) -> np.ndarray:
    _, sv, vt = np.linalg.svd(m)
    return vt[sv <= tol].T


def locate_wells(field: IntensityField, spec: FieldSpec, r_max: int = R_MAX) -> list:
    """Nondegenerate global minima of the intensity, refined off the grid."""
    dom = spec.domain
    values = field.values
    bmin, bmax = float(values.min()), float(values.max())
    if bmin <= TOL_B0:
        raise ZeroIntensity(f"minimum intensity {bmin:.3e} violates b0 > 0")
    coords = dom.node_coordinates()
    refined = []
    for idx in _local_minima(values):
        x, bx, H = _refine_minimum(spec, coords[idx])
        if any(np.max(np.abs(dom.displacement(x, y) / dom.spacing)) < 0.5 for y, _, _ in refined):
            continue
        refined.append((x, bx, H))
    b0 = min(r[1] for r in refined)
    tol = TOL_MIN * max(bmax - bmin, abs(b0))
    wells = []
    for x, bx, H in sorted(refined, key=lambda r: tuple(r[0])):
        if bx > b0 + tol:
            continue
        wells.append(_describe_well(spec, x, bx, H, r_max))
    if not wells:
        raise ZeroIntensity("no global minimum found")
    return wells


def _describe_well(spec, x, bx, H, r_max):
    dom = spec.domain
    d = dom.dim
    H = 0.5 * (H + H.T)
    hess_eigs = np.linalg.eigvalsh(H)
    if hess_eigs[0] <= TOL_HESS:
        raise DegenerateWell(f"Hessian at {tuple(x)} has eigenvalue {hess_eigs[0]:.3e}")
    m = eval_field(spec, x)
    betas = skew_spectrum(m)
    if betas.size == 0 or bx <= TOL_B0:
        raise ZeroIntensity(f"intensity vanishes at {tuple(x)}")
    rank = 2 * betas.size
    # rank must be constant on a neighbourhood of one grid spacing
    offsets = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=float)
    nb = field_matrices(spec, x + offsets * dom.spacing)
    ranks = 2 * np.count_nonzero(batch_skew_spectra(nb) > 0.0, axis=-1)
    if np.any(ranks != rank):
        raise RankJump(f"rank varies near {tuple(x)}: {sorted(set(ranks.tolist()))}")
    kdim = d - rank
    nus = ()
    if kdim > 0:
        K = _kernel_basis(m, TOL_RANK * float(betas[0]))
        kh = np.linalg.eigvalsh(K.T @ H @ K)
        if np.any(kh <= TOL_HESS):
            raise DegenerateWell(f"kernel Hessian at {tuple(x)} is degenerate")
        nus = tuple(float(v) for v in np.sqrt(kh))
    return WellDescriptor(
        location=tuple(float(v) for v in x),
        b0=float(betas.sum()),
        betas=tuple(float(v) for v in betas),
        rank=rank,
        kernel_dim=kdim,
        nus=nus,
        hessian_eigs=tuple(float(v) for v in hess_eigs),
        resonance_order=resonance_order(betas, r_max),
        hessian=H,
    )


def point_descriptor(spec: FieldSpec, x, r_max: int = R_MAX) -> WellDescriptor:
    """Field data at an arbitrary point, without the well assumptions.

    Used for patches centred by hand (e.g. on a constant field, where ``b``
    has no isolated minimum).
    """
    dom = spec.domain
    x = dom.reduce(np.asarray(x, dtype=float))
    f = lambda y: float(intensity_at(spec, y[None, :])[0])
    H = _hessian(f, x, 1e-4 * np.asarray(dom.lengths))
    H = 0.5 * (H + H.T)
    betas = skew_spectrum(eval_field(spec, x))
    return WellDescriptor(
        location=tuple(float(v) for v in x),
        b0=float(betas.sum()),
        betas=tuple(float(v) for v in betas),
        rank=2 * betas.size,
        kernel_dim=dom.dim - 2 * betas.size,
        nus=(),
        hessian_eigs=tuple(float(v) for v in np.linalg.eigvalsh(H)),
        resonance_order=resonance_order(betas, r_max),
        hessian=H,
    )


# -- prequantization ------------------------------------------------------


def plane_flux(spec: FieldSpec, plane) -> float:
    """Flux of ``B`` through the coordinate 2-torus spanned by ``plane``."""
    mu, nu = plane
    area = spec.domain.lengths[mu] * spec.domain.lengths[nu]
    total = spec.constant.get(tuple(plane), 0.0)
    for t in spec.terms:
        if t.plane == tuple(plane) and not any(t.wavevector):
            total += t.cos_amp
    return total * area


def check_prequantization(spec: FieldSpec, tol_flux: float = TOL_FLUX) -> dict:
    """Degrees ``k`` with flux ``2*pi*k`` through every coordinate 2-cycle."""
    degrees = {}
    for plane in spec.planes():
        flux = plane_flux(spec, plane)
        k = round(flux / TWO_PI)
        residual = abs(flux - TWO_PI * k)
        if residual > tol_flux:
            raise NotPrequantized(plane, flux, residual)
        degrees[plane] = int(k)
    return degrees


# -- reference fields -----------------------------------------------------


def constant_field(domain: TorusDomain, values: dict) -> FieldSpec:
    return FieldSpec(domain, values, ())


def single_well(domain: TorusDomain) -> FieldSpec:
    """``B_01 = 2pi (2 + (2 - cos 2pi x - cos 2pi y) / 2)``, minimum ``4pi`` at 0."""
    return _well_family(domain, kx=1)


def two_well(domain: TorusDomain) -> FieldSpec:
    """``B_01 = 2pi (2 + (2 - cos 4pi x - cos 2pi y) / 2)``, minima at x = 0, 1/2."""
    return _well_family(domain, kx=2)


def _well_family(domain, kx):
    if domain.dim != 2:
        raise FieldSpecError("reference well fields are two-dimensional")
    Lx, Ly = domain.lengths
    # cos(2pi kx x) needs an integer wavenumber on the given period
    wx = kx * Lx
    if abs(wx - round(wx)) > 1e-12 or abs(Ly - round(Ly)) > 1e-12:
        raise FieldSpecError("reference wells need integer lengths")
    return FieldSpec(
        domain,
        {(0, 1): 3.0 * TWO_PI},
        (
            FourierTerm((0, 1), (round(wx), 0), cos_amp=-math.pi),
            FourierTerm((0, 1), (0, round(Ly)), cos_amp=-math.pi),
        ),
    )


def grid_rule_points(max_b: float, p: int, length: float, factor: float = 8.0) -> int:
    """Minimum nodes per axis keeping the flux per plaquette small."""
    return int(math.ceil(factor * math.sqrt(p * max_b) * length / TWO_PI))


def check_grid_rule(domain: TorusDomain, max_b: float, p: int, factor: float = 8.0) -> list:
    """Axes violating the resolution rule, as ``(axis, have, need)`` tuples."""
    bad = []
    for axis, (n, L) in enumerate(zip(domain.grid_points, domain.lengths)):
        need = grid_rule_points(max_b, p, L, factor)
        if n < need:
            bad.append((axis, n, need))
    return bad
