"""Spectral comparison, decay profiles, Weyl counts and expansion fits."""

from __future__ import annotations

import io
import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .eigensolve import SpectrumResult, counting_function
from .errors import (
    EmptySublevel,
    IllConditioned,
    OddDimension,
    RankDeficientRegion,
    SaturatedSpectrum,
)
from .geometry import TWO_PI, FieldSpec, IntensityField, TorusDomain, batch_skew_spectra, field_matrices

MIN_BIN_NODES = 5
MIN_BIN_MASS = 1e-14
MAX_CONDITION = 1e12


# -- spectral comparison --------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    p: int
    eta: float
    b0: float
    threshold: float
    K_p: int
    count_full: int
    count_local: int
    full: np.ndarray
    local: np.ndarray
    max_abs_diff: float

    @property
    def differences(self) -> np.ndarray:
        return self.full - self.local

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("k,lambda_full,lambda_local,difference\n")
        for k, (a, b) in enumerate(zip(self.full, self.local)):
            buf.write(f"{k + 1},{a:.12e},{b:.12e},{a - b:.6e}\n")
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "p": self.p,
            "eta": self.eta,
            "b0": self.b0,
            "threshold": self.threshold,
            "K_p": self.K_p,
            "count_full": self.count_full,
            "count_local": self.count_local,
            "max_abs_diff": self.max_abs_diff,
        }


def compare_spectra(full: SpectrumResult, locals_: list, p: int, eta: float, b0: float) -> ComparisonReport:
    """Pair ``lambda_k`` of the torus operator with the direct sum of the local ones."""
    threshold = (b0 + eta) * p
    n_full, sat = counting_function(full, threshold)
    if sat:
        raise SaturatedSpectrum(f"torus spectrum not certified up to {threshold:.6g}")
    n_local = 0
    for j, loc in enumerate(locals_):
        n, sat = counting_function(loc, threshold)
        if sat:
            raise SaturatedSpectrum(f"local spectrum {j} not certified up to {threshold:.6g}")
        n_local += n
    merged = np.sort(np.concatenate([np.asarray(loc.eigenvalues) for loc in locals_] or [np.empty(0)]))
    K = min(n_full, n_local)
    a = full.eigenvalues[:K]
    b = merged[:K]
    max_diff = float(np.max(np.abs(a - b))) if K else 0.0
    return ComparisonReport(p, eta, b0, threshold, K, n_full, n_local, a, b, max_diff)


# -- Agmon decay ------------------------------------------------------------


def _neighbour_graph(domain: TorusDomain) -> sp.csr_matrix:
    """Periodic king-move graph (8 neighbours in 2D, 26 in 3D) with Euclidean weights."""
    index = np.arange(domain.size).reshape(domain.shape)
    h = domain.spacing
    rows, cols, w = [], [], []
    for off in itertools.product((-1, 0, 1), repeat=domain.dim):
        if not any(off):
            continue
        nbr = np.roll(index, tuple(-o for o in off), axis=tuple(range(domain.dim)))
        rows.append(index.ravel())
        cols.append(nbr.ravel())
        w.append(np.full(domain.size, float(np.linalg.norm(np.asarray(off) * h))))
    rows, cols, w = np.concatenate(rows), np.concatenate(cols), np.concatenate(w)
    # tiny periodic grids repeat node pairs; keep the shortest edge
    keys = rows * domain.size + cols
    order = np.lexsort((w, keys))
    first = np.ones(order.size, dtype=bool)
    first[1:] = keys[order][1:] != keys[order][:-1]
    sel = order[first]
    g = sp.csr_matrix((w[sel], (rows[sel], cols[sel])), shape=(domain.size, domain.size))
    return g


def distance_to_set(domain: TorusDomain, mask: np.ndarray) -> np.ndarray:
    """Weighted lattice distance from every node to the nodes in ``mask``."""
    sources = np.flatnonzero(np.asarray(mask).ravel())
    if sources.size == 0:
        raise EmptySublevel("distance to an empty set")
    g = _neighbour_graph(domain)
    dist = dijkstra(g, directed=True, indices=sources, min_only=True)
    dist[sources] = 0.0
    return dist.reshape(domain.shape)


@dataclass(frozen=True)
class DecayProfile:
    p: int
    alpha: float
    eta: float
    epsilon: float
    b0: float
    bin_distance: np.ndarray
    bin_nodes: np.ndarray
    bin_mass: np.ndarray
    slope: float
    intercept: float
    exterior_mass: float
    total_mass: float

    @property
    def log_mass(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.bin_mass)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("bin,distance,nodes,mass,log_mass\n")
        for i, (d, c, m, lm) in enumerate(
            zip(self.bin_distance, self.bin_nodes, self.bin_mass, self.log_mass)
        ):
            buf.write(f"{i},{d:.10e},{c},{m:.10e},{lm:.10e}\n")
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "p": self.p,
            "alpha": self.alpha,
            "eta": self.eta,
            "epsilon": self.epsilon,
            "slope": self.slope,
            "intercept": self.intercept,
            "exterior_mass": self.exterior_mass,
        }


def agmon_profile(
    psi,
    field: IntensityField,
    eta: float,
    alpha: float,
    epsilon: float,
    p: int = 0,
    b0: float = None,
    bin_width: float = None,
) -> DecayProfile:
    """Binned ``|psi|^2`` against the distance to ``K = {b <= b0 + 2 eta}``.

    ``slope`` is the fitted decay rate of the amplitude: half the slope of
    ``log(bin mass / bin nodes)`` against the mean bin distance.
    """
    dom = field.domain
    b = field.values
    b0 = float(b.min()) if b0 is None else float(b0)
    K = b <= b0 + 2.0 * eta
    if not np.any(K):
        raise EmptySublevel(f"no node with b <= {b0 + 2 * eta:.6g}")
    dist = distance_to_set(dom, K).ravel()
    dens = np.abs(np.asarray(psi).ravel()) ** 2
    width = float(np.max(dom.spacing)) if bin_width is None else float(bin_width)
    which = np.floor(dist / width + 1e-9).astype(int)
    nb = which.max() + 1
    nodes = np.bincount(which, minlength=nb)
    mass = np.bincount(which, weights=dens, minlength=nb)
    dsum = np.bincount(which, weights=dist, minlength=nb)
    used = nodes > 0
    nodes, mass, mean_d = nodes[used], mass[used], dsum[used] / nodes[used]
    fit = (nodes >= MIN_BIN_NODES) & (mass > MIN_BIN_MASS)
    slope = intercept = math.nan
    if np.count_nonzero(fit) >= 2:
        y = 0.5 * np.log(mass[fit] / nodes[fit])
        slope, intercept = (float(v) for v in np.polyfit(mean_d[fit], y, 1))
    exterior = float(dens[dist >= epsilon].sum())
    return DecayProfile(
        p, alpha, eta, epsilon, b0, mean_d, nodes, mass, slope, intercept, exterior, float(dens.sum())
    )


# -- Weyl counts --------------------------------------------------------------


def weyl_prediction(
    spec: FieldSpec,
    eta: float,
    p: int,
    convention: str = "2n+1",
    n_cutoff: int = 8,
    b0: float = None,
) -> float:
    """Semiclassical count ``(p/2pi)^(d/2) sum_n int_{b[n] <= b0 + eta} B^(d/2)/(d/2)!``.

    ``convention`` selects the band function: ``"2n+1"`` uses
    ``sum (2 n_l + 1) beta_l``, ``"n"`` uses ``sum n_l beta_l``.
    """
    dom = spec.domain
    d = dom.dim
    if d % 2:
        raise OddDimension(f"Weyl prediction needs an even dimension, got {d}")
    s = d // 2
    betas = batch_skew_spectra(field_matrices(spec, dom.cell_midpoints()))
    if b0 is None:
        b0 = float(betas.sum(axis=-1).min())
    full_rank = np.all(betas > 0.0, axis=-1)
    density = np.prod(betas, axis=-1)
    cell = float(np.prod(dom.spacing))
    level = b0 + eta
    total = 0.0
    for n in itertools.product(range(n_cutoff + 1), repeat=s):
        n = np.asarray(n, dtype=float)
        if convention == "2n+1":
            band = betas @ (2 * n + 1)
        elif convention == "n":
            band = betas @ n
        else:
            raise ValueError(f"unknown convention {convention!r}")
        mask = band <= level
        if not np.any(mask):
            continue
        if np.any(mask & ~full_rank):
            raise RankDeficientRegion("field is rank deficient inside the sublevel region")
        total += float(density[mask].sum()) * cell
    return (p / TWO_PI) ** s * total


# -- expansion fits -------------------------------------------------------------


@dataclass(frozen=True)
class ExpansionFit:
    ps: np.ndarray
    values: np.ndarray
    powers: tuple
    coefficients: np.ndarray
    residual_norm: float
    condition: float

    def coefficient(self, power) -> float:
        for pw, c in zip(self.powers, self.coefficients):
            if abs(pw - power) < 1e-12:
                return float(c)
        raise KeyError(power)

    def summary(self) -> dict:
        return {
            "ladder": [[int(p) if float(p).is_integer() else float(p), float(v)] for p, v in zip(self.ps, self.values)],
            "powers": list(self.powers),
            "coefficients": [float(c) for c in self.coefficients],
            "residual_norm": self.residual_norm,
            "condition": self.condition,
        }


def fit_expansion(ladder, powers) -> ExpansionFit:
    """Least squares of ``lambda(p)`` on ``sum_k c_k p^powers[k]``."""
    ladder = sorted((float(p), float(v)) for p, v in ladder)
    ps = np.array([p for p, _ in ladder])
    values = np.array([v for _, v in ladder])
    powers = tuple(float(w) for w in powers)
    if np.any(np.diff(ps) <= 0):
        raise ValueError("ladder must be strictly increasing in p")
    if ps.size < len(powers) + 2:
        raise ValueError(f"need at least {len(powers) + 2} ladder points, got {ps.size}")
    M = ps[:, None] ** np.asarray(powers)[None, :]
    cond = float(np.linalg.cond(M))
    if not cond <= MAX_CONDITION:
        raise IllConditioned(f"design matrix condition number {cond:.3e}")
    coef, *_ = np.linalg.lstsq(M, values, rcond=None)
    resid = float(np.linalg.norm(M @ coef - values))
    return ExpansionFit(ps, values, powers, coef, resid, cond)
