"""Discrete Hermitian connection on ``L^p`` as U(1) link phases.

The phase ``theta[x, mu]`` lives on the edge ``x -> x + e_mu``.  Parallel
transport along that edge multiplies by ``exp(i theta)``, and the oriented
sum of phases around a plaquette equals ``p`` times the flux of ``B``
through it, modulo ``2*pi``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import HolonomyMismatch
from .geometry import (
    TOL_FLUX,
    TWO_PI,
    FieldSpec,
    TorusDomain,
    check_prequantization,
    integrate_rectangles,
)

TOL_HOL = 1e-9


@dataclass(frozen=True)
class PlaquetteFluxes:
    domain: TorusDomain
    flux: dict  # plane -> array of shape domain.shape, plaquette anchored at its lower corner
    degrees: dict

    def slice_sums(self, plane) -> np.ndarray:
        mu, nu = plane
        return self.flux[plane].sum(axis=(mu, nu))


def plaquette_fluxes(spec: FieldSpec) -> PlaquetteFluxes:
    degrees = check_prequantization(spec)
    dom = spec.domain
    h = dom.spacing
    corners = dom.node_coordinates()
    flux = {}
    for plane in spec.planes():
        mu, nu = plane
        f = integrate_rectangles(spec, plane, corners, (h[mu], h[nu])).reshape(dom.shape)
        f.setflags(write=False)
        flux[plane] = f
    out = PlaquetteFluxes(dom, flux, degrees)
    for plane in spec.planes():
        err = np.max(np.abs(out.slice_sums(plane) - TWO_PI * degrees[plane]))
        # summation error grows with the number of plaquettes
        if err > max(TOL_FLUX, 1e-14 * dom.size * max(1.0, abs(degrees[plane]))):
            raise HolonomyMismatch(f"plane {plane}: slice flux off by {err:.3e}")
    return out


@dataclass(frozen=True)
class LinkField:
    domain: TorusDomain
    power: int
    theta: np.ndarray  # shape domain.shape + (dim,), values in [0, 2pi)

    def to_text(self) -> str:
        buf = io.StringIO()
        flat = self.theta.reshape(-1, self.domain.dim)
        for idx in range(flat.shape[0]):
            for mu in range(self.domain.dim):
                buf.write(f"{idx} {mu} {flat[idx, mu]:.17g}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str, domain: TorusDomain, power: int) -> "LinkField":
        theta = np.zeros((domain.size, domain.dim))
        for line in text.splitlines():
            if not line.strip():
                continue
            idx, mu, value = line.split()
            theta[int(idx), int(mu)] = float(value)
        return cls(domain, power, theta.reshape(domain.shape + (domain.dim,)))


def _wrap(angle):
    """Representative in ``(-pi, pi]``."""
    return -np.mod(-np.asarray(angle) + np.pi, TWO_PI) + np.pi


def plaquette_holonomies(links: LinkField) -> dict:
    """Oriented phase sums around every plaquette, wrapped to ``(-pi, pi]``."""
    th = links.theta
    d = links.domain.dim
    out = {}
    for mu in range(d):
        for nu in range(mu + 1, d):
            tmu = th[..., mu]
            tnu = th[..., nu]
            hol = tmu + np.roll(tnu, -1, axis=mu) - np.roll(tmu, -1, axis=nu) - tnu
            out[(mu, nu)] = _wrap(hol)
    return out


def holonomy_error(links: LinkField, fluxes: PlaquetteFluxes) -> float:
    hol = plaquette_holonomies(links)
    worst = 0.0
    for plane, values in hol.items():
        diff = _wrap(values - links.power * fluxes.flux[plane])
        worst = max(worst, float(np.max(np.abs(diff))))
    return worst


def build_links(fluxes: PlaquetteFluxes, p: int) -> LinkField:
    """Landau-type gauge with a seam carrying the bundle degree.

    In each plane ``(mu, nu)`` the ``nu``-links accumulate the flux of the
    plaquettes between ``x_mu = 0`` and the link.  The ``mu``-links closing
    the period (``x_mu = n_mu - 1``) absorb the column totals.
    """
    if int(p) != p or p < 1:
        raise ValueError(f"tensor power must be a positive integer, got {p}")
    p = int(p)
    dom = fluxes.domain
    theta = np.zeros(dom.shape + (dom.dim,))
    for (mu, nu), F in fluxes.flux.items():
        pf = p * F
        cum = np.cumsum(pf, axis=mu) - pf
        theta[..., nu] += cum
        column = pf.sum(axis=mu, keepdims=True)
        seam = -(np.cumsum(column, axis=nu) - column)
        index = [slice(None)] * dom.dim
        index[mu] = slice(dom.shape[mu] - 1, dom.shape[mu])
        theta[tuple(index) + (mu,)] += seam
    theta = np.mod(theta, TWO_PI)
    theta.setflags(write=False)
    links = LinkField(dom, p, theta)
    err = holonomy_error(links, fluxes)
    if err > TOL_HOL:
        raise HolonomyMismatch(f"plaquette holonomy off by {err:.3e}")
    return links


def gauge_transform(links: LinkField, phase) -> LinkField:
    """Change of trivialization ``u -> exp(-i phase) u``; holonomies are untouched."""
    dom = links.domain
    phase = np.asarray(phase, dtype=float).reshape(dom.shape)
    theta = np.empty_like(links.theta)
    for mu in range(dom.dim):
        theta[..., mu] = links.theta[..., mu] + (np.roll(phase, -1, axis=mu) - phase)
    theta = np.where((theta >= 0.0) & (theta < TWO_PI), theta, np.mod(theta, TWO_PI))
    theta.setflags(write=False)
    return LinkField(dom, links.power, theta)
