import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bochner.connection import (
    TOL_HOL,
    LinkField,
    build_links,
    gauge_transform,
    holonomy_error,
    plaquette_fluxes,
    plaquette_holonomies,
)
from bochner.errors import NotPrequantized
from bochner.geometry import TWO_PI, FieldSpec, FourierTerm, TorusDomain, constant_field, single_well


def wrap(a):
    return (np.asarray(a) + np.pi) % TWO_PI - np.pi


def brute_holonomy(theta, x, mu, nu):
    """Oriented phase sum around the plaquette at ``x`` by explicit indexing."""
    shape = theta.shape[:-1]
    step = lambda y, ax: tuple((y[i] + (i == ax)) % shape[i] for i in range(len(shape)))
    return (
        theta[x + (mu,)]
        + theta[step(x, mu) + (nu,)]
        - theta[step(x, nu) + (mu,)]
        - theta[x + (nu,)]
    )


def test_constant_flux_is_uniform():
    dom = TorusDomain(2, (1, 1), (8, 8))
    fl = plaquette_fluxes(constant_field(dom, {(0, 1): TWO_PI}))
    assert np.allclose(fl.flux[(0, 1)], TWO_PI / 64, rtol=1e-14)
    assert fl.degrees == {(0, 1): 1}


def test_zero_field_fluxes():
    dom = TorusDomain(2, (1, 1), (8, 8))
    fl = plaquette_fluxes(FieldSpec(dom, {}, ()))
    assert np.all(fl.flux[(0, 1)] == 0.0)


def test_single_well_slice_sum():
    dom = TorusDomain(2, (1, 1), (32, 32))
    fl = plaquette_fluxes(single_well(dom))
    assert fl.slice_sums((0, 1)) == pytest.approx(3 * TWO_PI, abs=1e-10)


def test_plaquette_flux_matches_quadrature():
    dom = TorusDomain(2, (1.0, 2.0), (6, 5))
    spec = FieldSpec(dom, {(0, 1): math.pi}, (FourierTerm((0, 1), (1, 2), 0.7, -1.3),))
    fl = plaquette_fluxes(spec)
    h = dom.spacing
    # Gauss-Legendre on one plaquette as an independent oracle
    g, w = np.polynomial.legendre.leggauss(12)
    corner = np.array([2 * h[0], 3 * h[1]])
    xs = corner[0] + 0.5 * h[0] * (g + 1)
    ys = corner[1] + 0.5 * h[1] * (g + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    phase = TWO_PI * (X / 1.0 + 2 * Y / 2.0)
    vals = math.pi + 0.7 * np.cos(phase) - 1.3 * np.sin(phase)
    ref = 0.25 * h[0] * h[1] * np.einsum("i,j,ij->", w, w, vals)
    assert fl.flux[(0, 1)][2, 3] == pytest.approx(ref, abs=1e-13)


def test_unquantized_field_rejected():
    dom = TorusDomain(2, (1, 1), (8, 8))
    with pytest.raises(NotPrequantized):
        plaquette_fluxes(constant_field(dom, {(0, 1): 1.0}))


def test_zero_field_links_vanish():
    dom = TorusDomain(2, (1, 1), (8, 8))
    links = build_links(plaquette_fluxes(FieldSpec(dom, {}, ())), 5)
    assert np.all(links.theta == 0.0)


@pytest.mark.parametrize("n", [4, 7, 16])
def test_every_plaquette_including_seam(n):
    dom = TorusDomain(2, (1, 1), (n, n))
    links = build_links(plaquette_fluxes(constant_field(dom, {(0, 1): TWO_PI})), 1)
    expected = TWO_PI / n**2
    for i in range(n):
        for j in range(n):
            hol = brute_holonomy(links.theta, (i, j), 0, 1)
            assert abs(wrap(hol - expected)) < 1e-12


def test_theta_range():
    dom = TorusDomain(2, (1, 1), (16, 16))
    links = build_links(plaquette_fluxes(single_well(dom)), 7)
    assert links.theta.min() >= 0.0 and links.theta.max() < TWO_PI


def test_doubling_power_doubles_phases():
    dom = TorusDomain(2, (1, 1), (12, 12))
    fl = plaquette_fluxes(single_well(dom))
    h1 = plaquette_holonomies(build_links(fl, 3))[(0, 1)]
    h2 = plaquette_holonomies(build_links(fl, 6))[(0, 1)]
    assert np.max(np.abs(wrap(h2 - 2 * h1))) < 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20))
def test_degree_additivity(p1, p2):
    dom = TorusDomain(2, (1, 1), (10, 10))
    fl = plaquette_fluxes(single_well(dom))
    a = plaquette_holonomies(build_links(fl, p1))[(0, 1)]
    b = plaquette_holonomies(build_links(fl, p2))[(0, 1)]
    c = plaquette_holonomies(build_links(fl, p1 + p2))[(0, 1)]
    assert np.max(np.abs(wrap(c - a - b))) < 1e-9


def test_three_dimensional_holonomy():
    dom = TorusDomain(3, (1, 1, 1), (6, 5, 4))
    spec = FieldSpec(
        dom,
        {(0, 1): TWO_PI, (1, 2): 2 * TWO_PI},
        (
            FourierTerm((0, 1), (1, 1, 0), 0.8),
            FourierTerm((0, 2), (1, 0, 2), 0.0, 1.1),
            FourierTerm((1, 2), (0, 1, 1), -0.4),
        ),
    )
    fl = plaquette_fluxes(spec)
    links = build_links(fl, 3)
    assert holonomy_error(links, fl) <= TOL_HOL
    for mu, nu in [(0, 1), (0, 2), (1, 2)]:
        hol = brute_holonomy(links.theta, (5, 4, 3), mu, nu)
        assert abs(wrap(hol - 3 * fl.flux[(mu, nu)][5, 4, 3])) < 1e-9


def test_gauge_identity_and_constant_phase():
    dom = TorusDomain(2, (1, 1), (8, 8))
    links = build_links(plaquette_fluxes(single_well(dom)), 2)
    assert np.array_equal(gauge_transform(links, np.zeros(dom.shape)).theta, links.theta)
    const = gauge_transform(links, np.full(dom.shape, 1.234))
    assert np.array_equal(const.theta, links.theta)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gauge_preserves_holonomy(seed):
    dom = TorusDomain(2, (1, 1), (10, 10))
    fl = plaquette_fluxes(single_well(dom))
    links = build_links(fl, 3)
    phase = np.random.default_rng(seed).uniform(-10, 10, dom.shape)
    moved = gauge_transform(links, phase)
    a = plaquette_holonomies(links)[(0, 1)]
    b = plaquette_holonomies(moved)[(0, 1)]
    assert np.max(np.abs(wrap(a - b))) < 1e-12
    assert holonomy_error(moved, fl) <= TOL_HOL


def test_link_text_roundtrip():
    dom = TorusDomain(2, (1, 1), (4, 4))
    links = build_links(plaquette_fluxes(single_well(dom)), 2)
    text = links.to_text()
    assert len(text.splitlines()) == 32
    back = LinkField.from_text(text, dom, 2)
    assert np.array_equal(back.theta, links.theta)
