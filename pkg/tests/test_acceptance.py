"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import itertools
import math
import time
from pathlib import Path

import numpy as np

from bochner.analysis import agmon_profile, fit_expansion, weyl_prediction
from bochner.cli import EXIT_OK, main
from bochner.connection import (
    build_links,
    gauge_transform,
    holonomy_error,
    plaquette_fluxes,
)
from bochner.eigensolve import counting_function, eigenpairs_below, full_spectrum, lowest_eigenpairs
from bochner.errors import NotPrequantized
from bochner.geometry import (
    TWO_PI,
    TorusDomain,
    check_grid_rule,
    check_prequantization,
    constant_field,
    intensity_field,
    single_well,
    skew_spectrum,
    two_well,
)
from bochner.operators import assemble_bochner, lower_bound_sides
from bochner.pipeline import max_intensity_bound, refined_spec, run_comparison, torus_operator

B0 = 4 * math.pi  # minimum intensity of both reference well fields
REFERENCE = Path(__file__).resolve().parents[1] / "configs" / "single_well.yaml"


def unit(n):
    return TorusDomain(2, (1.0, 1.0), (n, n))


# -- 1. Landau levels ------------------------------------------------------------------


def test_c1_landau_levels(verdict):
    spec = constant_field(unit(64), {(0, 1): TWO_PI})
    rows, ok = [], True
    for p in (2, 4, 8):
        t0 = time.perf_counter()
        lam = lowest_eigenpairs(torus_operator(spec, p), p + 2).eigenvalues
        elapsed = time.perf_counter() - t0
        rel = abs(lam[0] - p * TWO_PI) / (p * TWO_PI)
        mult = int(np.sum(np.abs(lam - lam[0]) <= 1e-3 * p))
        ok &= rel <= 0.02 and mult == p and elapsed < 120
        rows.append(f"p={p} rel.err={rel:.2e} mult={mult} t={elapsed:.1f}s")
    # dense cross-check of the sparse solver on a small grid
    small = torus_operator(constant_field(unit(16), {(0, 1): TWO_PI}), 2)
    dense = full_spectrum(small).eigenvalues[:4]
    agree = float(np.max(np.abs(lowest_eigenpairs(small, 4).eigenvalues - dense)))
    ok &= agree <= 1e-8
    rows.append(f"dense(n=16) agreement {agree:.1e}")
    assert verdict("C1 Landau levels", ok, "; ".join(rows))


# -- 2. torus vs local spectra ------------------------------------------------------------


def test_c2_local_models(verdict):
    n = 64
    spec = two_well(unit(n))
    eta = 0.4 * B0
    hw = (0.25, 0.5 - 1.0 / n)
    t0 = time.perf_counter()
    scaled, rows, grid_ok = [], [], True
    for p in (8, 16, 32):
        grid_ok &= not check_grid_rule(spec.domain, max_intensity_bound(spec), p)
        rep = run_comparison(spec, p, eta, 0.03, hw, b0=B0).report
        scaled.append(rep.max_abs_diff / p)
        rows.append(f"p={p} K_p={rep.K_p} max|diff|/p={scaled[-1]:.4f}")
    elapsed = time.perf_counter() - t0
    decreasing = all(b < a for a, b in zip(scaled, scaled[1:]))
    ok = decreasing and scaled[-1] <= 0.05 * eta and grid_ok and elapsed < 1200
    rows.append(f"bound 0.05*eta={0.05 * eta:.4f}, grid rule {'ok' if grid_ok else 'violated'}, t={elapsed:.0f}s")
    assert verdict("C2 torus vs local spectra", ok, "; ".join(rows))


# -- 3. decay away from the well ------------------------------------------------------------


def test_c3_localization(verdict):
    spec = single_well(unit(64))
    field = intensity_field(spec)
    eta = 0.1 * B0
    masses, slopes = [], []
    for p in (8, 16, 32):
        psi = lowest_eigenpairs(torus_operator(spec, p), 1, want_vectors=True).eigenvectors[:, 0]
        prof = agmon_profile(psi, field, eta, alpha=0.25, epsilon=0.05, p=p, b0=B0)
        masses.append(prof.exterior_mass)
        slopes.append(prof.slope)
    ok = (
        all(b < a for a, b in zip(masses, masses[1:]))
        and slopes[0] < 0
        and all(b < a for a, b in zip(slopes, slopes[1:]))
    )
    detail = ", ".join(
        f"p={p} mass={m:.2e} slope={s:.1f}" for p, m, s in zip((8, 16, 32), masses, slopes)
    )
    assert verdict("C3 localization", ok, detail)


# -- 4. leading-order eigenvalue ----------------------------------------------------------------


def test_c4_expansion(verdict):
    base = single_well(unit(32))
    ladder = []
    for p in (4, 8, 16, 32, 64):
        spec = refined_spec(base, p, factor=16)
        ladder.append((p, lowest_eigenpairs(torus_operator(spec, p), 1).eigenvalues[0]))
    fit = fit_expansion(ladder, [1, 0.5, 0])
    c1, c_half = fit.coefficient(1), fit.coefficient(0.5)
    lead_ok = abs(c1 - B0) <= 0.05 * B0
    half_ok = abs(c_half) <= 0.05 * B0
    verdict(
        "C4 expansion (leading coefficient)",
        lead_ok,
        f"c1={c1:.4f} vs b0={B0:.4f} ({(c1 - B0) / B0:+.2%})",
    )
    verdict(
        "C4 expansion (half-power coefficient)",
        half_ok,
        f"|c_1/2|={abs(c_half):.4f} = {abs(c_half) / B0:.3f}*b0, bound 0.05*b0",
    )
    assert lead_ok and half_ok


# -- 5. Weyl count ------------------------------------------------------------------------


def test_c5_weyl(verdict):
    spec = single_well(unit(64))
    p, eta = 32, 0.3 * B0
    level = (B0 + eta) * p
    measured, saturated = counting_function(eigenpairs_below(torus_operator(spec, p), level), level)
    pred = {c: weyl_prediction(spec, eta, p, c, b0=B0) for c in ("2n+1", "n")}
    rel = {c: abs(measured - v) / measured for c, v in pred.items()}
    best = min(rel, key=rel.get)
    ok = not saturated and rel[best] <= 0.25
    detail = (
        f"measured N={measured}; predicted {pred['2n+1']:.2f} ('2n+1', {rel['2n+1']:.1%}), "
        f"{pred['n']:.2f} ('n', {rel['n']:.1%}); matching convention '{best}'"
    )
    assert verdict("C5 Weyl count", ok, detail)


# -- 6. invariant suites ----------------------------------------------------------------------


def _dense_bochner(theta, spacing):
    shape = theta.shape[:-1]
    N = int(np.prod(shape))
    A = np.zeros((N, N), dtype=complex)
    for x in itertools.product(*(range(n) for n in shape)):
        i = np.ravel_multi_index(x, shape)
        A[i, i] = sum(2.0 / h**2 for h in spacing)
        for mu, h in enumerate(spacing):
            y = list(x)
            y[mu] = (y[mu] + 1) % shape[mu]
            j = np.ravel_multi_index(tuple(y), shape)
            A[i, j] += -np.exp(1j * theta[x + (mu,)]) / h**2
            A[j, i] += np.conj(-np.exp(1j * theta[x + (mu,)]) / h**2)
    return A


def test_c6_invariants(verdict):
    checks = {}
    rng = np.random.default_rng(0)

    # gauge invariance of spectra, n = 16, p <= 4
    worst = 0.0
    for p in (1, 2, 4):
        links = build_links(plaquette_fluxes(single_well(unit(16))), p)
        moved = gauge_transform(links, rng.uniform(0, TWO_PI, (16, 16)))
        a = np.linalg.eigvalsh(assemble_bochner(links).to_dense())
        b = np.linalg.eigvalsh(assemble_bochner(moved).to_dense())
        worst = max(worst, float(np.max(np.abs(a - b))))
    checks["gauge"] = (worst <= 1e-8, f"{worst:.1e}")

    # holonomy soundness
    worst = 0.0
    for field, n, p in [(single_well, 32, 7), (two_well, 24, 16)]:
        fl = plaquette_fluxes(field(unit(n)))
        worst = max(worst, holonomy_error(build_links(fl, p), fl))
    fl = plaquette_fluxes(constant_field(unit(9), {(0, 1): TWO_PI}))
    worst = max(worst, holonomy_error(build_links(fl, 3), fl))
    checks["holonomy"] = (worst <= 1e-9, f"{worst:.1e}")

    # Hermiticity, positivity and the dense oracle on n <= 8
    herm, lowest, entry, eig = True, math.inf, 0.0, 0.0
    for n, p in [(4, 1), (8, 3), (8, 8)]:
        links = build_links(plaquette_fluxes(single_well(unit(n))), p)
        A = assemble_bochner(links).to_dense()
        ref = _dense_bochner(links.theta, unit(n).spacing)
        herm &= bool(np.array_equal(A, A.conj().T))
        entry = max(entry, float(np.max(np.abs(A - ref))))
        ev = np.linalg.eigvalsh(A)
        eig = max(eig, float(np.max(np.abs(ev - np.linalg.eigvalsh(ref)))))
        lowest = min(lowest, float(ev[0]))
    checks["hermitian"] = (herm, "exact")
    checks["positive"] = (lowest >= -1e-9, f"min eig {lowest:.2e}")
    checks["dense entries"] = (entry == 0.0, f"{entry:.1e}")
    checks["dense eigenvalues"] = (eig <= 1e-10, f"{eig:.1e}")

    # skew spectrum against a dense eigensolver
    worst = 0.0
    for d in (2, 3, 4):
        for _ in range(50):
            a = rng.standard_normal((d, d))
            m = a - a.T
            ref = np.linalg.eigvals(m).imag
            ref = np.sort(ref[ref > 1e-9])[::-1]
            worst = max(worst, float(np.max(np.abs(skew_spectrum(m) - ref), initial=0.0)))
    checks["skew spectrum"] = (worst <= 1e-9, f"{worst:.1e}")

    # prequantization gate
    try:
        check_prequantization(constant_field(unit(8), {(0, 1): 1.0}))
        rejected = False
    except NotPrequantized:
        rejected = True
    checks["flux gate"] = (rejected, "flux 1.0 rejected" if rejected else "accepted")

    # lower bound on every ground state computed in the criteria above
    margins = []
    for spec, ps in [
        (constant_field(unit(64), {(0, 1): TWO_PI}), (2, 4, 8)),
        (single_well(unit(64)), (8, 16, 32)),
        (two_well(unit(64)), (8, 16, 32)),
    ]:
        b = intensity_field(spec).values
        for p in ps:
            op = torus_operator(spec, p)
            s = lowest_eigenpairs(op, 1, want_vectors=True).eigenvectors[:, 0]
            lhs, rhs = lower_bound_sides(op, s, b, p, 10 * b.max())
            margins.append(lhs - rhs)
    checks["lower bound"] = (min(margins) >= 0, f"min margin {min(margins):.3g}")

    ok = all(v[0] for v in checks.values())
    detail = "; ".join(f"{k} {'ok' if v[0] else 'BAD'} ({v[1]})" for k, v in checks.items())
    assert verdict("C6 invariant suites", ok, detail)


# -- 7. determinism ----------------------------------------------------------------------


def test_c7_determinism(verdict, tmp_path):
    outs = [tmp_path / "run1", tmp_path / "run2"]
    codes = [main(["--config", str(REFERENCE), "--out", str(o)]) for o in outs]
    names = sorted(f.name for f in outs[0].iterdir() if f.suffix == ".csv")
    same = [(outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names]
    other = sorted(f.name for f in outs[1].iterdir() if f.suffix == ".csv")
    ok = codes == [EXIT_OK, EXIT_OK] and names == other and len(names) > 0 and all(same)
    detail = f"{sum(same)}/{len(names)} CSV files byte-identical, exit codes {codes}"
    assert verdict("C7 determinism", ok, detail)
