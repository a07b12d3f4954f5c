"""Lowest eigenpairs of sparse Hermitian operators.

The default solver is a restarted block Krylov iteration on the shifted
inverse ``(A - sigma)^-1`` with full reorthogonalization, followed by a
Rayleigh-Ritz step on ``A`` itself.  Block sizes exceed the requested count,
so clusters of (nearly) degenerate eigenvalues are resolved copy by copy.
"""

from __future__ import annotations

import hashlib
import io
import logging
import math
import os
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence

log = logging.getLogger(__name__)

CACHE_ENV = "BOCHNER_CACHE_DIR"
# below this size a dense solve is cheaper and certifies the whole spectrum
DENSE_LIMIT = 400
STALL_RESTARTS = 8


@dataclass(frozen=True)
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = None
    residuals: np.ndarray = None
    iterations: int = 0
    tolerance: float = 0.0
    method: str = ""
    complete: bool = False
    # counts are exact for thresholds up to this value
    certified_to: float = None

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        if ev.size > 1 and np.any(np.diff(ev) < 0):
            raise ValueError("eigenvalues must be sorted ascending")
        object.__setattr__(self, "eigenvalues", ev)
        if self.residuals is None:
            object.__setattr__(self, "residuals", np.zeros_like(ev))
        if self.certified_to is None:
            bound = math.inf if self.complete else (float(ev[-1]) if ev.size else -math.inf)
            object.__setattr__(self, "certified_to", bound)

    @classmethod
    def from_values(cls, values, complete: bool = False) -> "SpectrumResult":
        return cls(np.sort(np.asarray(values, dtype=float)), complete=complete, method="given")

    def __len__(self):
        return self.eigenvalues.size

    def truncate(self, upper: float) -> "SpectrumResult":
        """Keep eigenpairs ``<= upper``; the certified range is unchanged."""
        keep = self.eigenvalues <= upper
        vecs = None if self.eigenvectors is None else self.eigenvectors[:, keep]
        return replace(
            self,
            eigenvalues=self.eigenvalues[keep],
            eigenvectors=vecs,
            residuals=self.residuals[keep],
            complete=False,
            certified_to=self.certified_to,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("index,eigenvalue,residual\n")
        for k, (lam, res) in enumerate(zip(self.eigenvalues, self.residuals)):
            buf.write(f"{k + 1},{lam:.12e},{res:.3e}\n")
        return buf.getvalue()


def counting_function(spectrum: SpectrumResult, lam: float):
    """``(#{eigenvalues <= lam}, saturated)``; saturated counts are lower bounds.

    A spectrum is saturated above the range it certifies, which by default
    ends at its largest eigenvalue (and is empty for an empty spectrum).
    """
    ev = spectrum.eigenvalues
    count = int(np.searchsorted(ev, lam, side="right"))
    saturated = lam > spectrum.certified_to
    return count, bool(saturated)


def _as_matrix(op):
    if hasattr(op, "matrix"):
        return op.matrix
    if sp.issparse(op):
        return op.tocsr()
    return sp.csr_matrix(np.asarray(op))


def _residuals(A, vecs, vals):
    return np.linalg.norm(A @ vecs - vecs * vals, axis=0)


def _orthonormalize(W, Q=None, drop_tol=1e-14):
    """Columns of ``W`` made orthonormal and orthogonal to ``Q`` (two passes)."""
    ref = max(np.linalg.norm(W, axis=0).max(initial=0.0), 1e-300)
    # the second sweep removes the Q-components amplified by normalization
    for _ in range(2):
        if Q is not None:
            W = W - Q @ (Q.conj().T @ W)
        U, s, _ = np.linalg.svd(W, full_matrices=False)
        W = U[:, s > drop_tol * ref]
        ref = 1.0
    return W


def _cache_key(A, count, tol, seed, want_vectors):
    h = hashlib.sha256()
    for arr in (A.indptr, A.indices, A.data):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(repr((A.shape, count, tol, seed, want_vectors)).encode())
    return h.hexdigest()


def _cache_load(path):
    with np.load(path, allow_pickle=False) as data:
        vecs = data["eigenvectors"] if "eigenvectors" in data.files else None
        return SpectrumResult(
            eigenvalues=data["eigenvalues"],
            eigenvectors=vecs,
            residuals=data["residuals"],
            iterations=int(data["iterations"]),
            tolerance=float(data["tolerance"]),
            method=str(data["method"]),
        )


def _cache_store(path, res):
    arrays = dict(
        eigenvalues=res.eigenvalues,
        residuals=res.residuals,
        iterations=res.iterations,
        tolerance=res.tolerance,
        method=res.method,
    )
    if res.eigenvectors is not None:
        arrays["eigenvectors"] = res.eigenvectors
    tmp = path + ".tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def lowest_eigenpairs(
    op,
    count: int,
    tol: float = 1e-9,
    want_vectors: bool = False,
    seed: int = 0,
    block_size: int = None,
    depth: int = 4,
    max_restarts: int = 200,
    cache_dir: str = None,
    method: str = "auto",
) -> SpectrumResult:
    """The ``count`` smallest eigenpairs with ``||Av - lam v|| <= tol (1 + |lam|)``.

    ``method`` is ``"shift-invert"`` (block Krylov on a sparse LU factor),
    ``"lobpcg"`` (preconditioned block gradient iteration, no factorization)
    or ``"auto"``, which falls back to LOBPCG when the factorization runs out
    of memory.
    """
    if method not in ("auto", "shift-invert", "lobpcg"):
        raise ValueError(f"unknown method {method!r}")
    A = _as_matrix(op).astype(complex)
    N = A.shape[0]
    if not 1 <= count < N:
        raise ValueError(f"count must satisfy 1 <= count < size ({count}, {N})")
    if tol <= 0:
        raise ValueError("tol must be positive")
    cache_dir = cache_dir or os.environ.get(CACHE_ENV)
    cache_path = None
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        key = _cache_key(A, count, tol, seed, (want_vectors, method))
        cache_path = os.path.join(cache_dir, f"spectrum-{key[:32]}.npz")
        if os.path.exists(cache_path):
            log.debug("spectrum cache hit %s", cache_path)
            return _cache_load(cache_path)

    bs = block_size or count + max(4, int(math.ceil(0.25 * count)))
    bs = min(bs, N)
    rng = np.random.default_rng(seed)

    lu = None
    if method != "lobpcg":
        diag = A.diagonal().real
        radius = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(A.diagonal())
        lower = float(np.min(diag - radius))
        sigma = min(lower, 0.0) - max(1e-3 * float(np.mean(np.abs(diag))), 1e-8)
        try:
            lu = spla.splu((A - sigma * sp.identity(N, format="csr")).tocsc())
        except MemoryError:
            if method == "shift-invert":
                raise
            log.warning("factorization of size %d ran out of memory; using LOBPCG", N)
    if lu is None:
        result = _lobpcg(A, count, bs, tol, rng, max_restarts)
    else:
        result = _shift_invert(A, lu, count, bs, depth, tol, rng, max_restarts)
    if not want_vectors:
        result = replace(result, eigenvectors=None)
    if cache_path:
        _cache_store(cache_path, result)
    return result


def _shift_invert(A, lu, count, bs, depth, tol, rng, max_restarts):
    N = A.shape[0]
    X = _orthonormalize(rng.standard_normal((N, bs)) + 1j * rng.standard_normal((N, bs)))
    vals = vecs = res = None
    best, stalled = math.inf, 0
    for it in range(1, max_restarts + 1):
        d = max(1, min(depth, N // X.shape[1]))
        Q = X
        last = X
        for _ in range(d - 1):
            W = _orthonormalize(lu.solve(last), Q)
            if W.shape[1] == 0:
                break
            last = W
            Q = np.hstack([Q, W])
        AQ = A @ Q
        H = Q.conj().T @ AQ
        H = 0.5 * (H + H.conj().T)
        theta, Y = sla.eigh(H)
        keep = min(bs, theta.size)
        vals = theta[:count]
        vecs = Q @ Y[:, :keep]
        R = AQ @ Y[:, :count] - vecs[:, :count] * vals
        res = np.linalg.norm(R, axis=0)
        worst = float(np.max(res / (tol * (1.0 + np.abs(vals)))))
        if worst <= 1.0:
            break
        # a cluster wider than the block converges very slowly: widen the block
        stalled = stalled + 1 if worst > 0.5 * best else 0
        best = min(best, worst)
        if stalled >= STALL_RESTARTS and bs < N // 2:
            bs = min(2 * bs, N // 2)
            stalled, best = 0, math.inf
            log.debug("widening block to %d at restart %d", bs, it)
        X = _orthonormalize(vecs)
        if X.shape[1] < bs:
            extra = rng.standard_normal((N, bs - X.shape[1])) + 0j
            X = np.hstack([X, _orthonormalize(extra, X)])
    else:
        partial = SpectrumResult(vals, None, res, max_restarts, tol, "block-krylov-si")
        raise NoConvergence(
            f"{int(np.sum(res > tol * (1 + np.abs(vals))))} of {count} pairs unconverged",
            partial,
        )

    vecs = vecs[:, :count]
    # independent post-hoc check
    return SpectrumResult(vals.copy(), vecs, _residuals(A, vecs, vals), it, tol, "block-krylov-si")


def _lobpcg(A, count, bs, tol, rng, max_restarts):
    N = A.shape[0]
    diag = A.diagonal().real
    shift = max(1e-3 * float(np.mean(np.abs(diag))), 1e-8)
    M = sp.diags(1.0 / (diag + shift)).astype(complex)
    X = rng.standard_normal((N, bs)) + 1j * rng.standard_normal((N, bs))
    vals, vecs = spla.lobpcg(
        A, X, M=M, tol=tol, largest=False, maxiter=max_restarts * 10
    )
    order = np.argsort(vals)[:count]
    vals, vecs = vals[order].real, vecs[:, order]
    res = _residuals(A, vecs, vals)
    if not np.all(res <= tol * (1.0 + np.abs(vals))):
        partial = SpectrumResult(vals, None, res, max_restarts * 10, tol, "lobpcg")
        raise NoConvergence(
            f"{int(np.sum(res > tol * (1 + np.abs(vals))))} of {count} pairs unconverged",
            partial,
        )
    return SpectrumResult(vals, vecs, res, max_restarts * 10, tol, "lobpcg")


def full_spectrum(op, want_vectors: bool = False) -> SpectrumResult:
    """Dense diagonalization; the result is complete."""
    M = _as_matrix(op).toarray()
    if want_vectors:
        vals, vecs = sla.eigh(M)
    else:
        vals, vecs = sla.eigh(M, eigvals_only=True), None
    residuals = _residuals(M, vecs, vals) if want_vectors else np.zeros_like(vals)
    return SpectrumResult(vals, vecs, residuals, 1, 0.0, "dense", complete=True)


def eigenpairs_below(
    op,
    threshold: float,
    tol: float = 1e-9,
    want_vectors: bool = False,
    seed: int = 0,
    start_count: int = 16,
    max_count: int = 2000,
) -> SpectrumResult:
    """Grow the requested count until an eigenvalue exceeds ``threshold``.

    Eigenpairs above ``threshold`` are dropped, but the result stays certified
    up to the largest eigenvalue that was computed.
    """
    N = _as_matrix(op).shape[0]
    if N <= DENSE_LIMIT:
        spec = full_spectrum(op, want_vectors)
        return spec.truncate(threshold)
    count = min(start_count, N - 1)
    while True:
        spec = lowest_eigenpairs(op, count, tol, want_vectors, seed)
        if spec.eigenvalues[-1] > threshold:
            return spec.truncate(threshold)
        if count >= min(max_count, N - 1):
            log.warning("count cap %d reached below threshold %.6g", count, threshold)
            return spec
        count = min(2 * count, max_count, N - 1)
