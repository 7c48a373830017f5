"""Fiber Dirichlet-to-Neumann maps on the observation patch.

The DN matrix maps mode-resolved Dirichlet traces to mode-resolved Neumann
data on an observation arc.  Columns are indicator traces (one boundary node,
one mode); the Neumann trace uses the one-sided second-order radial stencil
on the uniform grid.

The operator norm of a DN difference is the largest generalized singular
value when inputs carry the harmonic-extension L2 norm (the discrete
trace-space norm) and outputs the arc-weighted L2 norm; it is computed by
power iteration on the weighted normal equations against the extension Gram
matrix, which is block-diagonal over modes because the potential-free fiber
operator decouples them.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError
from .fiber import Field, FiberOperator, HarmonicExtender, assemble
from .geometry import BoundaryArc, CrossSection, full_boundary_arc
from .potential import PeriodicPotential
from .util import content_hash

logger = logging.getLogger(__name__)

_DN_CHUNK = 64  # columns per back-substitution batch


@dataclass
class TraceData:
    """Complex boundary values per (mode, boundary node) on a given arc."""

    theta: float
    k_min: int
    k_max: int
    values: np.ndarray          # (n_modes, n_arc_nodes)
    arc_indices: np.ndarray     # boundary node indices the columns refer to

    @property
    def ks(self):
        return np.arange(self.k_min, self.k_max + 1)


def trace_dirichlet(u: Field) -> TraceData:
    """Boundary values of the field (all boundary nodes)."""
    nphi = u.boundary.shape[1]
    return TraceData(u.theta, u.k_min, u.k_max, u.boundary.copy(),
                     np.arange(nphi, dtype=np.int64))


def trace_neumann(u: Field, cs: CrossSection) -> TraceData:
    """Outward normal derivative at boundary nodes (second-order one-sided
    radial stencil)."""
    from .fiber import trace_neumann_values

    dn = trace_neumann_values(u, cs)
    return TraceData(u.theta, u.k_min, u.k_max, dn,
                     np.arange(cs.nphi, dtype=np.int64))


def boundary_pairing(a: TraceData, b: TraceData, cs: CrossSection,
                     arc: BoundaryArc = None) -> complex:
    """<a, b> = integral over the (arc of the) lateral boundary of a conj(b).

    Mode-orthogonality makes the axial integral exact; only modes common to
    both windows contribute.
    """
    lo = max(a.k_min, b.k_min)
    hi = min(a.k_max, b.k_max)
    if hi < lo:
        return 0.0 + 0.0j
    wa = cs.boundary_weights
    sel = arc.indices if arc is not None else np.arange(cs.nphi)
    av = a.values[lo - a.k_min: hi - a.k_min + 1][:, sel]
    bv = b.values[lo - b.k_min: hi - b.k_min + 1][:, sel]
    return complex(np.sum(wa[sel][None, :] * av * np.conj(bv)))


class DnOperator:
    """DN matrix of one fiber problem restricted to an observation arc.

    Rows: (mode k, arc node) row-major; columns: (mode k, boundary node).
    Column (k, j) is the Neumann trace of the solution with indicator
    Dirichlet data by construction.
    """

    def __init__(self, theta, k_min, k_max, arc: BoundaryArc, matrix: np.ndarray,
                 cs: CrossSection, key: str):
        self.theta = float(theta)
        self.k_min = int(k_min)
        self.k_max = int(k_max)
        self.arc = arc
        self.matrix = matrix
        self.cs = cs
        self.key = key

    @property
    def n_modes(self):
        return self.k_max - self.k_min + 1

    def apply(self, g: np.ndarray) -> TraceData:
        """Apply to mode-resolved Dirichlet data (n_modes, nphi)."""
        g = np.asarray(g, dtype=complex)
        out = self.matrix @ g.ravel()
        return TraceData(self.theta, self.k_min, self.k_max,
                         out.reshape(self.n_modes, self.arc.n_nodes),
                         self.arc.indices)


def _dn_cache_paths(cache_dir: str, key: str):
    return (os.path.join(cache_dir, key + ".npy"),
            os.path.join(cache_dir, key + ".json"))


def assemble_dn(V: PeriodicPotential, theta: float, cs: CrossSection, K,
                arc: BoundaryArc = None, cache_dir: str = None,
                operator: FiberOperator = None) -> DnOperator:
    """Assemble the fiber DN matrix on the arc (all boundary nodes if None).

    One factorization, (2K+1) * nphi indicator columns solved in chunks.
    With a cache directory, matrices are stored content-addressed by
    (potential, theta, grid, window, arc) and reloaded bit-identically.
    """
    if arc is None:
        arc = full_boundary_arc(cs)
    if isinstance(K, tuple):
        k_min, k_max = K
    else:
        k_min, k_max = -int(K), int(K)

    key = content_hash("dn", V.content_hash(), theta, cs.content_hash(),
                       k_min, k_max, arc.xi, arc.eps, arc.sign, arc.indices)
    if cache_dir:
        mpath, jpath = _dn_cache_paths(cache_dir, key)
        if os.path.exists(mpath):
            logger.debug("DN cache hit %s", key[:12])
            matrix = np.load(mpath)
            return DnOperator(theta, k_min, k_max, arc, matrix, cs, key)

    op = operator if operator is not None else assemble(V, theta, (k_min, k_max), cs)
    n_modes = k_max - k_min + 1
    nphi = cs.nphi
    nr, h = cs.nr, cs.hr
    N = cs.n_interior
    n_arc = arc.n_nodes
    sel = arc.indices

    matrix = np.empty((n_modes * n_arc, n_modes * nphi), dtype=complex)
    cols = [(ki, j) for ki in range(n_modes) for j in range(nphi)]
    for start in range(0, len(cols), _DN_CHUNK):
        chunk = cols[start:start + _DN_CHUNK]
        rhs = np.zeros((n_modes * N, len(chunk)), dtype=complex, order="F")
        for c, (ki, j) in enumerate(chunk):
            rhs[ki * N:(ki + 1) * N, c] = -op.B0[:, j].toarray().ravel()
        sol = op.lu.solve(rhs)                      # (n_modes*N, chunk)
        sol = sol.reshape(n_modes, N, len(chunk))
        last = sol[:, (nr - 1) * nphi: nr * nphi, :]
        prev = sol[:, (nr - 2) * nphi: (nr - 1) * nphi, :]
        dn = (-4.0 * last + prev) / (2.0 * h)       # boundary term added below
        for c, (ki, j) in enumerate(chunk):
            col = dn[:, sel, c]
            hit = np.nonzero(sel == j)[0]
            if hit.size:
                col[ki, hit[0]] += 3.0 / (2.0 * h)  # indicator's own trace
            matrix[:, start + c] = col.ravel()

    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        mpath, jpath = _dn_cache_paths(cache_dir, key)
        np.save(mpath, matrix)
        with open(jpath, "w") as fh:
            json.dump({"theta": theta, "k_min": k_min, "k_max": k_max,
                       "arc": arc.describe(), "grid": cs.content_hash(),
                       "potential": V.content_hash(), "dtype": "complex128",
                       "layout": "row-major (mode, arc node) x (mode, boundary node)",
                       "endianness": "little (numpy .npy)"},
                      fh, sort_keys=True, indent=1)
    return DnOperator(theta, k_min, k_max, arc, matrix, cs, key)


# ----------------------------------------------------------------------------
# operator norms
# ----------------------------------------------------------------------------

class TraceGram:
    """Gram matrix of the indicator-trace basis in the extension L2 norm.

    Block-diagonal over modes; Cholesky factors cached per mode.
    """

    def __init__(self, theta: float, cs: CrossSection):
        self.theta = float(theta)
        self.cs = cs
        self._ext = HarmonicExtender(theta, cs)
        self._chol = {}
        self._gram = {}

    def gram(self, k: int) -> np.ndarray:
        if k not in self._gram:
            self._gram[k] = self._ext.gram_mode(k)
        return self._gram[k]

    def chol(self, k: int):
        if k not in self._chol:
            self._chol[k] = sla.cho_factor(self.gram(k))
        return self._chol[k]

    def apply(self, k_min: int, k_max: int, x: np.ndarray) -> np.ndarray:
        """N x for mode-stacked x of shape (n_modes, nphi)."""
        return np.stack([self.gram(k) @ x[ki]
                         for ki, k in enumerate(range(k_min, k_max + 1))])

    def solve(self, k_min: int, k_max: int, y: np.ndarray) -> np.ndarray:
        return np.stack([sla.cho_solve(self.chol(k), y[ki])
                         for ki, k in enumerate(range(k_min, k_max + 1))])

    def norm(self, k_min: int, k_max: int, x: np.ndarray) -> float:
        return math.sqrt(max(float(np.real(np.vdot(x.ravel(),
                         self.apply(k_min, k_max, x).ravel()))), 0.0))


_GRAM_CACHE = {}


def trace_gram(theta: float, cs: CrossSection) -> TraceGram:
    key = (round(theta, 14), cs.content_hash())
    if key not in _GRAM_CACHE:
        _GRAM_CACHE[key] = TraceGram(theta, cs)
    return _GRAM_CACHE[key]


def dn_difference_norm(d1: DnOperator, d2: DnOperator, tol: float = 1e-6,
                       max_iter: int = 500, gram: TraceGram = None):
    """Largest generalized singular value of d1 - d2.

    Input norm: harmonic-extension L2 (trace-space); output norm: quadrature
    L2 on the arc.  Deterministically seeded power iteration on the weighted
    normal equations; raises ConvergenceError with the Ritz estimate if the
    tolerance is not met.
    Returns (gamma, n_iterations).
    """
    if (d1.theta != d2.theta or d1.k_min != d2.k_min or d1.k_max != d2.k_max
            or d1.arc.n_nodes != d2.arc.n_nodes
            or not np.array_equal(d1.arc.indices, d2.arc.indices)):
        raise ValueError("DN operators live on different (theta, window, arc)")
    cs = d1.cs
    D = d1.matrix - d2.matrix
    if not np.any(D):
        return 0.0, 0
    if gram is None:
        gram = trace_gram(d1.theta, cs)
    k_min, k_max = d1.k_min, d1.k_max
    n_modes = d1.n_modes
    q = cs.boundary_weights[d1.arc.indices]
    Q = np.tile(q, n_modes)

    rng = np.random.default_rng(20240801)
    x = rng.standard_normal(D.shape[1]) + 1j * rng.standard_normal(D.shape[1])
    x = x.reshape(n_modes, cs.nphi)
    x /= gram.norm(k_min, k_max, x)

    gamma_old = 0.0
    for it in range(1, max_iter + 1):
        y = D @ x.ravel()
        s = (D.conj().T @ (Q * y)).reshape(n_modes, cs.nphi)
        gamma2 = float(np.real(np.vdot(x.ravel(), s.ravel())))
        gamma = math.sqrt(max(gamma2, 0.0))
        z = gram.solve(k_min, k_max, s)
        nz = gram.norm(k_min, k_max, z)
        if nz == 0.0:
            return 0.0, it
        x = z / nz
        if it > 1 and abs(gamma - gamma_old) <= tol * max(gamma, 1e-300):
            return gamma, it
        gamma_old = gamma
    raise ConvergenceError(
        f"power iteration for the DN difference norm did not converge in "
        f"{max_iter} iterations", iterations=max_iter, estimate=gamma_old)


def full_norm_over_theta(V1: PeriodicPotential, V2: PeriodicPotential,
                         thetas, cs: CrossSection, K, arc: BoundaryArc = None,
                         cache_dir: str = None):
    """sup over the theta grid of the fiber DN difference norms.

    Returns (sup, argmax theta, per-theta list).
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if thetas.size == 0:
        raise ValueError("empty theta grid")
    values = []
    for th in thetas:
        d1 = assemble_dn(V1, th, cs, K, arc, cache_dir)
        d2 = assemble_dn(V2, th, cs, K, arc, cache_dir)
        gamma, _ = dn_difference_norm(d1, d2)
        values.append(gamma)
        logger.debug("theta=%.4f gamma=%.6e", th, gamma)
    i = int(np.argmax(values))
    return values[i], float(thetas[i]), list(zip(thetas.tolist(), values))


# ----------------------------------------------------------------------------
# diagnostics
# ----------------------------------------------------------------------------

def dn_weighted_2norm(d: DnOperator, n_iter: int = 60) -> float:
    """Operator 2-norm of the DN matrix between boundary-weighted l2 spaces."""
    cs = d.cs
    wq_out = np.sqrt(np.tile(cs.boundary_weights[d.arc.indices], d.n_modes))
    wq_in = np.sqrt(np.tile(cs.boundary_weights, d.n_modes))
    M = (wq_out[:, None] * d.matrix) / wq_in[None, :]
    rng = np.random.default_rng(7)
    x = rng.standard_normal(M.shape[1]) + 1j * rng.standard_normal(M.shape[1])
    x /= np.linalg.norm(x)
    for _ in range(n_iter):
        x = M.conj().T @ (M @ x)
        n = np.linalg.norm(x)
        if n == 0:
            return 0.0
        x /= n
    return float(np.linalg.norm(M @ x))


def hermitian_pairing_defect(d: DnOperator, n_pairs: int = 10, seed: int = 3):
    """max over random trace pairs of |<Df,g> - <f,Dg>| / (|D| |f| |g|).

    The pairing uses boundary quadrature on the full boundary; for real
    potentials the continuum DN map is self-adjoint, so the defect measures
    the Neumann-stencil discretization error.
    """
    if d.arc.n_nodes != d.cs.nphi:
        raise ValueError("pairing defect needs the full-boundary DN matrix")
    cs = d.cs
    rng = np.random.default_rng(seed)
    nrm = dn_weighted_2norm(d)
    w = np.tile(cs.boundary_weights, d.n_modes)
    worst = 0.0
    for _ in range(n_pairs):
        f = rng.standard_normal(d.matrix.shape[1]) + 1j * rng.standard_normal(d.matrix.shape[1])
        g = rng.standard_normal(d.matrix.shape[1]) + 1j * rng.standard_normal(d.matrix.shape[1])
        lhs = complex(np.sum(w * (d.matrix @ f) * np.conj(g)))
        rhs = complex(np.sum(w * f * np.conj(d.matrix @ g)))
        nf = math.sqrt(float(np.sum(w * np.abs(f) ** 2)))
        ng = math.sqrt(float(np.sum(w * np.abs(g) ** 2)))
        worst = max(worst, abs(lhs - rhs) / (nrm * nf * ng))
    return worst
