"""Quasi-periodic fiber solver on the unit cell (0,1) x omega.

A fiber problem at quasi-momentum theta is discretized spectrally in x1
(modes exp(i (theta + 2 pi k) x1) over a contiguous integer window) and with
the finite-volume polar Laplacian in x'.  The fiber operator is the weighted
block matrix

    A = kron(I, W(-Lap')) + kron(diag((theta+2 pi k)^2), W) + sum_d kron(S_d, W V_d)

whose Hermitian structure is exact for real potentials.  Dirichlet data lives
on the explicit boundary nodes and enters through the outermost flux only, so
returned fields match their data exactly and the factorized interior solve is
positive definite for admissible potentials.

The cell-window transform linking the infinite waveguide to its fibers is at
the bottom of the module.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AliasingError, FactorizationError
from .geometry import CrossSection, dirichlet_laplacian
from .potential import PeriodicPotential
from .util import content_hash

logger = logging.getLogger(__name__)


@dataclass
class Field:
    """Mode-resolved field u = sum_k u_k(x') exp(i (theta + 2 pi k) x1).

    Quasi-periodicity across the cell is structural: it holds exactly for
    every finite mode sum regardless of the coefficients.
    """

    theta: float
    k_min: int
    k_max: int
    interior: np.ndarray   # (n_modes, n_interior) complex
    boundary: np.ndarray   # (n_modes, nphi) complex

    @property
    def ks(self) -> np.ndarray:
        return np.arange(self.k_min, self.k_max + 1)

    @property
    def n_modes(self) -> int:
        return self.k_max - self.k_min + 1

    def mode_index(self, k: int) -> int:
        if not self.k_min <= k <= self.k_max:
            raise KeyError(f"mode {k} outside window [{self.k_min}, {self.k_max}]")
        return k - self.k_min

    def l2_norm(self, cs: CrossSection) -> float:
        """L2 over the cell; exact in x1 by mode orthogonality."""
        return math.sqrt(float(np.sum(cs.area_weights * np.abs(self.interior) ** 2)))

    def evaluate(self, x1, cs: CrossSection = None) -> np.ndarray:
        """Physical interior values at axial positions x1; (len(x1), n_int)."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        ph = np.exp(1j * np.outer(x1, self.theta + 2 * np.pi * self.ks))
        return ph @ self.interior

    def evaluate_boundary(self, x1) -> np.ndarray:
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        ph = np.exp(1j * np.outer(x1, self.theta + 2 * np.pi * self.ks))
        return ph @ self.boundary

    def copy_scaled(self, t: complex) -> "Field":
        return Field(self.theta, self.k_min, self.k_max, t * self.interior,
                     t * self.boundary)


def trace_neumann_values(u: Field, cs: CrossSection) -> np.ndarray:
    """Outward normal derivative at boundary nodes, per mode.

    One-sided second-order radial stencil on the uniform grid:
    (3 u_b - 4 u_{R-h} + u_{R-2h}) / (2 h).
    """
    nr, nphi, h = cs.nr, cs.nphi, cs.hr
    last = u.interior[:, (nr - 1) * nphi: nr * nphi]
    prev = u.interior[:, (nr - 2) * nphi: (nr - 1) * nphi]
    return (3.0 * u.boundary - 4.0 * last + prev) / (2.0 * h)


def field_to_csv(u: Field, path: str) -> None:
    """Export as rows (k, node_index, re, im); boundary nodes follow interior
    nodes with indices offset by n_interior."""
    from .util import write_csv

    rows = []
    n_int = u.interior.shape[1]
    for ki, k in enumerate(u.ks):
        for n in range(n_int):
            z = u.interior[ki, n]
            rows.append((k, n, z.real, z.imag))
        for n in range(u.boundary.shape[1]):
            z = u.boundary[ki, n]
            rows.append((k, n_int + n, z.real, z.imag))
    write_csv(path, ("k", "node", "re", "im"), rows)


class FiberOperator:
    """Assembled and factorized fiber operator over a mode window.

    Immutable after construction; the factorization handle may be shared
    read-only across threads for concurrent back-substitutions.
    """

    def __init__(self, V: PeriodicPotential, theta: float, cs: CrossSection,
                 k_min: int, k_max: int):
        self.V = V
        self.theta = float(theta)
        self.cs = cs
        self.k_min = int(k_min)
        self.k_max = int(k_max)
        if self.k_max < self.k_min:
            raise ValueError("empty mode window")
        if V.cutoff > 0 and (self.k_max - self.k_min) < V.cutoff:
            logger.warning("mode window narrower than the potential cutoff %d; "
                           "coupling is truncated", V.cutoff)

        n_modes = self.k_max - self.k_min + 1
        ks = np.arange(self.k_min, self.k_max + 1)
        A_lap, B0 = dirichlet_laplacian(cs)
        w = cs.op_weights
        N = cs.n_interior

        mu = (self.theta + 2 * np.pi * ks) ** 2
        A = sp.kron(sp.eye(n_modes), A_lap, format="csr").astype(complex)
        A = A + sp.kron(sp.diags(mu), sp.diags(w), format="csr")
        for d in range(-V.cutoff, V.cutoff + 1):
            vd = V.mode(d)
            if not np.any(vd):
                continue
            S = sp.eye(n_modes, n_modes, k=-d, format="csr")
            if S.nnz == 0:
                continue
            A = A + sp.kron(S, sp.diags(w * vd), format="csr")

        self.ks = ks
        self.n_modes = n_modes
        self.matrix = A.tocsc()
        self.B0 = B0
        self.w_op = w
        self._n = N
        try:
            self.lu = spla.splu(self.matrix)
        except RuntimeError as exc:
            raise FactorizationError(
                f"fiber operator factorization failed at theta={theta:.4f}: {exc}; "
                "0 may lie in the discrete spectrum (inadmissible potential or "
                "too-coarse grid)") from exc

    def content_hash(self) -> str:
        return content_hash("fiber-op", self.V.content_hash(), self.theta,
                            self.k_min, self.k_max, self.cs.content_hash())

    def hermitian_defect(self) -> float:
        """max |A - A^H| entrywise; exactly zero for real potentials."""
        d = self.matrix - self.matrix.getH()
        return float(np.abs(d.data).max()) if d.nnz else 0.0

    # -- solves ---------------------------------------------------------------

    def solve_dirichlet(self, g: np.ndarray) -> Field:
        """Solve the homogeneous fiber equation with Dirichlet data g.

        g has shape (n_modes, nphi), one complex trace per mode.  The
        returned field matches g at the boundary nodes exactly.
        """
        g = np.asarray(g, dtype=complex)
        if g.shape != (self.n_modes, self.cs.nphi):
            raise ValueError(f"boundary data shape {g.shape} != "
                             f"({self.n_modes}, {self.cs.nphi})")
        if not np.all(np.isfinite(g)):
            raise ValueError("boundary data contains NaN or inf")
        rhs = np.empty((self.n_modes, self._n), dtype=complex)
        for ki in range(self.n_modes):
            rhs[ki] = -(self.B0 @ g[ki])
        u = self.lu.solve(rhs.ravel()).reshape(self.n_modes, self._n)
        return Field(self.theta, self.k_min, self.k_max, u, g.copy())

    def resolvent(self, f: np.ndarray) -> Field:
        """Solve (op) u = f with homogeneous Dirichlet data.

        f has shape (n_modes, n_interior).  For admissible potentials the
        solution obeys |u| <= |f| / (lambda_1 - M_-) in the cell L2 norm.
        """
        f = np.asarray(f, dtype=complex)
        if f.shape != (self.n_modes, self._n):
            raise ValueError("interior data shape mismatch")
        rhs = (self.w_op[None, :] * f).ravel()
        u = self.lu.solve(rhs).reshape(self.n_modes, self._n)
        return Field(self.theta, self.k_min, self.k_max, u,
                     np.zeros((self.n_modes, self.cs.nphi), dtype=complex))

    def apply_pde(self, u: Field) -> np.ndarray:
        """Consistent residual operator: values of (-Lap + mu_k + V*) u at
        interior nodes, per mode (uses the field's boundary values)."""
        out = (self.matrix @ u.interior.ravel()).reshape(self.n_modes, self._n)
        for ki in range(self.n_modes):
            out[ki] += self.B0 @ u.boundary[ki]
        return out / self.w_op[None, :]

    def smallest_eigenvalue(self, tol: float = 1e-10, max_iter: int = 500) -> float:
        """Smallest generalized eigenvalue by inverse power iteration."""
        w = np.tile(self.w_op, self.n_modes)
        x = np.ones(self.n_modes * self._n, dtype=complex)
        x /= math.sqrt(float(np.real(np.vdot(x, w * x))))
        lam_old = math.inf
        for _ in range(max_iter):
            y = self.lu.solve(w * x)
            lam = float(np.real(np.vdot(x, w * x)) / np.real(np.vdot(x, w * y)))
            x = y / math.sqrt(float(np.real(np.vdot(y, w * y))))
            if abs(lam - lam_old) <= tol * abs(lam):
                return lam
            lam_old = lam
        return lam_old


def assemble(V: PeriodicPotential, theta: float, K, cs: CrossSection) -> FiberOperator:
    """Assemble the fiber operator; K is a cutoff (window -K..K) or an
    explicit (k_min, k_max) window."""
    if isinstance(K, tuple):
        k_min, k_max = K
    else:
        k_min, k_max = -int(K), int(K)
    return FiberOperator(V, theta, cs, k_min, k_max)


# -- harmonic extensions ------------------------------------------------------

class HarmonicExtender:
    """Per-mode factorizations of the potential-free fiber blocks.

    The potential-free operator is block-diagonal over modes, so extending a
    mode-k trace costs one small back-substitution.  The L2 norm of the
    extension is the discrete trace-space norm used by the DN machinery.
    """

    def __init__(self, theta: float, cs: CrossSection):
        self.theta = float(theta)
        self.cs = cs
        self._A, self._B0 = dirichlet_laplacian(cs)
        self._w = cs.op_weights
        self._lus = {}

    def _lu(self, k: int):
        if k not in self._lus:
            mu = (self.theta + 2 * math.pi * k) ** 2
            M = (self._A + mu * sp.diags(self._w)).tocsc().astype(complex)
            self._lus[k] = spla.splu(M)
        return self._lus[k]

    def extend_mode(self, k: int, g_k: np.ndarray) -> np.ndarray:
        """Interior extension of one mode; accepts (nphi,) or (nphi, m)."""
        rhs = -(self._B0 @ g_k)
        return self._lu(k).solve(rhs)

    def extend(self, g: np.ndarray, k_min: int, k_max: int) -> Field:
        g = np.asarray(g, dtype=complex)
        n_modes = k_max - k_min + 1
        if g.shape != (n_modes, self.cs.nphi):
            raise ValueError("boundary data shape mismatch")
        if not np.all(np.isfinite(g)):
            raise ValueError("boundary data contains NaN or inf")
        u = np.empty((n_modes, self.cs.n_interior), dtype=complex)
        for ki, k in enumerate(range(k_min, k_max + 1)):
            u[ki] = self.extend_mode(k, g[ki])
        return Field(self.theta, k_min, k_max, u, g.copy())

    def gram_mode(self, k: int) -> np.ndarray:
        """Gram matrix of node-indicator traces in the extension L2 norm."""
        E = self.extend_mode(k, np.eye(self.cs.nphi, dtype=complex))
        return E.conj().T @ (self.cs.area_weights[:, None] * E)


def harmonic_extension(g: np.ndarray, theta: float, cs: CrossSection, K) -> tuple:
    """Potential-free quasi-periodic extension of g and its cell L2 norm.

    This norm is the discrete trace-space norm of g.  Returns (Field, norm).
    """
    if isinstance(K, tuple):
        k_min, k_max = K
    else:
        k_min, k_max = -int(K), int(K)
    ext = HarmonicExtender(theta, cs)
    u = ext.extend(np.asarray(g, dtype=complex), k_min, k_max)
    return u, u.l2_norm(cs)


# -- cell-window transform ----------------------------------------------------

def fbg_forward(cells: np.ndarray, k0: int, n_theta: int):
    """Transform a finite window of cell functions to fiber samples.

    cells[c] is the function on cell k0 + c.  Returns (thetas, g) with
    g[j] = sum_c exp(-i (k0 + c) theta_j) cells[c] on the uniform grid
    theta_j = 2 pi j / n_theta.  Requires n_theta >= number of cells.
    """
    cells = np.asarray(cells)
    n_cells = cells.shape[0]
    if n_theta < n_cells:
        raise AliasingError(f"n_theta={n_theta} < window size {n_cells}; "
                            "fiber samples would alias")
    thetas = 2 * np.pi * np.arange(n_theta) / n_theta
    ks = k0 + np.arange(n_cells)
    ph = np.exp(-1j * np.outer(thetas, ks))
    g = np.tensordot(ph, cells, axes=(1, 0))
    return thetas, g


def fbg_inverse(g: np.ndarray, k0: int, n_cells: int) -> np.ndarray:
    """Invert fbg_forward: cell c is the theta-average of exp(i k theta) g."""
    g = np.asarray(g)
    n_theta = g.shape[0]
    if n_theta < n_cells:
        raise AliasingError(f"n_theta={n_theta} < window size {n_cells}")
    thetas = 2 * np.pi * np.arange(n_theta) / n_theta
    ks = k0 + np.arange(n_cells)
    ph = np.exp(1j * np.outer(ks, thetas)) / n_theta
    return np.tensordot(ph, g, axes=(1, 0))


def fbg_parseval_defect(cells: np.ndarray, k0: int, n_theta: int) -> float:
    """| mean_theta |g_theta|^2 - sum_cells |cell|^2 | relative to the total."""
    _, g = fbg_forward(cells, k0, n_theta)
    lhs = float(np.sum(np.abs(g) ** 2)) / n_theta
    rhs = float(np.sum(np.abs(np.asarray(cells)) ** 2))
    return abs(lhs - rhs) / max(rhs, 1e-300)
