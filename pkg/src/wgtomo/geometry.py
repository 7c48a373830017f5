"""Polar-grid discretization of the disk cross-section.

The cross-section is a disk of radius R0 discretized with Nr radial rings at
half-offset radii r_i = (i + 1/2) h and Nphi equispaced angles, where
h = 2 R0 / (2 Nr + 1).  With this offset the boundary circle lies exactly one
radial spacing beyond the outermost ring, every finite-volume flux is a
central difference across a face, and the across-center coupling drops out of
the stencil, so the weighted Laplacian is symmetric to machine precision and
second-order consistent everywhere.

Boundary nodes are explicit: fields carry one value per boundary angle, and
Dirichlet data enters only through the outermost flux.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, GridError


@dataclass(frozen=True)
class CrossSection:
    """Disk cross-section with interior/boundary nodes and quadratures.

    `area_weights` integrate interior fields over the full disk (the last
    ring's cell is extended to the boundary circle so the weights sum to
    pi R0^2 exactly).  `op_weights` are the finite-volume cell measures used
    to symmetrize differential operators; they differ from `area_weights`
    only on the last ring.  All arrays are read-only; instances are safe to
    share across threads.
    """

    radius: float
    nr: int
    nphi: int
    hr: float
    hphi: float
    ring_r: np.ndarray
    phi: np.ndarray
    nodes: np.ndarray            # (nr*nphi, 2), ring-major
    boundary_nodes: np.ndarray   # (nphi, 2)
    normals: np.ndarray          # (nphi, 2), outward unit
    area_weights: np.ndarray     # (nr*nphi,)
    op_weights: np.ndarray       # (nr*nphi,)
    boundary_weights: np.ndarray  # (nphi,) arc lengths

    @property
    def n_interior(self) -> int:
        return self.nr * self.nphi

    @property
    def c_omega(self) -> float:
        """max |x'| over the closed cross-section."""
        return self.radius

    @property
    def area(self) -> float:
        return math.pi * self.radius ** 2

    @property
    def d(self) -> float:
        """Slab width b - a for any unit direction (diameter of the disk)."""
        return 2.0 * self.radius

    def slab_bounds(self, xi) -> tuple:
        """Interval (a, b) with xi . x' in (a, b) on the disk, any unit xi."""
        return (-self.radius, self.radius)

    def idx(self, i, j):
        return i * self.nphi + j

    def content_hash(self) -> str:
        from .util import content_hash

        return content_hash("disk", self.radius, self.nr, self.nphi)

    def to_json(self) -> str:
        return json.dumps(
            {
                "shape": "disk",
                "radius": self.radius,
                "nr": self.nr,
                "nphi": self.nphi,
                "hr": self.hr,
                "hphi": self.hphi,
                "nodes": self.nodes.tolist(),
                "boundary_nodes": self.boundary_nodes.tolist(),
                "normals": self.normals.tolist(),
                "area_weights": self.area_weights.tolist(),
                "boundary_weights": self.boundary_weights.tolist(),
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "CrossSection":
        data = json.loads(text)
        return build_disk(data["radius"], data["nr"], data["nphi"])


@dataclass(frozen=True)
class BoundaryArc:
    """A set of boundary nodes selected by the sign of xi . nu against a margin."""

    xi: np.ndarray
    eps: float
    sign: str                 # '-' shadowed (xi.nu <= eps), '+' illuminated (> eps)
    indices: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.indices.size)

    def describe(self) -> dict:
        return {
            "xi": [float(self.xi[0]), float(self.xi[1])],
            "eps": float(self.eps),
            "sign": self.sign,
            "n_nodes": self.n_nodes,
        }


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def build_disk(radius: float, nr: int, nphi: int) -> CrossSection:
    """Build the polar grid on a disk of the given radius.

    Requires nr >= 4 and an even nphi >= 8 (evenness keeps antipodal pairs on
    the grid, which the pole treatment of the Laplacian relies on).
    """
    if not (isinstance(radius, (int, float)) and math.isfinite(radius) and radius > 0):
        raise GridError(f"radius must be a positive finite number, got {radius!r}")
    if nr < 4:
        raise GridError(f"nr must be >= 4, got {nr}")
    if nphi < 8 or nphi % 2 != 0:
        raise GridError(f"nphi must be even and >= 8, got {nphi}")

    radius = float(radius)
    hr = 2.0 * radius / (2 * nr + 1)
    hphi = 2.0 * math.pi / nphi
    ring_r = (np.arange(nr) + 0.5) * hr
    phi = np.arange(nphi) * hphi

    cphi, sphi = np.cos(phi), np.sin(phi)
    nodes = np.empty((nr * nphi, 2))
    nodes[:, 0] = np.repeat(ring_r, nphi) * np.tile(cphi, nr)
    nodes[:, 1] = np.repeat(ring_r, nphi) * np.tile(sphi, nr)
    boundary_nodes = radius * np.stack([cphi, sphi], axis=1)
    normals = np.stack([cphi, sphi], axis=1)

    op_w = np.repeat(ring_r * hr * hphi, nphi)
    area_w = op_w.copy()
    # extend the outermost cell to the boundary circle so the total is exact
    r_in_last = (nr - 1) * hr
    area_w[(nr - 1) * nphi:] = 0.5 * hphi * (radius ** 2 - r_in_last ** 2)
    boundary_w = np.full(nphi, radius * hphi)

    return CrossSection(
        radius=radius,
        nr=nr,
        nphi=nphi,
        hr=hr,
        hphi=hphi,
        ring_r=_freeze(ring_r),
        phi=_freeze(phi),
        nodes=_freeze(nodes),
        boundary_nodes=_freeze(boundary_nodes),
        normals=_freeze(normals),
        area_weights=_freeze(area_w),
        op_weights=_freeze(op_w),
        boundary_weights=_freeze(boundary_w),
    )


def face(cs: CrossSection, xi, eps: float, sign: str) -> BoundaryArc:
    """Boundary arc on the shadowed ('-') or illuminated ('+') side of xi.

    The shadowed arc with margin eps is { j : xi . nu(phi_j) <= eps }; the
    illuminated arc is its strict complement, so the two arcs partition the
    boundary nodes and threshold nodes land on the shadowed side.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (2,) or abs(np.linalg.norm(xi) - 1.0) > 1e-12:
        raise ValueError(f"xi must be a unit 2-vector, got {xi}")
    if not (0.0 <= eps < 1.0):
        raise ValueError(f"eps must lie in [0, 1), got {eps}")
    if sign not in ("-", "+"):
        raise ValueError(f"sign must be '-' or '+', got {sign!r}")

    dots = cs.normals @ xi
    if sign == "-":
        idx = np.nonzero(dots <= eps)[0]
    else:
        idx = np.nonzero(dots > eps)[0]
    return BoundaryArc(xi=_freeze(xi.copy()), eps=float(eps), sign=sign,
                       indices=_freeze(idx.astype(np.int64)))


def full_boundary_arc(cs: CrossSection) -> BoundaryArc:
    """All boundary nodes (observation on the whole lateral boundary)."""
    return BoundaryArc(
        xi=_freeze(np.array([1.0, 0.0])),
        eps=1.0 - 1e-15,
        sign="-",
        indices=_freeze(np.arange(cs.nphi, dtype=np.int64)),
    )


def dirichlet_laplacian(cs: CrossSection):
    """Finite-volume blocks of the weighted negative cross-section Laplacian.

    Returns (A, B) with A the symmetric positive-definite interior matrix of
    W (-Lap') and B the interior-to-boundary coupling, so that the discrete
    equation for -Lap' u = f with Dirichlet data g reads A u + B g = W f.
    Dividing a row by its op_weight recovers the consistent second-order
    stencil value of -Lap' u at that node.
    """
    nr, nphi = cs.nr, cs.nphi
    h, hphi = cs.hr, cs.hphi
    N = nr * nphi

    i = np.repeat(np.arange(nr), nphi)
    j = np.tile(np.arange(nphi), nr)
    n = i * nphi + j
    r = cs.ring_r[i]
    r_out = (i + 1) * h          # outer face radius
    r_in = i * h                 # inner face radius (0 on the center ring)

    rows, cols, vals = [], [], []

    # radial couplings across interior faces
    mask = i < nr - 1
    c_out = r_out * hphi / h
    rows.append(n[mask]); cols.append(n[mask] + nphi); vals.append(-c_out[mask])
    rows.append(n[mask] + nphi); cols.append(n[mask]); vals.append(-c_out[mask])

    # angular couplings within each ring
    c_ang = h / (r * hphi)
    jp = i * nphi + (j + 1) % nphi
    rows.append(n); cols.append(jp); vals.append(-c_ang)
    rows.append(jp); cols.append(n); vals.append(-c_ang)

    # diagonal: sum of face conductances; the inner face of ring 0 has zero
    # radius so the across-center term vanishes identically
    diag = (r_out + r_in) * hphi / h + 2.0 * c_ang
    rows.append(n); cols.append(n); vals.append(diag)

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    ).tocsr()

    # boundary coupling through the outermost face
    last = (nr - 1) * nphi + np.arange(nphi)
    c_b = (nr * h) * hphi / h
    B = sp.coo_matrix((-np.full(nphi, c_b), (last, np.arange(nphi))), shape=(N, nphi)).tocsr()
    return A, B


def poincare_constant(cs: CrossSection, tol: float = 1e-12, max_iter: int = 500) -> float:
    """Best constant in |grad' u| >= c |u| on the discrete Dirichlet space.

    Returns sqrt(lambda_1) where lambda_1 is the smallest eigenvalue of the
    generalized problem A x = lambda W x, computed by inverse power
    iteration with a deterministic start vector.
    """
    A, _ = dirichlet_laplacian(cs)
    w = cs.op_weights
    lu = spla.splu(A.tocsc())

    x = np.ones(cs.n_interior)
    x /= math.sqrt(float(x @ (w * x)))
    lam_old = math.inf
    for it in range(1, max_iter + 1):
        y = lu.solve(w * x)
        lam = float(x @ (w * x)) / float(x @ (w * y))
        ny = math.sqrt(float(y @ (w * y)))
        x = y / ny
        if abs(lam - lam_old) <= tol * abs(lam):
            return math.sqrt(lam)
        lam_old = lam
    raise ConvergenceError(
        f"inverse power iteration did not converge in {max_iter} iterations",
        iterations=max_iter,
        estimate=math.sqrt(lam_old),
    )
