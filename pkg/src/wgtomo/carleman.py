"""Numerical verification of the weighted inequalities with linear weights.

For quasi-periodic fields u on the cell vanishing on the lateral boundary,
the free estimate checked here reads

    (8 tau^2 / d) |e^{-tau xi.x'} u|^2 + 2 tau |e^{-tau xi.x'} (xi.nu)^{1/2}
        dnu u|^2_{illuminated}
    <=  |e^{-tau xi.x'} Lap u|^2 + 2 tau |e^{-tau xi.x'} |xi.nu|^{1/2}
        dnu u|^2_{shadowed}

with d the slab width of the cross-section in direction xi.  The interior
factor is stated as 8 tau^2 / d in one display and 8 tau^2 / d^2 in the
intermediate chain; dimensional bookkeeping favors d^2 and both ratios are
reported (pass/fail is evaluated for both).

The potential-perturbed variant halves the interior factor to 2 tau^2 / d,
drops the boundary factors to tau, and is guaranteed only for
tau >= tau_1 = M (d/2)^{1/2} where M bounds |V|; below that threshold the
report carries a warning flag but is still evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fiber import Field, trace_neumann_values
from .geometry import CrossSection, dirichlet_laplacian, face
from .potential import PeriodicPotential


@dataclass(frozen=True)
class CarlemanReport:
    """Both sides of one weighted-inequality evaluation.

    All terms are nonnegative; `passed` is LHS <= RHS (1 + slack_tol) with
    the headline interior factor (8 tau^2/d free, 2 tau^2/d perturbed), and
    `passed_d2` the same with the d^2 interior variant.  `slack` is RHS/LHS
    (inf when LHS = 0).
    """

    tau: float
    xi: tuple
    d: float
    lhs_interior: float
    lhs_boundary: float
    rhs_laplacian: float
    rhs_boundary: float
    lhs_interior_d2: float
    slack_tol: float
    tau1: float = 0.0
    below_tau1: bool = False

    @property
    def lhs(self) -> float:
        return self.lhs_interior + self.lhs_boundary

    @property
    def rhs(self) -> float:
        return self.rhs_laplacian + self.rhs_boundary

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + self.slack_tol)

    @property
    def passed_d2(self) -> bool:
        return (self.lhs_interior_d2 + self.lhs_boundary
                <= self.rhs * (1.0 + self.slack_tol))

    @property
    def slack(self) -> float:
        return self.rhs / self.lhs if self.lhs > 0 else math.inf

    @property
    def needed_slack(self) -> float:
        """Smallest slack_tol that would pass: max(0, LHS/RHS - 1)."""
        if self.rhs == 0.0:
            return 0.0 if self.lhs == 0.0 else math.inf
        return max(0.0, self.lhs / self.rhs - 1.0)


def _weights_and_terms(u: Field, xi, tau: float, cs: CrossSection,
                       op_values: np.ndarray, interior_factor: float,
                       boundary_factor: float):
    xi = np.asarray(xi, dtype=float)
    if abs(np.linalg.norm(xi) - 1.0) > 1e-12:
        raise ValueError("xi must be a unit vector")
    bscale = float(np.abs(u.boundary).max()) if u.boundary.size else 0.0
    iscale = float(np.abs(u.interior).max())
    if bscale > 1e-13 * max(iscale, 1.0):
        raise ValueError("field does not vanish on the lateral boundary "
                         f"(max |u| there is {bscale:.3e})")

    w_int = np.exp(-2.0 * tau * (cs.nodes @ xi))
    w_bnd = np.exp(-2.0 * tau * (cs.boundary_nodes @ xi))
    dots = cs.normals @ xi
    illuminated = face(cs, xi, 0.0, "+")
    shadowed = face(cs, xi, 0.0, "-")

    interior = float(np.sum(cs.area_weights * w_int
                            * np.sum(np.abs(u.interior) ** 2, axis=0)))
    dn = trace_neumann_values(u, cs)
    dn2 = np.sum(np.abs(dn) ** 2, axis=0)
    bw = cs.boundary_weights
    ip = illuminated.indices
    im = shadowed.indices
    lhs_boundary = boundary_factor * tau * float(
        np.sum(bw[ip] * w_bnd[ip] * dots[ip] * dn2[ip]))
    rhs_boundary = boundary_factor * tau * float(
        np.sum(bw[im] * w_bnd[im] * np.abs(dots[im]) * dn2[im]))
    rhs_op = float(np.sum(cs.area_weights * w_int
                          * np.sum(np.abs(op_values) ** 2, axis=0)))
    d = cs.d
    return (interior_factor * tau ** 2 / d * interior,
            lhs_boundary, rhs_op, rhs_boundary,
            interior_factor * tau ** 2 / d ** 2 * interior, d)


def _laplacian_values(u: Field, cs: CrossSection) -> np.ndarray:
    """Lap u per mode at interior nodes (boundary values are zero here)."""
    A, _ = dirichlet_laplacian(cs)
    mus = (u.theta + 2 * np.pi * u.ks) ** 2
    out = np.empty_like(u.interior)
    for ki in range(u.n_modes):
        out[ki] = -(A @ u.interior[ki]) / cs.op_weights - mus[ki] * u.interior[ki]
    return out


def carleman_check(u: Field, xi, tau: float, cs: CrossSection,
                   slack_tol: float = 0.05) -> CarlemanReport:
    """Evaluate the free weighted inequality for a boundary-vanishing field."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    lap = _laplacian_values(u, cs)
    li, lb, ro, rb, li2, d = _weights_and_terms(u, xi, tau, cs, -lap, 8.0, 2.0)
    # rhs uses |Lap u|^2: sign of the operator values is immaterial
    return CarlemanReport(tau=float(tau), xi=tuple(np.asarray(xi, float)),
                          d=d, lhs_interior=li, lhs_boundary=lb,
                          rhs_laplacian=ro, rhs_boundary=rb,
                          lhs_interior_d2=li2, slack_tol=slack_tol)


def carleman_potential_check(u: Field, V: PeriodicPotential, xi, tau: float,
                             cs: CrossSection, slack_tol: float = 0.05) -> CarlemanReport:
    """Evaluate the potential-perturbed inequality; gated by tau_1."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    lap = _laplacian_values(u, cs)
    op_vals = -lap
    for ki, k in enumerate(u.ks):
        acc = np.zeros(cs.n_interior, dtype=complex)
        for d_ in range(-V.cutoff, V.cutoff + 1):
            m = k - d_
            if u.k_min <= m <= u.k_max:
                vd = V.mode(d_)
                if np.any(vd):
                    acc += vd * u.interior[m - u.k_min]
        op_vals[ki] += acc
    li, lb, ro, rb, li2, d = _weights_and_terms(u, xi, tau, cs, op_vals, 2.0, 1.0)
    M = V.sup_abs()
    tau1 = M * math.sqrt(d / 2.0)
    return CarlemanReport(tau=float(tau), xi=tuple(np.asarray(xi, float)),
                          d=d, lhs_interior=li, lhs_boundary=lb,
                          rhs_laplacian=ro, rhs_boundary=rb,
                          lhs_interior_d2=li2, slack_tol=slack_tol,
                          tau1=tau1, below_tau1=tau < tau1)


def random_test_field(cs: CrossSection, theta: float, rng, k_span: int = 1,
                      m_max: int = 3) -> Field:
    """Corpus member: boundary-vanishing radial polynomial times random
    low-order angular and axial modes."""
    r = np.linalg.norm(cs.nodes, axis=1)
    R = cs.radius
    n_modes = 2 * k_span + 1
    interior = np.zeros((n_modes, cs.n_interior), dtype=complex)
    for ki in range(n_modes):
        radial = (R ** 2 - r ** 2) * (rng.uniform(0.3, 1.0)
                                      + rng.uniform(-0.5, 0.5) * r
                                      + rng.uniform(-0.5, 0.5) * r ** 2)
        phi = np.arctan2(cs.nodes[:, 1], cs.nodes[:, 0])
        ang = np.zeros(cs.n_interior, dtype=complex)
        for m in range(-m_max, m_max + 1):
            c = rng.standard_normal() + 1j * rng.standard_normal()
            ang += c * np.exp(1j * m * phi) / (1 + abs(m))
        interior[ki] = radial * ang
    boundary = np.zeros((n_modes, cs.nphi), dtype=complex)
    return Field(theta, -k_span, k_span, interior, boundary)
