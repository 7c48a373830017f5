"""Complex-exponential probe fields for the quasi-periodic cell problem.

A probe is u = (1 + w) exp(zeta . x) with zeta in C^3 chosen so that
exp(zeta . x) is harmonic (zeta . zeta = 0) and theta-quasi-periodic (the
first component lies in i(theta + 2 pi Z)).  The phase bundle (ell, tau,
zeta_1, zeta_2) is built from an axial integer k, a transverse frequency eta,
a unit direction xi orthogonal to eta, a scale parameter r, and the
quasi-momentum theta:

    ell  = (theta + 2 pi ([r] + c_k)) (1, -2 pi k eta / |eta|^2),
           c_k = 1 for even k, 3/2 for odd k
    tau  = sqrt(|eta|^2/4 + pi^2 k^2 + |ell|^2)
    zeta_1 = ( i pi k, -tau xi + i eta/2) + i ell
    zeta_2 = (-i pi k,  tau xi - i eta/2) + i ell

so that zeta_1 + conj(zeta_2) = i (2 pi k, eta) exactly.

The remainder w solves (-Lap - 2 zeta . grad) w = -V (1 + w) on a periodic
extension cell (0,1) x (-L, L)^2 with V continued by zero, fully spectrally:
the conjugated Laplacian acts as multiplication by p(q) = |q|^2 - 2 i zeta . q
on torus modes.  The constant mode is characteristic (p(0) = 0); the fixed
point runs on its complement while a Newton update on the constant mode
enforces the solvability constraint mean(V (1 + w)) = 0, so the converged
residual covers every mode.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import CharacteristicLatticeError, ConvergenceError, TauTooSmallError
from .geometry import CrossSection
from .potential import PeriodicPotential

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CgoPhase:
    """Phase bundle with its exact algebraic invariants.

    n_axial_1 / n_axial_2 are the integers n with Im zeta_j[0] = theta + 2 pi n;
    they locate the probe's carrier in the fiber mode ladder.
    """

    k: int
    eta: np.ndarray
    xi: np.ndarray
    r: float
    theta: float
    ell: np.ndarray
    tau: float
    zeta1: np.ndarray
    zeta2: np.ndarray
    n_axial_1: int
    n_axial_2: int

    def zeta(self, which: int) -> np.ndarray:
        if which == 1:
            return self.zeta1
        if which == 2:
            return self.zeta2
        raise ValueError("which must be 1 or 2")

    def n_axial(self, which: int) -> int:
        return self.n_axial_1 if which == 1 else self.n_axial_2

    def bracketing(self) -> tuple:
        """(lower, tau, upper) of the scale bracketing
        2 pi r < tau <= |(2 pi k, eta)|/2 + 4 pi (r+1)(1 + |2 pi k|/|eta|)."""
        low = 2 * math.pi * self.r
        ae = math.hypot(2 * math.pi * self.k, float(np.linalg.norm(self.eta)))
        up = ae / 2 + 4 * math.pi * (self.r + 1) * (
            1 + abs(2 * math.pi * self.k) / float(np.linalg.norm(self.eta)))
        return low, self.tau, up


def make_phase(k: int, eta, xi, r: float, theta: float) -> CgoPhase:
    """Build the phase bundle; validates xi . eta = 0 and |xi| = 1.

    r >= 0 is accepted (the formulas only use the integer part of r).
    """
    eta = np.asarray(eta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if eta.shape != (2,) or np.linalg.norm(eta) == 0.0:
        raise ValueError("eta must be a nonzero 2-vector")
    if xi.shape != (2,) or abs(np.linalg.norm(xi) - 1.0) > 1e-12:
        raise ValueError("xi must be a unit 2-vector")
    if abs(float(xi @ eta)) > 1e-12 * np.linalg.norm(eta):
        raise ValueError(f"xi . eta = {float(xi @ eta):.3e} != 0")
    if r < 0:
        raise ValueError("r must be nonnegative")
    if not 0.0 <= theta < 2 * math.pi:
        raise ValueError("theta must lie in [0, 2 pi)")

    c_k = 1.0 if k % 2 == 0 else 1.5
    pref = theta + 2 * math.pi * (math.floor(r) + c_k)
    ell = pref * np.array([1.0,
                           -2 * math.pi * k * eta[0] / float(eta @ eta),
                           -2 * math.pi * k * eta[1] / float(eta @ eta)])
    tau = math.sqrt(float(eta @ eta) / 4 + (math.pi * k) ** 2 + float(ell @ ell))
    zeta1 = np.array([1j * math.pi * k,
                      -tau * xi[0] + 0.5j * eta[0],
                      -tau * xi[1] + 0.5j * eta[1]]) + 1j * ell
    zeta2 = np.array([-1j * math.pi * k,
                      tau * xi[0] - 0.5j * eta[0],
                      tau * xi[1] - 0.5j * eta[1]]) + 1j * ell

    n1 = (zeta1[0].imag - theta) / (2 * math.pi)
    n2 = (zeta2[0].imag - theta) / (2 * math.pi)
    n_axial_1 = int(round(n1))
    n_axial_2 = int(round(n2))
    # the parity shift c_k exists precisely to make these integers
    assert abs(n1 - n_axial_1) < 1e-9 and abs(n2 - n_axial_2) < 1e-9

    eta = eta.copy(); eta.setflags(write=False)
    xi = xi.copy(); xi.setflags(write=False)
    ell.setflags(write=False)
    zeta1.setflags(write=False)
    zeta2.setflags(write=False)
    return CgoPhase(k=int(k), eta=eta, xi=xi, r=float(r), theta=float(theta),
                    ell=ell, tau=tau, zeta1=zeta1, zeta2=zeta2,
                    n_axial_1=n_axial_1, n_axial_2=n_axial_2)


def phase_identity_defects(ph: CgoPhase) -> dict:
    """Relative defects of the algebraic identities plus the orthogonality
    pair; all should sit at rounding level."""
    scale = max(ph.tau, 1.0)
    target = 1j * np.array([2 * math.pi * ph.k, ph.eta[0], ph.eta[1]])
    return {
        "sum": float(np.abs(ph.zeta1 + np.conj(ph.zeta2) - target).max()) / scale,
        "isotropy1": abs(complex(ph.zeta1 @ ph.zeta1)) / scale ** 2,
        "isotropy2": abs(complex(ph.zeta2 @ ph.zeta2)) / scale ** 2,
        "re_im_1": abs(float(ph.zeta1.real @ ph.zeta1.imag)) / scale ** 2,
        "re_im_2": abs(float(ph.zeta2.real @ ph.zeta2.imag)) / scale ** 2,
        "ell_orth": abs(float(ph.ell @ np.array([2 * math.pi * ph.k, *ph.eta]))) / scale ** 2,
        "ell_xi": abs(float(ph.ell[1:] @ ph.xi)) / scale,
    }


# ----------------------------------------------------------------------------
# periodic extension cell
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TorusLattice:
    """Spectral grid on the extension cell (0,1) x (-L, L)^2.

    Axial frequencies are 2 pi n, transverse ones pi m / L, with |n| <= k_axial
    and |m| <= k_trans (odd grid sizes, numpy FFT layout).
    """

    L: float
    k_axial: int = 16
    k_trans: int = 32

    def __post_init__(self):
        if self.L <= 0 or self.k_axial < 1 or self.k_trans < 1:
            raise ValueError("invalid torus lattice parameters")

    @property
    def shape(self) -> tuple:
        return (2 * self.k_axial + 1, 2 * self.k_trans + 1, 2 * self.k_trans + 1)

    @property
    def volume(self) -> float:
        return (2 * self.L) ** 2

    def check_supports(self, cs: CrossSection) -> None:
        if self.L < 2 * cs.c_omega:
            raise ValueError(
                f"torus half-side L={self.L} too small: need L >= 2 c_omega = "
                f"{2 * cs.c_omega} so the zero-extension is unambiguous")

    def frequencies(self):
        """(q1, q2, q3) 1-D frequency arrays in FFT layout."""
        n1, n2, _ = self.shape
        q1 = 2 * math.pi * np.fft.fftfreq(n1, d=1.0 / n1)
        qt = (math.pi / self.L) * np.fft.fftfreq(n2, d=1.0 / n2)
        return q1, qt, qt

    def axial_integers(self) -> np.ndarray:
        n1 = self.shape[0]
        return np.rint(np.fft.fftfreq(n1, d=1.0 / n1)).astype(int)

    def grid(self):
        """Collocation points (x1 (n1,), x2 (n2,), x3 (n2,))."""
        n1, n2, _ = self.shape
        x1 = np.arange(n1) / n1
        xt = -self.L + 2 * self.L * np.arange(n2) / n2
        return x1, xt, xt


def sample_potential_on_torus(V: PeriodicPotential, lat: TorusLattice) -> np.ndarray:
    """Collocation values of V on the extension cell (zero off-support)."""
    x1, x2, x3 = lat.grid()
    X2, X3 = np.meshgrid(x2, x3, indexing="ij")
    out = np.zeros(lat.shape, dtype=complex)
    for m in range(-V.cutoff, V.cutoff + 1):
        fm = V.sample_cartesian(m, X2, X3)
        if not np.any(fm):
            continue
        out += np.exp(2j * np.pi * m * x1)[:, None, None] * fm[None, :, :]
    return out


def symbol(ph: CgoPhase, which: int, lat: TorusLattice) -> np.ndarray:
    """p(q) = |q|^2 - 2 i zeta . q on the FFT-ordered frequency grid."""
    z = ph.zeta(which)
    q1, q2, q3 = lat.frequencies()
    Q1 = q1[:, None, None]
    Q2 = q2[None, :, None]
    Q3 = q3[None, None, :]
    return (Q1 ** 2 + Q2 ** 2 + Q3 ** 2
            - 2j * (z[0] * Q1 + z[1] * Q2 + z[2] * Q3))


def symbol_gap(ph: CgoPhase, lat: TorusLattice, which: int) -> float:
    """min |p(q)| over nonzero lattice frequencies.

    The constant mode is excluded (p(0) = 0 always; its solvability is
    handled separately by the remainder solver).  A gap below 1e-8 raises,
    naming the offending frequency.
    """
    p = symbol(ph, which, lat)
    ap = np.abs(p)
    ap[0, 0, 0] = np.inf
    gap = float(ap.min())
    if gap < 1e-8:
        loc = np.unravel_index(int(np.argmin(ap)), ap.shape)
        q1, q2, q3 = lat.frequencies()
        q = (float(q1[loc[0]]), float(q2[loc[1]]), float(q3[loc[2]]))
        raise CharacteristicLatticeError(
            f"characteristic lattice point q={q} with |p|={gap:.3e}", q=q)
    return gap


def axial_mode_values(coeffs: np.ndarray, lat: TorusLattice,
                      points: np.ndarray, modes) -> np.ndarray:
    """Evaluate axial-mode functions of a spectral field at cartesian points.

    `coeffs` is an unnormalized fftn array on lat.shape; returns the array
    f_m(points) of shape (len(modes), len(points)) where
    f(x) = sum_m f_m(x') exp(2 pi i m x1).  The transverse samples start at
    -L, so the interpolant's exponentials attach to x' + L.
    """
    ntot = coeffs.size
    q1_int = lat.axial_integers()
    _, q2, q3 = lat.frequencies()
    E2 = np.exp(1j * np.outer(points[:, 0] + lat.L, q2))
    E3 = np.exp(1j * np.outer(points[:, 1] + lat.L, q3))
    out = np.empty((len(modes), len(points)), dtype=complex)
    for i, m in enumerate(modes):
        sel = np.nonzero(q1_int == m)[0]
        if len(sel) == 0:
            out[i] = 0.0
            continue
        slab = coeffs[sel[0]] / ntot
        out[i] = np.einsum("ab,na,nb->n", slab, E2, E3, optimize=True)
    return out


@dataclass
class CgoRemainder:
    """Converged remainder on the extension cell (spectral representation).

    `residual` is the residual of the projected equation (all nonzero modes):
    the quantity the fixed point controls and the solve's postcondition.
    The constant mode is characteristic for the periodic extension; its
    forcing |mean(V (1 + w))| cannot be removed by any small remainder and is
    reported as `constant_mode_residual` (zero only when the potential's cell
    mean decouples from the probe).  `residual_full` combines both.
    """

    phase: CgoPhase
    which: int
    lat: TorusLattice
    w_hat: np.ndarray            # FFT-layout coefficients (unnormalized fftn)
    res_hat: np.ndarray          # residual spectrum at convergence
    l2: float
    h1_semi: float
    h2_semi: float
    residual: float
    residual_full: float
    v_norm: float
    constant_mode_residual: float
    alpha: complex
    iterations: int
    gap: float

    def axial_mode_values(self, points: np.ndarray, modes) -> np.ndarray:
        return axial_mode_values(self.w_hat, self.lat, points, modes)


def _cell_norm(vals: np.ndarray, volume: float) -> float:
    return math.sqrt(volume * float(np.mean(np.abs(vals) ** 2)))


def solve_remainder(V: PeriodicPotential, ph: CgoPhase, which: int,
                    lat: TorusLattice, tol: float = 1e-10,
                    max_iter: int = 50, cs: CrossSection = None) -> CgoRemainder:
    """Fixed-point solve of (-Lap - 2 zeta . grad) w = -V (1 + w).

    Each sweep inverts the symbol on nonzero modes,
    w <- -p(D)^{-1} P_perp [V (1 + w)], and takes a Newton step on the
    constant mode so that the solvability constraint mean(V (1 + w)) = 0
    holds at convergence; the reported residual covers all modes.  Residual
    growth raises TauTooSmallError (contraction needs |V| / gap < 1).
    """
    if cs is not None:
        lat.check_supports(cs)
    gap = symbol_gap(ph, lat, which)

    V_g = sample_potential_on_torus(V, lat)
    vol = lat.volume
    v_norm = _cell_norm(V_g, vol)
    ntot = V_g.size

    if v_norm == 0.0:
        zero = np.zeros(lat.shape, dtype=complex)
        return CgoRemainder(ph, which, lat, zero, zero.copy(), 0.0, 0.0, 0.0,
                            0.0, 0.0, 0.0, 0.0, 0.0 + 0.0j, 1, gap)

    p = symbol(ph, which, lat)
    inv_p = np.zeros_like(p)
    nz = np.abs(p) > 0
    inv_p[nz] = 1.0 / p[nz]
    inv_p[0, 0, 0] = 0.0
    q1, q2, q3 = lat.frequencies()
    absq2 = (q1 ** 2)[:, None, None] + (q2 ** 2)[None, :, None] + (q3 ** 2)[None, None, :]

    # first-order response of the projected solve to a constant shift; used
    # as the Newton slope for the solvability constraint on the constant mode
    phi0 = np.fft.ifftn(-inv_p * np.fft.fftn(V_g))
    denom = complex(np.mean(V_g) + np.mean(V_g * phi0))
    newton_ok = abs(denom) > 1e-13 * float(np.abs(V_g).max())
    # only correct the constant mode when its violation is actually above the
    # target; a Newton step from noise/noise would derail the iteration
    c_target = tol * v_norm / math.sqrt(vol)

    w = np.zeros(lat.shape, dtype=complex)
    alpha = 0.0 + 0.0j
    res_prev = math.inf
    n_growth = 0
    res0 = None
    res_proj = math.inf
    for it in range(1, max_iter + 1):
        rhs_hat = np.fft.fftn(V_g * (1.0 + w))
        w_perp = np.fft.ifftn(-inv_p * rhs_hat)
        c = complex(np.mean(V_g * (1.0 + w_perp)))
        if newton_ok and abs(c) > 0.2 * c_target:
            cand = -c / denom
            if abs(cand) <= 0.5:
                alpha = cand
        w = w_perp + alpha

        w_hat = np.fft.fftn(w)
        res_hat = p * w_hat + np.fft.fftn(V_g * (1.0 + w))
        res_c = abs(res_hat[0, 0, 0]) / ntot  # = |mean(V (1 + w))|
        res_hat[0, 0, 0] = 0.0
        res_proj = math.sqrt(vol * float(np.sum(np.abs(res_hat) ** 2)) / ntot ** 2)
        if res0 is None:
            res0 = res_proj
        if res_proj <= tol * v_norm:
            const_res = res_c * math.sqrt(vol)
            res_full = math.hypot(res_proj, const_res)
            if const_res > 2e-2 * v_norm:
                logger.warning(
                    "constant-mode obstruction %.3e (|V| = %.3e): the periodic "
                    "extension admits no small exactly-solvable remainder for "
                    "this potential (its cell mean couples to the probe); the "
                    "projected equation is solved and the obstruction reported",
                    const_res, v_norm)
            l2 = _cell_norm(w, vol)
            h1 = math.sqrt(vol * float(np.sum(absq2 * np.abs(w_hat) ** 2)) / ntot ** 2)
            h2 = math.sqrt(vol * float(np.sum(absq2 ** 2 * np.abs(w_hat) ** 2)) / ntot ** 2)
            logger.debug("remainder converged in %d iterations (tau=%.2f, gap=%.3f)",
                         it, ph.tau, gap)
            return CgoRemainder(ph, which, lat, w_hat, res_hat, l2, h1, h2,
                                res_proj, res_full, v_norm, const_res, alpha,
                                it, gap)
        if res_proj > res_prev * (1.0 + 1e-12):
            n_growth += 1
            if n_growth >= 3 and res_proj > 10.0 * res0:
                raise TauTooSmallError(
                    f"remainder iteration diverging (residual {res_proj:.3e} at "
                    f"iteration {it}); the scale tau={ph.tau:.2f} is too small "
                    f"for |V|~{float(np.abs(V_g).max()):.3f} against gap {gap:.3f}")
        else:
            n_growth = 0
        res_prev = res_proj

    raise ConvergenceError(
        f"remainder fixed point not converged in {max_iter} iterations "
        f"(residual {res_proj:.3e}, target {tol * v_norm:.3e})",
        iterations=max_iter, estimate=res_proj)


# ----------------------------------------------------------------------------
# restriction to the waveguide cell
# ----------------------------------------------------------------------------

def cgo_field(ph: CgoPhase, which: int, rem: CgoRemainder, cs: CrossSection,
              k_half: int = 6, theta: float = None, verify_residual: bool = True):
    """Restrict u = (1 + w) exp(zeta . x) to the cell, fiber-resolved.

    Returns (Field, weighted_residual).  The residual is
    |exp(-zeta . x)(-Lap + V) u| in L2 over (0,1) x omega, evaluated
    spectrally from the converged remainder equation (a raw grid-stencil
    residual would be dominated by O((h tau)^2) discretization noise rather
    than solve quality).  The fiber window is n0 +/- k_half around the
    probe's carrier mode.
    """
    from .fiber import Field

    if theta is not None and abs(theta - ph.theta) > 1e-12:
        raise ValueError(f"requested fiber theta={theta} but the phase was "
                         f"built at theta={ph.theta}")
    z = ph.zeta(which)
    n0 = ph.n_axial(which)
    if ph.tau * cs.radius > 280.0:
        raise OverflowError(f"exp(zeta . x) overflows float64 at tau={ph.tau:.1f}")

    modes = np.arange(-k_half, k_half + 1)
    w_int = rem.axial_mode_values(cs.nodes, modes)
    w_bnd = rem.axial_mode_values(cs.boundary_nodes, modes)

    carrier_int = np.exp(cs.nodes @ z[1:])
    carrier_bnd = np.exp(cs.boundary_nodes @ z[1:])
    delta = (modes == 0).astype(complex)
    interior = (delta[:, None] + w_int) * carrier_int[None, :]
    boundary = (delta[:, None] + w_bnd) * carrier_bnd[None, :]
    u = Field(ph.theta, n0 - k_half, n0 + k_half, interior, boundary)

    weighted_residual = None
    if verify_residual:
        weighted_residual = restricted_residual(rem, cs)
    return u, weighted_residual


def restricted_residual(rem: CgoRemainder, cs: CrossSection) -> float:
    """L2 norm over (0,1) x omega of the remainder-equation residual.

    This equals |exp(-zeta . x) (-Lap + V) u| there, because
    (-Lap + V) [(1 + w) e^{zeta . x}] = e^{zeta . x} [(-Lap - 2 zeta . grad) w
    + V (1 + w)] when zeta . zeta = 0.
    """
    if not np.any(rem.res_hat):
        return 0.0
    modes = rem.lat.axial_integers()
    vals = axial_mode_values(rem.res_hat, rem.lat, cs.nodes, list(modes))
    return math.sqrt(float(np.sum(cs.area_weights[None, :] * np.abs(vals) ** 2)))


def cgo_boundary_trace(ph: CgoPhase, which: int, rem: CgoRemainder,
                       cs: CrossSection, k_half: int = 6):
    """Boundary values of the probe, fiber-resolved; (ks, values (nm, nphi))."""
    z = ph.zeta(which)
    n0 = ph.n_axial(which)
    modes = np.arange(-k_half, k_half + 1)
    w_bnd = rem.axial_mode_values(cs.boundary_nodes, modes)
    carrier = np.exp(cs.boundary_nodes @ z[1:])
    delta = (modes == 0).astype(complex)
    vals = (delta[:, None] + w_bnd) * carrier[None, :]
    return n0 + modes, vals
