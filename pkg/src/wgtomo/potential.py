"""Periodic potentials on the waveguide cell and their frequency-domain norms.

A potential V(x1, x') that is 1-periodic in the axial variable is stored as a
finite stack of axial Fourier modes V_m(x') sampled on the cross-section grid,
V = sum_m V_m(x') exp(2 pi i m x1).  Realness is the structural invariant
V_{-m} = conj(V_m).  The implied extension of V by zero outside the
cross-section is realized by keeping fields only on interior nodes.

Two H^{-1}-type quantities live here: a frequency-lattice sum with weight
(1 + |(2 pi k, eta)|^2)^{-1}, and an independent dual-norm oracle that
diagonalizes (I - Lap) on an enclosing box (axially periodic, Dirichlet
walls).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import CrossSection

logger = logging.getLogger(__name__)

_N_X1_SAMPLES = 64


@dataclass(frozen=True)
class PeriodicPotential:
    """Axial-mode representation of a real 1-periodic potential.

    `modes[m + cutoff]` holds V_m on the interior nodes.  `mode_funcs`, when
    present, are exact callables m -> f(x2, x3) used to resample the
    potential off the polar grid (torus extensions for probe-field solves);
    they must agree with the stored samples.
    """

    cutoff: int
    modes: np.ndarray              # (2*cutoff+1, n_interior) complex
    m_plus: float
    m_minus: float
    cs_hash: str
    mode_funcs: tuple = None       # optional tuple of (m, callable) pairs

    def __post_init__(self):
        if self.modes.shape[0] != 2 * self.cutoff + 1:
            raise ValueError("modes array does not match cutoff")
        defect = reality_defect(self.modes)
        if defect > 1e-12 * (1.0 + np.abs(self.modes).max()):
            raise ValueError(f"reality invariant violated: defect {defect:.3e}")
        self.modes.setflags(write=False)

    def mode(self, m: int) -> np.ndarray:
        """V_m on interior nodes; exactly zero beyond the cutoff."""
        if abs(m) > self.cutoff:
            return np.zeros(self.modes.shape[1], dtype=complex)
        return self.modes[m + self.cutoff]

    def evaluate(self, x1) -> np.ndarray:
        """Physical values V(x1, nodes); shape (len(x1), n_interior), real."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        ms = np.arange(-self.cutoff, self.cutoff + 1)
        phases = np.exp(2j * np.pi * np.outer(x1, ms))
        vals = phases @ self.modes
        return vals.real

    def sample_cartesian(self, m: int, x2, x3) -> np.ndarray:
        """Mode m at arbitrary cartesian points, zero outside the support.

        Uses the exact callables when available, otherwise nearest-grid
        lookup on the polar grid (adequate only for diagnostics).
        """
        if self.mode_funcs is not None:
            for mm, fn in self.mode_funcs:
                if mm == m:
                    return np.asarray(fn(x2, x3), dtype=complex)
            return np.zeros(np.broadcast(x2, x3).shape, dtype=complex)
        if abs(m) > self.cutoff:
            return np.zeros(np.broadcast(x2, x3).shape, dtype=complex)
        raise ValueError(
            "potential has no analytic mode callables; resampling off the "
            "polar grid is not supported for file-loaded potentials"
        )

    def sup_abs(self, n_x1: int = _N_X1_SAMPLES) -> float:
        vals = self.evaluate(np.arange(n_x1) / n_x1)
        return float(np.abs(vals).max()) if vals.size else 0.0

    def sup_negative_part(self, n_x1: int = _N_X1_SAMPLES) -> float:
        vals = self.evaluate(np.arange(n_x1) / n_x1)
        return float(np.maximum(0.0, -vals).max()) if vals.size else 0.0

    def l2_norm_cell(self, cs: CrossSection) -> float:
        """L2 norm over the unit cell; exact in x1 by mode orthogonality."""
        return math.sqrt(float(np.sum(cs.area_weights * np.abs(self.modes) ** 2)))

    def content_hash(self) -> str:
        from .util import content_hash

        return content_hash("potential", self.cutoff, self.modes, self.cs_hash)

    def scaled(self, t: float) -> "PeriodicPotential":
        funcs = None
        if self.mode_funcs is not None:
            funcs = tuple((m, _scale_fn(fn, t)) for m, fn in self.mode_funcs)
        return PeriodicPotential(self.cutoff, t * self.modes, abs(t) * self.m_plus,
                                 abs(t) * self.m_minus, self.cs_hash, funcs)

    def __add__(self, other: "PeriodicPotential") -> "PeriodicPotential":
        if self.cs_hash != other.cs_hash:
            raise ValueError("potentials live on different grids")
        cut = max(self.cutoff, other.cutoff)
        modes = np.zeros((2 * cut + 1, self.modes.shape[1]), dtype=complex)
        modes[cut - self.cutoff: cut + self.cutoff + 1] += self.modes
        modes[cut - other.cutoff: cut + other.cutoff + 1] += other.modes
        funcs = None
        if self.mode_funcs is not None and other.mode_funcs is not None:
            merged = {}
            for m, fn in self.mode_funcs:
                merged[m] = [fn]
            for m, fn in other.mode_funcs:
                merged.setdefault(m, []).append(fn)
            funcs = tuple((m, _sum_fns(fns)) for m, fns in sorted(merged.items()))
        return PeriodicPotential(cut, modes, self.m_plus + other.m_plus,
                                 self.m_minus + other.m_minus, self.cs_hash, funcs)


def _scale_fn(fn, t):
    return lambda x2, x3: t * fn(x2, x3)


def _sum_fns(fns):
    return lambda x2, x3: sum(fn(x2, x3) for fn in fns)


def reality_defect(modes: np.ndarray) -> float:
    """max |V_{-m} - conj(V_m)| over the stored modes."""
    return float(np.abs(modes[::-1] - np.conj(modes)).max())


# ----------------------------------------------------------------------------
# built-in families (all compactly supported strictly inside the disk)
# ----------------------------------------------------------------------------

def _smooth_bump(r2, s):
    """exp(1 - 1/(1 - r^2/s^2)) inside radius s, zero outside; C-infinity."""
    out = np.zeros_like(np.asarray(r2, dtype=float))
    u = np.asarray(r2, dtype=float) / s ** 2
    inside = u < 1.0
    with np.errstate(divide="ignore", over="ignore"):
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside]))
    return out


def _poly_bump(r2, s):
    """(1 - r^2/s^2)^3 inside radius s; C^2 with closed-form integrals."""
    u = np.asarray(r2, dtype=float) / s ** 2
    return np.where(u < 1.0, (1.0 - u) ** 3, 0.0)


def _make(cs, mode_dict, m_plus, m_minus):
    cut = max(abs(m) for m in mode_dict) if mode_dict else 0
    modes = np.zeros((2 * cut + 1, cs.n_interior), dtype=complex)
    x2, x3 = cs.nodes[:, 0], cs.nodes[:, 1]
    for m, fn in mode_dict.items():
        modes[m + cut] = fn(x2, x3)
    funcs = tuple(sorted(mode_dict.items()))
    return PeriodicPotential(cut, modes, float(m_plus), float(m_minus),
                             cs.content_hash(), funcs)


def zero_potential(cs: CrossSection, m_plus=1.0, m_minus=1.0) -> PeriodicPotential:
    return _make(cs, {0: lambda x2, x3: np.zeros_like(np.asarray(x2, float), dtype=complex)},
                 m_plus, m_minus)


def radial_bump(cs: CrossSection, amplitude=1.0, s=0.7) -> PeriodicPotential:
    """x1-independent smooth radial bump of height `amplitude`."""
    if not 0 < s < cs.radius:
        raise ValueError("bump support must sit strictly inside the disk")
    a = float(amplitude)

    def f(x2, x3):
        return (a * _smooth_bump(np.asarray(x2) ** 2 + np.asarray(x3) ** 2, s)).astype(complex)

    return _make(cs, {0: f}, abs(a), max(0.0, -a))


def poly_bump(cs: CrossSection, amplitude=1.0, s=0.7) -> PeriodicPotential:
    """x1-independent polynomial bump; integral over the disk is
    amplitude * pi * s^2 / 4 exactly."""
    if not 0 < s < cs.radius:
        raise ValueError("bump support must sit strictly inside the disk")
    a = float(amplitude)

    def f(x2, x3):
        return (a * _poly_bump(np.asarray(x2) ** 2 + np.asarray(x3) ** 2, s)).astype(complex)

    return _make(cs, {0: f}, abs(a), max(0.0, -a))


def angular_bump(cs: CrossSection, amplitude=1.0, s=0.7) -> PeriodicPotential:
    """x1-independent bump modulated by cos(phi) = x2/|x'|.

    Its transverse transform vanishes on the x3 frequency axis, which makes
    it the potential of choice for probe-field experiments aligned with that
    axis.
    """
    if not 0 < s < cs.radius:
        raise ValueError("bump support must sit strictly inside the disk")
    a = float(amplitude)

    def f(x2, x3):
        x2 = np.asarray(x2, dtype=float)
        x3 = np.asarray(x3, dtype=float)
        r2 = x2 ** 2 + x3 ** 2
        r = np.sqrt(r2)
        cosphi = np.divide(x2, r, out=np.zeros_like(r), where=r > 0)
        return (a * _smooth_bump(r2, s) * cosphi).astype(complex)

    return _make(cs, {0: f}, abs(a), abs(a))


def single_x1_mode(cs: CrossSection, amplitude=1.0, s=0.7,
                   profile: str = "radial") -> PeriodicPotential:
    """V = amplitude * cos(2 pi x1) * bump(x'): one axial mode pair.

    The axial mean vanishes, so the zero-frequency axial plane carries no
    content; remainder solves against this family show clean large-parameter
    decay.
    """
    if not 0 < s < cs.radius:
        raise ValueError("bump support must sit strictly inside the disk")
    a = float(amplitude)
    base = {"radial": _smooth_bump, "poly": _poly_bump}[profile] if profile != "angular" else None

    def half(x2, x3):
        x2 = np.asarray(x2, dtype=float)
        x3 = np.asarray(x3, dtype=float)
        r2 = x2 ** 2 + x3 ** 2
        if profile == "angular":
            r = np.sqrt(r2)
            cosphi = np.divide(x2, r, out=np.zeros_like(r), where=r > 0)
            prof = _smooth_bump(r2, s) * cosphi
        else:
            prof = base(r2, s)
        return (0.5 * a * prof).astype(complex)

    return _make(cs, {1: half, -1: half}, abs(a), abs(a))


def random_band_limited(cs: CrossSection, seed: int, m_max=1, amplitude=0.5,
                        n_angular=2) -> PeriodicPotential:
    """Seeded random potential: low axial modes x low angular modes x smooth
    radial envelope, normalized to the requested sup amplitude."""
    rng = np.random.default_rng(seed)
    s = 0.75 * cs.radius
    terms = {}
    for m in range(0, m_max + 1):
        coefs = rng.standard_normal(2 * n_angular + 1) + 1j * rng.standard_normal(2 * n_angular + 1)
        if m == 0:
            # reality for the mean mode: pair +/- angular harmonics
            coefs = coefs + np.conj(coefs[::-1])
        terms[m] = coefs

    def make_fn(m, coefs):
        def f(x2, x3):
            x2 = np.asarray(x2, dtype=float)
            x3 = np.asarray(x3, dtype=float)
            r2 = x2 ** 2 + x3 ** 2
            r = np.sqrt(r2)
            phi = np.arctan2(x3, x2)
            env = _smooth_bump(r2, s)
            out = np.zeros(np.broadcast(x2, x3).shape, dtype=complex)
            for q, c in zip(range(-n_angular, n_angular + 1), coefs):
                out += c * np.exp(1j * q * phi) * (r / s) ** abs(q)
            return out * env

        return f

    mode_dict = {}
    for m, coefs in terms.items():
        fn = make_fn(m, coefs)
        mode_dict[m] = fn
        if m > 0:
            mode_dict[-m] = _conj_fn(fn)
    pot = _make(cs, mode_dict, 1.0, 1.0)
    sup = pot.sup_abs()
    scale = amplitude / sup if sup > 0 else 1.0
    pot = pot.scaled(scale)
    return PeriodicPotential(pot.cutoff, pot.modes, amplitude, amplitude,
                             pot.cs_hash, pot.mode_funcs)


def _conj_fn(fn):
    return lambda x2, x3: np.conj(fn(x2, x3))


# ----------------------------------------------------------------------------
# admissibility
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class AdmissibilityReport:
    sup_abs: float
    sup_negative_part: float
    m_plus: float
    m_minus: float
    c_omega: float
    bound_ok: bool          # sup|V| <= M+ and negative part <= M-
    gate_ok: bool           # M- < C_omega
    passed: bool


def admissible_check(V: PeriodicPotential, c_omega: float) -> AdmissibilityReport:
    """Report-only check of the admissibility budget (never raises)."""
    sup = V.sup_abs()
    neg = V.sup_negative_part()
    bound_ok = sup <= V.m_plus + 1e-12 and neg <= V.m_minus + 1e-12
    gate_ok = V.m_minus < c_omega
    return AdmissibilityReport(sup, neg, V.m_plus, V.m_minus, float(c_omega),
                               bound_ok, gate_ok, bound_ok and gate_ok)


# ----------------------------------------------------------------------------
# frequency lattice and the two H^{-1} routes
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class FrequencyLattice:
    """Ball |(2 pi k, eta)| <= rho sampled with integer axial k and a uniform
    transverse grid of step deta."""

    rho: float
    deta: float

    def __post_init__(self):
        if self.rho <= 0 or self.deta <= 0:
            raise ValueError("rho and deta must be positive")

    def k_range(self):
        kmax = int(math.floor(self.rho / (2 * math.pi)))
        return range(-kmax, kmax + 1)

    def eta_points(self, k: int) -> np.ndarray:
        """Transverse samples for axial index k, lexicographic order; (m, 2)."""
        rad2 = self.rho ** 2 - (2 * math.pi * k) ** 2
        if rad2 < 0:
            return np.zeros((0, 2))
        imax = int(math.floor(math.sqrt(rad2) / self.deta))
        ii = np.arange(-imax, imax + 1)
        E2, E3 = np.meshgrid(ii * self.deta, ii * self.deta, indexing="ij")
        pts = np.stack([E2.ravel(), E3.ravel()], axis=1)
        keep = pts[:, 0] ** 2 + pts[:, 1] ** 2 <= rad2 + 1e-12
        return pts[keep]

    def points(self):
        """Deterministic iteration over (k, eta) in the ball."""
        for k in self.k_range():
            for eta in self.eta_points(k):
                yield k, eta

    def n_points(self) -> int:
        return sum(len(self.eta_points(k)) for k in self.k_range())


def fourier_coefficient_direct(V: PeriodicPotential, k: int, eta, cs: CrossSection) -> complex:
    """(1/2 pi) int_omega V_k(x') exp(-i eta . x') dx' by grid quadrature.

    The axial integral is exact by mode orthogonality; |k| beyond the cutoff
    gives exactly zero.
    """
    eta = np.asarray(eta, dtype=float)
    if abs(k) > V.cutoff:
        return 0.0 + 0.0j
    vk = V.mode(k)
    ph = np.exp(-1j * (cs.nodes @ eta))
    return complex(np.sum(cs.area_weights * vk * ph) / (2.0 * math.pi))


def coefficient_table(V: PeriodicPotential, lat: FrequencyLattice, cs: CrossSection):
    """All direct coefficients over the lattice, vectorized per axial index.

    Returns a list of (k, eta_array, vhat_array).
    """
    out = []
    for k in lat.k_range():
        etas = lat.eta_points(k)
        if len(etas) == 0 or abs(k) > V.cutoff:
            out.append((k, etas, np.zeros(len(etas), dtype=complex)))
            continue
        vk = V.mode(k) * cs.area_weights
        ph = np.exp(-1j * (etas @ cs.nodes.T))
        out.append((k, etas, (ph @ vk) / (2.0 * math.pi)))
    return out


def h_minus_one_lattice(V: PeriodicPotential, lat: FrequencyLattice, cs: CrossSection) -> float:
    """Frequency-lattice H^{-1} sum with weight (1 + |(2 pi k, eta)|^2)^{-1}."""
    if lat.n_points() == 0:
        raise ValueError("empty frequency lattice")
    if lat.deta > math.pi / cs.c_omega:
        logger.warning("lattice step deta=%.3f exceeds pi/c_omega=%.3f; integrand "
                       "may be under-resolved", lat.deta, math.pi / cs.c_omega)
    total = 0.0
    for k, etas, vh in coefficient_table(V, lat, cs):
        if len(etas) == 0:
            continue
        w = 1.0 / (1.0 + (2 * math.pi * k) ** 2 + etas[:, 0] ** 2 + etas[:, 1] ** 2)
        total += float(np.sum(w * np.abs(vh) ** 2)) * lat.deta ** 2
    return math.sqrt(total)


def dual_norm_from_samples(points: np.ndarray, weights: np.ndarray, mode_values,
                           box_half: float, n_sine: int = 48) -> float:
    """H^{-1}-type dual norm by diagonalizing (I - Lap) on an enclosing box.

    The box is (0,1) x (-box_half, box_half)^2 with axial periodicity and
    homogeneous Dirichlet walls; sine modes diagonalize the solve exactly, so
    the returned value is <f, (I - Lap)^{-1} f>^{1/2} truncated at n_sine
    modes per transverse dimension.

    `mode_values` is a list of (k, values-at-points) axial-mode pairs.
    """
    L = float(box_half)
    ms = np.arange(1, n_sine + 1)
    # orthonormal sine factors evaluated at the sample points
    S2 = np.sin(np.pi * np.outer(points[:, 0] + L, ms) / (2 * L)) / math.sqrt(L)
    S3 = np.sin(np.pi * np.outer(points[:, 1] + L, ms) / (2 * L)) / math.sqrt(L)
    q2 = (np.pi * ms / (2 * L)) ** 2
    eig_t = 1.0 + q2[:, None] + q2[None, :]
    total = 0.0
    for k, vals in mode_values:
        coef = np.einsum("p,pa,pb->ab", weights * vals, S2, S3, optimize=True)
        total += float(np.sum(np.abs(coef) ** 2 / (eig_t + (2 * math.pi * k) ** 2)))
    return math.sqrt(total)


def h_minus_one_dual_oracle(V: PeriodicPotential, cs: CrossSection,
                            box_half: float = None, n_sine: int = 48) -> float:
    """Independent dual-norm oracle for the potential on its grid.

    Solves (I - Lap) u = V on the enclosing box (V extended by zero) and
    returns <V, u>^{1/2}.  Vanishes exactly on V = 0 and is 1-homogeneous.
    """
    if box_half is None:
        box_half = 2.0 * cs.c_omega
    if box_half < cs.c_omega:
        raise ValueError("box must contain the cross-section (box_half >= c_omega)")
    mode_values = [(m, V.mode(m)) for m in range(-V.cutoff, V.cutoff + 1)]
    return dual_norm_from_samples(cs.nodes, cs.area_weights, mode_values,
                                  box_half, n_sine)


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------

def save_potential(V: PeriodicPotential, path: str) -> None:
    """Write `<path>.json` (header) and `<path>.npz` (mode arrays)."""
    header = {
        "cutoff": V.cutoff,
        "m_plus": V.m_plus,
        "m_minus": V.m_minus,
        "cs_hash": V.cs_hash,
        "n_interior": int(V.modes.shape[1]),
    }
    with open(path + ".json", "w") as fh:
        json.dump(header, fh, sort_keys=True, indent=1)
    np.savez(path + ".npz", modes=V.modes)


def load_potential(path: str, cs: CrossSection = None) -> PeriodicPotential:
    """Load a potential; validates the reality invariant and the grid hash."""
    with open(path + ".json") as fh:
        header = json.load(fh)
    modes = np.load(path + ".npz")["modes"]
    if reality_defect(modes) > 1e-12 * (1.0 + np.abs(modes).max()):
        raise ValueError("stored potential violates the reality invariant")
    if cs is not None and header["cs_hash"] != cs.content_hash():
        raise ValueError("potential was stored for a different grid")
    return PeriodicPotential(header["cutoff"], modes.astype(complex),
                             header["m_plus"], header["m_minus"], header["cs_hash"])
