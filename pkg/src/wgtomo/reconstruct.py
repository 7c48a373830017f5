"""Fourier extraction of a potential difference from DN data, lattice sweeps,
dual-norm synthesis, and the log-log stability experiment.

For a phase bundle at (k, eta) the product of the two probe fields collapses
to the single oscillation exp(-i(2 pi k x1 + eta . x')), so the boundary
integral of the DN-difference data against the conjugate probe estimates

    2 pi vhat_k(eta) = int exp(-i(2 pi k x1 + eta . x')) (V2 - V1) dx1 dx'

up to a remainder that shrinks with the phase scale.  In partial-data mode
only the shadowed-side boundary integral is kept (it sits inside the
observation patch by the margin condition); the dropped illuminated term is
the price of partial data and is controlled by the weighted inequality.

The stability sweep ties the DN-difference norm gamma to the dual-norm size
of the potential difference through the log-log modulus

    Phi(gamma) = gamma              for gamma >= gamma*,
                 1 / ln |ln gamma|  for 0 < gamma < gamma*,
                 0                  for gamma = 0.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cgo import (CgoPhase, TorusLattice, cgo_boundary_trace, cgo_field,
                  make_phase, solve_remainder, symbol_gap)
from .dnmap import assemble_dn, dn_difference_norm, trace_gram, trace_neumann
from .errors import CharacteristicLatticeError
from .fiber import assemble
from .geometry import BoundaryArc, CrossSection, face, full_boundary_arc
from .potential import (FrequencyLattice, PeriodicPotential,
                        fourier_coefficient_direct, h_minus_one_dual_oracle)

logger = logging.getLogger(__name__)


def phi(gamma: float, gamma_star: float) -> float:
    """Log-log modulus of continuity; exact piecewise evaluation.

    Not continuous at gamma* in general; meaningful monotonicity on the
    lower branch needs gamma* <= 1/e.
    """
    if not 0.0 < gamma_star < 1.0:
        raise ValueError(f"gamma_star must lie in (0, 1), got {gamma_star}")
    if gamma < 0.0:
        raise ValueError("gamma must be nonnegative")
    if gamma == 0.0:
        return 0.0
    if gamma >= gamma_star:
        return float(gamma)
    return 1.0 / math.log(abs(math.log(gamma)))


@dataclass(frozen=True)
class ExtractionConfig:
    """Knobs of the extraction pipeline.

    `eps` is the direction margin: directions xi with |xi - xi0| <= eps must
    have their eps-shadowed arc inside the observation patch G', which is the
    eps_obs-shadowed arc of xi0.  `r_min`/`gap_min` drive the per-point scale
    selection (smallest integer r >= r_min whose symbol gaps clear gap_min).
    """

    xi0: tuple = (1.0, 0.0)
    eps: float = 0.15
    eps_obs: float = 0.45
    theta: float = 0.6
    data_mode: str = "full"            # 'full' | 'partial'
    all_directions: bool = False
    lattice: FrequencyLattice = field(default_factory=lambda: FrequencyLattice(2.0, 0.75))
    gamma_star: float = 0.2
    # probe scales beyond tau ~ 20 overflow the float64 headroom of the
    # exponential dichotomy on a unit disk, so the scale ladder starts at 0
    r_min: int = 0
    r_search: int = 8
    gap_min: float = 0.5
    k_half: int = 4
    torus: TorusLattice = field(default_factory=lambda: TorusLattice(2.0, 12, 24))
    solver_tol: float = 1e-10
    solver_max_iter: int = 200

    def observation_arc(self, cs: CrossSection) -> BoundaryArc:
        return face(cs, np.asarray(self.xi0, float), self.eps_obs, "-")

    def validate(self, cs: CrossSection):
        """All configuration problems, empty when valid."""
        problems = []
        xi0 = np.asarray(self.xi0, dtype=float)
        if xi0.shape != (2,) or abs(np.linalg.norm(xi0) - 1.0) > 1e-9:
            problems.append(f"xi0 must be a unit 2-vector, got {self.xi0}")
            return problems
        if not 0.0 <= self.eps < 1.0:
            problems.append(f"eps must lie in [0, 1), got {self.eps}")
        if not self.eps < self.eps_obs < 1.0:
            problems.append(f"eps_obs must lie in (eps, 1), got {self.eps_obs}")
        if self.data_mode not in ("full", "partial"):
            problems.append(f"unknown data_mode {self.data_mode!r}")
        if self.data_mode == "partial" and self.all_directions:
            problems.append("all_directions covers every lattice point with "
                            "full-boundary data; it contradicts data_mode='partial'")
        if not 0.0 < self.gamma_star < 1.0:
            problems.append(f"gamma_star must lie in (0, 1), got {self.gamma_star}")
        if not 0.0 <= self.theta < 2 * math.pi:
            problems.append(f"theta must lie in [0, 2 pi), got {self.theta}")
        if self.torus.L < 2 * cs.c_omega:
            problems.append(f"torus half-side {self.torus.L} < 2 c_omega "
                            f"= {2 * cs.c_omega}")
        if not problems and self.eps > 0:
            # margin condition: every nearby direction's shadowed arc sits in
            # the observation patch
            obs = set(self.observation_arc(cs).indices.tolist())
            dalpha = 2.0 * math.asin(min(self.eps / 2.0, 1.0))
            alpha0 = math.atan2(xi0[1], xi0[0])
            for a in np.linspace(alpha0 - dalpha, alpha0 + dalpha, 181):
                xi = np.array([math.cos(a), math.sin(a)])
                shadow = face(cs, xi, self.eps, "-")
                missing = set(shadow.indices.tolist()) - obs
                if missing:
                    problems.append(
                        f"margin condition violated: direction angle {a:.4f} has "
                        f"{len(missing)} shadowed nodes outside the observation "
                        f"patch (eps={self.eps}, eps_obs={self.eps_obs})")
                    break
        return problems


@dataclass
class ExtractResult:
    """One coefficient estimate with its diagnostics."""

    k: int
    eta: np.ndarray
    xi: np.ndarray
    r: float
    tau: float
    theta: float
    value: complex               # estimate of int e^{-i(2 pi k x1 + eta.x')} V
    gap1: float
    gap2: float
    w1_l2: float
    w2_l2: float
    data_mode: str
    remainder_integral: complex  # int R over the cell (diagnostic)
    remainder_bound: float       # M+ (|w|^(1/2)(|w1|+|w2|) + |w1||w2|)
    extra_values: dict = field(default_factory=dict)


def _select_r(ph_args, cfg: ExtractionConfig):
    """Smallest integer r >= r_min whose phase clears the gap threshold."""
    k, eta, xi, theta = ph_args
    last_exc = None
    for r in range(cfg.r_min, cfg.r_min + cfg.r_search + 1):
        ph = make_phase(k, eta, xi, float(r), theta)
        try:
            g1 = symbol_gap(ph, cfg.torus, 1)
            g2 = symbol_gap(ph, cfg.torus, 2)
        except CharacteristicLatticeError as exc:
            last_exc = exc
            continue
        if min(g1, g2) >= cfg.gap_min:
            return ph, g1, g2
    raise CharacteristicLatticeError(
        f"no r in [{cfg.r_min}, {cfg.r_min + cfg.r_search}] clears the gap "
        f"threshold {cfg.gap_min} at (k={k}, eta={eta})"
        + (f"; last failure: {last_exc}" if last_exc else ""))


def _remainder_integral(V: PeriodicPotential, ph: CgoPhase, rem1, rem2):
    """int over the cell of e^{-i(2 pi k x1 + eta.x')} V (w2 + conj(w1)
    + w2 conj(w1)); V's zero extension makes the cell integral equal the
    cross-section one."""
    from .cgo import sample_potential_on_torus

    lat = rem1.lat
    V_g = sample_potential_on_torus(V, lat)
    if not np.any(V_g):
        return 0.0 + 0.0j
    x1, x2, x3 = lat.grid()
    osc = (np.exp(-2j * np.pi * ph.k * x1)[:, None, None]
           * np.exp(-1j * ph.eta[0] * x2)[None, :, None]
           * np.exp(-1j * ph.eta[1] * x3)[None, None, :])
    w1 = np.fft.ifftn(rem1.w_hat)
    w2 = np.fft.ifftn(rem2.w_hat)
    integrand = V_g * osc * (w2 + np.conj(w1) + w2 * np.conj(w1))
    return complex(np.mean(integrand) * lat.volume)


def extract_coefficient(V1: PeriodicPotential, V2: PeriodicPotential,
                        ph: CgoPhase, cs: CrossSection, cfg: ExtractionConfig,
                        arc: BoundaryArc = None,
                        extra_arcs: dict = None) -> ExtractResult:
    """Estimate 2 pi vhat_k(eta) of V = V2 - V1 from synthetic DN data.

    Builds the two probes, feeds the second probe's trace to discrete solves
    with V1 and V2, and integrates the Neumann difference against the first
    probe's conjugate trace over the boundary (full mode) or the shadowed
    arc only (partial mode).  `extra_arcs` reuses the same solves to evaluate
    the estimator on further observation arcs (results in `extra_values`).
    """
    if arc is None:
        if cfg.data_mode == "partial":
            arc = face(cs, ph.xi, cfg.eps, "-")
            obs = set(cfg.observation_arc(cs).indices.tolist())
            if set(arc.indices.tolist()) - obs:
                raise ValueError("shadowed arc escapes the observation patch; "
                                 "direction outside the configured margin")
        else:
            arc = full_boundary_arc(cs)

    rem1 = solve_remainder(V1, ph, 1, cfg.torus, cfg.solver_tol,
                           cfg.solver_max_iter, cs)
    rem2 = solve_remainder(V2, ph, 2, cfg.torus, cfg.solver_tol,
                           cfg.solver_max_iter, cs)

    u2, _ = cgo_field(ph, 2, rem2, cs, cfg.k_half, verify_residual=False)
    ks1, u1_b = cgo_boundary_trace(ph, 1, rem1, cs, cfg.k_half)

    k_min = min(ph.n_axial_1, ph.n_axial_2) - cfg.k_half
    k_max = max(ph.n_axial_1, ph.n_axial_2) + cfg.k_half
    g = np.zeros((k_max - k_min + 1, cs.nphi), dtype=complex)
    g[u2.k_min - k_min: u2.k_max - k_min + 1] = u2.boundary

    op1 = assemble(V1, ph.theta, (k_min, k_max), cs)
    op2 = assemble(V2, ph.theta, (k_min, k_max), cs)
    v1 = op1.solve_dirichlet(g)
    v2 = op2.solve_dirichlet(g)
    dn1 = trace_neumann(v1, cs)
    dn2 = trace_neumann(v2, cs)
    dn_diff = dn2.values - dn1.values          # (Lambda_2 - Lambda_1) f

    # pair over modes common to the DN window and the first probe's window
    wb = cs.boundary_weights

    def pairing(sel):
        est = 0.0 + 0.0j
        for i, kk in enumerate(ks1):
            if k_min <= kk <= k_max:
                row = dn_diff[kk - k_min][sel]
                est += complex(np.sum(wb[sel] * row * np.conj(u1_b[i][sel])))
        return est

    value = pairing(arc.indices)
    extras = {name: pairing(a.indices) for name, a in (extra_arcs or {}).items()}

    V = _difference(V2, V1)
    rint = _remainder_integral(V, ph, rem1, rem2)
    m_plus = V.sup_abs()
    bound = m_plus * (math.sqrt(cs.area) * (rem1.l2 + rem2.l2)
                      + rem1.l2 * rem2.l2)
    return ExtractResult(k=ph.k, eta=ph.eta.copy(), xi=ph.xi.copy(), r=ph.r,
                         tau=ph.tau, theta=ph.theta, value=value,
                         gap1=rem1.gap, gap2=rem2.gap,
                         w1_l2=rem1.l2, w2_l2=rem2.l2,
                         data_mode=cfg.data_mode, remainder_integral=rint,
                         remainder_bound=bound, extra_values=extras)


def _difference(V2: PeriodicPotential, V1: PeriodicPotential) -> PeriodicPotential:
    return V2 + V1.scaled(-1.0)


def orthogonality_defect(V1: PeriodicPotential, V2: PeriodicPotential,
                         ph: CgoPhase, cs: CrossSection, cfg: ExtractionConfig):
    """Full-boundary identity check: boundary integral vs interior quadrature.

    Both sides are assembled from discrete solves: u = v1 - v2 (same trace)
    gives int (V2-V1) v2 conj(u1) = int_boundary ((L2-L1)f) conj(u1), with u1
    a discrete V1-solution carrying the first probe's trace.  Returns
    (boundary, interior, abs_scale) where abs_scale integrates |integrand|
    for tolerance normalization.
    """
    rem1 = solve_remainder(V1, ph, 1, cfg.torus, cfg.solver_tol,
                           cfg.solver_max_iter, cs)
    rem2 = solve_remainder(V2, ph, 2, cfg.torus, cfg.solver_tol,
                           cfg.solver_max_iter, cs)
    u2, _ = cgo_field(ph, 2, rem2, cs, cfg.k_half, verify_residual=False)
    u1, _ = cgo_field(ph, 1, rem1, cs, cfg.k_half, verify_residual=False)

    k_min = min(ph.n_axial_1, ph.n_axial_2) - cfg.k_half
    k_max = max(ph.n_axial_1, ph.n_axial_2) + cfg.k_half
    nm = k_max - k_min + 1
    g2 = np.zeros((nm, cs.nphi), dtype=complex)
    g2[u2.k_min - k_min: u2.k_max - k_min + 1] = u2.boundary
    g1 = np.zeros((nm, cs.nphi), dtype=complex)
    g1[u1.k_min - k_min: u1.k_max - k_min + 1] = u1.boundary

    op1 = assemble(V1, ph.theta, (k_min, k_max), cs)
    op2 = assemble(V2, ph.theta, (k_min, k_max), cs)
    v1 = op1.solve_dirichlet(g2)
    v2 = op2.solve_dirichlet(g2)
    u1d = op1.solve_dirichlet(g1)
    dn_diff = trace_neumann(v2, cs).values - trace_neumann(v1, cs).values

    wb = cs.boundary_weights
    boundary = complex(np.sum(wb[None, :] * dn_diff * np.conj(u1d.boundary)))
    abs_scale = float(np.sum(wb[None, :] * np.abs(dn_diff)
                             * np.abs(u1d.boundary)))

    # interior quadrature on an exact axial grid
    V = _difference(V2, V1)
    n_x1 = 4 * (nm + V.cutoff) + 1
    x1 = np.arange(n_x1) / n_x1
    Vv = V.evaluate(x1)
    v2v = v2.evaluate(x1)
    u1v = u1d.evaluate(x1)
    interior = complex(np.mean(np.sum(
        cs.area_weights[None, :] * Vv * v2v * np.conj(u1v), axis=1)))
    abs_scale = max(abs_scale, float(np.mean(np.sum(
        cs.area_weights[None, :] * np.abs(Vv * v2v * np.conj(u1v)), axis=1))))
    return boundary, interior, abs_scale


# ----------------------------------------------------------------------------
# lattice sweep and synthesis
# ----------------------------------------------------------------------------

@dataclass
class LatticeEstimate:
    k: int
    eta: np.ndarray
    feasible: bool
    reason: str = ""
    result: ExtractResult = None


def _choose_direction(eta: np.ndarray, cfg: ExtractionConfig):
    """Perpendicular direction for a lattice point, respecting the arc."""
    perp = np.array([-eta[1], eta[0]]) / np.linalg.norm(eta)
    xi0 = np.asarray(cfg.xi0, dtype=float)
    cands = sorted([perp, -perp], key=lambda x: float(np.linalg.norm(x - xi0)))
    if cfg.data_mode == "partial" and not cfg.all_directions:
        for c in cands:
            if np.linalg.norm(c - xi0) <= cfg.eps:
                return c
        return None
    return cands[0]


def sweep_lattice(V1: PeriodicPotential, V2: PeriodicPotential,
                  cs: CrossSection, cfg: ExtractionConfig,
                  workers: int = 1):
    """Coefficient estimates over the configured frequency ball.

    Points are processed independently (optionally in a thread pool) and
    merged in deterministic (k, eta lexicographic) order; per-point failures
    are recorded as infeasible rows and the sweep continues.
    """
    points = [(k, eta) for k in cfg.lattice.k_range()
              for eta in cfg.lattice.eta_points(k)]

    def run_point(pt):
        k, eta = pt
        if float(eta @ eta) == 0.0:
            return LatticeEstimate(k, eta, False, "eta-zero")
        xi = _choose_direction(eta, cfg)
        if xi is None:
            return LatticeEstimate(k, eta, False, "direction-infeasible")
        try:
            ph, g1, g2 = _select_r((k, eta, xi, cfg.theta), cfg)
            res = extract_coefficient(V1, V2, ph, cs, cfg)
            return LatticeEstimate(k, eta, True, "", res)
        except Exception as exc:  # per-point failures must not stop the sweep
            logger.warning("lattice point (%d, %s) failed: %s", k, eta, exc)
            return LatticeEstimate(k, eta, False, f"error: {exc}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_point, points))
    else:
        rows = [run_point(pt) for pt in points]
    return rows


@dataclass
class SynthesisResult:
    h_minus_one: float
    mode_fields: dict            # axial k -> reconstructed v_k on interior nodes
    tail_bound: float
    n_feasible: int
    n_infeasible: int


def synthesize(rows, cs: CrossSection, cfg: ExtractionConfig,
               m_plus: float = 1.0) -> SynthesisResult:
    """Weighted dual-norm sum and truncated inverse synthesis from estimates.

    The reported tail bound |omega| M+^2 / rho^2 covers the frequency shells
    beyond the lattice ball.
    """
    deta = cfg.lattice.deta
    total = 0.0
    by_mode = {}
    n_feas = 0
    n_inf = 0
    for row in rows:
        if not row.feasible:
            n_inf += 1
            continue
        n_feas += 1
        vhat = row.result.value / (2.0 * math.pi)
        k, eta = row.k, row.eta
        wgt = 1.0 / (1.0 + (2 * math.pi * k) ** 2 + float(eta @ eta))
        total += wgt * abs(vhat) ** 2 * deta ** 2
        by_mode.setdefault(k, []).append((eta, vhat))

    fields = {}
    for k, entries in sorted(by_mode.items()):
        etas = np.array([e for e, _ in entries])
        vh = np.array([v for _, v in entries])
        ph_mat = np.exp(1j * (cs.nodes @ etas.T))
        fields[k] = (ph_mat @ vh) * deta ** 2 / (2.0 * math.pi)

    tail = cs.area * m_plus ** 2 / cfg.lattice.rho ** 2
    return SynthesisResult(h_minus_one=math.sqrt(total), mode_fields=fields,
                           tail_bound=tail, n_feasible=n_feas, n_infeasible=n_inf)


def synthesize_from_direct(V: PeriodicPotential, cs: CrossSection,
                           cfg: ExtractionConfig) -> SynthesisResult:
    """Synthesis fed with exact quadrature coefficients (pipeline-error-free
    baseline for reconstruction studies)."""
    rows = []
    for k in cfg.lattice.k_range():
        for eta in cfg.lattice.eta_points(k):
            vhat = fourier_coefficient_direct(V, k, eta, cs)
            res = ExtractResult(k=k, eta=eta, xi=np.array([1.0, 0.0]), r=0.0,
                                tau=0.0, theta=cfg.theta,
                                value=2 * math.pi * vhat, gap1=0.0, gap2=0.0,
                                w1_l2=0.0, w2_l2=0.0, data_mode="direct",
                                remainder_integral=0j, remainder_bound=0.0)
            rows.append(LatticeEstimate(k, eta, True, "", res))
    return synthesize(rows, cs, cfg, m_plus=V.m_plus)


def reconstruction_error(result: SynthesisResult, V: PeriodicPotential,
                         cs: CrossSection) -> float:
    """Relative cell L2 error of the synthesized field against the truth."""
    num = 0.0
    den = float(np.sum(cs.area_weights * np.abs(V.modes) ** 2))
    ks = set(result.mode_fields) | set(range(-V.cutoff, V.cutoff + 1))
    for k in ks:
        rec = result.mode_fields.get(k, np.zeros(cs.n_interior, dtype=complex))
        num += float(np.sum(cs.area_weights * np.abs(rec - V.mode(k)) ** 2))
    return math.sqrt(num / den) if den > 0 else math.sqrt(num)


# ----------------------------------------------------------------------------
# stability sweep
# ----------------------------------------------------------------------------

@dataclass
class StabilityRecord:
    delta: float
    gamma: float
    e: float                    # dual-norm size of the potential difference
    phi_gamma: float
    held_out: bool = False

    @property
    def ratio(self):
        return self.e / self.phi_gamma if self.phi_gamma > 0 else None


@dataclass
class StabilitySweepResult:
    records: list
    c_fit: float
    holdout_ok: bool
    gamma_monotone: bool
    argmax_ratio_delta: float


def stability_sweep(V1: PeriodicPotential, W: PeriodicPotential, deltas,
                    cs: CrossSection, cfg: ExtractionConfig, K: int = 4,
                    holdout_delta: float = None, arc: BoundaryArc = None,
                    cache_dir: str = None) -> StabilitySweepResult:
    """gamma and dual-norm records over perturbation sizes, with a fitted
    one-constant bound e <= C Phi(gamma) cross-validated on a held-out size.

    The fitted constant is max e / Phi(gamma) over the fit records; the
    held-out record must satisfy e <= 1.5 C Phi(gamma).
    """
    deltas = sorted(float(d) for d in deltas)
    all_deltas = list(deltas)
    if holdout_delta is not None and holdout_delta not in all_deltas:
        all_deltas = sorted(all_deltas + [float(holdout_delta)])

    if arc is None:
        arc = cfg.observation_arc(cs)
    gram = trace_gram(cfg.theta, cs)
    d1 = assemble_dn(V1, cfg.theta, cs, K, arc, cache_dir)

    records = []
    for d in all_deltas:
        dW = W.scaled(d)
        V2 = V1 + dW
        d2 = assemble_dn(V2, cfg.theta, cs, K, arc, cache_dir)
        gamma, _ = dn_difference_norm(d1, d2, gram=gram)
        e = h_minus_one_dual_oracle(dW, cs)
        records.append(StabilityRecord(
            delta=d, gamma=gamma, e=e,
            phi_gamma=phi(gamma, cfg.gamma_star),
            held_out=(holdout_delta is not None and d == float(holdout_delta))))
        logger.info("delta=%.3e gamma=%.6e e=%.6e", d, gamma, e)

    fit = [r for r in records if not r.held_out and r.ratio is not None]
    c_fit = max((r.ratio for r in fit), default=0.0)
    argmax = max(fit, key=lambda r: r.ratio).delta if fit else 0.0
    holdout_ok = True
    if holdout_delta is not None:
        hr = [r for r in records if r.held_out][0]
        holdout_ok = hr.e <= 1.5 * c_fit * hr.phi_gamma + 1e-300

    gammas = [r.gamma for r in records]
    monotone = all(gammas[i] <= gammas[i + 1] * (1 + 1e-9)
                   for i in range(len(gammas) - 1))
    return StabilitySweepResult(records=records, c_fit=c_fit,
                                holdout_ok=holdout_ok, gamma_monotone=monotone,
                                argmax_ratio_delta=argmax)
