import math

import numpy as np
import pytest

from wgtomo.cgo import TorusLattice, make_phase
from wgtomo.geometry import face
from wgtomo.potential import (FrequencyLattice, angular_bump,
                              fourier_coefficient_direct, radial_bump,
                              single_x1_mode, zero_potential)
from wgtomo.reconstruct import (ExtractionConfig, LatticeEstimate,
                                extract_coefficient, orthogonality_defect,
                                phi, reconstruction_error, stability_sweep,
                                sweep_lattice, synthesize,
                                synthesize_from_direct)

TORUS = TorusLattice(2.0, 12, 24)


def small_cfg(**kw):
    defaults = dict(xi0=(0.0, 1.0), eps=0.15, eps_obs=0.45, theta=0.6,
                    torus=TORUS, k_half=5,
                    lattice=FrequencyLattice(1.0, 0.75))
    defaults.update(kw)
    return ExtractionConfig(**defaults)


# ---------------------------------------------------------------- phi

def test_phi_branch_values():
    assert phi(0.0, 0.5) == 0.0
    assert phi(0.7, 0.5) == 0.7
    assert phi(0.1, 0.5) == pytest.approx(1.0 / math.log(math.log(10.0)), rel=1e-12)


def test_phi_monotone_on_branches():
    gs = 0.25  # below 1/e, where the lower branch is monotone
    xs = np.linspace(1e-8, gs * 0.999, 200)
    vals = [phi(float(x), gs) for x in xs]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    xs_hi = np.linspace(gs, 3.0, 50)
    vals_hi = [phi(float(x), gs) for x in xs_hi]
    assert all(b >= a for a, b in zip(vals_hi, vals_hi[1:]))


def test_phi_validation():
    with pytest.raises(ValueError):
        phi(0.5, 1.5)
    with pytest.raises(ValueError):
        phi(-0.1, 0.5)


# ---------------------------------------------------------------- config

def test_extraction_config_margin_condition(cs24):
    good = small_cfg()
    assert good.validate(cs24) == []
    # an observation patch too small for the direction margin must be caught
    bad = small_cfg(eps=0.3, eps_obs=0.32)
    problems = bad.validate(cs24)
    assert any("margin condition" in p for p in problems)


def test_extraction_config_mode_conflicts(cs24):
    bad = small_cfg(data_mode="partial", all_directions=True)
    assert any("all_directions" in p for p in bad.validate(cs24))
    bad2 = small_cfg(data_mode="nope")
    assert any("data_mode" in p for p in bad2.validate(cs24))


# ---------------------------------------------------------------- extraction

def test_extract_zero_difference(cs24):
    V = single_x1_mode(cs24, 0.4, 0.6)
    cfg = small_cfg()
    ph = make_phase(0, (0.75, 0.0), (0.0, 1.0), 0.0, 0.6)
    res = extract_coefficient(V, V, ph, cs24, cfg)
    assert abs(res.value) < 1e-12


def test_extract_matches_direct_coefficient(cs24):
    V1 = single_x1_mode(cs24, 0.55, 0.65)
    g = angular_bump(cs24, 0.5, 0.8)
    V2 = V1 + g
    cfg = small_cfg()
    eta = np.array([0.75, 0.0])
    ph = make_phase(0, eta, (0.0, 1.0), 0.0, 0.6)
    res = extract_coefficient(V1, V2, ph, cs24, cfg)
    truth = 2 * math.pi * fourier_coefficient_direct(g, 0, eta, cs24)
    assert abs(res.value - truth) / abs(truth) < 0.10
    # remainder magnitude bound with measured norms
    assert abs(res.remainder_integral) <= 1.05 * res.remainder_bound


def test_extract_partial_mode_bounded_excess(cs24):
    V1 = single_x1_mode(cs24, 0.55, 0.65)
    g = angular_bump(cs24, 0.5, 0.8)
    V2 = V1 + g
    eta = np.array([0.75, 0.0])
    ph = make_phase(0, eta, (0.0, 1.0), 0.0, 0.6)
    truth = 2 * math.pi * fourier_coefficient_direct(g, 0, eta, cs24)
    arc_partial = face(cs24, ph.xi, 0.15, "-")
    res = extract_coefficient(V1, V2, ph, cs24, small_cfg(),
                              extra_arcs={"partial": arc_partial})
    err_full = abs(res.value - truth)
    err_partial = abs(res.extra_values["partial"] - truth)
    assert err_partial <= 3.0 * err_full + 1e-12


def test_extract_conjugate_symmetry(cs24):
    V1 = zero_potential(cs24)
    V2 = angular_bump(cs24, 0.5, 0.8)
    cfg = small_cfg()
    eta = np.array([0.9, 0.0])
    xi = np.array([0.0, 1.0])
    ph_p = make_phase(0, eta, xi, 0.0, 0.6)
    ph_m = make_phase(0, -eta, xi, 0.0, 0.6)
    rp = extract_coefficient(V1, V2, ph_p, cs24, cfg)
    rm = extract_coefficient(V1, V2, ph_m, cs24, cfg)
    scale = max(abs(rp.value), 1e-12)
    assert abs(rm.value - np.conj(rp.value)) / scale < 0.05


def test_orthogonality_identity(cs24):
    V1 = single_x1_mode(cs24, 0.4, 0.6)
    V2 = V1 + angular_bump(cs24, 0.4, 0.75)
    cfg = small_cfg()
    ph = make_phase(0, (1.2, 0.0), (0.0, 1.0), 0.0, 1.7)
    b, i, scale = orthogonality_defect(V1, V2, ph, cs24, cfg)
    tol = 10 * (cfg.solver_tol + 0.1 * (cs24.hr * ph.tau) ** 2) * scale
    assert abs(b - i) <= tol


# ---------------------------------------------------------------- sweep

def test_sweep_lattice_zero_difference(cs24):
    V = radial_bump(cs24, 0.4, 0.7)
    cfg = small_cfg(r_min=0)
    rows = sweep_lattice(V, V, cs24, cfg)
    assert len(rows) == cfg.lattice.n_points()
    for row in rows:
        if float(row.eta @ row.eta) == 0.0:
            assert not row.feasible and row.reason == "eta-zero"
        elif row.feasible:
            assert abs(row.result.value) < 1e-10


def test_sweep_lattice_partial_direction_feasibility(cs24):
    V1 = zero_potential(cs24)
    V2 = angular_bump(cs24, 0.3, 0.8)
    cfg = small_cfg(data_mode="partial", eps=0.15)
    rows = sweep_lattice(V1, V2, cs24, cfg)
    reasons = {tuple(np.round(r.eta, 3)): r for r in rows}
    # eta parallel to e2 admits xi = +/- e3; (0,1) is xi0 so feasible
    assert reasons[(0.75, 0.0)].feasible
    # eta parallel to e3 needs xi = +/- e2, far from xi0 = e3: infeasible
    assert not reasons[(0.0, 0.75)].feasible
    assert reasons[(0.0, 0.75)].reason == "direction-infeasible"


def test_sweep_deterministic_order(cs24):
    V = radial_bump(cs24, 0.3, 0.7)
    cfg = small_cfg()
    rows1 = sweep_lattice(V, V, cs24, cfg)
    rows2 = sweep_lattice(V, V, cs24, cfg, workers=2)
    assert [(r.k, tuple(r.eta)) for r in rows1] == [(r.k, tuple(r.eta)) for r in rows2]


# ---------------------------------------------------------------- synthesis

def test_synthesize_zero_table(cs24):
    cfg = small_cfg()
    rows = [LatticeEstimate(0, np.array([0.0, 0.0]), False, "eta-zero")]
    sr = synthesize(rows, cs24, cfg)
    assert sr.h_minus_one == 0.0 and sr.n_feasible == 0 and sr.n_infeasible == 1


def test_synthesize_tail_bound_closed_form(cs24):
    cfg = small_cfg(lattice=FrequencyLattice(8.0, 0.5))
    sr = synthesize([], cs24, cfg, m_plus=1.0)
    assert sr.tail_bound == pytest.approx(math.pi / 64.0, rel=1e-12)


def test_synthesis_from_direct_reconstructs(cs24):
    V = angular_bump(cs24, 0.5, 0.85) + single_x1_mode(cs24, 0.4, 0.85)
    cfg = small_cfg(lattice=FrequencyLattice(8.0, 0.25))
    sr = synthesize_from_direct(V, cs24, cfg)
    assert reconstruction_error(sr, V, cs24) <= 0.30


# ---------------------------------------------------------------- stability

def test_stability_sweep_small(cs24):
    V1 = radial_bump(cs24, 0.5, 0.7)
    W = radial_bump(cs24, 1.0, 0.55)
    cfg = small_cfg(xi0=(1.0, 0.0), gamma_star=0.2)
    res = stability_sweep(V1, W, [1e-2, 1e-1], cs24, cfg, K=2,
                          holdout_delta=3e-2)
    assert res.gamma_monotone
    assert res.holdout_ok
    assert res.c_fit > 0
    deltas = [r.delta for r in res.records]
    assert deltas == sorted(deltas)
    held = [r for r in res.records if r.held_out]
    assert len(held) == 1 and held[0].delta == 3e-2


def test_stability_zero_delta_record(cs24):
    V1 = radial_bump(cs24, 0.5, 0.7)
    W = radial_bump(cs24, 1.0, 0.55)
    cfg = small_cfg(xi0=(1.0, 0.0))
    res = stability_sweep(V1, W, [0.0, 1e-2], cs24, cfg, K=1)
    r0 = res.records[0]
    assert r0.delta == 0.0 and r0.gamma == 0.0 and r0.e == 0.0
    assert r0.phi_gamma == 0.0 and r0.ratio is None
