"""Acceptance suite: one test per criterion, one printed verdict line each.

All tolerances are pinned here; the suite is deterministic (fixed seeds) and
sized for a desktop run.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from wgtomo.carleman import carleman_check, carleman_potential_check, random_test_field
from wgtomo.cgo import (TorusLattice, make_phase, phase_identity_defects,
                        solve_remainder, symbol_gap)
from wgtomo.dnmap import assemble_dn, hermitian_pairing_defect
from wgtomo.errors import CharacteristicLatticeError
from wgtomo.fiber import assemble, fbg_forward, fbg_inverse, fbg_parseval_defect
from wgtomo.geometry import build_disk, face, poincare_constant
from wgtomo.potential import (FrequencyLattice, angular_bump,
                              fourier_coefficient_direct,
                              h_minus_one_dual_oracle, h_minus_one_lattice,
                              radial_bump, random_band_limited,
                              single_x1_mode, zero_potential)
from wgtomo.reconstruct import (ExtractionConfig, extract_coefficient,
                                orthogonality_defect, phi, stability_sweep)
from wgtomo.util import loglog_slope

LAM1_DISK = 5.783185962946785


@contextmanager
def verdict(number, description):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number}: FAIL - {description}")
        raise
    print(f"ACCEPTANCE {number}: PASS - {description}")


def test_acceptance_1_phase_algebra():
    with verdict(1, "phase algebra on 1000 seeded inputs"):
        t0 = time.time()
        rng = np.random.default_rng(20240801)
        for _ in range(1000):
            k = int(rng.integers(-6, 7))
            ang = rng.uniform(0, 2 * np.pi)
            eta = rng.uniform(0.3, 20.0) * np.array([np.cos(ang), np.sin(ang)])
            xi = np.array([-np.sin(ang), np.cos(ang)])
            if rng.random() < 0.5:
                xi = -xi
            ph = make_phase(k, eta, xi, rng.uniform(0, 12), rng.uniform(0, 2 * np.pi))
            defects = phase_identity_defects(ph)
            assert max(defects.values()) <= 1e-12
            lo, tau, up = ph.bracketing()
            assert lo < tau <= up
        elapsed = time.time() - t0
        assert elapsed < 1.0, f"runtime {elapsed:.2f}s exceeds 1s"


def test_acceptance_2_remainder_decay():
    with verdict(2, "probe remainder decay slope in [-1.3, -0.7] with "
                    "residuals at 1e-10"):
        t0 = time.time()
        cs = build_disk(1.0, 24, 48)
        V = single_x1_mode(cs, 0.5, 0.6)
        lat = TorusLattice(2.0, 16, 32)
        taus, l2s = [], []
        for r in (5, 10, 20, 40):
            ph = make_phase(0, (0, 2), (1, 0), float(r), 0.6)
            rem = solve_remainder(V, ph, 1, lat, tol=1e-10, max_iter=200, cs=cs)
            assert rem.residual <= 1e-10 * rem.v_norm
            taus.append(ph.tau)
            l2s.append(rem.l2)
        slope = loglog_slope(taus, l2s)
        assert -1.3 <= slope <= -0.7, f"slope {slope:.3f}"
        elapsed = time.time() - t0
        assert elapsed < 120.0, f"runtime {elapsed:.1f}s exceeds 2 min"
        print(f"  [slope {slope:.3f}, {elapsed:.1f}s]", end=" ")


def _carleman_suite(nr, n_fields, V1):
    cs = build_disk(1.0, nr, 2 * nr)
    rng = np.random.default_rng(42)
    xis = [(1.0, 0.0), (math.cos(2.0), math.sin(2.0)),
           (math.cos(4.2), math.sin(4.2))]
    worst = 0.0
    n_pass = n_total = 0
    for _ in range(n_fields):
        u = random_test_field(cs, 0.6, rng)
        for tau in (1, 2, 4, 8, 16, 32):
            for xi in xis:
                rep = carleman_check(u, xi, float(tau), cs, slack_tol=0.05)
                n_total += 1
                n_pass += int(rep.passed)
                worst = max(worst, rep.needed_slack)
                if V1 is not None and tau >= 1.0:  # tau_1 = M (d/2)^0.5 = 1
                    repv = carleman_potential_check(u, V1, xi, float(tau), cs,
                                                    slack_tol=0.05)
                    assert not repv.below_tau1
                    n_total += 1
                    n_pass += int(repv.passed)
                    worst = max(worst, repv.needed_slack)
    return n_pass, n_total, worst


def test_acceptance_3_carleman_suite():
    with verdict(3, "weighted-inequality suite passes at slack 0.05 and "
                    "refines"):
        t0 = time.time()
        cs24 = build_disk(1.0, 24, 48)
        V1 = random_band_limited(cs24, seed=7, m_max=1, amplitude=1.0)
        assert V1.sup_abs() == pytest.approx(1.0, rel=1e-9)
        n_pass, n_total, worst24 = _carleman_suite(24, 100, V1)
        assert n_pass == n_total, f"{n_total - n_pass} failures of {n_total}"
        # refinement study: needed slack at Nr=48 at most half of Nr=24
        _, _, worst24_free = _carleman_suite(24, 30, None)
        _, _, worst48_free = _carleman_suite(48, 30, None)
        assert worst48_free <= 0.5 * worst24_free + 1e-12
        elapsed = time.time() - t0
        assert elapsed < 300.0, f"runtime {elapsed:.1f}s exceeds 5 min"
        print(f"  [{n_total} checks, worst needed slack {worst24:.2e}, "
              f"{elapsed:.1f}s]", end=" ")


def test_acceptance_4_forward_dn_sanity():
    with verdict(4, "eigenvalue, pairing-defect and cell-transform sanity"):
        cs24 = build_disk(1.0, 24, 48)
        lam = assemble(zero_potential(cs24), 0.0, 2, cs24).smallest_eigenvalue()
        assert abs(lam - LAM1_DISK) / LAM1_DISK < 0.01
        assert abs(poincare_constant(cs24) ** 2 - lam) < 1e-6 * lam

        defects = []
        for nr in (24, 48):
            cs = build_disk(1.0, nr, 2 * nr)
            V = random_band_limited(cs, seed=11, m_max=1, amplitude=0.6)
            defects.append(hermitian_pairing_defect(assemble_dn(V, 0.6, cs, 2)))
        assert defects[0] <= 5e-2
        assert defects[1] < defects[0]

        rng = np.random.default_rng(5)
        cells = rng.standard_normal((5, 9)) + 1j * rng.standard_normal((5, 9))
        _, g = fbg_forward(cells, -2, 8)
        assert np.abs(fbg_inverse(g, -2, 5) - cells).max() <= 1e-10
        assert fbg_parseval_defect(cells, -2, 8) <= 1e-10
        print(f"  [lambda1 err {abs(lam - LAM1_DISK) / LAM1_DISK:.2e}, "
              f"defects {defects[0]:.1e}->{defects[1]:.1e}]", end=" ")


def test_acceptance_5_orthogonality_identity():
    with verdict(5, "boundary integral matches interior quadrature on 20 "
                    "seeded pairs"):
        cs = build_disk(1.0, 24, 48)
        lat = TorusLattice(2.0, 12, 24)
        cfg = ExtractionConfig(torus=lat, k_half=5)
        rng = np.random.default_rng(2024)
        pots = [
            (single_x1_mode(cs, 0.4, 0.6),
             single_x1_mode(cs, 0.4, 0.6) + angular_bump(cs, 0.4, 0.75)),
            (zero_potential(cs), radial_bump(cs, 0.5, 0.7)),
            (single_x1_mode(cs, 0.3, 0.7, "angular"),
             single_x1_mode(cs, 0.3, 0.7, "angular") + radial_bump(cs, 0.3, 0.6)),
            (random_band_limited(cs, 5, 1, 0.4), random_band_limited(cs, 6, 1, 0.4)),
        ]
        n = 0
        worst_rel = 0.0
        while n < 20:
            k = int(rng.integers(0, 2))
            ang = rng.uniform(0, 2 * np.pi)
            mag = rng.uniform(1.0, 3.0) if k == 0 else rng.uniform(7.5, 12.0)
            eta = mag * np.array([np.cos(ang), np.sin(ang)])
            xi = np.array([-np.sin(ang), np.cos(ang)])
            r = float(rng.integers(0, 2)) if k == 0 else 0.0
            th = rng.uniform(0.2, 6.0)
            ph = make_phase(k, eta, xi, r, th)
            if ph.tau > 15.0:
                continue
            try:
                if min(symbol_gap(ph, lat, 1), symbol_gap(ph, lat, 2)) < 0.4:
                    continue
            except CharacteristicLatticeError:
                continue
            V1, V2 = pots[n % len(pots)]
            b, i, scale = orthogonality_defect(V1, V2, ph, cs, cfg)
            tol = 10 * (cfg.solver_tol + 0.1 * (cs.hr * ph.tau) ** 2) * scale
            assert abs(b - i) <= tol, f"pair {n}: defect {abs(b - i):.3e} > {tol:.3e}"
            worst_rel = max(worst_rel, abs(b - i) / tol)
            n += 1
        print(f"  [20 pairs, worst defect at {worst_rel:.2f} of budget]", end=" ")


def test_acceptance_6_coefficient_extraction():
    with verdict(6, "coefficient extraction matches direct quadrature and "
                    "decays on true zeros"):
        cs = build_disk(1.0, 24, 48)
        V1 = single_x1_mode(cs, 0.55, 0.65)
        g = angular_bump(cs, 0.5, 0.8)
        V2 = V1 + g
        lat = TorusLattice(2.0, 12, 24)
        cfg = ExtractionConfig(xi0=(0.0, 1.0), eps=0.15, eps_obs=0.45,
                               torus=lat, k_half=5)
        assert cfg.validate(cs) == []
        xi = np.array([0.0, 1.0])
        rungs = [(0, 0.6), (0, 2.2), (0, 3.8)]

        # k = 0 signal points: full-boundary match within 10% at the top rung
        partial_excess = []
        for eta_mag in (0.75, 1.5):
            eta = np.array([eta_mag, 0.0])
            truth = 2 * math.pi * fourier_coefficient_direct(g, 0, eta, cs)
            for j, (r, th) in enumerate(rungs):
                ph = make_phase(0, eta, xi, float(r), th)
                arc_p = face(cs, ph.xi, cfg.eps, "-")
                res = extract_coefficient(V1, V2, ph, cs, cfg,
                                          extra_arcs={"partial": arc_p})
                err_full = abs(res.value - truth) / abs(truth)
                err_part = abs(res.extra_values["partial"] - truth) / abs(truth)
                partial_excess.append(err_part / max(err_full, 1e-12))
                if j == len(rungs) - 1:
                    assert err_full <= 0.10, (f"k=0 eta={eta_mag}: "
                                              f"{err_full:.3f} at top rung")
        assert max(partial_excess) <= 3.0  # bounded partial-data penalty

        # k = 1 true zeros: gap-cleared scale ladder, fitted decay slopes
        def pick_eta(th):
            for em in np.arange(7.8, 10.8, 0.15):
                ph = make_phase(1, np.array([em, 0.0]), xi, 0.0, th)
                try:
                    g1 = symbol_gap(ph, lat, 1)
                    g2 = symbol_gap(ph, lat, 2)
                except CharacteristicLatticeError:
                    continue
                if min(g1, g2) >= 0.5:
                    return ph
            raise RuntimeError("no gap-cleared transverse frequency")

        taus, mags_full, mags_part = [], [], []
        for th in (0.3, 1.3, 2.35, 3.4, 4.4, 5.5):
            ph = pick_eta(th)
            arc_p = face(cs, ph.xi, cfg.eps, "-")
            res = extract_coefficient(V1, V2, ph, cs, cfg,
                                      extra_arcs={"partial": arc_p})
            taus.append(ph.tau)
            mags_full.append(abs(res.value))
            mags_part.append(abs(res.extra_values["partial"]))
        slope_full = loglog_slope(taus, mags_full)
        slope_part = loglog_slope(taus, mags_part)
        assert slope_full <= -0.7, f"k=1 slope {slope_full:.3f}"
        assert slope_part <= -0.7, f"k=1 partial slope {slope_part:.3f}"
        print(f"  [k=1 slopes full {slope_full:.2f} / partial {slope_part:.2f}, "
              f"partial excess <= {max(partial_excess):.2f}x]", end=" ")


def test_acceptance_7_h_minus_one_machinery():
    with verdict(7, "dual-norm routes agree within factor 3; tail bound "
                    "reproduced"):
        cs = build_disk(1.0, 24, 48)
        lat = FrequencyLattice(8.0, 0.5)
        assert h_minus_one_lattice(zero_potential(cs), lat, cs) == 0.0
        assert h_minus_one_dual_oracle(zero_potential(cs), cs) == 0.0
        worst = 1.0
        for seed in range(1, 6):
            V = random_band_limited(cs, seed=seed, m_max=1, amplitude=0.5)
            a = h_minus_one_lattice(V, lat, cs)
            b = h_minus_one_dual_oracle(V, cs)
            worst = max(worst, a / b, b / a)
        assert worst < 3.0
        tail = cs.area * 1.0 ** 2 / 8.0 ** 2
        assert tail == pytest.approx(math.pi / 64.0, rel=1e-12)
        assert tail == pytest.approx(0.0491, abs=1e-4)
        print(f"  [worst route ratio {worst:.2f}, tail {tail:.4f}]", end=" ")


def test_acceptance_8_stability_sweep():
    with verdict(8, "perturbation sweep: monotone data norm and one-constant "
                    "log-log bound"):
        t0 = time.time()
        cs = build_disk(1.0, 24, 48)
        V1 = radial_bump(cs, 0.5, 0.7)
        W = radial_bump(cs, 1.0, 0.55)
        cfg = ExtractionConfig(xi0=(1.0, 0.0), eps=0.15, eps_obs=0.45,
                               gamma_star=0.2, theta=0.6,
                               torus=TorusLattice(2.0, 12, 24))
        res = stability_sweep(V1, W, [1e-3, 3e-3, 1e-2, 1e-1], cs, cfg, K=4,
                              holdout_delta=3e-2)
        assert res.gamma_monotone
        assert res.holdout_ok  # e <= 1.5 C_fit Phi(gamma) on the held-out size
        assert res.c_fit > 0
        elapsed = time.time() - t0
        assert elapsed < 900.0, f"runtime {elapsed:.1f}s exceeds 15 min"
        print(f"  [C_fit {res.c_fit:.3e}, {elapsed:.1f}s]", end=" ")


def test_acceptance_9_phi_branches():
    with verdict(9, "log-log modulus branch values"):
        assert phi(0.0, 0.5) == 0.0
        assert phi(0.7, 0.5) == 0.7
        assert phi(0.5, 0.5) == 0.5  # boundary belongs to the linear branch
        assert phi(0.1, 0.5) == pytest.approx(1.0 / math.log(math.log(10.0)),
                                              rel=1e-12)
        assert phi(0.1, 0.5) == pytest.approx(1.19899, abs=1e-5)
