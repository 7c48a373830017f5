import math

import numpy as np
import pytest

from wgtomo.cgo import (TorusLattice, axial_mode_values, cgo_field,
                        make_phase, phase_identity_defects, solve_remainder,
                        symbol, symbol_gap)
from wgtomo.errors import CharacteristicLatticeError, TauTooSmallError
from wgtomo.fiber import assemble
from wgtomo.geometry import build_disk
from wgtomo.potential import single_x1_mode, zero_potential
from wgtomo.util import loglog_slope


def test_phase_example_even():
    ph = make_phase(0, (0, 2), (1, 0), 1.0, 0.0)
    assert np.allclose(ph.ell, [4 * math.pi, 0.0, 0.0])
    assert ph.tau == pytest.approx(12.6061, abs=1e-4)
    assert np.allclose(ph.zeta1, [4j * math.pi, -ph.tau, 1j])
    assert abs(complex(ph.zeta1 @ ph.zeta1)) < 1e-10


def test_phase_example_odd():
    ph = make_phase(1, (0, 2), (1, 0), 0.0, 0.0)
    assert np.allclose(ph.ell, [3 * math.pi, 0.0, -3 * math.pi ** 2])
    assert float(ph.ell @ np.array([2 * math.pi, 0.0, 2.0])) == pytest.approx(0.0, abs=1e-12)
    assert ph.tau == pytest.approx(31.247, abs=1e-3)


def test_phase_sum_identity_exact():
    ph = make_phase(3, (1.5, -2.0), np.array([4.0, 3.0]) / 5.0, 2.7, 1.9)
    target = 1j * np.array([6 * math.pi, 1.5, -2.0])
    assert np.abs(ph.zeta1 + np.conj(ph.zeta2) - target).max() < 1e-12


def test_phase_random_properties():
    rng = np.random.default_rng(10)
    for _ in range(300):
        k = int(rng.integers(-6, 7))
        ang = rng.uniform(0, 2 * np.pi)
        eta = rng.uniform(0.3, 20.0) * np.array([np.cos(ang), np.sin(ang)])
        xi = np.array([-np.sin(ang), np.cos(ang)])
        ph = make_phase(k, eta, xi, rng.uniform(0, 12), rng.uniform(0, 2 * np.pi))
        defects = phase_identity_defects(ph)
        assert max(defects.values()) < 1e-12
        lo, tau, up = ph.bracketing()
        assert lo < tau <= up
        # the carrier sits on the quasi-momentum ladder
        assert abs((ph.zeta1[0].imag - ph.theta) / (2 * math.pi) - ph.n_axial_1) < 1e-9


def test_phase_validation():
    with pytest.raises(ValueError):
        make_phase(0, (0.0, 0.0), (1, 0), 1.0, 0.0)       # eta = 0
    with pytest.raises(ValueError):
        make_phase(0, (1.0, 0.0), (1, 0), 1.0, 0.0)       # xi . eta != 0
    with pytest.raises(ValueError):
        make_phase(0, (0, 2), (2, 0), 1.0, 0.0)           # |xi| != 1
    with pytest.raises(ValueError):
        make_phase(0, (0, 2), (1, 0), -1.0, 0.0)          # negative r


def test_symbol_gap_positive_generic():
    lat = TorusLattice(2.0, 16, 32)
    ph = make_phase(0, (0, 2), (1, 0), 1.0, 0.6)
    assert symbol_gap(ph, lat, 1) > 0.5


def test_symbol_gap_characteristic_at_degenerate_theta():
    # theta = 0 places the carrier ladder on the axial lattice: exact zero
    lat = TorusLattice(2.0, 16, 32)
    ph = make_phase(0, (0, 2), (1, 0), 5.0, 0.0)
    with pytest.raises(CharacteristicLatticeError) as exc:
        symbol_gap(ph, lat, 1)
    assert exc.value.q is not None


def test_symbol_gap_saturates_along_family():
    # the transverse frequency line parallel to eta keeps O(1) symbol values
    # independent of the scale, so the gap does NOT grow with tau here
    lat = TorusLattice(2.0, 16, 32)
    gaps = []
    for r in (2, 5, 10, 20, 40):
        ph = make_phase(0, (0, 2), (1, 0), float(r), 0.6)
        gaps.append(symbol_gap(ph, lat, 1))
    assert all(g > 0.5 for g in gaps)
    assert max(gaps) / min(gaps) < 1.5  # bounded, no tau growth


def test_symbol_zero_mode():
    lat = TorusLattice(2.0, 4, 6)
    ph = make_phase(0, (0, 2), (1, 0), 1.0, 0.6)
    p = symbol(ph, 1, lat)
    assert p[0, 0, 0] == 0.0


def test_remainder_zero_potential(cs24):
    lat = TorusLattice(2.0, 8, 16)
    ph = make_phase(0, (0, 2), (1, 0), 1.0, 0.6)
    rem = solve_remainder(zero_potential(cs24), ph, 1, lat, cs=cs24)
    assert rem.l2 == 0.0 and rem.iterations == 1


def test_remainder_decay_and_residual(cs24):
    V = single_x1_mode(cs24, 0.5, 0.6)
    lat = TorusLattice(2.0, 12, 24)
    taus, l2s, h2s = [], [], []
    for r in (5, 10, 20):
        ph = make_phase(0, (0, 2), (1, 0), float(r), 0.6)
        rem = solve_remainder(V, ph, 1, lat, tol=1e-10, max_iter=200, cs=cs24)
        assert rem.residual <= 1e-10 * rem.v_norm
        taus.append(ph.tau)
        l2s.append(rem.l2)
        h2s.append(rem.h2_semi)
    slope = loglog_slope(taus, l2s)
    assert -1.3 <= slope <= -0.7
    assert loglog_slope(taus, h2s) <= 1.0  # grows no faster than the scale


def test_remainder_divergence_raises(cs24):
    # a potential far above the contraction threshold must be flagged; the
    # radial bump feeds the small-symbol frequency line directly
    from wgtomo.potential import radial_bump

    V = radial_bump(cs24, 30.0, 0.7)
    lat = TorusLattice(2.0, 8, 16)
    ph = make_phase(0, (0, 2), (1, 0), 1.0, 0.6)
    with pytest.raises(TauTooSmallError):
        solve_remainder(V, ph, 1, lat, tol=1e-10, max_iter=60, cs=cs24)


def test_probe_modulus_identity(cs24):
    # |e^{-tau xi . x'} e^{zeta_2 . x}| = 1 pointwise
    ph = make_phase(2, (1.0, 1.0), np.array([1.0, -1.0]) / math.sqrt(2), 1.3, 0.9)
    x1 = 0.37
    for nodes in (cs24.nodes, cs24.boundary_nodes):
        vals = np.exp(ph.zeta2[0] * x1 + nodes @ ph.zeta2[1:])
        weight = np.exp(-ph.tau * (nodes @ ph.xi))
        assert np.abs(np.abs(vals) * weight - 1.0).max() < 1e-12


def test_axial_mode_values_exact():
    lat = TorusLattice(2.0, 4, 6)
    x1, x2, x3 = lat.grid()
    X1 = x1[:, None, None]
    w = (np.exp(2j * np.pi * X1) * np.exp(1j * (np.pi / lat.L) * x2)[None, :, None]
         * np.ones((1, 1, len(x3))))
    w_hat = np.fft.fftn(np.broadcast_to(w, lat.shape))
    pts = np.array([[0.25, -0.6], [0.0, 0.0]])
    vals = axial_mode_values(w_hat, lat, pts, [1, 0])
    assert np.abs(vals[0] - np.exp(1j * (np.pi / lat.L) * pts[:, 0])).max() < 1e-12
    assert np.abs(vals[1]).max() < 1e-12


def test_cgo_field_roundtrip(cs24):
    V = single_x1_mode(cs24, 0.4, 0.6)
    lat = TorusLattice(2.0, 12, 24)
    ph = make_phase(0, (0, 2), (1, 0), 0.0, 0.6)
    rem = solve_remainder(V, ph, 1, lat, tol=1e-10, max_iter=100, cs=cs24)
    u, wres = cgo_field(ph, 1, rem, cs24, k_half=5)
    assert wres <= 10 * 1e-10 * rem.v_norm
    op = assemble(V, 0.6, (u.k_min, u.k_max), cs24)
    u_d = op.solve_dirichlet(u.boundary)
    num = math.sqrt(float(np.sum(cs24.area_weights * np.abs(u_d.interior - u.interior) ** 2)))
    den = math.sqrt(float(np.sum(cs24.area_weights * np.abs(u.interior) ** 2)))
    assert num / den < 0.02  # solver + probe tolerance at this scale/grid


def test_cgo_field_zero_potential(cs24):
    lat = TorusLattice(2.0, 8, 16)
    ph = make_phase(0, (0, 2), (1, 0), 0.0, 0.6)
    rem = solve_remainder(zero_potential(cs24), ph, 1, lat, cs=cs24)
    u, wres = cgo_field(ph, 1, rem, cs24, k_half=2)
    exact = np.exp(cs24.nodes @ ph.zeta1[1:])
    ki = u.mode_index(ph.n_axial_1)
    assert np.abs(u.interior[ki] - exact).max() < 1e-12 * np.abs(exact).max()
    assert wres == 0.0


def test_cgo_field_theta_mismatch(cs24):
    lat = TorusLattice(2.0, 8, 16)
    ph = make_phase(0, (0, 2), (1, 0), 0.0, 0.6)
    rem = solve_remainder(zero_potential(cs24), ph, 1, lat, cs=cs24)
    with pytest.raises(ValueError, match="theta"):
        cgo_field(ph, 1, rem, cs24, k_half=2, theta=0.7)


def test_torus_lattice_support_guard():
    cs = build_disk(1.5, 8, 16)
    lat = TorusLattice(2.0, 8, 16)
    with pytest.raises(ValueError, match="half-side"):
        lat.check_supports(cs)
