"""Batch experiment orchestration: config loading, validation, artifacts.

A run is driven by one JSON document; every subcommand writes CSV tables,
optional SVG plots, and a manifest carrying the config hash, package and
library versions, the seed, and step timings.  Reruns with the same config
and seed reproduce all non-manifest artifacts byte-identically.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time

import numpy as np

from . import __version__
from .carleman import carleman_check, carleman_potential_check, random_test_field
from .cgo import TorusLattice, make_phase, solve_remainder
from .dnmap import full_norm_over_theta
from .errors import ConfigError
from .fiber import assemble, field_to_csv
from .geometry import build_disk, poincare_constant
from .potential import (FrequencyLattice, PeriodicPotential, angular_bump,
                        load_potential, poly_bump, radial_bump,
                        random_band_limited, single_x1_mode, zero_potential)
from .reconstruct import (ExtractionConfig, extract_coefficient, phi,
                          stability_sweep, sweep_lattice, synthesize,
                          synthesize_from_direct, reconstruction_error)
from .util import content_hash, loglog_slope, save_svg, write_csv

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("forward", "dn", "cgo-decay", "carleman", "extract",
               "reconstruct", "stability", "all")

DEFAULT_CONFIG = {
    "seed": 20240801,
    "geometry": {"radius": 1.0, "nr": 24, "nphi": 48},
    "fiber": {"K": 8, "theta": 0.6, "n_theta": 8},
    "potential": {"family": "radial_bump", "amplitude": 0.5, "s": 0.7},
    "perturbation": {"family": "radial_bump", "amplitude": 1.0, "s": 0.55},
    "cgo": {"k": 0, "eta": [0.0, 2.0], "xi": [1.0, 0.0], "r_list": [5, 10, 20, 40],
            "theta": 0.6, "torus_L": 2.0, "torus_k_axial": 16,
            "torus_k_trans": 32, "tol": 1e-10, "max_iter": 200},
    "carleman": {"n_fields": 100, "taus": [1, 2, 4, 8, 16, 32],
                 "n_directions": 3, "slack_tol": 0.05, "m_perturbed": 1.0},
    "reconstruction": {"xi0": [0.0, 1.0], "eps": 0.15, "eps_obs": 0.45,
                       "rho": 2.0, "deta": 0.75, "gamma_star": 0.2,
                       "data_mode": "full", "all_directions": False,
                       "r_min": 0, "gap_min": 0.5, "k_half": 4,
                       "torus_k_axial": 12, "torus_k_trans": 24},
    "stability": {"deltas": [1e-3, 3e-3, 1e-2, 1e-1], "holdout": 3e-2, "K": 4},
    "extract": {"k": 0, "eta": [0.75, 0.0], "xi": [0.0, 1.0],
                "rungs": [[0, 0.6], [0, 2.2], [0, 3.8]]},
    "workers": 1,
}


def merge_config(user: dict) -> dict:
    """Defaults overlaid with the user document (one level of nesting)."""
    cfg = {}
    for key, val in DEFAULT_CONFIG.items():
        if isinstance(val, dict):
            cfg[key] = dict(val)
            cfg[key].update(user.get(key, {}))
        else:
            cfg[key] = user.get(key, val)
    for key in user:
        if key not in cfg:
            cfg[key] = user[key]
    return cfg


def build_potential(spec: dict, cs, seed: int = 0) -> PeriodicPotential:
    if "path" in spec:
        return load_potential(spec["path"], cs)
    family = spec.get("family", "radial_bump")
    amp = spec.get("amplitude", 0.5)
    s = spec.get("s", 0.7)
    if family == "radial_bump":
        return radial_bump(cs, amp, s)
    if family == "poly_bump":
        return poly_bump(cs, amp, s)
    if family == "angular_bump":
        return angular_bump(cs, amp, s)
    if family == "single_x1_mode":
        return single_x1_mode(cs, amp, s, spec.get("profile", "radial"))
    if family == "random_band_limited":
        return random_band_limited(cs, spec.get("seed", seed),
                                   spec.get("m_max", 1), amp)
    if family == "zero":
        return zero_potential(cs)
    raise ConfigError([f"unknown potential family {family!r}"])


def validate_config(cfg: dict):
    """Exhaustive list of configuration problems (empty when valid)."""
    problems = []
    g = cfg["geometry"]
    if g["radius"] <= 0:
        problems.append(f"geometry.radius must be positive, got {g['radius']}")
    if g["nr"] < 4:
        problems.append(f"geometry.nr must be >= 4, got {g['nr']}")
    if g["nphi"] < 8 or g["nphi"] % 2:
        problems.append(f"geometry.nphi must be even >= 8, got {g['nphi']}")
    if cfg["fiber"]["K"] < 0:
        problems.append("fiber.K must be nonnegative")
    fam = cfg["potential"].get("family", "radial_bump")
    known = ("radial_bump", "poly_bump", "angular_bump", "single_x1_mode",
             "random_band_limited", "zero")
    if "path" not in cfg["potential"] and fam not in known:
        problems.append(f"unknown potential family {fam!r}")
    if problems:
        return problems

    cs = build_disk(g["radius"], g["nr"], g["nphi"])
    try:
        V = build_potential(cfg["potential"], cs, cfg["seed"])
        if cfg["fiber"]["K"] < V.cutoff:
            problems.append(f"fiber.K={cfg['fiber']['K']} is below the "
                            f"potential mode cutoff {V.cutoff}")
    except ConfigError as exc:
        problems.extend(exc.problems)

    try:
        problems.extend(extraction_config(cfg, cs).validate(cs))
    except (ValueError, ConfigError) as exc:
        problems.append(str(exc))
    return problems


def extraction_config(cfg: dict, cs) -> ExtractionConfig:
    r = cfg["reconstruction"]
    c = cfg["cgo"]
    return ExtractionConfig(
        xi0=tuple(r["xi0"]), eps=r["eps"], eps_obs=r["eps_obs"],
        theta=cfg["fiber"]["theta"], data_mode=r["data_mode"],
        all_directions=r.get("all_directions", False),
        lattice=FrequencyLattice(r["rho"], r["deta"]),
        gamma_star=r["gamma_star"], r_min=r["r_min"], gap_min=r["gap_min"],
        k_half=r.get("k_half", 4),
        torus=TorusLattice(c["torus_L"], r.get("torus_k_axial", 12),
                           r.get("torus_k_trans", 24)),
        solver_tol=c["tol"], solver_max_iter=c["max_iter"])


def write_manifest(outdir: str, cfg: dict, timings: dict, extra: dict = None):
    manifest = {
        "config": cfg,
        "config_hash": content_hash(cfg),
        "versions": {"wgtomo": __version__, "numpy": np.__version__},
        "seed": cfg["seed"],
        "timings_s": {k: round(v, 3) for k, v in timings.items()},
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)


def _plot_loglog(path, x, y, xlabel, ylabel, title, fit_slope=None):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(x, y, "o-")
    if fit_slope is not None:
        ax.set_title(f"{title} (slope {fit_slope:.3f})")
    else:
        ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    save_svg(fig, path)
    plt.close(fig)


# ----------------------------------------------------------------------------
# subcommand runners
# ----------------------------------------------------------------------------

def run_forward(cfg: dict, outdir: str) -> dict:
    """Solve one fiber problem with a seeded random band-limited trace."""
    g = cfg["geometry"]
    cs = build_disk(g["radius"], g["nr"], g["nphi"])
    V = build_potential(cfg["potential"], cs, cfg["seed"])
    theta = cfg["fiber"]["theta"]
    K = max(cfg["fiber"]["K"], V.cutoff)
    op = assemble(V, theta, K, cs)

    rng = np.random.default_rng(cfg["seed"])
    n_modes = 2 * K + 1
    coefs = rng.standard_normal((n_modes, 5)) + 1j * rng.standard_normal((n_modes, 5))
    ms = np.arange(-2, 3)
    trace = coefs @ np.exp(1j * np.outer(ms, cs.phi))
    u = op.solve_dirichlet(trace)
    res = op.apply_pde(u)
    res_norm = math.sqrt(float(np.sum(cs.area_weights * np.abs(res) ** 2)))
    g_norm = math.sqrt(float(np.sum(cs.boundary_weights * np.abs(trace) ** 2)))
    field_to_csv(u, os.path.join(outdir, "forward_field.csv"))
    summary = {"residual": res_norm, "trace_norm": g_norm,
               "residual_rel": res_norm / g_norm,
               "lambda_min": op.smallest_eigenvalue(),
               "poincare": poincare_constant(cs)}
    return summary


def run_dn(cfg: dict, outdir: str, cache_dir: str = None) -> dict:
    """Assemble DN maps over the theta grid and report difference norms."""
    g = cfg["geometry"]
    cs = build_disk(g["radius"], g["nr"], g["nphi"])
    V1 = build_potential(cfg["potential"], cs, cfg["seed"])
    W = build_potential(cfg["perturbation"], cs, cfg["seed"] + 1)
    V2 = V1 + W.scaled(0.1)
    K = cfg["stability"]["K"]
    n_theta = cfg["fiber"]["n_theta"]
    thetas = 2 * math.pi * np.arange(n_theta) / n_theta
    arc = extraction_config(cfg, cs).observation_arc(cs)
    sup, argmax, values = full_norm_over_theta(V1, V2, thetas, cs, K, arc,
                                               cache_dir)
    write_csv(os.path.join(outdir, "dn_norms.csv"), ("theta", "gamma"), values)
    return {"sup_gamma": sup, "argmax_theta": argmax}


def run_cgo_decay(cfg: dict, outdir: str) -> dict:
    """Remainder decay sweep; writes the phase table and a log-log plot."""
    g = cfg["geometry"]
    cs = build_disk(g["radius"], g["nr"], g["nphi"])
    c = cfg["cgo"]
    V = build_potential(cfg.get("cgo_potential",
                                {"family": "single_x1_mode", "amplitude": 0.5,
                                 "s": 0.6}), cs, cfg["seed"])
    lat = TorusLattice(c["torus_L"], c["torus_k_axial"], c["torus_k_trans"])
    rows = []
    taus, l2s = [], []
    for r in c["r_list"]:
        ph = make_phase(c["k"], c["eta"], c["xi"], float(r), c["theta"])
        rem = solve_remainder(V, ph, 1, lat, c["tol"], c["max_iter"], cs)
        rows.append((ph.k, ph.eta[0], ph.eta[1], ph.xi[0], ph.xi[1], r,
                     ph.theta, ph.tau, rem.gap, rem.l2, rem.h1_semi,
                     rem.h2_semi, rem.residual, rem.constant_mode_residual,
                     rem.iterations))
        taus.append(ph.tau)
        l2s.append(rem.l2)
    slope = loglog_slope(taus, l2s)
    write_csv(os.path.join(outdir, "cgo_decay.csv"),
              ("k", "eta2", "eta3", "xi2", "xi3", "r", "theta", "tau", "gap",
               "w_l2", "w_h1", "w_h2", "residual", "constant_mode_residual",
               "iterations"), rows)
    _plot_loglog(os.path.join(outdir, "cgo_decay.svg"), taus, l2s,
                 "tau", "|w| L2", "remainder decay", slope)
    return {"slope": slope, "taus": taus, "l2": l2s}


def run_carleman(cfg: dict, outdir: str) -> dict:
    """Weighted-inequality suites for the free and perturbed operators."""
    g = cfg["geometry"]
    cs = build_disk(g["radius"], g["nr"], g["nphi"])
    cc = cfg["carleman"]
    rng = np.random.default_rng(cfg["seed"])
    theta = cfg["fiber"]["theta"]
    angles = 2 * math.pi * np.arange(cc["n_directions"]) / cc["n_directions"]
    xis = [(math.cos(a + 0.37), math.sin(a + 0.37)) for a in angles]
    V = build_potential(cfg["potential"], cs, cfg["seed"])
    m = V.sup_abs()

    rows = []
    n_pass = n_total = 0
    worst = 0.0
    for i in range(cc["n_fields"]):
        u = random_test_field(cs, theta, rng)
        for tau in cc["taus"]:
            for xi in xis:
                rep = carleman_check(u, xi, float(tau), cs, cc["slack_tol"])
                rows.append(("free", i, tau, xi[0], xi[1], rep.lhs_interior,
                             rep.lhs_boundary, rep.rhs_laplacian,
                             rep.rhs_boundary, rep.slack, int(rep.passed),
                             int(rep.passed_d2)))
                n_total += 1
                n_pass += int(rep.passed)
                worst = max(worst, rep.needed_slack)
                if tau >= rep.tau1:
                    repv = carleman_potential_check(u, V, xi, float(tau), cs,
                                                    cc["slack_tol"])
                    rows.append(("perturbed", i, tau, xi[0], xi[1],
                                 repv.lhs_interior, repv.lhs_boundary,
                                 repv.rhs_laplacian, repv.rhs_boundary,
                                 repv.slack, int(repv.passed),
                                 int(repv.passed_d2)))
                    n_total += 1
                    n_pass += int(repv.passed)
                    worst = max(worst, repv.needed_slack)
    write_csv(os.path.join(outdir, "carleman.csv"),
              ("variant", "field", "tau", "xi0", "xi1", "lhs_interior",
               "lhs_boundary", "rhs_laplacian", "rhs_boundary", "slack",
               "passed", "passed_d2"), rows)
    return {"n_total": n_total, "n_pass": n_pass,
            "pass_rate": n_pass / max(n_total, 1), "worst_needed_slack": worst,
            "m_sup": m}


def run_extract(cfg: dict, outdir: str) -> dict:
    """Single-coefficient study over a ladder of (r, theta) rungs.

    The rung ladder keeps the probe scale in the desk range where the
    exponential dichotomy of the probes stays within float64 headroom.
    """
    g = cfg["geometry"]
    cs = build_disk(g["radius"], g["nr"], g["nphi"])
    xcfg = extraction_config(cfg, cs)
    V1 = build_potential(cfg["potential"], cs, cfg["seed"])
    W = build_potential(cfg["perturbation"], cs, cfg["seed"] + 1)
    V2 = V1 + W
    ec = cfg["extract"]
    eta = np.asarray(ec["eta"], dtype=float)
    xi = np.asarray(ec["xi"], dtype=float)
    from .potential import fourier_coefficient_direct

    truth = 2 * math.pi * fourier_coefficient_direct(
        V2 + V1.scaled(-1.0), ec["k"], eta, cs)
    rows = []
    taus, errs = [], []
    for r, th in ec["rungs"]:
        ph = make_phase(ec["k"], eta, xi, float(r), float(th))
        res = extract_coefficient(V1, V2, ph, cs, xcfg)
        err = abs(res.value - truth)
        rows.append((r, th, ph.tau, res.value.real, res.value.imag, truth.real,
                     truth.imag, err, res.gap1, res.gap2, res.w1_l2, res.w2_l2))
        taus.append(ph.tau)
        errs.append(max(err, 1e-300))
    write_csv(os.path.join(outdir, "extract.csv"),
              ("r", "theta", "tau", "est_re", "est_im", "truth_re", "truth_im",
               "abs_err", "gap1", "gap2", "w1_l2", "w2_l2"), rows)
    _plot_loglog(os.path.join(outdir, "extract.svg"), taus, errs,
                 "tau", "|error|", "coefficient extraction error")
    return {"truth": [truth.real, truth.imag],
            "final_abs_err": errs[-1], "taus": taus}


def run_reconstruct(cfg: dict, outdir: str) -> dict:
    """Lattice sweep plus synthesis against the known difference."""
    g = cfg["geometry"]
    cs = build_disk(g["radius"], g["nr"], g["nphi"])
    xcfg = extraction_config(cfg, cs)
    V1 = build_potential(cfg["potential"], cs, cfg["seed"])
    W = build_potential(cfg["perturbation"], cs, cfg["seed"] + 1)
    V2 = V1 + W
    rows = sweep_lattice(V1, V2, cs, xcfg, workers=cfg.get("workers", 1))
    table = []
    for row in rows:
        if row.feasible:
            res = row.result
            table.append((row.k, row.eta[0], row.eta[1], 1, "",
                          res.value.real, res.value.imag, res.tau, res.r,
                          res.gap1, res.gap2))
        else:
            table.append((row.k, row.eta[0], row.eta[1], 0, row.reason,
                          0.0, 0.0, 0.0, 0.0, 0.0, 0.0))
    write_csv(os.path.join(outdir, "coefficients.csv"),
              ("k", "eta2", "eta3", "feasible", "reason", "est_re", "est_im",
               "tau", "r", "gap1", "gap2"), table)
    sr = synthesize(rows, cs, xcfg, m_plus=W.m_plus)
    err = reconstruction_error(sr, W, cs)
    baseline = synthesize_from_direct(W, cs, xcfg)
    base_err = reconstruction_error(baseline, W, cs)
    rec_rows = []
    for k, vals in sorted(sr.mode_fields.items()):
        for n, z in enumerate(vals):
            rec_rows.append((k, n, z.real, z.imag))
    write_csv(os.path.join(outdir, "reconstruction.csv"),
              ("k", "node", "re", "im"), rec_rows)
    return {"h_minus_one": sr.h_minus_one, "tail_bound": sr.tail_bound,
            "n_feasible": sr.n_feasible, "n_infeasible": sr.n_infeasible,
            "rel_l2_error": err, "baseline_rel_l2_error": base_err}


def run_stability(cfg: dict, outdir: str, cache_dir: str = None) -> dict:
    """Perturbation-size sweep with the fitted log-log constant."""
    g = cfg["geometry"]
    cs = build_disk(g["radius"], g["nr"], g["nphi"])
    xcfg = extraction_config(cfg, cs)
    V1 = build_potential(cfg["potential"], cs, cfg["seed"])
    W = build_potential(cfg["perturbation"], cs, cfg["seed"] + 1)
    sc = cfg["stability"]
    res = stability_sweep(V1, W, sc["deltas"], cs, xcfg, K=sc["K"],
                          holdout_delta=sc.get("holdout"), cache_dir=cache_dir)
    rows = [(r.delta, r.gamma, r.e, r.phi_gamma,
             r.ratio if r.ratio is not None else 0.0, int(r.held_out))
            for r in res.records]
    write_csv(os.path.join(outdir, "stability.csv"),
              ("delta", "gamma", "e", "phi_gamma", "ratio", "held_out"), rows)
    deltas = [r.delta for r in res.records]
    gammas = [max(r.gamma, 1e-300) for r in res.records]
    _plot_loglog(os.path.join(outdir, "stability_gamma.svg"), deltas, gammas,
                 "delta", "gamma", "DN-difference norm vs perturbation")
    es = [max(r.e, 1e-300) for r in res.records]
    phis = [max(r.phi_gamma, 1e-300) for r in res.records]
    _plot_loglog(os.path.join(outdir, "stability_e_phi.svg"), phis, es,
                 "Phi(gamma)", "dual-norm size", "stability modulus")
    return {"c_fit": res.c_fit, "holdout_ok": res.holdout_ok,
            "gamma_monotone": res.gamma_monotone}


def run(subcommand: str, cfg: dict, outdir: str, cache_dir: str = None) -> dict:
    """Dispatch one subcommand; validates, times, and writes the manifest."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError([f"unknown subcommand {subcommand!r}; choose from "
                           f"{', '.join(SUBCOMMANDS)}"])
    problems = validate_config(cfg)
    if problems:
        raise ConfigError(problems)
    os.makedirs(outdir, exist_ok=True)

    runners = {
        "forward": run_forward,
        "cgo-decay": run_cgo_decay,
        "carleman": run_carleman,
        "extract": run_extract,
        "reconstruct": run_reconstruct,
    }
    timings = {}
    summary = {}
    t_all = time.time()
    if subcommand == "all":
        for name in ("forward", "cgo-decay", "carleman", "extract",
                     "reconstruct", "stability", "dn"):
            t0 = time.time()
            if name == "dn":
                summary[name] = run_dn(cfg, outdir, cache_dir)
            elif name == "stability":
                summary[name] = run_stability(cfg, outdir, cache_dir)
            else:
                summary[name] = runners[name](cfg, outdir)
            timings[name] = time.time() - t0
    elif subcommand == "dn":
        summary = run_dn(cfg, outdir, cache_dir)
    elif subcommand == "stability":
        summary = run_stability(cfg, outdir, cache_dir)
    else:
        summary = runners[subcommand](cfg, outdir)
    timings["total"] = time.time() - t_all

    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1, default=float)
    write_manifest(outdir, cfg, timings)
    return summary
