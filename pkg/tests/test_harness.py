import json

import pytest

from wgtomo.cli import main
from wgtomo.errors import ConfigError
from wgtomo.harness import (DEFAULT_CONFIG, merge_config, run,
                            run_cgo_decay, validate_config)

SMALL = {
    "geometry": {"nr": 16, "nphi": 32},
    "fiber": {"K": 4, "theta": 0.6, "n_theta": 4},
    "cgo": {"r_list": [2, 5], "torus_k_axial": 8, "torus_k_trans": 16,
            "max_iter": 200},
    "carleman": {"n_fields": 3, "taus": [1, 4], "n_directions": 2},
    "reconstruction": {"rho": 1.0, "deta": 0.75, "r_min": 0,
                       "torus_k_axial": 8, "torus_k_trans": 16},
    "stability": {"deltas": [1e-2, 1e-1], "holdout": 3e-2, "K": 2},
}


def test_merge_config_defaults():
    cfg = merge_config({})
    assert cfg["geometry"]["nr"] == DEFAULT_CONFIG["geometry"]["nr"]
    cfg2 = merge_config({"geometry": {"nr": 12}})
    assert cfg2["geometry"]["nr"] == 12
    assert cfg2["geometry"]["radius"] == 1.0


def test_validate_config_collects_all_problems():
    cfg = merge_config({"geometry": {"radius": -1, "nr": 2, "nphi": 7}})
    problems = validate_config(cfg)
    assert len(problems) == 3


def test_validate_config_margin_violation():
    cfg = merge_config(SMALL)
    cfg["reconstruction"]["eps"] = 0.4
    cfg["reconstruction"]["eps_obs"] = 0.41
    problems = validate_config(cfg)
    assert any("margin condition" in p for p in problems)


def test_validate_config_k_below_cutoff():
    cfg = merge_config(SMALL)
    cfg["potential"] = {"family": "single_x1_mode", "amplitude": 0.4, "s": 0.6}
    cfg["fiber"]["K"] = 0
    problems = validate_config(cfg)
    assert any("cutoff" in p for p in problems)


def test_run_rejects_unknown_subcommand(tmp_path):
    with pytest.raises(ConfigError):
        run("frobnicate", merge_config(SMALL), str(tmp_path))


def test_cli_invalid_config_exits_nonzero(tmp_path, capsys):
    bad = dict(SMALL)
    bad["geometry"] = {"radius": -1}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(bad))
    rc = main(["carleman", "--config", str(path), "--out", str(tmp_path / "o")])
    assert rc == 2
    err = capsys.readouterr().err
    assert "radius" in err


def test_cli_carleman_pass(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    rc = main(["carleman", "--config", str(path), "--out", str(tmp_path / "o")])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["pass_rate"] == 1.0
    assert (tmp_path / "o" / "carleman.csv").exists()
    assert (tmp_path / "o" / "manifest.json").exists()


def test_rerun_reproduces_artifacts_byte_identically(tmp_path):
    cfg = merge_config(SMALL)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    out1.mkdir(); out2.mkdir()
    run_cgo_decay(cfg, str(out1))
    run_cgo_decay(cfg, str(out2))
    for name in ("cgo_decay.csv", "cgo_decay.svg"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_run_writes_manifest_and_summary(tmp_path):
    cfg = merge_config(SMALL)
    summary = run("forward", cfg, str(tmp_path / "fw"))
    assert summary["residual_rel"] < 1e-10
    manifest = json.loads((tmp_path / "fw" / "manifest.json").read_text())
    assert manifest["config_hash"]
    assert manifest["seed"] == cfg["seed"]
    assert "total" in manifest["timings_s"]


def test_stability_subcommand_with_cache(tmp_path):
    cfg = merge_config(SMALL)
    cache = str(tmp_path / "dncache")
    s1 = run("stability", cfg, str(tmp_path / "s1"), cache_dir=cache)
    n_cached = len(list((tmp_path / "dncache").glob("*.npy")))
    assert n_cached > 0
    s2 = run("stability", cfg, str(tmp_path / "s2"), cache_dir=cache)
    assert s1["c_fit"] == pytest.approx(s2["c_fit"], rel=1e-12)
    assert s1["gamma_monotone"] and s1["holdout_ok"]
