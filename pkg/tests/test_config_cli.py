import csv
import json
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlsgibbs import cli
from nlsgibbs.config import (
    ConfigError,
    RunConfig,
    TorusBlock,
    default_config,
    from_mapping,
    load_config,
    parse_ini,
    parse_json,
)

configs = st.builds(
    lambda d, K, kappa, seed, n, taus: from_mapping(
        {
            "torus": {"d": d, "K": K, "kappa": kappa},
            "potential": {"variant": "constant" if d == 1 else "powerFourier"},
            "bounds": {"q": {1: 4.0, 2: 6.0, 3: 2.5}[d]},
            "mc": {"n": n},
            "expansion": {"taus": taus},
            "seed": seed,
        }
    ),
    st.sampled_from([1, 2, 3]),
    st.integers(1, 4),
    st.floats(0.1, 10.0),
    st.integers(0, 2**64 - 1),
    st.integers(1000, 10**6),
    st.lists(st.floats(1.0, 1e6), min_size=1, max_size=4),
)


@given(configs)
def test_ini_round_trip(cfg):
    assert parse_ini(cfg.to_ini()) == cfg


@given(configs)
def test_json_round_trip(cfg):
    assert parse_json(cfg.to_json()) == cfg


@given(configs, st.sampled_from(["torus.kappa", "mc.n", "seed", "potential.c", "expansion.quad_order"]))
def test_hash_tracks_semantic_fields(cfg, field):
    bumped = {
        "torus.kappa": lambda c: replace(c, torus=replace(c.torus, kappa=c.torus.kappa * 2)),
        "mc.n": lambda c: replace(c, mc=replace(c.mc, n=c.mc.n + 1)),
        "seed": lambda c: replace(c, seed=(c.seed + 1) % 2**64),
        "potential.c": lambda c: replace(c, potential=replace(c.potential, c=c.potential.c + 1)),
        "expansion.quad_order": lambda c: replace(c, expansion=replace(c.expansion, quad_order=c.expansion.quad_order + 1)),
    }[field](cfg)
    assert bumped.config_hash() != cfg.config_hash()
    assert replace(cfg, out="elsewhere").config_hash() == cfg.config_hash()


def test_validation_messages_name_fields():
    with pytest.raises(ConfigError, match="expansion.eta"):
        from_mapping({"torus": {"d": 1}, "potential": {"variant": "constant"}, "bounds": {"q": 4}, "expansion": {"eta": 0.1}})
    with pytest.raises(ConfigError, match="torus.K"):
        from_mapping({"torus": {"d": 3, "K": 5}, "bounds": {"q": 2}})
    with pytest.raises(ConfigError, match="bounds.q"):
        from_mapping({"torus": {"d": 3}, "bounds": {"q": 3.0}})
    with pytest.raises(ConfigError, match="torus.d"):
        from_mapping({"torus": {"d": "two"}})
    with pytest.raises(ConfigError, match="unknown"):
        from_mapping({"torus": {"dims": 2}})
    with pytest.raises(ConfigError, match="seed"):
        from_mapping({"seed": -1})
    with pytest.raises(ConfigError, match="syntax"):
        parse_ini("[torus\nd = 2")


def test_eta_follows_dimension_by_default():
    cfg = from_mapping({"torus": {"d": 1}, "potential": {"variant": "constant"}, "bounds": {"q": 4}})
    assert cfg.expansion.eta == 0.0
    over = default_config().with_overrides({"torus.d": "1", "potential.variant": "constant", "bounds.q": "4"})
    assert over.expansion.eta == 0.0


def test_load_config_detects_format(tmp_path):
    cfg = default_config()
    (tmp_path / "a.ini").write_text(cfg.to_ini())
    (tmp_path / "a.json").write_text(cfg.to_json())
    assert load_config(tmp_path / "a.ini") == cfg == load_config(tmp_path / "a.json")
    assert isinstance(cfg.torus, TorusBlock) and isinstance(cfg, RunConfig)


def run(argv, capsys):
    code = cli.run(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_graphs_example_exports_nine(tmp_path, capsys):
    code, out, _ = run(["graphs", "m=2", "r=0", "family=R", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "9 pairings" in out
    rows = list(csv.reader(open(tmp_path / "pairings_m2_r0_R.csv")))
    assert len(rows) == 10
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "pass"
    assert manifest["config_hash"] == default_config().with_overrides({"out": str(tmp_path)}).config_hash()


def test_invalid_eta_exits_two(tmp_path, capsys):
    code, _, err = run(["graphs", "torus.d=1", "expansion.eta=0.1", "--out", str(tmp_path)], capsys)
    assert code == 2
    assert "expansion.eta" in err


def test_bad_config_path_exits_two(tmp_path, capsys):
    code, _, err = run(["kernels", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)], capsys)
    assert code == 2
    assert err


def test_env_overrides(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("NLSGIBBS_OUT", str(tmp_path / "env"))
    monkeypatch.setenv("NLSGIBBS_SEED", "77")
    code, _, _ = run(["kernels", "torus.K=1"], capsys)
    assert code == 0
    manifest = json.loads((tmp_path / "env" / "manifest.json").read_text())
    assert manifest["seed"] == 77
    code, _, _ = run(["kernels", "torus.K=1", "--seed", "5", "--out", str(tmp_path / "flag")], capsys)
    assert json.loads((tmp_path / "flag" / "manifest.json").read_text())["seed"] == 5


def test_kernels_potential_bounds(tmp_path, capsys):
    assert run(["kernels", "torus.K=2", "--out", str(tmp_path)], capsys)[0] == 0
    assert (tmp_path / "G.csv").exists()
    assert run(["potential", "--out", str(tmp_path)], capsys)[0] == 0
    report = json.loads((tmp_path / "potential_report.json").read_text())
    assert all(r["passed"] for r in report.values())
    code, out, _ = run(["bounds", "--out", str(tmp_path)], capsys)
    assert code == 0 and "green_convergence_d2: PASS" in out


def test_coeffs_and_mc_are_reproducible(tmp_path, capsys):
    args = ["torus.K=2", "expansion.taus=1,100", "mc.n=4000"]
    assert run(["coeffs", *args, "--out", str(tmp_path / "a")], capsys)[0] == 0
    assert run(["coeffs", *args, "--out", str(tmp_path / "b"), "--threads", "2"], capsys)[0] == 0
    assert (tmp_path / "a" / "coefficients.csv").read_text() == (tmp_path / "b" / "coefficients.csv").read_text()
    for sub in ("c", "d"):
        assert run(["mc", *args, "--sequential", "--out", str(tmp_path / sub)], capsys)[0] == 0
    assert (tmp_path / "c" / "estimates.csv").read_text() == (tmp_path / "d" / "estimates.csv").read_text()


def test_compare_one_dimension(tmp_path, capsys):
    code, out, _ = run(
        ["compare", "torus.d=1", "torus.K=2", "potential.variant=constant", "bounds.q=4", "mc.n=20000", "expansion.taus=1,100",
         "--out", str(tmp_path)],
        capsys,
    )
    assert code == 0, out
    assert (tmp_path / "scan.csv").exists()


def test_suite_subset_exit_codes(tmp_path, capsys):
    code, out, _ = run(["suite", "--only", "C1", "C3", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "suite: PASS" in out
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["passed"] is True


def test_unknown_override_exits_two(tmp_path, capsys):
    code, _, err = run(["kernels", "torus.colour=blue", "--out", str(tmp_path)], capsys)
    assert code == 2 and "torus.colour" in err
    code, _, err = run(["graphs", "family=Z", "--out", str(tmp_path)], capsys)
    assert code == 2 and "family" in err
