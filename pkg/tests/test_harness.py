import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from cfmixed.cli import main
from cfmixed.config import ConfigError, dump_config, parse_config
from cfmixed.harness import (CSV_COLUMNS, aggregate_cdf, drop_seed, run_experiment,
                             simulate_drop, sweep)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = """
network:
  num_aps: 4
  num_users: 3
  antennas_per_ap: 2
M0: 3
precoders: [MR, LMMSE]
num_drops: 2
realizations_per_drop: 40
normalization_realizations: 40
batch_size: 16
"""


def tiny(**changes):
    return parse_config(TINY).replace(**changes)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- configuration -----------------------------------------------------------

def test_parse_full_config():
    cfg = parse_config((CONFIGS / "default.yaml").read_text())
    assert cfg.network.num_aps == 30 and cfg.network.antennas_per_ap == 10
    assert cfg.M0 == 20 and cfg.num_drops == 100
    assert cfg.ofdm.coherence_block.tau == 98


def test_float_written_without_dot():
    cfg = parse_config("network:\n  noise_power: 1e-13\n")
    assert cfg.network.noise_power == 1e-13


@pytest.mark.parametrize("text, line", [
    ("M0: 20\nnum_drops: zero\n", 2),
    ("M0: 4\nnetwork:\n  num_aps: 3\n  bogus: 1\n", 4),
    ("num_drops: 0\n", 1),
    ("schemes: [sync, psychic]\n", 1),
    ("network: [1, 2\n", 2),
])
def test_config_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "cfg.yaml")
    assert str(info.value).startswith(f"cfg.yaml:{line}:")


def test_schemes_are_canonicalized():
    cfg = parse_config("schemes: [mixed, sync, mixed]\n")
    assert cfg.schemes == ["sync", "mixed"]


def test_drop_seeds_are_independent_of_each_other():
    a = drop_seed(5, 3).generate_state(4)
    assert np.array_equal(a, drop_seed(5, 3).generate_state(4))
    assert not np.array_equal(a, drop_seed(5, 4).generate_state(4))
    assert not np.array_equal(a, drop_seed(6, 3).generate_state(4))


# -- aggregation -------------------------------------------------------------

def test_aggregate_cdf_examples():
    one = aggregate_cdf([2.5])
    assert one["values"].tolist() == [2.5] and one["levels"].tolist() == [1.0]
    three = aggregate_cdf([3.0, 1.0, 2.0])
    assert three["values"].tolist() == [1.0, 2.0, 3.0]
    assert np.allclose(three["levels"], [1 / 3, 2 / 3, 1.0])
    with pytest.raises(ValueError):
        aggregate_cdf([])


def test_aggregate_median_selection_oracle():
    v = np.random.default_rng(0).exponential(size=101)
    assert aggregate_cdf(v)["median"] == sorted(v.tolist())[50]
    assert aggregate_cdf(v)["p5"] == pytest.approx(np.percentile(v, 5))


# -- runs --------------------------------------------------------------------

def test_run_writes_expected_files(tmp_path):
    cfg = tiny()
    out = run_experiment(cfg, tmp_path)
    rows = read_rows(tmp_path / "results.csv")
    assert tuple(rows[0]) == CSV_COLUMNS
    # drops x schemes x precoders x users
    assert len(rows) - 1 == 2 * 3 * 2 * 3
    wide = read_rows(tmp_path / "per_drop_sum_se.csv")
    assert wide[0][1:] == [f"{s}_{p}_distance" for p in ("MR", "LMMSE")
                          for s in ("sync", "async", "mixed")]
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seeds"]["base_seed"] == 0
    assert man["derived"]["symbol_length"] == 1096
    assert len(out["summary"]) == 6
    raw = (tmp_path / "results.csv").read_bytes()
    assert raw.count(b"\r\n") == len(rows)
    for r in rows[1:]:
        se = float(r[6])
        assert se == pytest.approx(out["results"][0].prefactor
                                   * np.log2(1 + float(r[5])), rel=1e-8)


def test_repeat_run_is_byte_identical(tmp_path):
    cfg = tiny(num_drops=1, base_seed=17)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ("results.csv", "per_drop_sum_se.csv", "cdf.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_scheme_filter(tmp_path):
    run_experiment(tiny(schemes=["sync"]), tmp_path)
    schemes = {r[1] for r in read_rows(tmp_path / "results.csv")[1:]}
    assert schemes == {"sync"}


def test_combinations_share_draws():
    cfg = tiny(num_drops=1, precoders=["MR"])
    full = simulate_drop(cfg, 0)
    only = simulate_drop(cfg.replace(schemes=["mixed"]), 0)
    key = ("mixed", "MR", "distance")
    assert np.array_equal(full.sinr[key], only.sinr[key])


def test_fixed_clusterer_runs():
    cfg = tiny(num_drops=1, clusterers=["distance", "fixed"], precoders=["MR"])
    r = simulate_drop(cfg, 0)
    # the baseline is one coherent cluster, so mixed and async coincide
    assert np.array_equal(r.sinr["mixed", "MR", "fixed"], r.sinr["async", "MR", "fixed"])


def test_closed_form_method_runs():
    cfg = tiny(num_drops=1, precoders=["MR"], mr_method="closed_form")
    r = simulate_drop(cfg, 0)
    assert all(np.all(v > 0) for v in r.sinr.values())


def test_sweep_sorted_and_keyed(tmp_path):
    cfg = tiny(num_drops=1, precoders=["MR"], realizations_per_drop=10)
    out = sweep(cfg, "M", [4, 2, 1, 2], tmp_path)
    rows = read_rows(out["path"])
    assert rows[0][0] == "M"
    assert [r[0] for r in rows[1:] if r[1] == "mixed"] == ["1", "2", "4"]
    assert (tmp_path / "M=4" / "results.csv").exists()
    with pytest.raises(ConfigError):
        sweep(cfg, "bandwidth", [1], tmp_path)


def test_sweep_five_values_gives_five_rows_per_scheme(tmp_path):
    cfg = tiny(num_drops=1, precoders=["MR"], realizations_per_drop=10)
    out = sweep(cfg, "M", [10, 2, 8, 4, 6], tmp_path)
    for s in ("sync", "async", "mixed"):
        assert [r["M"] for r in out["rows"] if r["scheme"] == s] == [2, 4, 6, 8, 10]


def test_single_value_sweep_matches_run(tmp_path):
    cfg = tiny(num_drops=1, precoders=["MR"], realizations_per_drop=10)
    sweep(cfg, "K", [3], tmp_path / "sw")
    run_experiment(cfg, tmp_path / "run")
    assert ((tmp_path / "sw" / "K=3" / "results.csv").read_bytes()
            == (tmp_path / "run" / "results.csv").read_bytes())


# -- command line ------------------------------------------------------------

def test_cli_validate(tmp_path, capsys):
    assert main(["validate", "--config", str(CONFIGS / "default.yaml")]) == 0
    bad = tmp_path / "bad.yaml"
    bad.write_text("M0: 4\nnum_drops: -1\n")
    assert main(["validate", "--config", str(bad)]) == 2
    assert "bad.yaml:1:" in capsys.readouterr().err


def test_cli_run_and_sweep(tmp_path, capsys):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    assert main(["run", "--config", str(path), "--drops", "1", "--seed", "3",
                 "--out", str(tmp_path / "run")]) == 0
    assert "median sum-SE" in capsys.readouterr().out
    rows = read_rows(tmp_path / "run" / "results.csv")
    assert {r[0] for r in rows[1:]} == {"0"}
    assert main(["sweep", "--config", str(path), "--param", "M0", "--values", "2,3",
                 "--drops", "1", "--out", str(tmp_path / "sw")]) == 0
    assert (tmp_path / "sw" / "sweep.csv").exists()
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_dumped_config_round_trips():
    cfg = parse_config((CONFIGS / "default.yaml").read_text())
    assert parse_config(dump_config(cfg)) == cfg
