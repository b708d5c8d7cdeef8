import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from edgecache.cli import load_tables, main, save_tables
from edgecache.config import ConfigError, parse_config_text, validate_config
from edgecache.presets import preset_params

MINIMAL = "catalog:\n  count: 3\npolicy:\n  kind: myopic\n"

LEARNER = """\
seed: 4
horizon: 50
replications: 3
catalog:
  count: 4
  size_range: [1, 10]
  popularity: 0.4
schedule:
  blocks:
    - {length: 25, fetch_mean: 44}
    - {length: 25, fetch_mean: 30, store_mean: 5}
policy:
  kind: mq_learning
  stepsize: 0.3
  exploration: {kind: constant, epsilon: 0.05}
capacity:
  modes: [instantaneous, long_term]
  hard_capacity_fraction: 0.5
"""


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_validate_examples(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("discount: 1.2\n" + MINIMAL)
    assert main(["validate", str(bad)]) == 2
    assert "discount out of (0,1)" in capsys.readouterr().err

    good = tmp_path / "good.yaml"
    good.write_text(MINIMAL)
    assert main(["validate", str(good)]) == 0
    canon = capsys.readouterr().out
    assert "kind: myopic" in canon
    again = tmp_path / "canon.yaml"
    again.write_text(canon)
    assert validate_config(again).canonical() == canon

    soft = tmp_path / "soft.yaml"
    soft.write_text(MINIMAL + "capacity:\n  modes: [instantaneous]\n  hard_capacity: 5\n  soft_capacity: 9\n")
    assert main(["validate", str(soft)]) == 2
    assert "soft_capacity" in capsys.readouterr().err


def test_diagnostics_are_line_anchored():
    with pytest.raises(ConfigError) as err:
        parse_config_text("catalog:\n  count: 3\n  colour: red\npolicy:\n  kind: myopic\n")
    assert any("line 3" in d and "catalog.colour" in d for d in err.value.diagnostics)
    with pytest.raises(ConfigError) as err:
        parse_config_text("catalog:\n  count: 3\npolicy:\n  kind: oracle\n")
    assert any("policy.kind" in d for d in err.value.diagnostics)
    with pytest.raises(ConfigError):
        parse_config_text("catalog: [1, 2\n")
    with pytest.raises(ConfigError):
        parse_config_text("catalog:\n  count: 3\n")


def test_fig7_smoke_under_a_second(tmp_path):
    start = time.perf_counter()
    rc = main(["run", "fig7", "--override", "F=2", "--override", "T=30", "--override", "N=1",
               "--out", str(tmp_path)])
    assert rc == 0
    assert time.perf_counter() - start < 1.0
    header, rows = _read_csv(tmp_path / "fig7_mq.csv")
    assert header == ["slot", "block", "avg_cost", "avg_cached_size", "avg_mu"]
    assert len(rows) == 30
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["parameters"]["F"] == 2 and manifest["preset"] == "fig7"


def test_fig2_and_fig5_shapes(tmp_path):
    assert main(["run", "fig2", "--override", "rho_bars=[1, 40, 80]", "--out", str(tmp_path / "f2")]) == 0
    header, rows = _read_csv(tmp_path / "f2" / "fig2_lambda43_p0.3.csv")
    assert header == ["rho_bar", "lambda_bar", "p", "avg_cost"]
    assert len(rows) == 3
    assert len(list((tmp_path / "f2").glob("fig2_*.csv"))) == 8  # 4 fetch means x 2 popularities
    assert main(["run", "fig5", "--override", "rho_bars=[5, 20]", "--out", str(tmp_path / "f5")]) == 0
    names = sorted(p.name for p in (tmp_path / "f5").glob("*.csv"))
    assert names == ["fig5_dp.csv", "fig5_myopic.csv"]
    _, rows = _read_csv(tmp_path / "f5" / "fig5_dp.csv")
    assert {r[1] for r in rows} == {"53"}


def test_floats_have_nine_significant_digits(tmp_path):
    main(["run", "fig3", "--override", "ps=[0.3]", "--override", "rho_bars=[2]", "--override",
          "lambda_bars=[45]", "--out", str(tmp_path)])
    _, rows = _read_csv(tmp_path / "fig3_lambda45_rho2.csv")
    assert float(rows[0][3]) == pytest.approx(float(f"{float(rows[0][3]):.9g}"))


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", "fig9"]) == 2
    assert "neither a preset" in capsys.readouterr().err
    assert main(["run", "fig2", "--override", "colour=3", "--out", str(tmp_path)]) == 2
    assert "no parameter" in capsys.readouterr().err
    assert main(["run", "fig2", "--override", "broken", "--out", str(tmp_path)]) == 2
    assert main(["run", "fig2", "--replications", "3", "--out", str(tmp_path)]) == 2
    with pytest.raises(KeyError):
        preset_params("fig4", {"gama": 0.5})


def test_presets_byte_reproducible(tmp_path):
    runs = [
        ["fig6", "--override", "rho_bars=[2, 18]", "--override", "lambda_bars=[44]", "--horizon", "300",
         "--replications", "2", "--override", "burn_in=100"],
        ["fig7", "--override", "F=5", "--horizon", "60", "--replications", "3"],
    ]
    for args in runs:
        outs = []
        for k in range(2):
            out = tmp_path / f"{args[0]}_{k}"
            assert main(["run", *args, "--seed", "11", "--out", str(out)]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        assert outs[0] == outs[1]


def test_config_run_tables_and_warm_start(tmp_path):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(LEARNER)
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out), "--save-tables"]) == 0
    header, rows = _read_csv(out / "exp.csv")
    assert header[:3] == ["slot", "block", "avg_cost"] and len(rows) == 50
    assert {r[1] for r in rows} == {"0", "1"}
    tables = load_tables(out / "exp_tables.csv")
    assert tables.shape == (3, 4, 2, 2, 2, 2)
    first = (out / "exp.csv").read_bytes()
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    assert (out / "exp.csv").read_bytes() == first
    assert main(["run", str(cfg), "--out", str(tmp_path / "warm"), "--warm-start", str(out / "exp_tables.csv")]) == 0
    assert (tmp_path / "warm" / "exp.csv").read_bytes() != first
    assert json.loads((out / "exp.manifest.json").read_text())["config"]["seed"] == 4


def test_table_round_trip(tmp_path):
    q = np.random.default_rng(0).uniform(0, 10, (2, 3, 2, 2, 2, 2))
    save_tables(tmp_path / "t.csv", q)
    np.testing.assert_allclose(load_tables(tmp_path / "t.csv"), q, rtol=1e-8)


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "m.yaml"
    cfg.write_text(MINIMAL)
    proc = subprocess.run([sys.executable, "-m", "edgecache", "validate", str(cfg)], capture_output=True, text=True)
    assert proc.returncode == 0 and "catalog" in proc.stdout
