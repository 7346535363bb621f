import json

import pytest

from unsupmap.cli import EXIT_CONTRACT, EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, main, run
from unsupmap.config import DEFAULTS, config_hash, dump_ini, load_config, train_config
from unsupmap.exceptions import ContractError

TINY = [
    "train.n_train=64",
    "train.batch_size=32",
    "train.n_div=32",
    "train.n_gt=32",
    "train.critic_hidden=8",
    "train.critic_steps=2",
]


def test_defaults_round_trip_through_ini(tmp_path):
    config = load_config()
    path = tmp_path / "c.ini"
    path.write_text(dump_ini(config))
    assert load_config(path) == config
    assert config_hash(load_config(path)) == config_hash(config)


def test_overrides_are_typed_and_validated():
    config = load_config(None, ["depth-sweep.depths=1, 3", "train.lam=0.5", "distill.find_k1=yes"])
    assert config["depth-sweep"]["depths"] == (1, 3)
    assert config["train"]["lam"] == 0.5
    assert config["distill"]["find_k1"] is True
    for bad in ["nosuch.key=1", "train.nosuch=1", "train.lam=abc", "train.lam"]:
        with pytest.raises(ContractError):
            load_config(None, [bad])


def test_section_values_overlay_train_defaults():
    cfg = train_config(load_config(None, ["run.seed=7"]), "stop-criterion")
    assert cfg.seed == 7
    assert cfg.lam == DEFAULTS["stop-criterion"]["lam"]
    assert cfg.t2 == DEFAULTS["stop-criterion"]["t2"]


def test_usage_errors_exit_64(tmp_path, capsys):
    assert main(["no-such-command", "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert main(["verify", "--set", "train.lam=abc", "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_demo_writes_outputs_and_manifest(tmp_path):
    status = main(["demo-ambiguity", "--out-dir", str(tmp_path), "--seed", "3"])
    assert status == EXIT_OK
    (run_dir,) = tmp_path.iterdir()
    assert run_dir.name.startswith("demo-ambiguity-")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["exit_code"] == 0 and manifest["seed"] == 3 and manifest["error"] is None
    assert set(manifest["versions"]) >= {"python", "numpy", "scipy"}
    assert manifest["config_hash"] == config_hash(load_config(run_dir / "config.ini"))
    demo = json.loads((run_dir / "ambiguity.json").read_text())
    assert demo["circularity_losses"] == {"cycle_a": 0.0, "cycle_b": 0.0}


def test_manifest_replays_the_same_configuration(tmp_path):
    _, first = run("demo-ambiguity", overrides=["demo-ambiguity.n=64"], out_dir=tmp_path / "a")
    _, second = run("demo-ambiguity", config_path=first / "manifest.json", out_dir=tmp_path / "a")
    m1 = json.loads((first / "manifest.json").read_text())
    m2 = json.loads((second / "manifest.json").read_text())
    assert m1["config_hash"] == m2["config_hash"]
    assert (first / "ambiguity.json").read_bytes() == (second / "ambiguity.json").read_bytes()


def test_depth_sweep_csv_bodies_are_byte_identical(tmp_path):
    overrides = TINY + ["depth-sweep.depths=1, 2", "depth-sweep.seeds=0", "depth-sweep.epochs=2", "depth-sweep.restarts=1"]
    dirs = [run("depth-sweep", overrides=overrides, out_dir=tmp_path)[1] for _ in range(2)]
    for name in ("depth_sweep.csv", "depth_sweep_runs.csv"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()
    assert (dirs[0] / "depth_sweep.csv").read_text().splitlines()[0] == "depth,div,gt_risk"


def test_infeasible_stop_criterion_exits_2(tmp_path):
    overrides = TINY + [
        "stop-criterion.epochs=2",
        "stop-criterion.restarts=1",
        "stop-criterion.n_train=64",
        "stop-criterion.t2=1",
        "train.epsilon0=0.0",
        "stop-criterion.n_perms=99",
    ]
    status, out = run("stop-criterion", overrides=overrides, out_dir=tmp_path)
    assert status == EXIT_INFEASIBLE
    assert (out / "reports.csv").exists()
    assert json.loads((out / "manifest.json").read_text())["error"]


def test_contract_errors_exit_1(tmp_path):
    status, out = run("stop-criterion", overrides=["run.pair=nowhere"], out_dir=tmp_path)
    assert status == EXIT_CONTRACT
    assert "nowhere" in json.loads((out / "manifest.json").read_text())["error"]


def test_minimal_depth_failure_writes_the_table(tmp_path):
    overrides = TINY + [
        "distill.find_k1=true",
        "distill.max_depth=1",
        "train.epsilon0=0.0",
        "distill.restarts=1",
        "train.epochs=1",
    ]
    status, out = run("distill", overrides=overrides, out_dir=tmp_path)
    assert status == EXIT_INFEASIBLE
    assert set(json.loads((out / "depth_table.json").read_text())) == {"1"}
