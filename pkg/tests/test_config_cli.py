"""Config loading and the operator CLI subcommands."""

import pytest
import yaml

from medledger.cli import (
    DEMO_LAB_DEFINITION,
    _build_node,
    bench_ordering_ok,
    main,
    run_bench,
)
from medledger.config import ConfigError, load_config, resolve_config_path
from medledger.exporter import parse


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("MEDLEDGER_CONFIG", raising=False)


def write_config(tmp_path, name="node.yaml", **overrides):
    raw = {"data_dir": str(tmp_path / "data"), "consensus": {"kind": "dpos"}}
    raw.update(overrides)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return str(path)


class TestLoadConfig:
    def test_defaults(self, tmp_path):
        path = tmp_path / "min.yaml"
        path.write_text("{}")
        config = load_config(str(path))
        assert config.listen == "127.0.0.1:8440"
        assert config.consensus.kind == "dpos"
        assert config.keystore_path.endswith("keystore.json")

    def test_explicit_pow_section(self, tmp_path):
        path = write_config(tmp_path, consensus={"kind": "pow", "difficulty_bits": 6})
        config = load_config(path)
        assert config.consensus.kind == "pow"
        assert config.consensus.pow_difficulty_bits == 6

    def test_unknown_top_level_key_is_named(self, tmp_path):
        path = write_config(tmp_path, datadir="typo")
        with pytest.raises(ConfigError, match="datadir"):
            load_config(path)

    def test_unknown_consensus_key_is_named(self, tmp_path):
        path = write_config(tmp_path, consensus={"kind": "pow", "dificulty": 4})
        with pytest.raises(ConfigError, match="consensus.dificulty"):
            load_config(path)

    def test_unknown_kind_rejected(self, tmp_path):
        path = write_config(tmp_path, consensus={"kind": "PoX"})
        with pytest.raises(ConfigError, match="PoX"):
            load_config(path)

    def test_consensus_must_be_mapping(self, tmp_path):
        path = write_config(tmp_path, consensus="dpos")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(str(tmp_path / "nope.yaml"))

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("a: [unclosed")
        with pytest.raises(ConfigError, match="YAML"):
            load_config(str(path))

    def test_root_must_be_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- just\n- a list\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_config(str(path))

    def test_listen_parsing(self, tmp_path):
        path = write_config(tmp_path, listen="0.0.0.0:9000")
        assert load_config(path).listen_host_port == ("0.0.0.0", 9000)
        bad = load_config(write_config(tmp_path, name="bad.yaml", listen="no-port"))
        with pytest.raises(ConfigError):
            bad.listen_host_port

    def test_single_node_pos_stakes_itself(self, tmp_path):
        path = write_config(tmp_path, consensus={"kind": "pos"})
        config = load_config(path)
        assert list(config.consensus.stakes.values()) == [1]

    def test_single_node_dpos_delegates_itself(self, tmp_path):
        config = load_config(write_config(tmp_path))
        assert len(config.consensus.delegates) == 1


class TestConfigResolution:
    def test_env_var_wins(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MEDLEDGER_CONFIG", "/from/env.yaml")
        assert resolve_config_path("/from/cli.yaml") == "/from/env.yaml"

    def test_cli_value_used_without_env(self):
        assert resolve_config_path("/from/cli.yaml") == "/from/cli.yaml"

    def test_neither_is_an_error(self):
        with pytest.raises(ConfigError, match="MEDLEDGER_CONFIG"):
            resolve_config_path(None)


class TestSeedDemo:
    def test_seeds_and_is_idempotent(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert main(["seed-demo", "--config", path]) == 0
        out = capsys.readouterr().out
        assert "registered doctor-1" in out
        assert "appointment patient-1->doctor-1" in out

        node = _build_node(load_config(path), auto_seal=False)
        assert node.height == 17
        assert len(node.state.audit_log) == 18  # genesis + one per mutation
        assert len(node.state.accounts) == 6
        assert len(node.state.medications) == 3
        assert len(node.state.appointments) == 2

        definition = node.state.lab_definitions[1]
        assert definition.test_name == DEMO_LAB_DEFINITION[0]
        assert [(p.name, p.unit, p.ref_min, p.ref_max)
                for p in definition.parameters] == DEMO_LAB_DEFINITION[1]

        assert main(["seed-demo", "--config", path]) == 0
        assert "already seeded" in capsys.readouterr().out
        rerun = _build_node(load_config(path), auto_seal=False)
        assert rerun.height == 17

    def test_keystore_holds_demo_seeds(self, tmp_path):
        path = write_config(tmp_path)
        main(["seed-demo", "--config", path])
        keystore = yaml.safe_load(open(load_config(path).keystore_path))
        assert "demo-admin" in keystore.values()
        assert "demo-patient-1" in keystore.values()

    def test_config_via_environment(self, tmp_path, monkeypatch, capsys):
        path = write_config(tmp_path)
        monkeypatch.setenv("MEDLEDGER_CONFIG", path)
        assert main(["seed-demo"]) == 0
        assert "seeded: height 17" in capsys.readouterr().out


class TestNodeRunErrors:
    def test_bad_kind_exits_nonzero(self, tmp_path, capsys):
        path = write_config(tmp_path, consensus={"kind": "PoX"})
        assert main(["node", "run", "--config", path]) == 1
        assert "PoX" in capsys.readouterr().err

    def test_missing_config_exits_nonzero(self, capsys):
        assert main(["node", "run"]) == 1
        assert "config" in capsys.readouterr().err

    def test_fresh_data_dir_starts_at_genesis(self, tmp_path):
        config = load_config(write_config(tmp_path))
        assert _build_node(config, auto_seal=False).height == 0

    def test_restart_resumes_at_tip(self, tmp_path, capsys):
        path = write_config(tmp_path)
        main(["seed-demo", "--config", path])
        config = load_config(path)
        first = _build_node(config, auto_seal=False)
        again = _build_node(config, auto_seal=False)
        assert again.chain.tip == first.chain.tip
        assert again.height == 17


class TestBench:
    def test_rows_and_ordering(self):
        rows = run_bench(100, 3, seed=1)
        assert [r["kind"] for r in rows] == ["pow", "pos", "dpos"]
        assert all(r["committed"] == 100 and r["converged"] for r in rows)
        assert bench_ordering_ok(rows)

    def test_below_minimum_txs_refused(self, capsys):
        assert main(["bench", "--txs", "50"]) == 1
        assert "--txs >= 100" in capsys.readouterr().err

    def test_csv_mode_is_stable(self, capsys):
        argv = ["bench", "--txs", "100", "--nodes", "3", "--seed", "1", "--csv"]
        assert main(argv) == 0
        first = capsys.readouterr().out
        assert main(argv) == 0
        assert capsys.readouterr().out == first
        assert first.splitlines()[0] == "kind,txs,committed,tps,mean_latency_ms,forks,converged"
        assert first.rstrip().endswith("PASS")

    def test_table_mode_prints_pass(self, capsys):
        assert main(["bench", "--txs", "100", "--nodes", "3", "--seed", "2"]) == 0
        out = capsys.readouterr().out
        assert "ordering check" in out and "PASS" in out


class TestExportCommand:
    def test_exports_seeded_laboratory(self, tmp_path, capsys):
        path = write_config(tmp_path)
        main(["seed-demo", "--config", path])
        out_file = tmp_path / "lab.csv"
        assert main(["export", "--config", path, "--dataset", "laboratory",
                     "--format", "csv", "--out", str(out_file)]) == 0
        dataset = parse(out_file.read_bytes(), "csv")
        assert dataset.kind == "laboratory"
        assert [r["parameter"] for r in dataset.rows] \
            == ["Parameter1", "Parameter2", "Parameter3"]

    def test_unknown_dataset_exits_nonzero(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert main(["export", "--config", path, "--dataset", "everything",
                     "--format", "csv", "--out", str(tmp_path / "x")]) == 1
        assert "everything" in capsys.readouterr().err

    def test_unknown_format_exits_nonzero(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert main(["export", "--config", path, "--dataset", "doctors",
                     "--format", "pdf", "--out", str(tmp_path / "x")]) == 1
        assert "pdf" in capsys.readouterr().err


class TestArgParsing:
    def test_no_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit):
            main([])
