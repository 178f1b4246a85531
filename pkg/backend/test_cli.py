import yaml

from cli import main
from conftest import small_config
from data import load_connectomes
from models import FederationConfig, ModelKind


def write_config(tmp_path, **changes):
    path = tmp_path / "experiment.yaml"
    path.write_text(yaml.safe_dump(small_config(tmp_path, **changes).model_dump(mode="json")))
    return path


def test_run_writes_result_and_report(tmp_path, capsys):
    """run executes the config and points at the result directory."""
    code = main(["run", str(write_config(tmp_path)), "--mode", "federated", "--rounds", "1"])
    assert code == 0
    out = capsys.readouterr().out
    assert "federated: most reproducible model" in out
    results = list((tmp_path / "results").glob("*/result.json"))
    assert len(results) == 1
    assert (results[0].parent / "report" / "tables" / "accuracies.csv").exists()


def test_report_rerenders_from_result_file(tmp_path):
    """report rebuilds the assets from a persisted result."""
    assert main(["run", str(write_config(tmp_path, mode="baseline"))]) == 0
    result_file = next((tmp_path / "results").glob("*/result.json"))
    assert main(["report", str(result_file), str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "figures" / "baseline_average.svg").exists()


def test_synth_writes_loadable_dataset(tmp_path, capsys):
    """synth writes connectome files that load back with the requested shape."""
    spec = tmp_path / "synthetic.yaml"
    spec.write_text(yaml.safe_dump({"n_nodes": 6, "samples": 20, "planted_nodes": [1, 4], "seed": 3}))
    code = main(["synth", str(spec), str(tmp_path / "m.csv"), str(tmp_path / "l.txt")])
    assert code == 0
    assert "planted nodes: [1, 4]" in capsys.readouterr().out
    dataset = load_connectomes(tmp_path / "m.csv", tmp_path / "l.txt")
    assert dataset.size == 20
    assert dataset.node_count == 6


def test_check_passes(capsys):
    """check runs every self-check and succeeds."""
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert "fedavg exactness" in out
    assert "reproducibility oracle" in out


def test_exit_codes_distinguish_failures(tmp_path):
    """Usage, data-format and I/O failures map to distinct exit codes."""
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2
    assert main(["explode"]) == 2
    assert main(["run", str(write_config(tmp_path)), "--rounds", "0"]) == 2

    (tmp_path / "m.csv").write_text("0,1,1\n")
    (tmp_path / "l.txt").write_text("0\n")
    bad_data = tmp_path / "bad.yaml"
    bad_data.write_text(
        yaml.safe_dump(
            {"dataset": {"kind": "connectome", "matrix_file": str(tmp_path / "m.csv"), "labels_file": str(tmp_path / "l.txt")}}
        )
    )
    assert main(["run", str(bad_data)]) == 3

    corrupt = tmp_path / "result.json"
    corrupt.write_text("{}")
    assert main(["report", str(corrupt), str(tmp_path / "out")]) == 5


def test_diverging_run_exits_with_training_code(tmp_path):
    """A learning rate that blows up the weights ends the run with exit code 4."""
    federation = FederationConfig(rounds=1, epochs=1, batch_size=100, top_k=3, learning_rates={ModelKind.GCN: 1e306})
    assert main(["run", str(write_config(tmp_path, federation=federation, models=[ModelKind.GCN]))]) == 4
