import json
from dataclasses import replace

import pytest

from inavit.errors import ConfigMismatchError, InavitError
from inavit.runner import EXIT_ERROR, EXIT_GRADCHECK, AnticipationRunner, _int_list, main
from inavit.tensor import PRIMITIVES, Gelu, Primitive


@pytest.fixture
def config_file(small_run, tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(small_run.to_dict()))
    return str(path)


def test_int_lists():
    assert _int_list("0, 1,2") == [0, 1, 2]
    assert _int_list(None) == []
    with pytest.raises(InavitError):
        _int_list("0,a")


def test_generate_train_evaluate_and_export(config_file, tmp_path, capsys):
    common = ["--seed", "0", "--config", config_file, "--quiet"]
    assert main(["gen-data", *common]) == 0
    assert (tmp_path / "data" / "manifest.json").exists()

    assert main(["train", *common]) == 0
    assert (tmp_path / "run" / "checkpoint" / "params.bin").exists()

    report = tmp_path / "report.json"
    assert main(["eval", *common, "--report", str(report)]) == 0
    metrics = json.loads(report.read_text())
    assert 0.0 <= metrics["mean_top5_recall"] <= 1.0
    assert len(metrics["per_class"]) == 4

    manifest = json.loads((tmp_path / "data" / "manifest.json").read_text())
    seed = manifest["episodes"][0]["seed"]
    assert main(["export-attn", *common, "--episode", str(seed)]) == 0
    assert (tmp_path / "run" / f"attention_{seed}.json").exists()
    assert capsys.readouterr().out == ""


def test_runner_methods_share_one_config(small_run):
    runner = AnticipationRunner(small_run)
    counts = runner.generate_data(size=4)
    assert int(counts.to_numpy().sum()) == 4
    checkpoint = runner.train()
    assert runner.load_checkpoint().config_hash == checkpoint.config_hash
    assert runner.evaluate(split="train").samples == len(runner.store.seeds("train"))


def test_evaluation_rejects_a_checkpoint_of_another_model_config(small_run, config_file):
    runner = AnticipationRunner(small_run)
    runner.generate_data()
    runner.train()
    deeper = AnticipationRunner(replace(small_run, model=replace(small_run.model, depth=2)))
    with pytest.raises(ConfigMismatchError):
        deeper.evaluate()
    code = main(["eval", "--seed", "0", "--config", config_file, "--set", "model.depth=2", "--quiet"])
    assert code == EXIT_ERROR
    assert main(["eval", "--seed", "0", "--config", config_file, "--quiet"]) == 0


def test_gradcheck_command_passes(config_file):
    assert main(["gradcheck", "--seed", "0", "--config", config_file, "--scope", "classifier", "--quiet"]) == 0


def test_gradcheck_failure_has_its_own_exit_code(config_file, monkeypatch):
    def doubled(grad, saved, a):
        (correct,) = Gelu.backward(grad, saved, a)
        return (2.0 * correct,)

    monkeypatch.setitem(PRIMITIVES, "gelu", Primitive("gelu", Gelu.forward, doubled))
    code = main(["gradcheck", "--seed", "0", "--config", config_file, "--scope", "numerics", "--quiet"])
    assert code == EXIT_GRADCHECK


def test_package_errors_exit_nonzero(config_file):
    assert main(["train", "--seed", "0", "--config", config_file, "--set", "run.epochs=3", "--quiet"]) == EXIT_ERROR
    assert main(["eval", "--seed", "0", "--config", config_file, "--quiet"]) == EXIT_ERROR


def test_seed_is_required():
    with pytest.raises(SystemExit):
        main(["train"])
