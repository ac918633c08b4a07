import pandas as pd
import pytest

from inavit.ablation import ABLATION_COLUMNS, DEFAULT_ROWS, FULL_GRID, AblationRow, AblationRunner, ablate
from inavit.errors import ConfigError


def test_default_and_full_grids():
    assert len(AblationRunner.rows_for("default")) == len(DEFAULT_ROWS) == 11
    names = [row.name for row in AblationRunner.rows_for("full")]
    assert len(names) == len(FULL_GRID) == 15
    assert len(set(names)) == 15
    assert {"SCA", "SOT+CI", "UB+CI+ICV", "backbone-only"} <= set(names)


def test_rows_are_filtered_by_name_in_request_order():
    rows = AblationRunner.rows_for("default", ["backbone-only", "SCA+CI+ICV"])
    assert [r.name for r in rows] == ["backbone-only", "SCA+CI+ICV"]


def test_unknown_rows_and_grids_are_rejected():
    with pytest.raises(ConfigError):
        AblationRunner.rows_for("default", ["SCA+LSTM"])
    with pytest.raises(ConfigError):
        AblationRunner.rows_for("huge")


def test_row_overrides_must_be_model_fields(model_cfg):
    with pytest.raises(ConfigError):
        AblationRow("bad", {"dropout": 0.5}).model_config(model_cfg())


def test_object_sweep_changes_only_the_object_count(model_cfg):
    rows = AblationRunner.objects_sweep([1, 3])
    configs = [row.model_config(model_cfg()) for row in rows]
    assert [c.objects for c in configs] == [1, 3]
    assert configs[0].config_hash() != configs[1].config_hash()


def test_summary_takes_medians_over_seeds():
    base = {
        "row": "SCA", "variant": "sca", "context": "none", "icv": False, "interaction_tokens": "both",
        "objects_per_frame": 2, "steps": 1, "config_hash": "h",
    }
    results = pd.DataFrame(
        [
            {**base, "seed": s, "top1": t, "mean_top5_recall": t, "mean_class_accuracy": t, "loss": 1.0, "wall_clock": 0.1}
            for s, t in ((0, 0.2), (1, 0.9), (2, 0.4))
        ]
    )
    table = AblationRunner.summarize(results, "data")
    assert list(table.columns) == ABLATION_COLUMNS
    assert table.loc[0, "top1"] == pytest.approx(0.4)
    assert table.loc[0, "seeds"] == "0;1;2"
    assert table.loc[0, "dataset_hash"] == "data"


@pytest.mark.slow
def test_ablation_table_is_written_as_csv(small_run, small_store, tmp_path):
    rows = AblationRunner.rows_for("default", ["SCA+CI+ICV", "backbone-only"])
    path = tmp_path / "ablation.csv"
    table = ablate(small_run, rows, seeds=(0, 1), store=small_store, path=path)
    written = pd.read_csv(path)
    assert list(written.columns) == ABLATION_COLUMNS
    assert list(written["row"]) == ["SCA+CI+ICV", "backbone-only"]
    assert list(written["seeds"]) == ["0;1", "0;1"]
    baseline = table.iloc[1]
    assert baseline["variant"] == "none" and baseline["context"] == "none" and not baseline["icv"]
    assert set(written["dataset_hash"]) == {small_store.dataset_hash()}


def test_ablation_needs_rows_and_seeds(small_run, small_store):
    with pytest.raises(ConfigError):
        ablate(small_run, [], store=small_store)
    with pytest.raises(ConfigError):
        ablate(small_run, seeds=(), store=small_store)
