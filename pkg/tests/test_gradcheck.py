import pytest

from inavit.errors import ConfigError, GradcheckFailure
from inavit.gradcheck import (
    BLOCKS,
    ERROR_FLOOR,
    REPORT_COLUMNS,
    TOLERANCE,
    GradientChecker,
    gradcheck_suite,
    require_passed,
)
from inavit.tensor import PRIMITIVES, Gelu, Primitive


@pytest.mark.parametrize("block", [b for b in BLOCKS if b != "model"])
def test_block_gradients_agree_with_finite_differences(block):
    report = gradcheck_suite(block, seed=0, probes_per_tensor=4)
    assert len(report) == 1
    row = report.iloc[0]
    assert row["max_rel_error"] <= TOLERANCE, f"{block}: {row['worst_parameter']}"
    assert bool(row["passed"])


@pytest.mark.slow
def test_full_suite_passes():
    report = gradcheck_suite("full", seed=1)
    assert list(report["block"]) == list(BLOCKS)
    require_passed(report)


def test_classifier_scope_reports_one_row():
    report = gradcheck_suite("classifier", probes_per_tensor=3)
    assert list(report.columns) == REPORT_COLUMNS
    row = report.iloc[0]
    assert row["parameters"] == 4
    assert row["probes_per_tensor"] == 3
    assert row["tolerance"] == TOLERANCE
    assert row["error_floor"] == ERROR_FLOOR
    assert row["max_rel_error"] <= TOLERANCE


def test_a_wrong_backward_rule_is_caught(monkeypatch):
    def doubled(grad, saved, a):
        (correct,) = Gelu.backward(grad, saved, a)
        return (2.0 * correct,)

    monkeypatch.setitem(PRIMITIVES, "gelu", Primitive("gelu", Gelu.forward, doubled))
    report = gradcheck_suite("numerics")
    assert not report.loc[0, "passed"]
    with pytest.raises(GradcheckFailure, match="numerics"):
        require_passed(report)


def test_unknown_blocks_are_config_errors():
    with pytest.raises(ConfigError):
        GradientChecker.resolve_scope("sca,lstm")


def test_scope_lists_are_resolved_in_order():
    assert GradientChecker.resolve_scope("tca, sca") == ["tca", "sca"]
    assert GradientChecker.resolve_scope("full") == list(BLOCKS)
