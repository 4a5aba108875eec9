"""Experiment pipelines on tiny synthetic cohorts."""

import pytest

from trafficmine.errors import ConfigInvalid
from trafficmine.experiments import (Roles, classification_csv,
                                     device_state_logs, discover_state_nets,
                                     fit_preprocessing, heatmap_csv,
                                     run_experiment1, run_experiment2)
from trafficmine.eventlog import EventLog, Trace
from trafficmine.synth import (PUSHBURST, STREAM, DeviceSpec, generate_cohort,
                               make_specs)
from trafficmine.windows import WindowConfig


def _tiny_cohort(n=3, budget=540, profile=PUSHBURST, seed=11):
    return generate_cohort(make_specs([(profile, n)], seed, (budget,)))


def test_exp1_needs_two_devices():
    cohort = _tiny_cohort(n=1)
    with pytest.raises(ConfigInvalid):
        run_experiment1(cohort, [3], [2], seed=0)


def test_exp1_validates_grid_and_device():
    cohort = _tiny_cohort(n=2)
    with pytest.raises(ConfigInvalid):
        run_experiment1(cohort, [], [2], seed=0)
    with pytest.raises(ConfigInvalid):
        run_experiment1(cohort, [3], [], seed=0)
    with pytest.raises(ConfigInvalid):
        run_experiment1(cohort, [3], [2], seed=0, preprocess_device="ghost")


def test_exp1_grid_rows_sorted():
    cohort = _tiny_cohort(n=3)
    cells = run_experiment1(cohort, [3, 2], [3, 2], seed=0)
    assert [(c.window_length, c.k) for c in cells] == \
        [(2, 2), (2, 3), (3, 2), (3, 3)]
    for c in cells:
        assert 0.0 <= c.comp <= 1.0
        assert c.sep >= 0.0
        assert c.sim <= 1.0


def test_exp1_identical_devices_similarity_one():
    # same seed twice: byte-identical traffic on both devices
    spec = dict(profile=PUSHBURST, session_budgets=(540,), seed=3)
    cohort = {
        "a": generate_cohort([DeviceSpec(device_id="a", **spec)])["a"],
        "b": generate_cohort([DeviceSpec(device_id="b", **spec)])["b"],
        "c": generate_cohort([DeviceSpec(device_id="c", **spec)])["c"],
    }
    cells = run_experiment1(cohort, [3], [3], seed=0)
    assert cells[0].sim == pytest.approx(1.0, abs=1e-9)


def test_exp1_deterministic():
    cohort = _tiny_cohort(n=3)
    a = run_experiment1(cohort, [3], [2], seed=5)
    b = run_experiment1(cohort, [3], [2], seed=5)
    assert heatmap_csv(a) == heatmap_csv(b)


def test_heatmap_csv_shape():
    cohort = _tiny_cohort(n=3)
    text = heatmap_csv(run_experiment1(cohort, [3], [2], seed=0))
    lines = text.splitlines()
    assert lines[0] == "window_length,k,sim,sep,comp"
    assert len(lines) == 2
    assert lines[1].startswith("3,2,")


def test_device_state_logs_empty_input():
    std, model = fit_preprocessing(_tiny_cohort(n=1, budget=120)["d1"],
                                   WindowConfig(3), k=2, seed=0)
    logs = device_state_logs([], std, model, WindowConfig(3), "empty")
    assert set(logs) == {1, 2}
    assert all(len(v) == 0 for v in logs.values())


def test_discover_state_nets_mines_every_state():
    logs = {
        1: EventLog(state=1, traces=(Trace(("d", 1, 0), ("a", "b")),)),
        2: EventLog(state=2),
    }
    trees, nets = discover_state_nets(logs, noise_threshold=0.0)
    assert set(nets) == {1, 2}
    assert trees[2].to_text() == "tau"
    assert trees[1].to_text() == "SEQ(a, b)"


def _roles():
    return Roles(train="d1", validation=("d2",), test_own=("d3",),
                 test_foreign=("d4",))


def test_exp2_role_validation():
    cohort = _tiny_cohort(n=4)
    with pytest.raises(ConfigInvalid):
        run_experiment2(cohort, Roles("d1", ("d1",), ("d3",), ("d4",)),
                        [3], [2], seed=0)      # overlap
    with pytest.raises(ConfigInvalid):
        run_experiment2(cohort, Roles("d1", ("d2",), ("d3",), ("nope",)),
                        [3], [2], seed=0)      # unknown device
    with pytest.raises(ConfigInvalid):
        run_experiment2(cohort, Roles("d1", (), ("d3",), ("d4",)),
                        [3], [2], seed=0)      # empty role
    with pytest.raises(ConfigInvalid):
        run_experiment2(cohort, _roles(), [], [2], seed=0)


def test_exp2_smoke_same_profile():
    specs = make_specs([(PUSHBURST, 4)], 21, (540,))
    cohort = generate_cohort(specs)
    cells = run_experiment2(cohort, _roles(), [3], [3], seed=0,
                            segment_fraction=0.25)
    assert len(cells) == 1
    cell = cells[0]
    assert 0.0 <= cell.auc <= 1.0
    assert 0.0 <= cell.intersection <= 1.0
    assert -1.0 <= cell.cosine_similarity <= 1.0
    assert abs(sum(cell.pmf_own.probs) - 1.0) < 1e-12
    assert abs(sum(cell.pmf_foreign.probs) - 1.0) < 1e-12
    assert len(cell.own_scores) >= 1
    assert len(cell.foreign_scores) >= 1
    text = classification_csv(cells)
    assert text.splitlines()[0] == \
        "window_length,k,intersection,cosine_similarity,auc"
    assert text.splitlines()[1].startswith("3,3,")


def test_exp2_distinct_profiles_score_higher():
    specs = make_specs([(PUSHBURST, 3), (STREAM, 1)], 33, (540,))
    cohort = generate_cohort(specs)
    roles = Roles(train="d1", validation=("d2",), test_own=("d3",),
                  test_foreign=("d4",))
    cells = run_experiment2(cohort, roles, [3], [3], seed=0,
                            segment_fraction=0.25)
    cell = cells[0]
    # foreign (stream) segments must look less familiar than own segments
    assert cell.auc >= 0.75
