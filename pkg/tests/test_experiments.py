import math

import numpy as np
import pytest

from lts_stabilize.csv_generator import CSVGenerator
from lts_stabilize.errors import InvalidConfig
from lts_stabilize.experiments import (
    baseline_full_id,
    full_id_baseline,
    lts0n_record,
    noise_for,
    plant_rng,
    run_sweep,
    steps_to_stabilize,
    summarize,
    sweep_plant,
    sweep_threads,
)
from lts_stabilize.plant import make_rng, plant_to_json, save_plant
from lts_stabilize.spectral import invariant_split
from lts_stabilize.types import (
    BLOWUP,
    GENERATION_FAILED,
    ILL_CONDITIONED,
    STABILIZED,
    STAGE_FAILED,
    ExperimentConfig,
    LtiPlant,
    Lts0nConfig,
    NoiseModel,
    RunRecord,
)

EXAMPLE_A = np.array([[2.0, 1.0], [0.0, 0.5]])


@pytest.fixture
def noisy_example():
    return LtiPlant(A=EXAMPLE_A, B=np.array([[1.0], [0.0]]), noise=NoiseModel("gaussian", sigma=1e-3),
                    truth=invariant_split(EXAMPLE_A, 1))


@pytest.fixture
def small_sweep():
    return ExperimentConfig(ns=[4], sigmas=[0.01], seeds=[1, 2], k=1, m=1, baseline=True,
                            lts=Lts0nConfig(T=20, post_horizon=60))


def test_steps_to_stabilize_finds_first_bounded_window():
    assert steps_to_stabilize([5, 5, 5, 0.1, 0.1, 0.1, 0.1], 0, 3, 1.0) == 5


def test_steps_to_stabilize_respects_start():
    assert steps_to_stabilize([5, 5, 5, 0.1, 0.1, 0.1, 0.1, 0.1], 4, 3, 1.0) == 6


def test_steps_to_stabilize_never_bounded():
    assert steps_to_stabilize([5.0, 5.0, 5.0], 0, 2, 1.0) is None


def test_lts0n_record_on_noisy_example(noisy_example):
    cfg = Lts0nConfig(T=30, k_hat=1, tau=2)
    record = lts0n_record(noisy_example, cfg, make_rng(0), seed=0, sigma=1e-3, x0=np.zeros(2))

    assert record.algorithm == "lts0n"
    assert record.status == STABILIZED
    assert record.first_action_step >= cfg.T + cfg.tau
    assert record.steps_to_stabilize >= record.first_action_step + cfg.T - 1
    assert record.proj_err < 1e-3
    assert record.rho_lhat < 1.0
    assert math.isfinite(record.btau_err)


def test_lts0n_record_reports_stage_failure():
    plant = LtiPlant(A=EXAMPLE_A, B=np.array([[1.0], [0.0]]), truth=invariant_split(EXAMPLE_A, 1))
    record = lts0n_record(plant, Lts0nConfig(T=10, k_hat=1), make_rng(0), seed=0, sigma=0.0, x0=np.zeros(2))

    assert record.status == STAGE_FAILED
    assert record.max_norm == 0.0
    assert record.steps_to_stabilize is None


def test_lts0n_record_reports_blowup(noisy_example):
    cfg = Lts0nConfig(T=30, k_hat=1, guard=1e3)
    record = lts0n_record(noisy_example, cfg, make_rng(0), seed=0, sigma=1e-3, x0=[1.0, 1.0])

    assert record.status == BLOWUP
    assert record.max_norm > 1e3
    assert math.isnan(record.proj_err)


def test_baseline_stabilizes_controllable_plant():
    plant = LtiPlant(A=np.diag([0.9, 0.5, 0.3, 0.1]), B=0.5 * np.ones((4, 1)))
    status, log, explore = full_id_baseline(plant, 400, make_rng(1), explore_steps=20)

    assert status == STABILIZED
    assert explore == 20
    assert log.horizon == 400
    assert log.steps_in("closed-loop") == list(range(20, 400))
    assert log.norms[-1] < 1e-9


def test_baseline_record_counts_from_exploration():
    plant = LtiPlant(A=np.diag([0.9, 0.5, 0.3, 0.1]), B=0.5 * np.ones((4, 1)))
    record = baseline_full_id(plant, 400, make_rng(1), seed=3)

    assert record.algorithm == "baseline"
    assert record.seed == 3
    assert record.status == STABILIZED
    assert record.first_action_step == 8
    assert record.steps_to_stabilize >= 8 + 30 - 1


def test_baseline_uncontrollable_regression_is_ill_conditioned():
    """Zero initial state and an input acting on e1 alone never excite the other coordinates."""
    plant = LtiPlant(A=np.diag([0.5, 0.3, 0.2, 0.1]), B=np.array([[1.0], [0.0], [0.0], [0.0]]))
    status, log, _ = full_id_baseline(plant, 100, make_rng(2))

    assert status == ILL_CONDITIONED
    assert log.horizon == 8


def test_baseline_blowup():
    plant = LtiPlant(A=np.diag([2.0, 0.5]), B=np.ones((2, 1)))
    record = baseline_full_id(plant, 50, make_rng(3), guard=1e-3)

    assert record.status == BLOWUP
    assert record.max_norm > 1e-3
    assert record.steps_to_stabilize is None


def test_baseline_accepts_horizon_equal_to_exploration():
    """A horizon of exactly n + m·n steps explores and then stops with zero closed-loop steps."""
    plant = LtiPlant(A=np.diag([0.9, 0.5, 0.3, 0.1]), B=0.5 * np.ones((4, 1)))
    status, log, explore = full_id_baseline(plant, 8, make_rng(1))

    assert explore == 8
    assert status == STABILIZED
    assert log.horizon == 8
    assert log.steps_in("closed-loop") == []


def test_baseline_needs_closed_loop_steps():
    plant = LtiPlant(A=np.diag([2.0, 0.5]), B=np.ones((2, 1)))
    with pytest.raises(ValueError):
        full_id_baseline(plant, 3, make_rng(0))
    with pytest.raises(ValueError):
        full_id_baseline(plant, 50, make_rng(0), explore_steps=2)


def test_rng_keys_and_noise_helpers():
    np.testing.assert_array_equal(plant_rng(1, 8).standard_normal(3), make_rng((1, 8)).standard_normal(3))
    assert noise_for(0.0) == NoiseModel()
    assert noise_for(0.01) == NoiseModel("gaussian", sigma=0.01)


def test_sweep_rows_and_order(small_sweep):
    messages = []
    records = run_sweep(small_sweep, threads=1, progress=messages.append)

    assert len(records) == 4
    assert [r.algorithm for r in records] == ["baseline", "baseline", "lts0n", "lts0n"]
    assert [r.seed for r in records] == [1, 2, 1, 2]
    assert len(messages) == 2


def test_sweep_is_deterministic_across_thread_counts(tmp_path, small_sweep):
    first, second = tmp_path / "one.csv", tmp_path / "two.csv"
    CSVGenerator.generate_sweep_csv(str(first), run_sweep(small_sweep, threads=1))
    CSVGenerator.generate_sweep_csv(str(second), run_sweep(small_sweep, threads=2))

    assert first.read_bytes() == second.read_bytes()


def test_sweep_marks_generation_failures():
    config = ExperimentConfig(ns=[4], sigmas=[0.01], seeds=[1], k=1, m=1, cond_limit=1.0, baseline=True)
    records = run_sweep(config, threads=1)

    assert {r.status for r in records} == {GENERATION_FAILED}
    assert len(records) == 2


def test_summarize_uses_stabilized_runs_only():
    records = [
        RunRecord(seed=1, n=8, k=2, m=2, sigma=0.01, algorithm="lts0n", status=STABILIZED, steps_to_stabilize=100),
        RunRecord(seed=2, n=8, k=2, m=2, sigma=0.01, algorithm="lts0n", status=STABILIZED, steps_to_stabilize=120),
        RunRecord(seed=3, n=8, k=2, m=2, sigma=0.01, algorithm="lts0n", status=BLOWUP),
        RunRecord(seed=1, n=8, k=2, m=2, sigma=0.01, algorithm="baseline", status=ILL_CONDITIONED),
    ]
    baseline, lts = summarize(records)

    assert (lts.runs, lts.stabilized) == (3, 2)
    assert lts.steps_mean == pytest.approx(110.0)
    assert lts.steps_std == pytest.approx(10.0)
    assert baseline.stabilized == 0
    assert math.isnan(baseline.steps_mean)


def test_sweep_threads_from_environment(monkeypatch):
    monkeypatch.setenv("LTS_THREADS", "3")
    assert sweep_threads() == 3
    monkeypatch.setenv("LTS_THREADS", "0")
    assert sweep_threads() == 1
    monkeypatch.delenv("LTS_THREADS")
    assert sweep_threads() >= 1


def test_experiment_config_from_dict():
    config = ExperimentConfig.from_dict({"ns": [8], "seeds": [1], "lts": {"T": 20, "tau": 2},
                                         "unstable_range": [1.1, 1.3]})
    assert config.lts.T == 20
    assert config.unstable_range == (1.1, 1.3)

    with pytest.raises(InvalidConfig):
        ExperimentConfig.from_dict({"ns": [8], "colour": "red"})
    with pytest.raises(InvalidConfig):
        ExperimentConfig.from_dict({"ns": [2], "k": 2})


def test_sweep_over_plant_file(tmp_path, noisy_example):
    """A plant file replaces the n axis and k, m; each sigma swaps in its own noise."""
    path = tmp_path / "plant.json"
    save_plant(noisy_example, path)
    config = ExperimentConfig(ns=[8], sigmas=[1e-3, 1e-2], seeds=[1], k=2, m=2, plant_file=str(path),
                              lts=Lts0nConfig(T=30, tau=2, post_horizon=20))
    records = run_sweep(config, threads=1)

    assert len(records) == 2
    assert {(r.n, r.k, r.m) for r in records} == {(2, 1, 1)}
    assert [r.sigma for r in records] == [1e-3, 1e-2]


def test_sweep_plant_needs_recorded_k(tmp_path):
    path = tmp_path / "blind.json"
    save_plant(LtiPlant(A=EXAMPLE_A, B=np.array([[1.0], [0.0]])), path)
    assert sweep_plant(ExperimentConfig()) is None
    with pytest.raises(InvalidConfig):
        sweep_plant(ExperimentConfig(plant_file=str(path)))


def test_sweep_over_inline_plant(noisy_example):
    document = plant_to_json(noisy_example)
    config = ExperimentConfig(sigmas=[1e-3], seeds=[1, 2], plant=document,
                              lts=Lts0nConfig(T=30, tau=2, post_horizon=20))
    records = run_sweep(config, threads=1)

    assert [(r.n, r.seed) for r in records] == [(2, 1), (2, 2)]
    with pytest.raises(InvalidConfig):
        ExperimentConfig(plant_file="plant.json", plant=document)
