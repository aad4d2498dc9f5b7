import json

import numpy as np
import pytest

from lts_stabilize.errors import (
    DimensionMismatch,
    GenerationFailed,
    InvalidConfig,
    NoiseSamplingError,
    SimulationOverflow,
)
from lts_stabilize.plant import (
    TrajectoryRecorder,
    load_plant,
    make_rng,
    plant_from_json,
    plant_to_json,
    random_plant,
    run_tau_hop_closed_loop,
    sample_noise,
    save_plant,
    simulate_open_loop,
    step,
)
from lts_stabilize.spectral import gelfand_constant, invariant_split
from lts_stabilize.types import LtiPlant, NoiseModel


@pytest.fixture
def triangular_plant():
    A = np.array([[2.0, 1.0], [0.0, 0.5]])
    return LtiPlant(A=A, B=np.array([[1.0], [0.0]]), truth=invariant_split(A, 1))


@pytest.fixture
def noisy_plant():
    A = np.array([[1.2, 0.3], [0.0, 0.4]])
    return LtiPlant(A=A, B=np.array([[1.0], [0.5]]), noise=NoiseModel("gaussian", sigma=0.1))


def test_step_without_noise(triangular_plant):
    """x' = A x + B u exactly when there is no noise."""
    x_next = step(triangular_plant, [1.0, 1.0], [1.0], make_rng(0))
    np.testing.assert_allclose(x_next, [4.0, 0.5])


def test_step_rejects_wrong_dimensions(triangular_plant):
    with pytest.raises(DimensionMismatch):
        step(triangular_plant, [1.0, 1.0, 1.0], [0.0], make_rng(0))
    with pytest.raises(DimensionMismatch):
        step(triangular_plant, [1.0, 1.0], [0.0, 0.0], make_rng(0))


def test_plant_rejects_mismatched_matrices():
    with pytest.raises(DimensionMismatch):
        LtiPlant(A=np.eye(2), B=np.ones((3, 1)))
    with pytest.raises(DimensionMismatch):
        LtiPlant(A=np.ones((2, 3)), B=np.ones((2, 1)))


def test_noise_model_validation():
    with pytest.raises(InvalidConfig):
        NoiseModel("laplace", sigma=1.0)
    with pytest.raises(InvalidConfig):
        NoiseModel("uniform")
    with pytest.raises(InvalidConfig):
        NoiseModel("gaussian", sigma=0.0)


def test_gaussian_noise_bound_is_three_sigma_sqrt_n():
    assert NoiseModel("gaussian", sigma=0.01).effective_bound(16) == pytest.approx(0.12)
    assert NoiseModel().effective_bound(16) == 0.0
    assert NoiseModel("uniform", c=0.2).effective_bound(16) == 0.2


def test_uniform_noise_stays_inside_ball():
    model = NoiseModel("uniform", c=0.3)
    rng = make_rng(1)
    norms = [np.linalg.norm(sample_noise(model, 5, rng)) for _ in range(500)]
    assert max(norms) <= 0.3
    assert min(norms) > 0.0


def test_truncated_gaussian_noise_stays_inside_ball():
    model = NoiseModel("truncated_gaussian", sigma=1.0, c=1.5)
    rng = make_rng(2)
    assert all(np.linalg.norm(sample_noise(model, 3, rng)) <= 1.5 for _ in range(200))


def test_truncated_gaussian_noise_gives_up():
    """A radius far below the typical norm can never be met."""
    model = NoiseModel("truncated_gaussian", sigma=1.0, c=1e-6)
    with pytest.raises(NoiseSamplingError):
        sample_noise(model, 10, make_rng(3))


def test_noise_free_model_draws_nothing():
    rng = make_rng(4)
    before = rng.bit_generator.state
    np.testing.assert_array_equal(sample_noise(NoiseModel(), 3, rng), np.zeros(3))
    assert rng.bit_generator.state == before


def test_make_rng_from_key_tuple_is_deterministic():
    a = make_rng((1, 8, 10)).standard_normal(4)
    b = make_rng((1, 8, 10)).standard_normal(4)
    c = make_rng((1, 8, 11)).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_simulate_open_loop_records_everything(noisy_plant):
    log = simulate_open_loop(noisy_plant, [1.0, -1.0], 10, make_rng(5))

    assert log.states.shape == (11, 2)
    assert log.inputs.shape == (10, 1)
    assert log.noises.shape == (10, 2)
    assert log.horizon == 10
    assert log.phase_marks == ("stage1",) * 10
    np.testing.assert_allclose(log.norms, np.linalg.norm(log.states, axis=1))
    for t in range(10):
        np.testing.assert_allclose(log.states[t + 1], noisy_plant.A @ log.states[t] + log.noises[t])


def test_simulate_open_loop_is_reproducible(noisy_plant):
    a = simulate_open_loop(noisy_plant, [0.0, 0.0], 20, make_rng(6))
    b = simulate_open_loop(noisy_plant, [0.0, 0.0], 20, make_rng(6))
    np.testing.assert_array_equal(a.states, b.states)


def test_simulate_open_loop_overflow_carries_partial_log():
    """x_13 = 1e13 crosses a guard of 1e12; the log ends with the offending state."""
    plant = LtiPlant(A=np.array([[10.0]]), B=np.array([[1.0]]))
    with pytest.raises(SimulationOverflow) as excinfo:
        simulate_open_loop(plant, [1.0], 13, make_rng(0), guard=1e12)

    log = excinfo.value.log
    assert log.states.shape == (14, 1)
    assert log.norms[-1] == pytest.approx(1e13)


def test_simulate_open_loop_at_guard_is_allowed():
    plant = LtiPlant(A=np.array([[10.0]]), B=np.array([[1.0]]))
    log = simulate_open_loop(plant, [1.0], 12, make_rng(0), guard=1e12)
    assert log.norms[-1] == pytest.approx(1e12)


def test_recorder_cursor_and_phases(triangular_plant):
    recorder = TrajectoryRecorder(triangular_plant, [1.0, 0.0], make_rng(0))
    recorder.advance(phase="stage1")
    recorder.advance([2.0], phase="stage3-probe")

    assert recorder.time == 2
    np.testing.assert_allclose(recorder.state, [6.0, 0.0])
    np.testing.assert_allclose(recorder.states_between(0, 2), [[1.0, 2.0], [0.0, 0.0]])
    log = recorder.to_log()
    assert log.phase_marks == ("stage1", "stage3-probe")
    assert log.steps_in("stage3-probe") == [1]
    with pytest.raises(ValueError):
        recorder.advance(phase="warmup")


def test_tau_hop_acts_every_tau_steps(triangular_plant):
    """Inputs are nonzero exactly at t = 0, tau, 2 tau, ..."""
    log = run_tau_hop_closed_loop(triangular_plant, [1.0, 1.0], np.array([[-1.5]]),
                                  triangular_plant.truth.P1, tau=3, horizon=9, rng=make_rng(0))
    active = [t for t in range(9) if np.linalg.norm(log.inputs[t]) > 0]
    assert active == [0, 3, 6]
    assert set(log.phase_marks) == {"closed-loop"}


def test_tau_hop_with_zero_gain_matches_open_loop(noisy_plant):
    P1 = np.array([[1.0], [0.0]])
    closed = run_tau_hop_closed_loop(noisy_plant, [1.0, 1.0], np.zeros((1, 1)), P1, 2, 15, make_rng(9))
    open_loop = simulate_open_loop(noisy_plant, [1.0, 1.0], 15, make_rng(9))
    np.testing.assert_allclose(closed.states, open_loop.states)


def test_tau_hop_stabilizes_triangular_plant(triangular_plant):
    """u = -1.5·x1 every step turns A into [[0.5, 1], [0, 0.5]]."""
    log = run_tau_hop_closed_loop(triangular_plant, [1.0, 1.0], np.array([[-1.5]]),
                                  triangular_plant.truth.P1, tau=1, horizon=80, rng=make_rng(0))
    assert log.norms[-1] < 1e-15


def test_random_plant_has_requested_spectrum():
    plant = random_plant(6, 2, 2, rng=make_rng(11), noise=NoiseModel("gaussian", sigma=0.01), seed=11)

    moduli = plant.truth.moduli
    assert plant.n == 6 and plant.m == 2 and plant.k == 2
    assert np.all(moduli[:2] > 1.0) and np.all(moduli[2:] < 1.0)
    assert np.all(-np.diff(moduli) >= 1e-3 - 1e-9)
    assert moduli[0] / moduli[1] >= 1.05 - 1e-9
    assert moduli[0] * moduli[2] <= 0.5 + 1e-9
    assert plant.seed == 11


def test_random_plant_is_reproducible():
    a = random_plant(8, 2, 2, rng=make_rng((1, 8)))
    b = random_plant(8, 2, 2, rng=make_rng((1, 8)))
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.B, b.B)


@pytest.mark.parametrize("kwargs", [
    {"n": 4, "k": 0, "m": 1},
    {"n": 4, "k": 4, "m": 1},
    {"n": 4, "k": 1, "m": 0},
    {"n": 4, "k": 1, "m": 1, "unstable_range": (0.9, 1.4)},
    {"n": 4, "k": 1, "m": 1, "unstable_range": (1.5, 2.0), "stable_range": (0.1, 0.8)},
    {"n": 4, "k": 1, "m": 1, "cond_limit": 1.0, "max_attempts": 5},
    {"n": 6, "k": 4, "m": 1, "unstable_range": (1.1, 1.2)},
    {"n": 4, "k": 1, "m": 1, "unstable_range": (1.2, 1.8), "stable_range": (0.1, 0.5)},
    {"n": 4, "k": 1, "m": 1, "max_modulus_product": 1.0},
])
def test_random_plant_failures(kwargs):
    with pytest.raises(GenerationFailed):
        random_plant(rng=make_rng(0), **kwargs)


def test_plant_json_round_trip():
    plant = random_plant(5, 1, 2, rng=make_rng(12), noise=NoiseModel("uniform", c=0.05), seed=12)
    document = json.loads(json.dumps(plant_to_json(plant)))
    restored = plant_from_json(document)

    assert set(document) == {"n", "m", "k", "A", "B", "noise", "seed"}
    np.testing.assert_array_equal(restored.A, plant.A)
    np.testing.assert_array_equal(restored.B, plant.B)
    assert restored.noise == plant.noise
    assert restored.k == 1
    np.testing.assert_allclose(restored.truth.P1, plant.truth.P1)


def test_plant_json_without_k_has_no_truth():
    plant = plant_from_json({"A": [[0.5, 0.0], [0.0, 0.2]], "B": [1.0, 1.0]})
    assert plant.truth is None
    assert plant.B.shape == (2, 1)
    assert plant.noise.kind == "none"


def test_plant_json_rejects_inconsistent_dimensions():
    with pytest.raises(DimensionMismatch):
        plant_from_json({"n": 3, "m": 1, "A": [[0.5, 0.0], [0.0, 0.2]], "B": [[1.0], [1.0]]})


def test_save_and_load_plant(tmp_path, triangular_plant):
    path = tmp_path / "plant.json"
    save_plant(triangular_plant, path)
    loaded = load_plant(path)
    np.testing.assert_array_equal(loaded.A, triangular_plant.A)
    assert loaded.k == 1


def test_random_plant_spaces_unstable_moduli():
    """Consecutive unstable moduli differ by at least five percent on every draw."""
    for seed in range(20):
        plant = random_plant(16, 3, 3, unstable_range=(1.5, 1.7), stable_range=(0.05, 0.25),
                             cond_limit=100.0, rng=make_rng((seed, 16)))
        moduli = plant.truth.moduli
        assert np.all(moduli[:2] / moduli[1:3] >= 1.05 - 1e-9)
        assert moduli[0] * moduli[3] <= 0.5 + 1e-9


def test_random_plant_spacing_can_be_relaxed():
    """Four unstable moduli fit in [1.1, 1.2] once the relative spacing is dropped."""
    plant = random_plant(6, 4, 1, unstable_range=(1.1, 1.2), unstable_spacing=0.0, rng=make_rng(3))
    moduli = plant.truth.moduli
    assert np.all((moduli[:4] >= 1.1 - 1e-9) & (moduli[:4] <= 1.2 + 1e-9))
    assert np.all(-np.diff(moduli[:4]) >= 1e-3 - 1e-9)


def test_gaussian_noise_empirical_std():
    """sigma = 0.01 in n = 128: the pooled sample standard deviation matches sigma."""
    rng = make_rng(5)
    draws = np.stack([sample_noise(NoiseModel("gaussian", sigma=0.01), 128, rng) for _ in range(200)])
    assert 0.009 <= float(np.std(draws)) <= 0.011


def test_open_loop_stable_coordinates_stay_bounded():
    """From rest, |R2·x_t| never exceeds zeta·C / (1 - (|lambda_k+1| + eps)) / ((1 - xi)·sigma_min(Q2))."""
    eps = 0.05
    for seed in range(10):
        plant = random_plant(6, 2, 2, noise=NoiseModel("uniform", c=0.1), rng=make_rng((seed, 6)))
        truth = plant.truth
        zeta = gelfand_constant(truth.N2, eps).zeta
        stable_frame = np.linalg.svd(truth.Q2, compute_uv=False).min()
        bound = (zeta * plant.noise_bound / (1.0 - (truth.moduli[2] + eps))
                 / ((1.0 - truth.xi) * stable_frame))

        log = simulate_open_loop(plant, np.zeros(6), 40, make_rng(seed))
        coordinates = np.linalg.norm(log.states @ truth.R2.T, axis=1)
        assert np.max(coordinates) <= bound + 1e-9
