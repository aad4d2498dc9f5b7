import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    GenerationFailed,
    LtsError,
    NoiseSamplingError,
    SimulationOverflow,
)
from .spectral import invariant_split
from .types import LtiPlant, NoiseModel, TrajectoryLog, PHASES

logger = logging.getLogger(__name__)

DEFAULT_GUARD = 1e12
MIN_MODULUS_GAP = 1e-3
MIN_UNSTABLE_SPACING = 0.05  # |lambda_i| / |lambda_i+1| >= 1.05 inside the unstable block
MAX_MODULUS_PRODUCT = 0.5  # |lambda_1|·|lambda_k+1|
TRUNCATION_ATTEMPTS = 10000

SeedLike = Union[None, int, Sequence[int], np.random.SeedSequence, np.random.Generator]


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    if seed is None or isinstance(seed, (int, np.integer)):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence([int(s) for s in seed]))


def sample_noise(model: NoiseModel, n: int, rng: np.random.Generator) -> np.ndarray:
    if model.kind == "none":
        return np.zeros(n)
    if model.kind == "gaussian":
        return rng.normal(0.0, model.sigma, size=n)
    if model.kind == "uniform":
        direction = rng.standard_normal(n)
        direction /= np.linalg.norm(direction)
        return model.c * rng.random() ** (1.0 / n) * direction
    for _ in range(TRUNCATION_ATTEMPTS):
        eta = rng.normal(0.0, model.sigma, size=n)
        if np.linalg.norm(eta) <= model.c:
            return eta
    raise NoiseSamplingError(
        f"no truncated gaussian sample within radius {model.c} after {TRUNCATION_ATTEMPTS} draws"
    )


def _check_vectors(plant: LtiPlant, x: np.ndarray, u: np.ndarray) -> None:
    if x.shape != (plant.n,):
        raise DimensionMismatch(f"state must have shape ({plant.n},), got {x.shape}")
    if u.shape != (plant.m,):
        raise DimensionMismatch(f"input must have shape ({plant.m},), got {u.shape}")


def _advance(plant: LtiPlant, x: np.ndarray, u: np.ndarray,
             rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    eta = sample_noise(plant.noise, plant.n, rng)
    return plant.A @ x + plant.B @ u + eta, eta


def step(plant: LtiPlant, x, u, rng: np.random.Generator) -> np.ndarray:
    """x_{t+1} = A x_t + B u_t + eta_t with a fresh noise sample."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    _check_vectors(plant, x, u)
    x_next, _ = _advance(plant, x, u, rng)
    return x_next


class TrajectoryRecorder:
    """Single-trajectory cursor: advances the plant one step at a time and keeps the record.

    Every stage of the learner drives the same recorder, so the learning phases and the
    closed loop share one continuous trajectory.
    """

    def __init__(self, plant: LtiPlant, x0, rng: np.random.Generator, guard: float = DEFAULT_GUARD):
        x0 = np.asarray(x0, dtype=float).ravel()
        _check_vectors(plant, x0, np.zeros(plant.m))
        self.plant = plant
        self.rng = rng
        self.guard = guard
        self._states: List[np.ndarray] = [x0]
        self._inputs: List[np.ndarray] = []
        self._noises: List[np.ndarray] = []
        self._phases: List[str] = []

    @property
    def state(self) -> np.ndarray:
        return self._states[-1]

    @property
    def time(self) -> int:
        return len(self._phases)

    def states_between(self, start: int, stop: int) -> np.ndarray:
        """States x_start..x_{stop-1} as columns."""
        return np.column_stack(self._states[start:stop])

    def noise_between(self, start: int, stop: int) -> np.ndarray:
        return np.column_stack(self._noises[start:stop])

    def advance(self, u=None, phase: str = "stage1") -> np.ndarray:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        u = np.zeros(self.plant.m) if u is None else np.asarray(u, dtype=float).ravel()
        _check_vectors(self.plant, self.state, u)
        x_next, eta = _advance(self.plant, self.state, u, self.rng)
        self._states.append(x_next)
        self._inputs.append(u)
        self._noises.append(eta)
        self._phases.append(phase)
        norm = np.linalg.norm(x_next)
        if not np.isfinite(norm) or norm > self.guard:
            raise SimulationOverflow(
                f"state norm {norm:.3g} exceeded guard {self.guard:.3g} at t={self.time}",
                log=self.to_log(),
            )
        return x_next

    def to_log(self) -> TrajectoryLog:
        states = np.vstack(self._states)
        n, m = self.plant.n, self.plant.m
        return TrajectoryLog(
            states=states,
            inputs=np.vstack(self._inputs) if self._inputs else np.zeros((0, m)),
            noises=np.vstack(self._noises) if self._noises else np.zeros((0, n)),
            norms=np.linalg.norm(states, axis=1),
            phase_marks=tuple(self._phases),
        )


def simulate_open_loop(plant: LtiPlant, x0, steps: int, rng: np.random.Generator,
                       guard: float = DEFAULT_GUARD) -> TrajectoryLog:
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    recorder = TrajectoryRecorder(plant, x0, rng, guard)
    for _ in range(steps):
        recorder.advance(phase="stage1")
    return recorder.to_log()


def drive_tau_hop(recorder: TrajectoryRecorder, K1: np.ndarray, P1_hat: np.ndarray,
                  tau: int, steps: int) -> None:
    """Apply u = K1·P1_hat^T·x every tau steps (counted from the recorder's current time), zero otherwise."""
    if tau < 1:
        raise ValueError(f"tau must be at least 1, got {tau}")
    feedback = np.atleast_2d(K1) @ np.atleast_2d(P1_hat).T
    for s in range(steps):
        u = feedback @ recorder.state if s % tau == 0 else None
        recorder.advance(u, phase="closed-loop")


def run_tau_hop_closed_loop(plant: LtiPlant, x0, K1, P1_hat, tau: int, horizon: int,
                            rng: np.random.Generator, guard: float = DEFAULT_GUARD) -> TrajectoryLog:
    recorder = TrajectoryRecorder(plant, x0, rng, guard)
    drive_tau_hop(recorder, np.asarray(K1, dtype=float), np.asarray(P1_hat, dtype=float), tau, horizon)
    return recorder.to_log()


def _spaced_uniform(rng: np.random.Generator, low: float, high: float, count: int, gap: float) -> np.ndarray:
    """`count` values in [low, high] whose sorted neighbours are at least `gap` apart."""
    slack = (high - low) - (count - 1) * gap
    if slack < 0:
        raise GenerationFailed(
            f"cannot place {count} values in [{low:.4g}, {high:.4g}] with pairwise gap {gap:.4g}"
        )
    draws = np.sort(rng.random(count)) * slack
    return low + draws + gap * np.arange(count)


def random_plant(n: int, k: int, m: int,
                 unstable_range: Tuple[float, float] = (1.1, 1.5),
                 stable_range: Tuple[float, float] = (0.05, 0.3),
                 cond_limit: float = 1e4,
                 noise: Optional[NoiseModel] = None,
                 rng: Optional[np.random.Generator] = None,
                 max_attempts: int = 200,
                 seed: Optional[int] = None,
                 unstable_spacing: float = MIN_UNSTABLE_SPACING,
                 max_modulus_product: float = MAX_MODULUS_PRODUCT) -> LtiPlant:
    """Random A = V·Lambda·V^{-1} with k real eigenvalues outside the unit disc, B with unit-variance entries.

    Unstable moduli are spaced by a relative factor of at least 1 + unstable_spacing and
    |lambda_1|·|lambda_k+1| stays at or below max_modulus_product.
    """
    noise = noise or NoiseModel()
    rng = rng if rng is not None else make_rng(seed)
    if not 1 <= k < n:
        raise GenerationFailed(f"need 1 <= k < n, got k={k}, n={n}")
    if m < 1:
        raise GenerationFailed(f"need at least one input, got m={m}")
    u_low, u_high = unstable_range
    s_low, s_high = stable_range
    if not (1.0 < u_low <= u_high and 0.0 <= s_low <= s_high < 1.0):
        raise GenerationFailed(f"ranges {unstable_range} / {stable_range} must lie outside / inside the unit circle")
    if not 0.0 < max_modulus_product < 1.0 or unstable_spacing < 0.0:
        raise GenerationFailed("need 0 < max_modulus_product < 1 and a nonnegative unstable spacing")
    if u_high * s_high > max_modulus_product:
        raise GenerationFailed(
            f"ranges allow |lambda_1|·|lambda_k+1| = {u_high * s_high:.3g} above {max_modulus_product:.3g}"
        )
    if u_low - s_high < MIN_MODULUS_GAP:
        raise GenerationFailed("unstable and stable ranges are closer than the modulus gap")
    log_gap = max(math.log1p(unstable_spacing), MIN_MODULUS_GAP)

    for attempt in range(1, max_attempts + 1):
        unstable = np.exp(_spaced_uniform(rng, math.log(u_low), math.log(u_high), k, log_gap))
        moduli = np.concatenate([
            unstable[::-1],
            _spaced_uniform(rng, s_low, s_high, n - k, MIN_MODULUS_GAP)[::-1],
        ])
        signs = rng.choice([-1.0, 1.0], size=n)
        V = rng.standard_normal((n, n))
        V /= np.linalg.norm(V, axis=0)
        if np.linalg.cond(V) > cond_limit:
            logger.debug("attempt %d: eigenbasis condition number above %.3g", attempt, cond_limit)
            continue
        A = V @ np.diag(signs * moduli) @ np.linalg.inv(V)
        B = rng.standard_normal((n, m))
        try:
            truth = invariant_split(A, k)
        except LtsError as exc:
            logger.debug("attempt %d: rejected, %s", attempt, exc)
            continue
        logger.info("generated plant n=%d k=%d m=%d after %d attempt(s)", n, k, m, attempt)
        return LtiPlant(A=A, B=B, noise=noise, truth=truth, seed=seed)
    raise GenerationFailed(f"no admissible plant after {max_attempts} attempts (n={n}, k={k})")


def plant_to_json(plant: LtiPlant) -> Dict[str, object]:
    return {
        "n": plant.n,
        "m": plant.m,
        "k": plant.k,
        "A": plant.A.tolist(),
        "B": plant.B.tolist(),
        "noise": plant.noise.to_dict(),
        "seed": plant.seed,
    }


def plant_from_json(data: Dict[str, object]) -> LtiPlant:
    A = np.asarray(data["A"], dtype=float)
    B = np.asarray(data["B"], dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    n, m = int(data.get("n", A.shape[0])), int(data.get("m", B.shape[1]))
    if A.shape != (n, n) or B.shape != (n, m):
        raise DimensionMismatch(f"plant document declares n={n}, m={m} but A is {A.shape} and B is {B.shape}")
    k = data.get("k")
    truth = invariant_split(A, int(k)) if k is not None else None
    return LtiPlant(
        A=A,
        B=B,
        noise=NoiseModel.from_dict(data.get("noise") or {}),
        truth=truth,
        seed=data.get("seed"),
    )


def save_plant(plant: LtiPlant, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(plant_to_json(plant), f)


def load_plant(path: Union[str, Path]) -> LtiPlant:
    with open(path, "r", encoding="utf-8") as f:
        return plant_from_json(json.load(f))
