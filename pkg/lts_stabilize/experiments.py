import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .errors import GenerationFailed, InvalidConfig, LtsError, SimulationOverflow, SpectralError
from .lts0n import closed_loop_matrix_Lhat, run_lts0n
from .plant import TrajectoryRecorder, load_plant, make_rng, plant_from_json, random_plant
from .spectral import basis_align, lqr_gain, matrix_power, projector, projector_distance, spectral_radius
from .types import (
    BLOWUP,
    GENERATION_FAILED,
    ILL_CONDITIONED,
    NOT_STABILIZED,
    STABILIZED,
    STAGE_FAILED,
    UNSTABILIZABLE,
    ExperimentConfig,
    LtiPlant,
    Lts0nConfig,
    NoiseModel,
    RunRecord,
    TrajectoryLog,
)

logger = logging.getLogger(__name__)

REGRESSION_COND_LIMIT = 1e12
THREADS_ENV = "LTS_THREADS"


@dataclass
class SweepSummary:
    algorithm: str
    n: int
    sigma: float
    runs: int
    stabilized: int
    steps_mean: float
    steps_std: float


def _sigma_key(sigma: float) -> int:
    return int(round(sigma * 1e12))


def plant_rng(seed: int, n: int) -> np.random.Generator:
    """Plant matrices depend on (seed, n) only, so every noise level sees the same A and B."""
    return make_rng((seed, n))


def run_rng(seed: int, n: int, sigma: float) -> np.random.Generator:
    return make_rng((seed, n, _sigma_key(sigma)))


def noise_for(sigma: float) -> NoiseModel:
    return NoiseModel("gaussian", sigma=sigma) if sigma > 0 else NoiseModel()


def steps_to_stabilize(norms, start: int, window: int, threshold: float) -> Optional[int]:
    """First t >= start + window - 1 whose trailing window of state norms stays below threshold."""
    norms = np.asarray(norms, dtype=float)
    for t in range(start + window - 1, norms.size):
        if np.max(norms[t - window + 1:t + 1]) <= threshold:
            return t
    return None


def _judge(log: TrajectoryLog, start: int, window: int, threshold: float) -> Tuple[str, Optional[int]]:
    """Stabilized iff the final trailing window is bounded; steps counts from t=0."""
    if log.norms.size - start < window:
        return NOT_STABILIZED, None
    if np.max(log.norms[-window:]) > threshold:
        return NOT_STABILIZED, None
    return STABILIZED, steps_to_stabilize(log.norms, start, window, threshold)


def _failure_status(exc: LtsError) -> str:
    if isinstance(exc, SimulationOverflow):
        return BLOWUP
    if isinstance(exc, SpectralError):
        return UNSTABILIZABLE
    return STAGE_FAILED


def lts0n_record(plant: LtiPlant, cfg: Lts0nConfig, rng: np.random.Generator,
                 seed: int, sigma: float, x0=None) -> RunRecord:
    record = RunRecord(seed=seed, n=plant.n, k=cfg.k_hat if plant.k is None else plant.k,
                       m=plant.m, sigma=sigma, algorithm="lts0n", status=STAGE_FAILED)
    try:
        run = run_lts0n(plant, cfg, x0=x0, rng=rng)
    except LtsError as exc:
        record.status = _failure_status(exc)
        if exc.log is not None:
            record.max_norm = float(np.max(exc.log.norms))
        logger.info("lts0n n=%d sigma=%g seed=%d failed: %s", plant.n, sigma, seed, exc)
        return record

    record.first_action_step = run.learning_steps
    record.max_norm = float(np.max(run.log.norms))
    record.status, record.steps_to_stabilize = _judge(
        run.log, run.learning_steps, cfg.effective_window, cfg.stabilize_threshold_for(plant.noise_bound))

    if plant.truth is not None and plant.truth.k == cfg.k_hat:
        truth = plant.truth
        W, _ = basis_align(truth.P1, run.stage1.P1_hat)
        record.proj_err = projector_distance(run.stage1.Pi1_hat, projector(truth.P1))
        B_tau = W.T @ truth.P1.T @ matrix_power(plant.A, cfg.tau - 1) @ plant.B
        record.btau_err = float(np.linalg.norm(B_tau - run.stage3.B_tau_hat, 2))
        L, _ = closed_loop_matrix_Lhat(plant, run.stage1.P1_hat, run.stage4.K1_hat, cfg.tau)
        record.rho_lhat = spectral_radius(L)
    return record


def full_id_baseline(plant: LtiPlant, horizon_cap: int, rng: np.random.Generator,
                     explore_steps: Optional[int] = None, lqr_q: float = 1.0, lqr_r: float = 1.0,
                     guard: float = 1e12) -> Tuple[str, TrajectoryLog, int]:
    """Identify the whole (A, B) from probing inputs, then close the loop with a full-state LQR gain.

    Returns the outcome status, the trajectory and the exploration length.
    """
    n, m = plant.n, plant.m
    explore = n + m * n if explore_steps is None else explore_steps
    if explore < n + m:
        raise ValueError(f"exploration needs at least n + m = {n + m} steps, got {explore}")
    if horizon_cap < explore:
        raise ValueError(f"horizon_cap {horizon_cap} is shorter than the {explore} exploration steps")

    recorder = TrajectoryRecorder(plant, np.zeros(n), rng, guard)
    try:
        for _ in range(explore):
            recorder.advance(rng.standard_normal(m), phase="stage1")
    except SimulationOverflow as exc:
        return BLOWUP, exc.log, explore

    log = recorder.to_log()
    regressors = np.hstack([log.states[:-1], log.inputs])
    targets = log.states[1:]
    cond = np.linalg.cond(regressors.T @ regressors)
    if not np.isfinite(cond) or cond > REGRESSION_COND_LIMIT:
        logger.info("baseline regression condition number %.3g", cond)
        return ILL_CONDITIONED, log, explore
    theta, *_ = scipy.linalg.lstsq(regressors, targets)
    A_hat, B_hat = theta[:n].T, theta[n:].T

    try:
        K = lqr_gain(A_hat, B_hat, lqr_q * np.eye(n), lqr_r * np.eye(m))
    except SpectralError as exc:
        logger.info("baseline synthesis failed: %s", exc)
        return UNSTABILIZABLE, log, explore

    try:
        for _ in range(horizon_cap - explore):
            recorder.advance(K @ recorder.state, phase="closed-loop")
    except SimulationOverflow as exc:
        return BLOWUP, exc.log, explore
    return STABILIZED, recorder.to_log(), explore


def baseline_record(plant: LtiPlant, status: str, log: TrajectoryLog, explore: int,
                    seed: int = 0, sigma: float = 0.0, window: int = 30,
                    threshold: Optional[float] = None) -> RunRecord:
    record = RunRecord(seed=seed, n=plant.n, k=plant.k or 0, m=plant.m, sigma=sigma,
                       algorithm="baseline", status=status, max_norm=float(np.max(log.norms)))
    if status != STABILIZED:
        return record
    record.first_action_step = explore
    threshold = max(10.0 * plant.noise_bound, 1e-9) if threshold is None else threshold
    record.status, record.steps_to_stabilize = _judge(log, explore, window, threshold)
    return record


def baseline_full_id(plant: LtiPlant, horizon_cap: int, rng: np.random.Generator,
                     seed: int = 0, sigma: float = 0.0, window: int = 30,
                     threshold: Optional[float] = None, guard: float = 1e12) -> RunRecord:
    status, log, explore = full_id_baseline(plant, horizon_cap, rng, guard=guard)
    return baseline_record(plant, status, log, explore, seed, sigma, window, threshold)


def _sweep_one(config: ExperimentConfig, n: int, sigma: float, seed: int,
               fixed: Optional[LtiPlant] = None) -> List[RunRecord]:
    k = fixed.k if fixed is not None else config.k
    m = fixed.m if fixed is not None else config.m
    lts = replace(config.lts, k_hat=k, seed=seed)
    try:
        if fixed is not None:
            plant = replace(fixed, noise=noise_for(sigma))
        else:
            plant = random_plant(n, k, m, config.unstable_range, config.stable_range,
                                 config.cond_limit, noise_for(sigma), rng=plant_rng(seed, n), seed=seed)
    except GenerationFailed as exc:
        logger.warning("n=%d seed=%d: %s", n, seed, exc)
        algorithms = ["lts0n"] + (["baseline"] if config.baseline else [])
        return [RunRecord(seed=seed, n=n, k=k, m=m, sigma=sigma,
                          algorithm=name, status=GENERATION_FAILED) for name in algorithms]

    records = [lts0n_record(plant, lts, run_rng(seed, n, sigma), seed, sigma)]
    if config.baseline:
        horizon = config.baseline_horizon
        if horizon is None:
            horizon = records[0].first_action_step or lts.T
            horizon += lts.effective_post_horizon
        horizon = max(horizon, n + m * n + 1)
        records.append(baseline_full_id(
            plant, horizon, run_rng(seed, n, sigma), seed=seed, sigma=sigma,
            window=lts.effective_window, threshold=lts.stabilize_threshold_for(plant.noise_bound),
            guard=lts.guard))
    return records


def sweep_plant(config: ExperimentConfig) -> Optional[LtiPlant]:
    """The plant named by config.plant_file or given inline, or None when the sweep generates its plants.

    A fixed plant replaces the n axis and the k, m settings; its noise is replaced per sigma.
    """
    if config.plant_file is not None:
        source, plant = config.plant_file, load_plant(config.plant_file)
    elif config.plant is not None:
        source, plant = "the inline plant", plant_from_json(config.plant)
    else:
        return None
    if plant.k is None:
        raise InvalidConfig(f"{source} does not record k")
    logger.info("sweeping %s (n=%d, k=%d, m=%d)", source, plant.n, plant.k, plant.m)
    return plant


def sweep_threads() -> int:
    value = os.environ.get(THREADS_ENV)
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def run_sweep(config: ExperimentConfig, threads: Optional[int] = None,
              progress: Optional[Callable[[str], None]] = None) -> List[RunRecord]:
    """One record per (algorithm, n, sigma, seed), sorted so the output does not depend on scheduling."""
    fixed = sweep_plant(config)
    ns = [fixed.n] if fixed is not None else config.ns
    cells = [(n, sigma, seed) for n in ns for sigma in config.sigmas for seed in config.seeds]

    def work(cell):
        n, sigma, seed = cell
        if progress is not None:
            progress(f"running n={n} sigma={sigma} seed={seed}")
        return _sweep_one(config, n, sigma, seed, fixed)

    with ThreadPoolExecutor(max_workers=threads or sweep_threads()) as pool:
        results = list(pool.map(work, cells))
    records = [record for batch in results for record in batch]
    records.sort(key=lambda r: (r.algorithm, r.n, r.sigma, r.seed))
    return records


def summarize(records: Sequence[RunRecord]) -> List[SweepSummary]:
    groups: Dict[Tuple[str, int, float], List[RunRecord]] = {}
    for record in records:
        groups.setdefault((record.algorithm, record.n, record.sigma), []).append(record)

    summaries = []
    for (algorithm, n, sigma), group in sorted(groups.items()):
        steps = [r.steps_to_stabilize for r in group
                 if r.status == STABILIZED and r.steps_to_stabilize is not None]
        summaries.append(SweepSummary(
            algorithm=algorithm,
            n=n,
            sigma=sigma,
            runs=len(group),
            stabilized=len(steps),
            steps_mean=float(np.mean(steps)) if steps else float("nan"),
            steps_std=float(np.std(steps)) if steps else float("nan"),
        ))
    return summaries
