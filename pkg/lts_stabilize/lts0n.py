"""The four learning stages and the single-trajectory orchestrator.

Stage 1 estimates the unstable subspace from the open-loop data matrix, stage 2
fits the restricted dynamics by least squares, stage 3 probes the tau-hop input
matrix one column at a time and stage 4 synthesizes the tau-hop controller.
"""
import logging
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg

from .errors import LtsError, RankDeficient, SingularGram, ZeroState
from .plant import TrajectoryRecorder, drive_tau_hop, make_rng
from .spectral import (
    dlyap_solve,
    lqr_gain,
    matrix_power,
    normalize_column_signs,
    projector,
    spectral_radius,
    weighted_norm,
)
from .types import (
    PROBED,
    STABLE_SYSTEM_DETECTED,
    LtiPlant,
    Lts0nConfig,
    Lts0nRun,
    Stage1Result,
    Stage2Result,
    Stage3Result,
    Stage4Result,
)

logger = logging.getLogger(__name__)

RANK_TOL = 1e-12
GRAM_COND_LIMIT = 1e12
ZERO_STATE_NORM = 1e-300
LYAPUNOV_WEIGHT = 2.01


def stage1_estimate_subspace(D, k_hat: int) -> Stage1Result:
    D = np.atleast_2d(np.asarray(D, dtype=float))
    n, T = D.shape
    if not 1 <= k_hat <= min(n, T):
        raise RankDeficient(f"k_hat={k_hat} needs at least k_hat states and k_hat dimensions, D is {D.shape}")
    if not np.all(np.isfinite(D)):
        raise RankDeficient("data matrix has non-finite entries")

    U, s, _ = scipy.linalg.svd(D, full_matrices=False)
    if s[0] == 0.0 or s[k_hat - 1] < RANK_TOL * s[0]:
        raise RankDeficient(
            f"sigma_{k_hat}={s[k_hat - 1]:.3g} is negligible against sigma_1={s[0]:.3g}; "
            "the unstable subspace was not excited"
        )
    P1_hat = normalize_column_signs(U[:, :k_hat])
    logger.debug("stage 1: sigma_k=%.3g sigma_k+1=%.3g", s[k_hat - 1], s[k_hat] if s.size > k_hat else 0.0)
    return Stage1Result(D=D, singular_values=s, P1_hat=P1_hat, Pi1_hat=projector(P1_hat))


def stage2_least_squares(X, P1_hat, noises=None) -> Stage2Result:
    """Least-squares fit of y_{t+1} = M1_hat·y_t in the coordinates y_t = P1_hat^T x_t.

    X holds the states x_0..x_T as columns. When `noises` (eta_0..eta_{T-1} as columns)
    is given, the residual matrix varpi = M1_hat - P1_hat^T A P1_hat is evaluated from
    the noise record alone.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P1_hat = np.atleast_2d(np.asarray(P1_hat, dtype=float))
    if X.shape[1] < 2:
        raise SingularGram("need at least two states to regress")
    Y = P1_hat.T @ X
    regressors, targets = Y[:, :-1], Y[:, 1:]
    gram = regressors @ regressors.T
    if not np.any(gram):
        raise SingularGram("projected states are all zero")
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > GRAM_COND_LIMIT:
        raise SingularGram(f"Gram matrix condition number {cond:.3g} exceeds {GRAM_COND_LIMIT:.0e}")

    solution, *_ = scipy.linalg.lstsq(regressors.T, targets.T)
    M1_hat = solution.T

    varpi = None
    if noises is not None:
        noises = np.atleast_2d(np.asarray(noises, dtype=float))
        cross = (P1_hat.T @ noises) @ (X[:, :-1].T @ P1_hat)
        varpi = np.linalg.solve(gram.T, cross.T).T
    return Stage2Result(M1_hat=M1_hat, varpi=varpi)


def stage3_estimate_Btau(recorder: TrajectoryRecorder, P1_hat, M1_hat, cfg: Lts0nConfig) -> Stage3Result:
    """Probe one input column at a time once the state is dominated by the unstable subspace.

    Before each probe the plant runs in open loop until the projected residual ratio drops
    below (1-epsilon)·gamma and C/|x| below delta, or until omega_max steps have passed.
    """
    P1_hat = np.atleast_2d(np.asarray(P1_hat, dtype=float))
    M1_tau = matrix_power(M1_hat, cfg.tau)
    Pi1_hat = P1_hat @ P1_hat.T
    C = recorder.plant.noise_bound
    m = recorder.plant.m
    ratio_limit = (1.0 - cfg.epsilon) * cfg.gamma
    delta = cfg.effective_delta
    omega_max = cfg.effective_omega_max

    columns, omegas, times, norms, statuses, premises = [], [], [], [], [], []
    for i in range(m):
        omega = 0
        status = PROBED
        while True:
            x = recorder.state
            norm = float(np.linalg.norm(x))
            if norm < ZERO_STATE_NORM:
                raise ZeroState(f"state vanished before probing column {i + 1}")
            ratio = np.linalg.norm(x - Pi1_hat @ x) / norm
            if ratio < ratio_limit and C / norm < delta:
                break
            if omega >= omega_max:
                status = STABLE_SYSTEM_DETECTED
                logger.info("column %d: stopping test never passed in %d steps, system looks stable", i + 1, omega)
                break
            recorder.advance(phase="stage3-wait")
            omega += 1

        t_i = recorder.time
        y_before = P1_hat.T @ x
        u = np.zeros(m)
        u[i] = cfg.alpha * norm
        recorder.advance(u, phase="stage3-probe")
        for _ in range(cfg.tau - 1):
            recorder.advance(phase="stage3-probe")
        columns.append((P1_hat.T @ recorder.state - M1_tau @ y_before) / (cfg.alpha * norm))

        omegas.append(omega)
        times.append(t_i)
        norms.append(norm)
        statuses.append(status)
        premises.append(bool(C / norm < delta))
        logger.debug("column %d probed at t=%d after waiting %d steps", i + 1, t_i, omega)

    return Stage3Result(
        B_tau_hat=np.column_stack(columns),
        omegas=tuple(omegas),
        probe_times=tuple(times),
        probe_states=tuple(norms),
        status=tuple(statuses),
        premise_ok=tuple(premises),
    )


def stage4_synthesize(M1_hat, B_tau_hat, tau: int, lqr_q: float = 1.0, lqr_r: float = 1.0) -> Stage4Result:
    M1_tau = matrix_power(M1_hat, tau)
    B_tau_hat = np.atleast_2d(np.asarray(B_tau_hat, dtype=float))
    k, m = B_tau_hat.shape
    if M1_tau.shape != (k, k):
        raise ValueError(f"M1_hat is {M1_tau.shape} but B_tau_hat has {k} rows")

    K1_hat = lqr_gain(M1_tau, B_tau_hat, lqr_q * np.eye(k), lqr_r * np.eye(m))
    closed = M1_tau + B_tau_hat @ K1_hat
    G = LYAPUNOV_WEIGHT * np.eye(k)
    H = dlyap_solve(closed, G)
    residual = np.linalg.norm(closed.T @ H @ closed + G - H, 2) / max(1.0, np.linalg.norm(H, 2))
    if residual > 1e-8:
        logger.warning("Lyapunov certificate residual %.3g", residual)

    return Stage4Result(
        K1_hat=K1_hat,
        closed_loop_rho=spectral_radius(closed),
        lyapunov_H=H,
        weighted_norm_U=weighted_norm(closed, H),
        K_norm=float(np.linalg.norm(K1_hat, 2)),
        kappa_H=float(np.linalg.cond(H)),
    )


def run_lts0n(plant: LtiPlant, cfg: Lts0nConfig, x0=None,
              rng: Optional[np.random.Generator] = None) -> Lts0nRun:
    """Learn and apply a tau-hop stabilizing controller on one continuous trajectory.

    Learning takes T + sum_i(omega_i + tau) steps; the controller then runs for the
    configured post-horizon. Failures re-raise with the stage results and log so far.
    """
    rng = rng if rng is not None else make_rng(cfg.seed)
    x0 = np.zeros(plant.n) if x0 is None else x0
    recorder = TrajectoryRecorder(plant, x0, rng, cfg.guard)
    partial: Dict[str, object] = {}

    try:
        for _ in range(cfg.T):
            recorder.advance(phase="stage1")
        stage1 = stage1_estimate_subspace(recorder.states_between(0, cfg.T), cfg.k_hat)
        partial["stage1"] = stage1

        noises = recorder.noise_between(0, cfg.T) if plant.truth is not None else None
        stage2 = stage2_least_squares(recorder.states_between(0, cfg.T + 1), stage1.P1_hat, noises)
        partial["stage2"] = stage2

        stage3 = stage3_estimate_Btau(recorder, stage1.P1_hat, stage2.M1_hat, cfg)
        partial["stage3"] = stage3

        stage4 = stage4_synthesize(stage2.M1_hat, stage3.B_tau_hat, cfg.tau, cfg.lqr_q, cfg.lqr_r)
        partial["stage4"] = stage4
        learning_steps = recorder.time
        logger.info("learned tau-hop controller after %d steps, rho=%.4g", learning_steps, stage4.closed_loop_rho)

        drive_tau_hop(recorder, stage4.K1_hat, stage1.P1_hat, cfg.tau, cfg.effective_post_horizon)
    except LtsError as exc:
        exc.partial = dict(partial)
        if exc.log is None:
            exc.log = recorder.to_log()
        raise

    return Lts0nRun(
        log=recorder.to_log(),
        stage1=stage1,
        stage2=stage2,
        stage3=stage3,
        stage4=stage4,
        learning_steps=learning_steps,
    )


def closed_loop_matrix_Lhat(plant: LtiPlant, P1_hat, K1_hat, tau: int
                            ) -> Tuple[np.ndarray, Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """tau-step closed-loop map P^T(A^tau + A^{tau-1}·B·K1_hat·P1_hat^T)P in the [P1 P2] frame, with its blocks."""
    if plant.truth is None:
        raise ValueError("closed_loop_matrix_Lhat needs a plant with known spectral split")
    truth = plant.truth
    P = np.hstack([truth.P1, truth.P2])
    P1_hat = np.atleast_2d(np.asarray(P1_hat, dtype=float))
    K1_hat = np.atleast_2d(np.asarray(K1_hat, dtype=float))
    step_map = matrix_power(plant.A, tau) + matrix_power(plant.A, tau - 1) @ plant.B @ K1_hat @ P1_hat.T
    L = P.T @ step_map @ P
    k = truth.k
    blocks = (L[:k, :k], L[:k, k:], L[k:, :k], L[k:, k:])
    logger.debug("closed-loop tau-step map has spectral radius %.6g", spectral_radius(L))
    return L, blocks
