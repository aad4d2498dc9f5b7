"""Theory constants and bound checks, evaluated against a finished run.

Every bound is evaluated with measured quantities: the basis error comes from
Procrustes alignment and the Gelfand constants from a finite power horizon.
"""
import logging
import math
import sys
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg

from .errors import GapViolated, InvalidConfig, InvalidSpectrum
from .lts0n import closed_loop_matrix_Lhat
from .spectral import (
    DEFAULT_GELFAND_HORIZON,
    basis_align,
    eigen_gap,
    gelfand_constant,
    matrix_power,
    projector,
    projector_distance,
    spectral_radius,
)
from .types import (
    CertReport,
    DavisKahanCheck,
    LtiPlant,
    Lts0nConfig,
    Lts0nRun,
    SpectralSplit,
    Stage4Result,
    TheoryConstants,
    TrajectoryLog,
)

logger = logging.getLogger(__name__)

DEFAULT_THETA = 0.05
DEFAULT_EPS = (0.05, 0.05, 0.05)
LOG_FLOAT_MAX = math.log(sys.float_info.max)
DK_TOL = 1e-9


def stopping_ratio_transfer(gamma: float, epsilon: float) -> float:
    """Ratio threshold on the true projector implied by the estimated one: gamma - epsilon."""
    if gamma <= epsilon:
        raise InvalidConfig(f"need gamma > epsilon, got gamma={gamma}, epsilon={epsilon}")
    return gamma - epsilon


def gaussian_projection_constants(eigenvalues) -> Tuple[float, ...]:
    return tuple(
        math.sqrt(2.0 / math.pi) * math.sqrt((abs(lam) ** 2 - 1.0) / abs(lam) ** 2)
        for lam in eigenvalues
    )


def compute_constants(plant: LtiPlant, noise_C: Optional[float] = None, theta: float = DEFAULT_THETA,
                      eps: Tuple[float, float, float] = DEFAULT_EPS, tau: int = 3, alpha: float = 0.5,
                      gamma: float = 0.02, epsilon: float = 0.01,
                      gelfand_horizon: int = DEFAULT_GELFAND_HORIZON) -> TheoryConstants:
    if plant.truth is None:
        raise ValueError("compute_constants needs a plant with known spectral split")
    if theta <= 0 or tau < 1 or alpha <= 0 or min(eps) <= 0:
        raise ValueError("theta, tau, alpha and every epsilon must be positive")
    truth = plant.truth
    C = plant.noise_bound if noise_C is None else float(noise_C)
    eps1, eps2, eps4 = eps
    moduli = truth.moduli
    lam1, lam_next = moduli[0], moduli[truth.k]

    zeta_A = gelfand_constant(plant.A, eps1, gelfand_horizon).zeta
    zeta_M1 = gelfand_constant(truth.M1, eps1, gelfand_horizon).zeta
    zeta_M2 = gelfand_constant(truth.M2, eps2, gelfand_horizon).zeta
    zeta_N2 = gelfand_constant(truth.N2, eps4, gelfand_horizon).zeta
    A_norm = float(np.linalg.norm(plant.A, 2))
    B_norm = float(np.linalg.norm(plant.B, 2))
    xi = truth.xi

    separation = lam1 + eps1 - lam_next - eps2
    if separation <= 0:
        C_Delta = math.inf
    else:
        C_Delta = (zeta_M1 * zeta_M2 * (2.0 - xi) * math.sqrt(max(2.0 * xi, 0.0)) * A_norm / (1.0 - xi)
                   * 2.0 * lam_next / separation)

    contraction = lam_next + eps4
    if contraction >= 1.0:
        C_gamma = math.inf
    else:
        C_gamma = zeta_N2 * C / (stopping_ratio_transfer(gamma, epsilon) * (1.0 - xi)) / (1.0 - contraction)

    C_B = ((zeta_A ** 2 * (3.0 * tau * A_norm + B_norm + tau * C + 1.0) + (tau + 1.0) * C_Delta)
           * math.sqrt(plant.m) / alpha)

    return TheoryConstants(
        gap=eigen_gap(truth.eigenvalues[:truth.k]),
        theta=theta,
        C=C,
        zeta_bar=max(zeta_A, zeta_M2, zeta_N2),
        C_Delta=C_Delta,
        C_gamma=C_gamma,
        C_B=C_B,
        Cz_gaussian=gaussian_projection_constants(truth.eigenvalues[:truth.k]),
        xi=xi,
        zeta_A=zeta_A,
        zeta_M1=zeta_M1,
        zeta_M2=zeta_M2,
        zeta_N2=zeta_N2,
        eps=(eps1, eps2, eps4),
        gelfand_horizon=gelfand_horizon,
    )


def _check_straddle(lambda_k: float, lambda_k1: float) -> Tuple[float, float]:
    lambda_k, lambda_k1 = abs(lambda_k), abs(lambda_k1)
    if not lambda_k > 1.0 > lambda_k1 > 0.0:
        raise InvalidSpectrum(f"need |lambda_k| > 1 > |lambda_k+1| > 0, got {lambda_k} and {lambda_k1}")
    return lambda_k, lambda_k1


def theory_T_bound(n: int, k: int, eps: float, gap: float, theta: float, C: float,
                   lambda_k: float, lambda_k1: float) -> int:
    """Smallest integer horizon satisfying all three stage-1 length conditions."""
    lambda_k, lambda_k1 = _check_straddle(lambda_k, lambda_k1)
    if min(eps, gap, theta, C) <= 0 or not 1 <= k < n:
        raise InvalidSpectrum("eps, gap, theta and C must be positive and 1 <= k < n")
    scale = 2.0 / math.log(lambda_k)
    log_common = ((k + 7) / 2.0 * math.log(k) + math.log((n - k) * C) - math.log(1.0 - lambda_k1)
                  - math.log(math.sqrt(math.pi) * theta * gap))
    terms = (
        scale * (math.log(8.0 * math.sqrt(2.0)) + log_common),
        scale * (math.log(4.0 * math.sqrt(2.0) / eps) + log_common),
        math.log(lambda_k),
    )
    return int(math.floor(max(terms))) + 1


def d1_gram_lower_bound(T: int, k: int, gap: float, theta: float, lambda_1: float, lambda_k: float) -> float:
    """High-probability lower bound on sigma_min(D1·D1^T) from the unstable-mode excitation.

    Evaluated in log space; horizons whose bound exceeds the float range give inf.
    """
    lambda_1, lambda_k = abs(lambda_1), abs(lambda_k)
    if not lambda_1 >= lambda_k > 1.0:
        raise InvalidSpectrum(f"need |lambda_1| >= |lambda_k| > 1, got {lambda_1} and {lambda_k}")
    if gap == 0.0 or theta == 0.0:
        return 0.0
    log_bound = (math.log(math.pi / 4.0) + 2 * T * math.log(lambda_k) + 2.0 * math.log(abs(theta * gap))
                 - (k + 6) * math.log(k) + 2.0 * math.log(lambda_1) - math.log(lambda_1 ** 2 - 1.0))
    if log_bound > LOG_FLOAT_MAX:
        return math.inf
    return math.exp(log_bound)


def d2_norm_bound(T: int, n: int, k: int, C: float, lambda_k1: float) -> float:
    lambda_k1 = abs(lambda_k1)
    if not 0.0 <= lambda_k1 < 1.0:
        raise InvalidSpectrum(f"need |lambda_k+1| < 1, got {lambda_k1}")
    return math.sqrt(T) * (n - k) * C / (1.0 - lambda_k1)


def davis_kahan_check(truth: SpectralSplit, D, Pi1_hat=None) -> DavisKahanCheck:
    """Projector perturbation of the top-k left singular space of D against its guaranteed bound.

    D splits as Q1·D1 + Q2·D2 along the invariant subspaces. The bound is checked with
    |Q2·D2| over the singular gap sigma_k(Q1·D1) - sigma_{k+1}(D); the version with |D2|
    is reported alongside.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    k = truth.k
    D1, D2 = truth.R1 @ D, truth.R2 @ D
    sigma_hat_k = scipy.linalg.svdvals(truth.Q1 @ D1)[k - 1]
    sigma = scipy.linalg.svdvals(D)
    sigma_next = sigma[k] if sigma.size > k else 0.0
    separation = sigma_hat_k - sigma_next
    if separation <= 0:
        raise GapViolated(f"sigma_k(Q1 D1)={sigma_hat_k:.6g} does not exceed sigma_k+1(D)={sigma_next:.6g}")

    if Pi1_hat is None:
        U = scipy.linalg.svd(D, full_matrices=False)[0]
        Pi1_hat = projector(U[:, :k])
    lhs = projector_distance(Pi1_hat, projector(truth.P1))
    root = math.sqrt(2.0 * k)
    rhs = root * np.linalg.norm(truth.Q2 @ D2, 2) / separation
    rhs_displayed = root * np.linalg.norm(D2, 2) / separation
    holds = bool(lhs <= rhs + DK_TOL)
    if not holds:
        logger.warning("projector perturbation %.6g exceeds its bound %.6g", lhs, rhs)
    return DavisKahanCheck(lhs=lhs, rhs=float(rhs), rhs_displayed=float(rhs_displayed), holds=holds)


def ultimate_boundedness_check(log: TrajectoryLog, window: int, threshold: float) -> bool:
    norms = np.asarray(log.norms)
    if not 1 <= window <= norms.size:
        raise ValueError(f"window must lie in [1, {norms.size}], got {window}")
    return bool(np.max(norms[-window:]) <= threshold)


def delta_requirement(constants: TheoryConstants, stage4: Stage4Result, plant: LtiPlant, tau: int) -> Dict[str, float]:
    """Basis-error levels below which the learned tau-hop loop provably contracts."""
    lam1 = float(plant.truth.moduli[0]) if plant.truth is not None else spectral_radius(plant.A)
    growth = (lam1 + constants.eps[0]) ** (tau - 1)
    A_norm = float(np.linalg.norm(plant.A, 2))
    B_norm = float(np.linalg.norm(plant.B, 2))
    K = stage4.K_norm
    iota_sq = 1.0 / (4.0 * stage4.kappa_H)

    delta_1 = (iota_sq / (1.0 + iota_sq) / 6.0) / (
        (tau * A_norm * constants.zeta_A ** 2 + K * constants.C_B) * growth)
    if stage4.weighted_norm_U >= 1.0:
        delta_2 = 0.0
    else:
        delta_2 = (1.0 - stage4.weighted_norm_U) / growth / (
            2.0 * math.sqrt(stage4.kappa_H) * (constants.C_B * K + constants.zeta_A * B_norm * K + 1.0))
    return {"delta_1": delta_1, "delta_2": delta_2, "delta_required": min(delta_1, delta_2)}


def error_report(plant: LtiPlant, run: Lts0nRun, cfg: Lts0nConfig,
                 constants: Optional[TheoryConstants] = None) -> CertReport:
    if plant.truth is None:
        raise ValueError("error_report needs a plant with known spectral split")
    truth = plant.truth
    if constants is None:
        constants = compute_constants(plant, tau=cfg.tau, alpha=cfg.alpha, gamma=cfg.gamma,
                                      epsilon=cfg.epsilon, gelfand_horizon=cfg.gelfand_horizon)
    stage1, stage2, stage3, stage4 = run.stage1, run.stage2, run.stage3, run.stage4
    tau = cfg.tau

    W, basis_err = basis_align(truth.P1, stage1.P1_hat)
    proj_err = projector_distance(stage1.Pi1_hat, projector(truth.P1))

    try:
        dk = davis_kahan_check(truth, stage1.D, stage1.Pi1_hat)
        dk_lhs, dk_rhs, dk_rhs_displayed, dk_holds = dk.lhs, dk.rhs, dk.rhs_displayed, dk.holds
    except GapViolated as exc:
        logger.info("Davis-Kahan precondition failed: %s", exc)
        dk_lhs, dk_rhs, dk_rhs_displayed, dk_holds = proj_err, math.nan, math.nan, None

    A_norm = float(np.linalg.norm(plant.A, 2))
    growth = (truth.moduli[0] + constants.eps[0]) ** (tau - 1)
    M1_aligned = W.T @ truth.M1 @ W
    m1_err = float(np.linalg.norm(M1_aligned - stage2.M1_hat, 2))
    m1tau_err = float(np.linalg.norm(matrix_power(M1_aligned, tau) - matrix_power(stage2.M1_hat, tau), 2))
    B_tau = W.T @ truth.P1.T @ matrix_power(plant.A, tau - 1) @ plant.B
    btau_err = float(np.linalg.norm(B_tau - stage3.B_tau_hat, 2))

    L, _ = closed_loop_matrix_Lhat(plant, stage1.P1_hat, stage4.K1_hat, tau)

    closed_steps = run.log.horizon - run.learning_steps
    window = cfg.effective_window
    bounded = None
    if closed_steps >= window:
        bounded = ultimate_boundedness_check(run.log, window, cfg.stabilize_threshold_for(plant.noise_bound))

    premise_violations = tuple(
        i + 1 for i, norm in enumerate(stage3.probe_states)
        if constants.C > 0 and constants.C / norm >= basis_err
    )
    report = CertReport(
        proj_err=proj_err,
        basis_err=basis_err,
        dk_lhs=dk_lhs,
        dk_rhs=dk_rhs,
        dk_rhs_displayed=dk_rhs_displayed,
        dk_holds=dk_holds,
        m1_err=m1_err,
        m1_bound=3.0 * A_norm * basis_err,
        m1tau_err=m1tau_err,
        m1tau_bound=3.0 * tau * A_norm * constants.zeta_A ** 2 * growth * basis_err,
        btau_err=btau_err,
        btau_bound=constants.C_B * growth * basis_err,
        rho_lhat=spectral_radius(L),
        bounded=bounded,
        gelfand_horizon=constants.gelfand_horizon,
        premise_violations=premise_violations,
    )
    failed = report.failed_checks()
    if failed:
        logger.warning("bound checks failed: %s (probe premise violated at %s)",
                       ", ".join(failed), list(premise_violations) or "none")
    return report
