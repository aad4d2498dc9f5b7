"""Dense spectral primitives shared by the learner and the evaluation oracle.

Everything here is a pure function of its inputs. Complex arithmetic stays inside
the eigen-analysis; bases and projectors are returned as real arrays.
"""
import logging
from typing import Tuple

import numpy as np
import scipy.linalg

from .errors import (
    BadInstabilityIndex,
    DegenerateEigenvalues,
    DistinctModulusViolated,
    GapViolated,
    ModulusOnUnitCircle,
    NonDiagonalizable,
    NotOrthonormal,
    NotSchurStable,
    Unstabilizable,
)
from .types import GelfandEstimate, SpectralSplit

logger = logging.getLogger(__name__)

MODULUS_TOL = 1e-9
ORTHONORMAL_TOL = 1e-9
SYMMETRY_TOL = 1e-12
EIGVEC_COND_LIMIT = 1e12
DEFAULT_GELFAND_HORIZON = 256


def _as_square(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("matrix has non-finite entries")
    return X


def normalize_column_signs(X: np.ndarray) -> np.ndarray:
    """Rotate each column's phase so its largest-magnitude entry is positive real."""
    X = np.array(X, copy=True)
    if X.size == 0:
        return X
    rows = np.argmax(np.abs(X), axis=0)
    pivots = X[rows, np.arange(X.shape[1])]
    magnitudes = np.abs(pivots)
    magnitudes[magnitudes == 0] = 1.0
    phases = np.conj(pivots) / magnitudes
    phases[pivots == 0] = 1.0
    return X * phases


def is_orthonormal(P: np.ndarray, tol: float = ORTHONORMAL_TOL) -> bool:
    P = np.atleast_2d(P)
    gram = P.T @ P
    return bool(np.max(np.abs(gram - np.eye(gram.shape[0]))) <= tol)


def _require_orthonormal(P: np.ndarray, name: str) -> np.ndarray:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[0] == 1 and P.shape[1] > 1:
        P = P.T
    if not is_orthonormal(P):
        raise NotOrthonormal(f"{name} does not have orthonormal columns")
    return P


def eig_sorted(A, cond_limit: float = EIGVEC_COND_LIMIT) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues by strictly decreasing modulus with unit-norm, phase-normalized eigenvectors."""
    A = _as_square(A)
    eigenvalues, vectors = scipy.linalg.eig(A)
    order = np.argsort(-np.abs(eigenvalues), kind="stable")
    eigenvalues = eigenvalues[order]
    vectors = vectors[:, order]

    moduli = np.abs(eigenvalues)
    close = np.flatnonzero(np.abs(np.diff(moduli)) < MODULUS_TOL)
    if close.size:
        i = int(close[0])
        raise DistinctModulusViolated(
            f"eigenvalues {eigenvalues[i]:.6g} and {eigenvalues[i + 1]:.6g} share modulus {moduli[i]:.6g}"
        )
    on_circle = np.flatnonzero(np.abs(moduli - 1.0) < MODULUS_TOL)
    if on_circle.size:
        raise ModulusOnUnitCircle(f"eigenvalue {eigenvalues[on_circle[0]]:.6g} lies on the unit circle")

    vectors = vectors / np.linalg.norm(vectors, axis=0)
    vectors = normalize_column_signs(vectors)
    cond = np.linalg.cond(vectors)
    if not np.isfinite(cond) or cond > cond_limit:
        raise NonDiagonalizable(f"eigenvector matrix condition number {cond:.3g} exceeds {cond_limit:.3g}")

    # distinct moduli force a real spectrum for real A
    if np.max(np.abs(eigenvalues.imag), initial=0.0) <= MODULUS_TOL * max(1.0, moduli[0]):
        eigenvalues = eigenvalues.real
        vectors = vectors.real
    return eigenvalues, vectors


def invariant_split(A, k: int) -> SpectralSplit:
    A = _as_square(A)
    n = A.shape[0]
    eigenvalues, vectors = eig_sorted(A)
    if not 1 <= k <= n - 1:
        raise BadInstabilityIndex(f"k must lie in [1, {n - 1}], got {k}")
    moduli = np.abs(eigenvalues)
    if moduli[k - 1] <= 1.0 or moduli[k] >= 1.0:
        raise BadInstabilityIndex(
            f"|lambda_k|={moduli[k - 1]:.6g} and |lambda_k+1|={moduli[k]:.6g} do not straddle the unit circle"
        )

    Q = np.real(vectors)
    R = scipy.linalg.inv(Q)
    Q1, Q2 = Q[:, :k], Q[:, k:]
    R1, R2 = R[:k, :], R[k:, :]

    frame, _ = scipy.linalg.qr(Q1)
    frame = normalize_column_signs(frame)
    P1, P2 = frame[:, :k], frame[:, k:]

    stable_frame, _ = scipy.linalg.qr(Q2, mode="economic")
    closeness = scipy.linalg.svdvals(P2.T @ stable_frame).min()
    xi = float(np.clip(1.0 - closeness, 0.0, 1.0 - np.finfo(float).eps))

    return SpectralSplit(
        eigenvalues=eigenvalues,
        k=k,
        P1=P1,
        P2=P2,
        M1=P1.T @ A @ P1,
        M2=P2.T @ A @ P2,
        Delta=P1.T @ A @ P2,
        Q1=Q1,
        Q2=Q2,
        R1=R1,
        R2=R2,
        N1=R1 @ A @ Q1,
        N2=R2 @ A @ Q2,
        xi=xi,
    )


def projector(P) -> np.ndarray:
    P = _require_orthonormal(P, "P")
    Pi = P @ P.T
    return (Pi + Pi.T) / 2.0


def projector_distance(Pi_a, Pi_b) -> float:
    return float(np.linalg.norm(np.asarray(Pi_a, dtype=float) - np.asarray(Pi_b, dtype=float), 2))


def _symmetric(X, name: str) -> np.ndarray:
    X = _as_square(X)
    if np.max(np.abs(X - X.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(X))):
        raise ValueError(f"{name} must be symmetric")
    return (X + X.T) / 2.0


def davis_kahan_bound(A, H, k: int) -> Tuple[float, float, float]:
    """Top-k eigenprojector perturbation of symmetric A under symmetric H.

    Returns the operator and Frobenius distances between the top-k eigenprojectors of A
    and A + H, and sqrt(2k)·|H| / delta, where delta is the smallest |lambda_i - mu_j| over
    the top k eigenvalues lambda of A and the remaining eigenvalues mu of A + H.
    """
    A = _symmetric(A, "A")
    H = _symmetric(H, "H")
    if A.shape != H.shape:
        raise ValueError(f"A is {A.shape} but H is {H.shape}")
    n = A.shape[0]
    if not 1 <= k <= n - 1:
        raise BadInstabilityIndex(f"k must lie in [1, {n - 1}], got {k}")
    lam, U = scipy.linalg.eigh(A)
    mu, V = scipy.linalg.eigh(A + H)
    lam, U = lam[::-1], U[:, ::-1]
    mu, V = mu[::-1], V[:, ::-1]

    delta = float(np.min(np.abs(lam[:k, None] - mu[None, k:])))
    if delta <= 0.0:
        raise GapViolated("top eigenvalues of A meet the trailing eigenvalues of A + H")
    difference = U[:, :k] @ U[:, :k].T - V[:, :k] @ V[:, :k].T
    bound = np.sqrt(2.0 * k) * np.linalg.norm(H, 2) / delta
    return float(np.linalg.norm(difference, 2)), float(np.linalg.norm(difference, "fro")), float(bound)


def basis_align(P, P_hat) -> Tuple[np.ndarray, float]:
    """Orthogonal W minimizing |P·W - P_hat| (Procrustes), and the residual norm."""
    P = _require_orthonormal(P, "P")
    P_hat = _require_orthonormal(P_hat, "P_hat")
    if P.shape != P_hat.shape:
        raise ValueError(f"bases differ in shape: {P.shape} vs {P_hat.shape}")
    W, _ = scipy.linalg.orthogonal_procrustes(P, P_hat)
    delta = float(np.linalg.norm(P @ W - P_hat, 2))
    return W, delta


def spectral_radius(X) -> float:
    X = _as_square(X)
    return float(np.max(np.abs(scipy.linalg.eigvals(X))))


def matrix_power(X, t: int) -> np.ndarray:
    if t < 0:
        raise ValueError(f"power must be nonnegative, got {t}")
    return np.linalg.matrix_power(_as_square(X), t)


def gelfand_constant(X, epsilon: float, horizon: int = DEFAULT_GELFAND_HORIZON) -> GelfandEstimate:
    """Smallest zeta with |X^t| <= zeta·(rho(X)+epsilon)^t for 0 <= t <= horizon."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
    X = _as_square(X)
    rho = spectral_radius(X)
    scaled = X / (rho + epsilon)
    power = np.eye(X.shape[0])
    zeta = 1.0
    for _ in range(horizon):
        power = power @ scaled
        zeta = max(zeta, float(np.linalg.norm(power, 2)))
    return GelfandEstimate(epsilon=epsilon, horizon=horizon, zeta=zeta, rho=rho)


def dlyap_solve(Acl, G) -> np.ndarray:
    """H with Acl^T·H·Acl + G - H = 0."""
    Acl = _as_square(Acl)
    G = _as_square(G)
    rho = spectral_radius(Acl)
    if rho >= 1.0:
        raise NotSchurStable(f"closed loop has spectral radius {rho:.6g} >= 1")
    H = scipy.linalg.solve_discrete_lyapunov(Acl.T, G)
    return (H + H.T) / 2.0


def weighted_norm(X, H) -> float:
    """|X|_H = |H^{1/2} X H^{-1/2}|_2."""
    w, V = np.linalg.eigh(_as_square(H))
    if np.min(w) <= 0:
        raise ValueError("weight matrix must be positive definite")
    root = (V * np.sqrt(w)) @ V.T
    inv_root = (V / np.sqrt(w)) @ V.T
    return float(np.linalg.norm(root @ _as_square(X) @ inv_root, 2))


def _riccati_residual(F, G, Q, R, P) -> np.ndarray:
    gain_term = F.T @ P @ G @ np.linalg.solve(R + G.T @ P @ G, G.T @ P @ F)
    return F.T @ P @ F - gain_term + Q - P


def lqr_gain(F, G, Q, R, tol: float = 1e-9, max_iter: int = 10000) -> np.ndarray:
    """LQR gain K for the closed loop F + G·K.

    The discrete Riccati equation is solved by scipy and then iterated to a
    fixed point until the residual falls below tol (relative to |P|).
    """
    F = _as_square(F)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.shape[0] != F.shape[0]:
        G = G.reshape(F.shape[0], -1)
    Q = _as_square(Q)
    R = _as_square(R)
    try:
        P = scipy.linalg.solve_discrete_are(F, G, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise Unstabilizable(f"Riccati equation has no stabilizing solution: {exc}") from exc
    if not np.all(np.isfinite(P)):
        raise Unstabilizable("Riccati solution is not finite")

    for iteration in range(max_iter + 1):
        residual = np.linalg.norm(_riccati_residual(F, G, Q, R, P), 2)
        if residual <= tol * max(1.0, np.linalg.norm(P, 2)):
            break
        P = P + _riccati_residual(F, G, Q, R, P)
        P = (P + P.T) / 2.0
        if not np.all(np.isfinite(P)):
            raise Unstabilizable("Riccati iteration diverged")
    else:
        raise Unstabilizable(f"Riccati iteration did not converge, residual {residual:.3g}")
    if iteration:
        logger.debug("Riccati fixed point refined in %d iterations", iteration)

    K = -np.linalg.solve(R + G.T @ P @ G, G.T @ P @ F)
    rho = spectral_radius(F + G @ K)
    if rho >= 1.0:
        raise Unstabilizable(f"LQR closed loop has spectral radius {rho:.6g} >= 1")
    return K


def eigen_gap(lambdas) -> float:
    """|prod over ordered pairs m1 != m2 of (1/lambda_m1 - 1/lambda_m2)|; 1 for a single eigenvalue."""
    lam = np.asarray(lambdas, dtype=complex).ravel()
    if np.any(lam == 0):
        raise DegenerateEigenvalues("eigenvalues must be nonzero")
    inv = 1.0 / lam
    gap = 1.0
    for i in range(inv.size):
        for j in range(inv.size):
            if i == j:
                continue
            diff = abs(inv[i] - inv[j])
            if diff <= 1e-12 * max(1.0, abs(inv[i])):
                raise DegenerateEigenvalues(f"eigenvalues {lam[i]} and {lam[j]} coincide")
            gap *= diff
    return float(gap)


def vandermonde_inverse_norm(lambdas) -> Tuple[float, float]:
    """Exact |Lambda^{-1}|_2 for rows (1, 1/lambda_i, ..., lambda_i^{-k+1}) and the gap-based upper bound."""
    lam = np.asarray(lambdas, dtype=complex).ravel()
    k = lam.size
    gap = eigen_gap(lam)
    vander = np.vander(1.0 / lam, k, increasing=True)
    exact = float(np.linalg.norm(np.linalg.inv(vander), 2))
    bound = k ** (k / 2.0 + 1.5) / gap
    if exact > bound:
        logger.warning("Vandermonde inverse norm %.6g exceeds its gap bound %.6g", exact, bound)
    return exact, float(bound)
