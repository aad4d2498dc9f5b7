import math
from dataclasses import dataclass, field, fields, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import DimensionMismatch, InvalidConfig


@dataclass(frozen=True)
class SpectralSplit:
    """Ground-truth decomposition of A.

    [P1 P2] is the orthogonal E_u ⊕ E_u^⊥ frame with A·P = P·[[M1, Delta], [0, M2]];
    [Q1 Q2] are unit-norm eigenvectors (oblique E_u ⊕ E_s split) with R = Q^{-1}.
    """
    eigenvalues: np.ndarray  # sorted by strictly decreasing modulus
    k: int
    P1: np.ndarray
    P2: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    Delta: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    N1: np.ndarray
    N2: np.ndarray
    xi: float

    @property
    def n(self) -> int:
        return self.P1.shape[0]

    @property
    def moduli(self) -> np.ndarray:
        return np.abs(self.eigenvalues)


@dataclass(frozen=True)
class GelfandEstimate:
    epsilon: float
    horizon: int
    zeta: float
    rho: float


NOISE_KINDS = ("none", "uniform", "gaussian", "truncated_gaussian")


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "none"
    sigma: float = 0.0  # gaussian kinds
    c: float = 0.0  # radius for uniform and truncated_gaussian

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidConfig(f"unknown noise kind {self.kind!r}, expected one of {NOISE_KINDS}")
        if self.sigma < 0 or self.c < 0:
            raise InvalidConfig("noise sigma and bound must be nonnegative")
        if self.kind == "uniform" and self.c <= 0:
            raise InvalidConfig("uniform noise needs a positive radius c")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise InvalidConfig("gaussian noise needs a positive sigma")
        if self.kind == "truncated_gaussian" and (self.sigma <= 0 or self.c <= 0):
            raise InvalidConfig("truncated gaussian noise needs positive sigma and c")

    def effective_bound(self, n: int) -> float:
        """The constant C used by the stopping-time thresholds."""
        if self.kind == "none":
            return 0.0
        if self.kind == "gaussian":
            # Gaussian noise is unbounded; 3·sigma·sqrt(n) stands in for C
            return 3.0 * self.sigma * math.sqrt(n)
        return self.c

    def to_dict(self) -> Dict[str, object]:
        return {"kind": self.kind, "sigma": self.sigma, "c": self.c}

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "NoiseModel":
        return cls(kind=str(data.get("kind", "none")),
                   sigma=float(data.get("sigma", 0.0)),
                   c=float(data.get("c", 0.0)))


@dataclass(frozen=True)
class LtiPlant:
    A: np.ndarray
    B: np.ndarray
    noise: NoiseModel = field(default_factory=NoiseModel)
    truth: Optional[SpectralSplit] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise DimensionMismatch(f"A must be square, got shape {self.A.shape}")
        if self.B.ndim != 2 or self.B.shape[0] != self.A.shape[0]:
            raise DimensionMismatch(f"B must have {self.A.shape[0]} rows, got shape {self.B.shape}")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise DimensionMismatch("A and B must be finite")
        if self.truth is not None and self.truth.n != self.n:
            raise DimensionMismatch("truth does not match the dimension of A")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def k(self) -> Optional[int]:
        return None if self.truth is None else self.truth.k

    @property
    def noise_bound(self) -> float:
        return self.noise.effective_bound(self.n)


PHASES = ("stage1", "stage3-wait", "stage3-probe", "closed-loop")


@dataclass(frozen=True)
class TrajectoryLog:
    states: np.ndarray  # (H+1, n)
    inputs: np.ndarray  # (H, m)
    noises: np.ndarray  # (H, n)
    norms: np.ndarray  # (H+1,)
    phase_marks: Tuple[str, ...]  # label of each transition t -> t+1

    @property
    def horizon(self) -> int:
        return len(self.phase_marks)

    def steps_in(self, phase: str) -> List[int]:
        return [t for t, mark in enumerate(self.phase_marks) if mark == phase]


@dataclass
class Lts0nConfig:
    T: int = 30
    k_hat: int = 1
    tau: int = 3
    alpha: float = 0.5
    gamma: float = 0.02
    epsilon: float = 0.01
    delta: Optional[float] = None  # defaults to sqrt(2 k_hat)·epsilon
    omega_max: Optional[int] = None  # defaults to 50·T
    lqr_q: float = 1.0
    lqr_r: float = 1.0
    guard: float = 1e12
    seed: int = 0
    post_horizon: Optional[int] = None  # defaults to 10·T
    gelfand_horizon: int = 256
    stabilize_window: Optional[int] = None  # defaults to T
    stabilize_threshold: Optional[float] = None  # defaults to 10·C

    def __post_init__(self):
        if self.k_hat < 1:
            raise InvalidConfig(f"k_hat must be at least 1, got {self.k_hat}")
        if self.T < self.k_hat:
            raise InvalidConfig(f"T must be at least k_hat ({self.k_hat}), got {self.T}")
        if self.tau < 1:
            raise InvalidConfig(f"tau must be at least 1, got {self.tau}")
        if self.alpha <= 0:
            raise InvalidConfig(f"alpha must be positive, got {self.alpha}")
        if not self.gamma > self.epsilon > 0:
            raise InvalidConfig(f"need gamma > epsilon > 0, got gamma={self.gamma}, epsilon={self.epsilon}")
        if self.delta is not None and self.delta <= 0:
            raise InvalidConfig(f"delta must be positive, got {self.delta}")
        if self.omega_max is not None and self.omega_max < 1:
            raise InvalidConfig(f"omega_max must be at least 1, got {self.omega_max}")
        if self.lqr_q <= 0 or self.lqr_r <= 0:
            raise InvalidConfig("LQR weights must be positive")
        if self.guard <= 0:
            raise InvalidConfig("guard must be positive")
        if self.post_horizon is not None and self.post_horizon < 0:
            raise InvalidConfig("post_horizon must be nonnegative")
        if self.gelfand_horizon < 1:
            raise InvalidConfig("gelfand_horizon must be at least 1")
        if self.stabilize_window is not None and self.stabilize_window < 1:
            raise InvalidConfig("stabilize_window must be at least 1")

    @property
    def effective_delta(self) -> float:
        if self.delta is not None:
            return self.delta
        return math.sqrt(2 * self.k_hat) * self.epsilon

    @property
    def effective_omega_max(self) -> int:
        return self.omega_max if self.omega_max is not None else 50 * self.T

    @property
    def effective_post_horizon(self) -> int:
        return self.post_horizon if self.post_horizon is not None else 10 * self.T

    @property
    def effective_window(self) -> int:
        return self.stabilize_window if self.stabilize_window is not None else self.T

    def stabilize_threshold_for(self, noise_bound: float) -> float:
        if self.stabilize_threshold is not None:
            return self.stabilize_threshold
        return max(10.0 * noise_bound, 1e-9)

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "Lts0nConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Stage1Result:
    D: np.ndarray
    singular_values: np.ndarray
    P1_hat: np.ndarray
    Pi1_hat: np.ndarray


@dataclass(frozen=True)
class Stage2Result:
    M1_hat: np.ndarray
    varpi: Optional[np.ndarray] = None  # only when the plant truth and noise record are available


PROBED = "Probed"
STABLE_SYSTEM_DETECTED = "StableSystemDetected"


@dataclass(frozen=True)
class Stage3Result:
    B_tau_hat: np.ndarray
    omegas: Tuple[int, ...]
    probe_times: Tuple[int, ...]
    probe_states: Tuple[float, ...]
    status: Tuple[str, ...]
    premise_ok: Tuple[bool, ...]  # C/|x_{t_i}| < delta at each probe


@dataclass(frozen=True)
class Stage4Result:
    K1_hat: np.ndarray
    closed_loop_rho: float
    lyapunov_H: np.ndarray
    weighted_norm_U: float
    K_norm: float
    kappa_H: float


@dataclass(frozen=True)
class Lts0nRun:
    log: TrajectoryLog
    stage1: Stage1Result
    stage2: Stage2Result
    stage3: Stage3Result
    stage4: Stage4Result
    learning_steps: int  # time at which the tau-hop controller takes over

    def as_tuple(self):
        return self.log, self.stage1, self.stage2, self.stage3, self.stage4


@dataclass(frozen=True)
class TheoryConstants:
    gap: float
    theta: float
    C: float
    zeta_bar: float
    C_Delta: float
    C_gamma: float
    C_B: float
    Cz_gaussian: Tuple[float, ...]
    xi: float
    zeta_A: float
    zeta_M1: float
    zeta_M2: float
    zeta_N2: float
    eps: Tuple[float, float, float]  # (eps1, eps2, eps4)
    gelfand_horizon: int

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        data["Cz_gaussian"] = list(self.Cz_gaussian)
        data["eps"] = list(self.eps)
        return data


@dataclass(frozen=True)
class DavisKahanCheck:
    lhs: float
    rhs: float  # sqrt(2k)·|Q2 D2| / (sigma_hat_k - sigma_{k+1})
    rhs_displayed: float  # sqrt(2k)·|D2| / (sigma_hat_k - sigma_{k+1})
    holds: bool


@dataclass(frozen=True)
class CertReport:
    proj_err: float
    basis_err: float
    dk_lhs: float
    dk_rhs: float
    dk_rhs_displayed: float
    dk_holds: Optional[bool]
    m1_err: float
    m1_bound: float
    m1tau_err: float
    m1tau_bound: float
    btau_err: float
    btau_bound: float
    rho_lhat: float
    bounded: Optional[bool]
    gelfand_horizon: int
    premise_violations: Tuple[int, ...] = ()

    @property
    def m1_holds(self) -> bool:
        return self.m1_err <= self.m1_bound

    @property
    def m1tau_holds(self) -> bool:
        return self.m1tau_err <= self.m1tau_bound

    @property
    def btau_holds(self) -> bool:
        return self.btau_err <= self.btau_bound

    def failed_checks(self) -> List[str]:
        failed = []
        if not self.m1_holds:
            failed.append("m1")
        if not self.m1tau_holds:
            failed.append("m1tau")
        if not self.btau_holds:
            failed.append("btau")
        if self.dk_holds is False:
            failed.append("davis_kahan")
        return failed

    def to_dict(self) -> Dict[str, object]:
        data = asdict(self)
        data["premise_violations"] = list(self.premise_violations)
        return data


STABILIZED = "Stabilized"
NOT_STABILIZED = "NotStabilized"
BLOWUP = "Blowup"
ILL_CONDITIONED = "IllConditioned"
STAGE_FAILED = "StageFailed"
UNSTABILIZABLE = "Unstabilizable"
GENERATION_FAILED = "GenerationFailed"


@dataclass
class RunRecord:
    seed: int
    n: int
    k: int
    m: int
    sigma: float
    algorithm: str  # "lts0n" or "baseline"
    status: str
    steps_to_stabilize: Optional[int] = None
    first_action_step: Optional[int] = None
    max_norm: float = float("nan")
    rho_lhat: float = float("nan")
    proj_err: float = float("nan")
    btau_err: float = float("nan")


@dataclass
class ExperimentConfig:
    ns: List[int] = field(default_factory=lambda: [8, 16, 32])
    sigmas: List[float] = field(default_factory=lambda: [0.01])
    seeds: List[int] = field(default_factory=lambda: list(range(1, 21)))
    k: int = 2
    m: int = 2
    unstable_range: Tuple[float, float] = (1.1, 1.5)
    stable_range: Tuple[float, float] = (0.05, 0.3)
    cond_limit: float = 1e4
    baseline: bool = False
    baseline_horizon: Optional[int] = None  # defaults to the learner run length
    plant_file: Optional[str] = None  # sweep this plant instead of generating one per (n, seed)
    plant: Optional[Dict[str, object]] = None  # the same, inline in plant-file form
    lts: Lts0nConfig = field(default_factory=Lts0nConfig)
    output: str = "sweep.csv"

    def __post_init__(self):
        if not self.ns or not self.sigmas or not self.seeds:
            raise InvalidConfig("sweep axes (n, sigma, seeds) must be nonempty")
        if any(n <= self.k for n in self.ns):
            raise InvalidConfig(f"every n must exceed k={self.k}")
        if self.k < 1 or self.m < 1:
            raise InvalidConfig("k and m must be positive")
        if self.baseline_horizon is not None and self.baseline_horizon < 1:
            raise InvalidConfig("baseline_horizon must be positive")
        if self.plant_file is not None and self.plant is not None:
            raise InvalidConfig("give either plant_file or an inline plant, not both")

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown sweep configuration keys: {sorted(unknown)}")
        data = dict(data)
        if isinstance(data.get("lts"), dict):
            data["lts"] = Lts0nConfig.from_dict(data["lts"])
        for key in ("unstable_range", "stable_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)
