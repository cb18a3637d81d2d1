"""섭동 gradient system PG=(V,E,Ψ,B) 오라클 묶음과 표준 가정 프로브.

가정은 증명이 아니라 샘플 위의 부등식으로 바꾸어 검사하고, 맞춘 상수를 보고한다.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from convex.convex_core import (
    DEFAULT_OVERFLOW, Functional, SearchBox, legendre_fenchel,
)
from exceptions.exceptions import (
    ConjugateOverflow, DimensionMismatch, NonpositiveEnergy, UnboundedConjugate,
)
from utils.logger import get_logger
from utils.sampling import SampleSet

logger = get_logger(__name__)

PROBE_TOL = 1e-12


def _everywhere(u: np.ndarray) -> bool:
    return True


@dataclass(frozen=True)
class PerturbedGradientSystem:
    name: str
    dim: int
    energy: Callable[[float, np.ndarray], float]
    power: Callable[[float, np.ndarray], float]
    dissipation: Callable[[np.ndarray, np.ndarray], float]
    dissipation_conj: Callable[[np.ndarray, np.ndarray], float]
    perturbation: Callable[[float, np.ndarray], np.ndarray]
    energy_grad: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    dissipation_grad: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    dom_indicator: Callable[[np.ndarray], bool] = _everywhere
    step_prox: Optional[Callable[[float, float, np.ndarray, np.ndarray], np.ndarray]] = None
    autonomous: bool = False
    state_norm: Optional[Callable[[np.ndarray], float]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def check_dim(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.size != self.dim:
            raise DimensionMismatch(f"system '{self.name}' expects dim {self.dim}, got {u.size}")
        return u

    def E(self, t: float, u: np.ndarray) -> float:
        """D 밖에서 +∞"""
        u = self.check_dim(u)
        if not self.dom_indicator(u):
            return float('inf')
        return float(self.energy(t, u))

    def norm(self, u: np.ndarray) -> float:
        if self.state_norm is not None:
            return float(self.state_norm(u))
        return float(np.linalg.norm(u))

    def dissipation_functional(self, base_u: np.ndarray) -> Functional:
        """Ψ_u 를 convex_core Functional 로 (켤레 Ψ*_u 등록)"""
        grad = None
        if self.dissipation_grad is not None:
            grad = lambda v: self.dissipation_grad(base_u, v)
        return Functional(
            evaluate=lambda v: self.dissipation(base_u, v),
            gradient=grad,
            conjugate=lambda xi: self.dissipation_conj(base_u, xi),
            name=f"Psi[{self.name}]",
        )

    def conjugate_functional(self, base_u: np.ndarray) -> Functional:
        return Functional(
            evaluate=lambda xi: self.dissipation_conj(base_u, xi),
            conjugate=lambda v: self.dissipation(base_u, v),
            name=f"Psi*[{self.name}]",
        )

    def energy_functional(self, t: float) -> Functional:
        grad = None
        if self.energy_grad is not None:
            grad = lambda u: self.energy_grad(t, u)
        return Functional(evaluate=lambda u: self.energy(t, u), gradient=grad,
                          dom_indicator=self.dom_indicator, name=f"E[{self.name}]")


@dataclass(frozen=True)
class AssumptionReport:
    probe_name: str
    samples: int
    worst_violation: float
    inferred_constants: Dict[str, float] = field(default_factory=dict)
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.worst_violation <= 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'probe_name': self.probe_name,
            'samples': self.samples,
            'worst_violation': self.worst_violation,
            'inferred_constants': dict(self.inferred_constants),
            'passed': self.passed,
        }


@dataclass(frozen=True)
class GronwallConstants:
    """이산 Gronwall 포락선 상수: 파워 상수 C 와 섭동 상수 β"""
    C: float = 0.0
    beta: float = 0.0

    def envelope(self, energy0: float, tau: float, steps: int) -> np.ndarray:
        """env_n = env_{n−1}(1 + τA) + 2τβ, A = 2β + C·e^{Cτ}"""
        A = 2.0 * self.beta + self.C * np.exp(self.C * tau)
        env = np.empty(steps + 1)
        env[0] = energy0
        for n in range(1, steps + 1):
            env[n] = env[n - 1] * (1.0 + tau * A) + 2.0 * tau * self.beta
        return env


def probe_power_control(sys: PerturbedGradientSystem, samples: SampleSet) -> AssumptionReport:
    """|∂_t E_t(u)| ≤ C E_t(u) 의 최소 C 와 Gronwall 쌍 검사"""
    energies = np.array([sys.E(t, u) for t, u in samples])
    if np.any(energies <= 0) or not np.all(np.isfinite(energies)):
        raise NonpositiveEnergy(
            f"system '{sys.name}' has nonpositive or infinite sampled energy (min={energies.min():.3e})"
        )
    powers = np.array([sys.power(t, u) for t, u in samples])
    C = float(np.max(np.abs(powers) / energies))

    # 같은 상태에서 시간 쌍 (s,t) 에 대한 부등식 e^{−C|t−s|}E_s ≤ E_t ≤ e^{C|t−s|}E_s
    times = samples.times
    shifted = np.roll(times, 1)
    worst = -np.inf
    for (s, u), t, e_s in zip(samples, shifted, energies):
        e_t = sys.E(t, u)
        factor = np.exp(C * abs(t - s))
        scale = PROBE_TOL * (1.0 + abs(e_s) + abs(e_t))
        worst = max(worst, e_s / factor - e_t - scale, e_t - factor * e_s - scale)

    return AssumptionReport(
        probe_name='power_control',
        samples=len(samples),
        worst_violation=float(worst),
        inferred_constants={'C': C},
    )


def probe_perturbation_control(sys: PerturbedGradientSystem, c: float, samples: SampleSet,
                               overflow: float = DEFAULT_OVERFLOW) -> AssumptionReport:
    """c·Ψ*_u(B(t,u)/c) ≤ β(1+E_t(u)) 의 최소 β"""
    if not 0.0 < c < 1.0:
        raise ValueError(f"c must lie in (0,1), got {c}")
    ratios = []
    for t, u in samples:
        value = sys.dissipation_conj(u, sys.perturbation(t, u) / c)
        if not np.isfinite(value) or value > overflow:
            raise ConjugateOverflow(
                f"system '{sys.name}': Psi*(B/c) = {value:.3e} exceeds overflow at t={t:.3f}"
            )
        ratios.append(c * value / (1.0 + sys.E(t, u)))
    beta = float(max(ratios)) if ratios else 0.0
    return AssumptionReport(
        probe_name='perturbation_control',
        samples=len(samples),
        worst_violation=float(max(r - beta for r in ratios)) if ratios else 0.0,
        inferred_constants={'beta': beta, 'c': c},
    )


def probe_mosco_liminf(sys_seq: Sequence[PerturbedGradientSystem], base_seq: Sequence[np.ndarray],
                       test_velocities: Sequence[np.ndarray],
                       limit_system: PerturbedGradientSystem, base_limit: np.ndarray,
                       recovery: Optional[Callable[[int, np.ndarray], np.ndarray]] = None,
                       tol: float = 1e-8) -> AssumptionReport:
    """Ψ_{u_n}(v_n) → Ψ_u(v) 의 수치 증인 (보고 전용)"""
    recovery = recovery or (lambda n, v: v)
    deviations: List[float] = []
    for n, (system, base) in enumerate(zip(sys_seq, base_seq)):
        worst = 0.0
        for v in test_velocities:
            target = limit_system.dissipation(base_limit, v)
            value = system.dissipation(base, recovery(n, v))
            worst = max(worst, abs(value - target))
        deviations.append(worst)

    final = deviations[-1] if deviations else 0.0
    # 수열 후반부 전체의 최대 편차로 판정
    tail = max(deviations[len(deviations) // 2:]) if deviations else 0.0
    return AssumptionReport(
        probe_name='mosco_liminf',
        samples=len(sys_seq) * len(test_velocities),
        worst_violation=float(tail - tol),
        inferred_constants={'initial_deviation': deviations[0] if deviations else 0.0,
                            'tail_deviation': tail, 'final_deviation': final},
        details={'deviations': deviations},
    )


def probe_superlinearity(sys: PerturbedGradientSystem, samples: SampleSet,
                         scales: Sequence[float] = (1.0, 2.0, 4.0, 8.0),
                         target: str = 'dissipation') -> AssumptionReport:
    """Ψ_u(sv)/(s‖v‖) 가 s ≥ 1 에서 순증가; target='energy' 이면 E(su)/(s‖u‖)."""
    worst = -np.inf
    for t, u in samples:
        direction = u if np.linalg.norm(u) > 0 else np.ones_like(u)
        ratios = []
        for s in scales:
            v = s * direction
            if target == 'energy':
                value = sys.E(t, v)
            else:
                value = sys.dissipation(u, v)
            ratios.append(value / (s * np.linalg.norm(direction)))
        # 증가량이 양수여야 하므로 위반량은 −min(증가량)
        worst = max(worst, -float(np.min(np.diff(ratios))))
    return AssumptionReport(
        probe_name=f'superlinearity_{target}',
        samples=len(samples),
        worst_violation=float(worst),
    )


def probe_normalization(sys: PerturbedGradientSystem, samples: SampleSet,
                        velocities: int = 5) -> AssumptionReport:
    """Ψ_u(0)=Ψ*_u(0)=0, Ψ, Ψ* ≥ 0"""
    worst = -np.inf
    rng = np.random.default_rng(0)
    for t, u in samples:
        zero = np.zeros(sys.dim)
        worst = max(worst, abs(sys.dissipation(u, zero)) - PROBE_TOL,
                    abs(sys.dissipation_conj(u, zero)) - PROBE_TOL)
        for v in rng.normal(size=(velocities, sys.dim)):
            worst = max(worst, -sys.dissipation(u, v), -sys.dissipation_conj(u, v))
    return AssumptionReport(probe_name='normalization', samples=len(samples),
                            worst_violation=float(worst))


def probe_conjugate_consistency(sys: PerturbedGradientSystem, samples: SampleSet,
                                radius: float = 50.0, covectors: int = 3,
                                tol: float = 1e-8) -> AssumptionReport:
    """등록된 Ψ*_u 와 수치 Legendre-Fenchel 변환 비교 (dim ≤ 3)"""
    if sys.dim > 3:
        return AssumptionReport(probe_name='conjugate_consistency', samples=0,
                                worst_violation=-1.0, details={'skipped': 'dim > 3'})
    rng = np.random.default_rng(1)
    box = SearchBox.symmetric(radius, sys.dim)
    worst = -np.inf
    for t, u in samples:
        psi = Functional(evaluate=lambda v, u=u: sys.dissipation(u, v), name='Psi')
        for xi in rng.uniform(-2.0, 2.0, size=(covectors, sys.dim)):
            registered = sys.dissipation_conj(u, xi)
            try:
                numeric = legendre_fenchel(psi, xi, box)
            except UnboundedConjugate:
                numeric = float('inf')
            if np.isinf(registered) and np.isinf(numeric):
                continue
            worst = max(worst, abs(registered - numeric) - tol * (1.0 + abs(registered)))
    return AssumptionReport(probe_name='conjugate_consistency', samples=len(samples),
                            worst_violation=float(worst))


def probe_duality_consequence(sys: PerturbedGradientSystem, base_u: np.ndarray, v: np.ndarray,
                              w1: np.ndarray, w2: np.ndarray, tol: float = 1e-10) -> AssumptionReport:
    """w1,w2 ∈ ∂Ψ_u(v) 이면 Ψ*_u(w1) = Ψ*_u(w2), 샘플 위에서 검사"""
    gap = abs(sys.dissipation_conj(base_u, w1) - sys.dissipation_conj(base_u, w2))
    return AssumptionReport(probe_name='duality_consequence', samples=1,
                            worst_violation=float(gap - tol),
                            inferred_constants={'conjugate_difference': gap})


def run_all_probes(sys: PerturbedGradientSystem, samples: SampleSet, c: float = 0.5) -> List[AssumptionReport]:
    """카탈로그 시스템이 통과해야 하는 기본 프로브 모음"""
    reports = [
        probe_power_control(sys, samples),
        probe_perturbation_control(sys, c, samples),
        probe_normalization(sys, samples),
        probe_superlinearity(sys, samples, target='dissipation'),
    ]
    if sys.dim <= 3 and sys.metadata.get('conjugate_check', True):
        reports.append(probe_conjugate_consistency(sys, SampleSet(samples.times[:5], samples.states[:5])))
    for report in reports:
        level = logger.info if report.passed else logger.warning
        level(f"[{sys.name}] probe {report.probe_name}: worst={report.worst_violation:.3e} "
              f"constants={report.inferred_constants}")
    return reports


def gronwall_constants(sys: PerturbedGradientSystem, samples: SampleSet, c: float = 0.5) -> GronwallConstants:
    C = probe_power_control(sys, samples).inferred_constants['C']
    beta = probe_perturbation_control(sys, c, samples).inferred_constants['beta']
    return GronwallConstants(C=C, beta=beta)
