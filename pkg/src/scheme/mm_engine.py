"""준암시적 minimizing movement 스킴과 에너지-소산 진단.

스텝 범함수 Φ(r,t,u,w;v) = rΨ_u((v−u)/r) + E_{t+r}(v) − ⟨w,v⟩ 를 최소화해 노드를 만들고,
같은 기준점/같은 w 로 r 만 바꿔 다시 풀어 De Giorgi 보간을 얻는다.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from exceptions.exceptions import (
    ConjugateOverflow, EnergyBlowup, InvalidMinimizeSpec, NonpositiveEnergy,
    QuadratureUnderResolved, SumRuleViolated,
)
from models.pgs_model import GronwallConstants, PerturbedGradientSystem, gronwall_constants
from solvers.inner_solver import MinimizeSpec, minimize
from utils.logger import get_logger
from utils.sampling import ball_samples, make_rng

logger = get_logger(__name__)

SUM_RULE_FACTOR = 1e3
BLOWUP_FACTOR = 10.0
NODE_ATOL = 1e-9


@dataclass(frozen=True)
class SolverSettings:
    grad_tol: Optional[float] = None
    max_iters: Optional[int] = None
    method: str = 'lbfgs'
    certificate_tol: float = 1e-8


@dataclass(frozen=True)
class StepProblem:
    system: PerturbedGradientSystem
    r: float
    t: float
    u: np.ndarray
    w: np.ndarray
    horizon: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, 'u', self.system.check_dim(self.u))
        object.__setattr__(self, 'w', self.system.check_dim(self.w))
        if not self.r > 0:
            raise ValueError(f"step size r must be > 0, got {self.r}")
        if self.t < 0:
            raise ValueError(f"base time t must be >= 0, got {self.t}")
        if self.horizon is not None and self.t + self.r > self.horizon * (1 + 1e-12) + 1e-12:
            raise ValueError(f"t + r = {self.t + self.r} exceeds horizon {self.horizon}")
        if not self.system.dom_indicator(self.u):
            raise ValueError("base state lies outside the energy domain")

    def with_step(self, r: float) -> 'StepProblem':
        return StepProblem(self.system, r, self.t, self.u, self.w, self.horizon)

    def velocity(self, v: np.ndarray) -> np.ndarray:
        return (v - self.u) / self.r


@dataclass(frozen=True)
class StepSolution:
    state: np.ndarray
    xi: np.ndarray
    value: float
    iters: int
    fy_gap: float
    residual: float
    tol: float


def step_functional(p: StepProblem, v) -> float:
    """Φ(r,t,u,w;v), D 밖에서 +∞"""
    sys = p.system
    v = sys.check_dim(v)
    if not sys.dom_indicator(v):
        return float('inf')
    return (p.r * sys.dissipation(p.u, p.velocity(v)) + sys.energy(p.t + p.r, v)
            - float(p.w @ v))


def step_lower_bound(p: StepProblem, v) -> float:
    """−rΨ*_u(w) + E_{t+r}(v) − ⟨w,u⟩ ≤ Φ(r,t,u,w;v)"""
    v = p.system.check_dim(v)
    return (-p.r * p.system.dissipation_conj(p.u, p.w) + p.system.E(p.t + p.r, v)
            - float(p.w @ p.u))


def _step_gradient(p: StepProblem, v: np.ndarray) -> np.ndarray:
    sys = p.system
    return sys.dissipation_grad(p.u, p.velocity(v)) + sys.energy_grad(p.t + p.r, v) - p.w


def _fd_energy_grad(sys: PerturbedGradientSystem, t: float, v: np.ndarray, step: float = 1e-6) -> np.ndarray:
    grad = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = step
        grad[i] = (sys.energy(t, v + e) - sys.energy(t, v - e)) / (2.0 * step)
    return grad


def solve_step(p: StepProblem, settings: Optional[SolverSettings] = None,
               start: Optional[np.ndarray] = None) -> StepSolution:
    """스텝 문제를 풀고 쌍대 선택 ξ 와 합 규칙 인증서를 돌려준다.

    매끄러운 Ψ: ξ = w − ∇Ψ_u(v̂). 등록된 proximal 스텝: ξ = ∇E_{t+r}(U).
    """
    settings = settings or SolverSettings()
    sys = p.system
    t_next = p.t + p.r

    if sys.step_prox is not None:
        state = np.asarray(sys.step_prox(p.r, p.t, p.u, p.w), dtype=float)
        xi = np.asarray(sys.energy_grad(t_next, state), dtype=float)
        iters, grad_tol, residual = 0, 0.0, 0.0
    else:
        if sys.dissipation_grad is None:
            raise InvalidMinimizeSpec(
                f"system '{sys.name}' has neither a dissipation gradient nor a registered proximal step"
            )
        start = p.u if start is None else sys.check_dim(start)
        gradient = (lambda v: _step_gradient(p, v)) if sys.energy_grad is not None else None
        if gradient is not None:
            g0 = float(np.linalg.norm(gradient(start)))
            grad_tol = settings.grad_tol if settings.grad_tol is not None else 1e-9 * (1.0 + g0)
        else:
            grad_tol = settings.grad_tol if settings.grad_tol is not None else 1e-6
        result = minimize(MinimizeSpec(
            objective=lambda v: step_functional(p, v), start=start, gradient=gradient,
            grad_tol=grad_tol, f_tol=grad_tol ** 2, max_iters=settings.max_iters,
            method=settings.method,
        ))
        state, iters = result.argmin, result.iters
        xi = p.w - sys.dissipation_grad(p.u, p.velocity(state))
        energy_grad = (sys.energy_grad(t_next, state) if sys.energy_grad is not None
                       else _fd_energy_grad(sys, t_next, state))
        residual = float(np.linalg.norm(xi - energy_grad))

    v_hat = p.velocity(state)
    eta = p.w - xi
    psi, psi_star = sys.dissipation(p.u, v_hat), sys.dissipation_conj(p.u, eta)
    fy_gap = psi + psi_star - float(eta @ v_hat)
    tol = max(grad_tol, settings.certificate_tol * (1.0 + abs(psi) + abs(psi_star)))

    if fy_gap > SUM_RULE_FACTOR * tol or residual > SUM_RULE_FACTOR * tol:
        raise SumRuleViolated(
            f"step at t={p.t:.6g}, r={p.r:.3g}: Fenchel-Young gap {fy_gap:.3e}, "
            f"energy residual {residual:.3e}, tol {tol:.3e}"
        )
    return StepSolution(state=state, xi=xi, value=step_functional(p, state), iters=iters,
                        fy_gap=fy_gap, residual=residual, tol=tol)


@dataclass(frozen=True)
class Trajectory:
    system: PerturbedGradientSystem
    tau: float
    times: np.ndarray
    nodes: np.ndarray                  # (N+1, dim)
    xi: np.ndarray                     # (N, dim), ξ^n 은 xi[n-1]
    w_applied: np.ndarray              # (N, dim)
    energies: np.ndarray               # (N+1,)
    step_iters: np.ndarray             # (N,)
    step_tols: np.ndarray              # (N,)
    settings: SolverSettings = field(default_factory=SolverSettings)
    de_giorgi_subnodes: Dict[int, List[Tuple[float, np.ndarray]]] = field(default_factory=dict)
    xi_tilde: Dict[int, List[np.ndarray]] = field(default_factory=dict)
    gronwall: Optional[GronwallConstants] = None
    envelope: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return len(self.times) - 1

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def node_index(self, s: float) -> Optional[int]:
        k = (s - self.t_start) / self.tau
        n = int(round(k))
        if abs(k - n) < NODE_ATOL and 0 <= n <= self.N:
            return n
        return None

    def interval(self, s: float) -> int:
        """s ∈ (t_{n−1}, t_n] 인 n (1..N)"""
        if s < self.t_start - NODE_ATOL * self.tau or s > self.T + NODE_ATOL * self.tau:
            raise ValueError(f"time {s} outside [{self.t_start}, {self.T}]")
        node = self.node_index(s)
        if node is not None:
            return max(node, 1)
        return min(max(int(math.ceil((s - self.t_start) / self.tau)), 1), self.N)

    def t_bar(self, s: float) -> float:
        node = self.node_index(s)
        return float(self.times[node if node is not None else self.interval(s)])

    def t_under(self, s: float) -> float:
        node = self.node_index(s)
        return float(self.times[node if node is not None else self.interval(s) - 1])

    def piecewise_constant_right(self, s: float) -> np.ndarray:
        """Ū(s) = U^n, s ∈ (t_{n−1}, t_n]"""
        node = self.node_index(s)
        return self.nodes[node if node is not None else self.interval(s)]

    def piecewise_constant_left(self, s: float) -> np.ndarray:
        """U̲(s) = U^{n−1}, s ∈ [t_{n−1}, t_n)"""
        node = self.node_index(s)
        return self.nodes[node if node is not None else self.interval(s) - 1]

    def piecewise_affine(self, s: float) -> np.ndarray:
        node = self.node_index(s)
        if node is not None:
            return self.nodes[node]
        n = self.interval(s)
        theta = (s - self.times[n - 1]) / self.tau
        return self.nodes[n - 1] + theta * (self.nodes[n] - self.nodes[n - 1])

    def affine_derivative(self, s: float) -> np.ndarray:
        n = self.interval(s)
        return (self.nodes[n] - self.nodes[n - 1]) / self.tau

    def cached_subnode(self, s: float) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        n = self.interval(s)
        for (sj, state), xi in zip(self.de_giorgi_subnodes.get(n, ()), self.xi_tilde.get(n, ())):
            if abs(sj - s) <= NODE_ATOL * self.tau:
                return state, xi
        return None

    def to_frame(self, max_components: int = 4) -> pd.DataFrame:
        frame = pd.DataFrame({
            't_n': self.times,
            'energy': self.energies,
            'step_iters': np.concatenate([[0], self.step_iters]),
        })
        if self.nodes.shape[1] <= max_components:
            for i in range(self.nodes.shape[1]):
                frame[f'u_{i}'] = self.nodes[:, i]
        return frame


def _guard_constants(sys: PerturbedGradientSystem, u0: np.ndarray, t_start: float,
                     T: float, seed: Optional[int]) -> Optional[GronwallConstants]:
    samples = ball_samples(u0, radius=1.0, count=64, t_range=(t_start, t_start + T),
                           rng=make_rng(seed))
    try:
        return gronwall_constants(sys, samples)
    except (NonpositiveEnergy, ConjugateOverflow) as e:
        logger.warning(f"[{sys.name}] Gronwall 가드 비활성화: {e}")
        return None


def run_scheme(sys: PerturbedGradientSystem, u0, T: float, N: int,
               settings: Optional[SolverSettings] = None, t_start: float = 0.0,
               substeps: int = 0, guard: bool = True, seed: Optional[int] = None) -> Trajectory:
    """U^0 = u0, U^n ∈ argmin Φ(τ, t_{n−1}, U^{n−1}, B(t_{n−1},U^{n−1}); ·)"""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if not T > 0:
        raise ValueError(f"T must be > 0, got {T}")
    settings = settings or SolverSettings()
    u0 = sys.check_dim(u0).copy()
    e0 = sys.E(t_start, u0)
    if not np.isfinite(e0):
        raise ValueError(f"initial energy is not finite: {e0}")

    tau = T / N
    times = t_start + tau * np.arange(N + 1)
    nodes = np.empty((N + 1, sys.dim))
    nodes[0] = u0
    xis = np.empty((N, sys.dim))
    ws = np.empty((N, sys.dim))
    energies = np.empty(N + 1)
    energies[0] = e0
    iters = np.zeros(N, dtype=int)
    tols = np.zeros(N)

    constants = _guard_constants(sys, u0, t_start, T, seed) if guard else None
    envelope = constants.envelope(e0, tau, N) if constants is not None else None

    logger.debug(f"[{sys.name}] run_scheme 시작: T={T}, N={N}, tau={tau:.4g}")
    for n in range(1, N + 1):
        w = np.asarray(sys.perturbation(times[n - 1], nodes[n - 1]), dtype=float)
        problem = StepProblem(sys, tau, times[n - 1], nodes[n - 1], w)
        sol = solve_step(problem, settings)
        nodes[n], xis[n - 1], ws[n - 1] = sol.state, sol.xi, w
        iters[n - 1], tols[n - 1] = sol.iters, sol.tol
        energies[n] = sys.E(times[n], sol.state)
        if not np.isfinite(energies[n]):
            raise EnergyBlowup(f"[{sys.name}] node {n} left the energy domain")
        if envelope is not None and energies[n] > BLOWUP_FACTOR * envelope[n]:
            raise EnergyBlowup(
                f"[{sys.name}] E(t_{n})={energies[n]:.3e} exceeds {BLOWUP_FACTOR:g} x envelope {envelope[n]:.3e}"
            )
        logger.debug(f"[{sys.name}] step {n}/{N}: E={energies[n]:.6e}, iters={sol.iters}")

    traj = Trajectory(system=sys, tau=tau, times=times, nodes=nodes, xi=xis, w_applied=ws,
                      energies=energies, step_iters=iters, step_tols=tols, settings=settings,
                      gronwall=constants, envelope=envelope)
    if substeps > 0:
        for n in range(1, N + 1):
            points = _midpoints(times[n - 1], tau, substeps)
            solved = [de_giorgi_interpolant(traj, s) for s in points]
            traj.de_giorgi_subnodes[n] = [(s, state) for s, (state, _) in zip(points, solved)]
            traj.xi_tilde[n] = [xi for _, xi in solved]
    return traj


def _midpoints(t0: float, tau: float, substeps: int) -> np.ndarray:
    return t0 + (np.arange(substeps) + 0.5) * tau / substeps


def de_giorgi_interpolant(traj: Trajectory, s: float, substeps: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Ũ(s), ξ̃(s): 기준점 U^{n−1}, 같은 w, r = s − t_{n−1} 로 다시 푼다.

    substeps > 1 이면 r 을 나누어 이전 해에서 warm start 하는 연속법을 쓴다.
    """
    node = traj.node_index(s)
    if node is not None:
        if node == 0:
            raise ValueError("the De Giorgi interpolant is defined on (t_0, T] only")
        return traj.nodes[node].copy(), traj.xi[node - 1].copy()
    cached = traj.cached_subnode(s)
    if cached is not None:
        return cached[0].copy(), cached[1].copy()

    n = traj.interval(s)
    r = s - traj.times[n - 1]
    base = StepProblem(traj.system, r, traj.times[n - 1], traj.nodes[n - 1], traj.w_applied[n - 1])
    start = None
    for k in range(1, max(substeps, 1)):
        start = solve_step(base.with_step(r * k / substeps), traj.settings, start=start).state
    sol = solve_step(base, traj.settings, start=start)
    return sol.state, sol.xi


@dataclass(frozen=True)
class MoreauYosidaScan:
    table: pd.DataFrame
    limit_estimate: float
    limit_target: float
    violations: int

    @property
    def passed(self) -> bool:
        return self.violations == 0


def moreau_yosida_scan(p: StepProblem, r_values: Sequence[float], horizon: Optional[float] = None,
                       constants: Optional[GronwallConstants] = None,
                       settings: Optional[SolverSettings] = None, tol: float = 1e-8) -> MoreauYosidaScan:
    """r ↦ Φ_{r,t}(w;u) 표와 단조성/상한 위반 검사, r→0 외삽."""
    r_values = np.asarray(r_values, dtype=float)
    if r_values.size == 0 or np.any(r_values <= 0) or np.any(np.diff(r_values) <= 0):
        raise ValueError("r_values must be positive and strictly increasing")
    sys = p.system
    horizon = horizon if horizon is not None else p.t + float(r_values[-1])
    if p.t + r_values[-1] > horizon * (1 + 1e-12):
        raise ValueError(f"r values exceed the remaining horizon {horizon - p.t}")

    if sys.autonomous:
        drift = 0.0
    else:
        constants = constants or GronwallConstants()
        c1 = math.exp(constants.C * horizon)
        drift = constants.C * c1 * (sys.E(p.t, p.u) + horizon * sys.dissipation_conj(p.u, p.w))

    rows = []
    for r in r_values:
        sub = p.with_step(float(r))
        sol = solve_step(sub, settings)
        upper = sys.E(p.t + r, p.u) - float(p.w @ p.u)
        rows.append({
            'r': float(r),
            'phi': sol.value,
            'upper_bound': upper,
            'lower_bound': step_lower_bound(sub, sol.state),
            'fy_gap': sol.fy_gap,
        })
    table = pd.DataFrame(rows)

    scale = tol * (1.0 + table['phi'].abs())
    table['upper_violation'] = table['phi'] > table['upper_bound'] + scale
    increase = table['phi'].diff() - table['r'].diff() * drift
    table['monotone_violation'] = (increase > scale).fillna(False)
    violations = int(table['upper_violation'].sum() + table['monotone_violation'].sum())
    if violations:
        logger.warning(f"[{sys.name}] Moreau-Yosida 검사 위반 {violations}건")

    k = min(3, len(table))
    if k >= 2:
        coeffs = np.polyfit(table['r'].values[:k], table['phi'].values[:k], k - 1)
        limit = float(np.polyval(coeffs, 0.0))
    else:
        limit = float(table['phi'].iloc[0])
    return MoreauYosidaScan(table=table, limit_estimate=limit,
                            limit_target=sys.E(p.t, p.u) - float(p.w @ p.u),
                            violations=violations)


@dataclass(frozen=True)
class EdbReport:
    interval: Tuple[float, float]
    dissipation_primal: float
    dissipation_dual: float
    energy_start: float
    energy_end: float
    power_integral: float
    perturbation_work: float
    duee_lhs: float
    duee_rhs: float
    duee_slack: float
    edb_residual: float
    tolerance_budget: float
    quadrature_error: float
    rows: pd.DataFrame = field(repr=False, default_factory=pd.DataFrame)

    def duee_violations(self, factor: float = 1.0) -> int:
        """구간별 slack < −factor·budget 인 행의 수"""
        return int((self.rows['duee_slack'] < -factor * self.rows['tolerance_budget']).sum())


def _dual_and_power(traj: Trajectory, n: int, substeps: int, executor) -> Tuple[float, float]:
    sys = traj.system
    t0, tau = traj.times[n - 1], traj.tau
    u0, w = traj.nodes[n - 1], traj.w_applied[n - 1]
    points = _midpoints(t0, tau, substeps)
    solved = list(executor.map(lambda s: de_giorgi_interpolant(traj, s), points))
    dual = sum(sys.dissipation_conj(u0, w - xi) for _, xi in solved) * tau / substeps
    power = 0.0
    if not sys.autonomous:
        power = sum(sys.power(s, state) for s, (state, _) in zip(points, solved)) * tau / substeps
    return float(dual), float(power)


def edb_interval_residual(traj: Trajectory, n: int) -> float:
    """(t_{n−1}, t_n] 위 EDB 의 (좌변 − 우변), 중점 시간에서 B 와 ∂_tE 를 평가"""
    sys = traj.system
    tau = traj.tau
    u1 = traj.nodes[n]
    v_hat = (u1 - traj.nodes[n - 1]) / tau
    t_mid = traj.times[n - 1] + 0.5 * tau
    b_mid = np.asarray(sys.perturbation(t_mid, u1), dtype=float)
    xi_bar = sys.energy_grad(traj.times[n], u1) if sys.energy_grad is not None else traj.xi[n - 1]
    lhs = (traj.energies[n] + tau * sys.dissipation(u1, v_hat)
           + tau * sys.dissipation_conj(u1, b_mid - xi_bar))
    rhs = traj.energies[n - 1] + tau * sys.power(t_mid, u1) + tau * float(b_mid @ v_hat)
    return float(lhs - rhs)


def edb_residual(traj: Trajectory) -> float:
    """[0,T] 누적 EDB 잔차 |Σ_n (좌변 − 우변)|"""
    return abs(sum(edb_interval_residual(traj, n) for n in range(1, traj.N + 1)))


def edb_report(traj: Trajectory, s: float, t: float, quadrature_substeps: int = 8,
               quadrature_tol: float = 1e-4, workers: int = 1) -> EdbReport:
    """[t̄(s), t̄(t)] 위의 이산 상한 에너지 추정과 연속 EDB 잔차.

    ∫Ψ* 와 ∫∂_rE 는 De Giorgi 보간 위의 복합 중점 공식 (substeps, 2·substeps 비교).
    EDB 잔차는 상태에 Ū, 속도에 Û', ξ 에 ∇E(Ū) (없으면 ξ^n) 를 쓴다.
    """
    if not s < t:
        raise ValueError(f"interval requires s < t, got s={s}, t={t}")
    if quadrature_substeps < 1:
        raise ValueError("quadrature_substeps must be >= 1")
    sys = traj.system
    first = traj.node_index(traj.t_bar(s))
    last = traj.node_index(traj.t_bar(t))
    tau = traj.tau

    rows = []
    cumulative = 0.0
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as executor:
        for n in range(first + 1, last + 1):
            u0, u1 = traj.nodes[n - 1], traj.nodes[n]
            w = traj.w_applied[n - 1]
            v_hat = (u1 - u0) / tau
            e0, e1 = traj.energies[n - 1], traj.energies[n]

            primal = tau * sys.dissipation(u0, v_hat)
            dual_c, power_c = _dual_and_power(traj, n, quadrature_substeps, executor)
            dual, power = _dual_and_power(traj, n, 2 * quadrature_substeps, executor)
            quad_err = abs(dual - dual_c) + abs(power - power_c)
            for label, fine, coarse in (('dual dissipation', dual, dual_c), ('power', power, power_c)):
                if abs(fine - coarse) > 10.0 * quadrature_tol * (1.0 + abs(fine)):
                    raise QuadratureUnderResolved(
                        f"[{sys.name}] interval {n}: {label} integral changes by {abs(fine - coarse):.3e} "
                        f"under substep doubling"
                    )
            work = float(w @ (u1 - u0))
            lhs = e1 + primal + dual
            rhs = e0 + power + work
            budget = traj.step_tols[n - 1] * (1.0 + tau) + quad_err

            signed = edb_interval_residual(traj, n)
            cumulative += signed

            rows.append({
                't_n': traj.times[n],
                'energy': e1,
                'dissipation_primal': primal,
                'dissipation_dual': dual,
                'power_integral': power,
                'perturbation_work': work,
                'duee_lhs': lhs,
                'duee_rhs': rhs,
                'duee_slack': rhs - lhs,
                'tolerance_budget': budget,
                'quadrature_error': quad_err,
                'edb_residual': abs(signed),
                'edb_residual_cumulative': abs(cumulative),
                'step_iters': int(traj.step_iters[n - 1]),
            })

    frame = pd.DataFrame(rows)
    report = EdbReport(
        interval=(float(traj.times[first]), float(traj.times[last])),
        dissipation_primal=float(frame['dissipation_primal'].sum()),
        dissipation_dual=float(frame['dissipation_dual'].sum()),
        energy_start=float(traj.energies[first]),
        energy_end=float(traj.energies[last]),
        power_integral=float(frame['power_integral'].sum()),
        perturbation_work=float(frame['perturbation_work'].sum()),
        duee_lhs=float(traj.energies[last] + frame['dissipation_primal'].sum() + frame['dissipation_dual'].sum()),
        duee_rhs=float(traj.energies[first] + frame['power_integral'].sum() + frame['perturbation_work'].sum()),
        duee_slack=float(frame['duee_slack'].sum()),
        edb_residual=abs(cumulative),
        tolerance_budget=float(frame['tolerance_budget'].sum()),
        quadrature_error=float(frame['quadrature_error'].sum()),
        rows=frame,
    )
    violations = report.duee_violations()
    if violations:
        logger.warning(f"[{sys.name}] DUEE 위반 {violations}건 (구간 {report.interval})")
    return report
