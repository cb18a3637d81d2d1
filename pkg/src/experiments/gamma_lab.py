"""진화적 Γ-수렴 실험: τ-sweep, ε-sweep, 잘 준비된 초기값, liminf 증인."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from exceptions.exceptions import InvalidSweepPlan, ResolutionRuleViolated
from homogenization.homog import EffectiveModel, build_effective_model, build_effective_system, corrected_initial_data
from models.pgs_model import PerturbedGradientSystem
from models.rds_fd import POINTS_PER_PERIOD, Grid, PeriodicCoefficients, assemble_system
from scheme.mm_engine import SolverSettings, Trajectory, edb_report, edb_residual, run_scheme
from utils.logger import get_logger

logger = get_logger(__name__)

EPS_METRICS = ('sup_state', 'energy', 'primal_dissipation', 'dual_dissipation', 'derivative_weak')
TAU_METRICS = ('sup_state', 'edb_residual', 'primal_dissipation', 'dual_dissipation')
WEAK_TEST_MODES = 4
# 이 값 이하의 오차는 이미 수렴한 것으로 본다
ERROR_FLOOR = 1e-10

U0_PROFILES: Dict[str, Tuple[Callable, Callable]] = {
    'sin2': (lambda x: np.sin(np.pi * x[:, 0]) ** 2, lambda x: np.pi * np.sin(2.0 * np.pi * x[:, 0])),
    'cosine': (lambda x: np.cos(np.pi * x[:, 0]), lambda x: -np.pi * np.sin(np.pi * x[:, 0])),
}


@dataclass(frozen=True)
class ResolutionRule:
    points_per_period: int = POINTS_PER_PERIOD

    def grid_for(self, eps: float, dim: int = 1) -> Grid:
        return Grid.resolving(eps, dim=dim, points_per_period=self.points_per_period)

    def check(self, grid: Grid, eps: float) -> None:
        limit = eps / self.points_per_period
        if grid.h > limit * (1 + 1e-12):
            raise ResolutionRuleViolated(
                f"h={grid.h:.4g} violates h <= eps/{self.points_per_period} = {limit:.4g}"
            )


def _strictly_monotone(values: Sequence[float]) -> bool:
    diffs = np.diff(np.asarray(values, dtype=float))
    return bool(np.all(diffs > 0) or np.all(diffs < 0))


@dataclass(frozen=True)
class SweepPlan:
    family: str
    values: Tuple[float, ...]
    T: float
    N: int = 64
    dim: int = 1
    u0: str = 'sin2'
    corrected: bool = False
    metrics: Tuple[str, ...] = ('sup_state', 'energy', 'primal_dissipation', 'derivative_weak')
    gate_metrics: Tuple[str, ...] = ('sup_state',)
    rule: ResolutionRule = field(default_factory=ResolutionRule)
    decrease_factor: float = 0.8
    dissipation_mode: str = 'aver'
    energy_mode: str = 'hom'
    substeps: int = 4
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'values', tuple(float(v) for v in self.values))
        if len(self.values) < 3 or not _strictly_monotone(self.values):
            raise InvalidSweepPlan(f"sweep values must be strictly monotone with >= 3 entries: {self.values}")
        unknown = set(self.metrics) - set(EPS_METRICS)
        if unknown:
            raise InvalidSweepPlan(f"unknown metrics {sorted(unknown)}, known: {EPS_METRICS}")
        if not set(self.gate_metrics) <= set(self.metrics):
            raise InvalidSweepPlan("gate metrics must be a subset of the reported metrics")
        if self.u0 not in U0_PROFILES:
            raise InvalidSweepPlan(f"unknown u0 builder '{self.u0}', known: {sorted(U0_PROFILES)}")
        if not 0.0 < self.decrease_factor <= 1.0:
            raise InvalidSweepPlan(f"decrease_factor must lie in (0,1], got {self.decrease_factor}")
        if self.T <= 0 or self.N < 1:
            raise InvalidSweepPlan("T must be > 0 and N >= 1")


@dataclass(frozen=True)
class ConvergenceTable:
    rows: pd.DataFrame
    parameter: str
    reference: str
    empirical_orders: Dict[str, float]
    verdicts: Dict[str, bool]
    gate_metrics: Tuple[str, ...]
    runs: Tuple = field(default=(), repr=False)

    @property
    def passed(self) -> bool:
        return all(self.verdicts[m] for m in self.gate_metrics)

    def summary_lines(self) -> List[str]:
        lines = []
        for metric, ok in self.verdicts.items():
            order = self.empirical_orders.get(metric, float('nan'))
            gate = '' if metric in self.gate_metrics else ' (report only)'
            lines.append(f"{metric}: {'PASS' if ok else 'FAIL'} order={order:.3f}{gate}")
        return lines


def empirical_order(parameters: Sequence[float], errors: Sequence[float]) -> float:
    """log-log 최소제곱 기울기 (양의 오차만 사용)"""
    p = np.asarray(parameters, dtype=float)
    e = np.asarray(errors, dtype=float)
    mask = e > ERROR_FLOOR
    if mask.sum() < 2:
        return float('nan')
    return float(np.polyfit(np.log(p[mask]), np.log(e[mask]), 1)[0])


def refinement_ratios(errors: Sequence[float]) -> np.ndarray:
    e = np.asarray(errors, dtype=float)
    ratios = np.full(len(e), np.nan)
    with np.errstate(divide='ignore', invalid='ignore'):
        ratios[1:] = e[1:] / e[:-1]
    return ratios


def decreasing(errors: Sequence[float], factor: float) -> bool:
    """각 세분화에서 오차가 factor 배 이하로 줄거나 이미 ERROR_FLOOR 이하"""
    e = np.asarray(errors, dtype=float)
    return bool(all(b <= ERROR_FLOOR or b <= factor * a for a, b in zip(e[:-1], e[1:])))


def _table(parameter: str, values: Sequence[float], metrics: Dict[str, List[float]], reference: str,
           factor: float, gate: Sequence[str], runs=()) -> ConvergenceTable:
    frame = pd.DataFrame({parameter: list(values)})
    orders, verdicts = {}, {}
    for name, errors in metrics.items():
        frame[name] = errors
        frame[f'{name}_ratio'] = refinement_ratios(errors)
        orders[name] = empirical_order(values, errors)
        verdicts[name] = decreasing(errors, factor)
    return ConvergenceTable(rows=frame, parameter=parameter, reference=reference,
                            empirical_orders=orders, verdicts=verdicts, gate_metrics=tuple(gate),
                            runs=tuple(runs))


def primal_dissipation(traj: Trajectory) -> float:
    """Σ_n τ Ψ_{U^{n−1}}((U^n − U^{n−1})/τ)"""
    sys = traj.system
    return float(sum(traj.tau * sys.dissipation(traj.nodes[n - 1], traj.affine_derivative(traj.times[n]))
                     for n in range(1, traj.N + 1)))


# --- τ-sweep ---

def run_tau_sweep(sys: PerturbedGradientSystem, u0, T: float, tau_list: Sequence[float],
                  settings: Optional[SolverSettings] = None, metrics: Sequence[str] = ('sup_state', 'edb_residual'),
                  reference_refinement: int = 8, substeps: int = 4, decrease_factor: float = 0.75,
                  workers: int = 1) -> ConvergenceTable:
    """τ 목록마다 스킴을 풀고 가장 고운 기준 해(τ_min/reference_refinement)와 비교한다."""
    taus = sorted((float(t) for t in tau_list), reverse=True)
    if len(taus) < 3 or not _strictly_monotone(taus):
        raise InvalidSweepPlan(f"tau list must hold >= 3 distinct values: {tau_list}")
    unknown = set(metrics) - set(TAU_METRICS)
    if unknown:
        raise InvalidSweepPlan(f"unknown metrics {sorted(unknown)}, known: {TAU_METRICS}")
    steps = []
    for tau in taus:
        N = int(round(T / tau))
        if abs(N * tau - T) > 1e-9 * T:
            raise InvalidSweepPlan(f"tau={tau} does not divide T={T}")
        steps.append(N)

    N_ref = steps[-1] * reference_refinement
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as executor:
        trajs = list(executor.map(lambda N: run_scheme(sys, u0, T, N, settings), steps + [N_ref]))
    reference = trajs.pop()
    needs_dual = 'dual_dissipation' in metrics
    ref_dual = edb_report(reference, 0.0, T, substeps).dissipation_dual if needs_dual else 0.0
    ref_primal = primal_dissipation(reference)

    values: Dict[str, List[float]] = {m: [] for m in metrics}
    for traj in trajs:
        for name in metrics:
            if name == 'sup_state':
                values[name].append(max(sys.norm(traj.nodes[n] - reference.piecewise_affine(traj.times[n]))
                                        for n in range(traj.N + 1)))
            elif name == 'edb_residual':
                values[name].append(edb_residual(traj))
            elif name == 'primal_dissipation':
                values[name].append(abs(primal_dissipation(traj) - ref_primal))
            else:
                values[name].append(abs(edb_report(traj, 0.0, T, substeps).dissipation_dual - ref_dual))
        logger.info(f"[{sys.name}] tau={traj.tau:.4g}: " +
                    ", ".join(f"{m}={values[m][-1]:.3e}" for m in metrics))

    table = _table('tau', taus, values, f"tau_ref={T / N_ref:.6g}", decrease_factor, metrics,
                   runs=trajs + [reference])
    energy_rise = [float(np.max(np.diff(t.energies), initial=0.0)) for t in trajs]
    table.rows['energy_max_increase'] = energy_rise
    return table


# --- 초기값 ---

def initial_data(coeffs: PeriodicCoefficients, grid: Grid, eps: float, u0: str = 'sin2',
                 corrected: bool = False, resolution: int = POINTS_PER_PERIOD) -> np.ndarray:
    """u0_ε (corrected 이면 1차 corrector 보정), 성분마다 같은 profile"""
    profile, derivative = U0_PROFILES[u0]
    if corrected:
        values = corrected_initial_data(coeffs, grid, eps, profile, derivative, resolution)
    else:
        values = profile(grid.nodes)
    return np.repeat(np.asarray(values, dtype=float)[:, None], coeffs.components, axis=1).ravel()


def well_preparedness(coeffs: PeriodicCoefficients, eps_list: Sequence[float],
                      rule: Optional[ResolutionRule] = None, u0: str = 'sin2', corrected: bool = False,
                      model: Optional[EffectiveModel] = None, dim: int = 1) -> pd.DataFrame:
    """ε 별 |E^ε_0(u0_ε) − E^0_0(u0)| 와 ‖u0_ε − u0‖"""
    rule = rule or ResolutionRule()
    model = model or build_effective_model(coeffs)
    rows = []
    for eps in eps_list:
        grid = rule.grid_for(eps, dim)
        sys_eps = assemble_system(coeffs, eps, grid)
        sys_eff = build_effective_system(coeffs, grid, model=model)
        u_eps = initial_data(coeffs, grid, eps, u0, corrected, rule.points_per_period)
        u_eff = initial_data(coeffs, grid, eps, u0, False)
        rows.append({
            'eps': eps,
            'state_distance': sys_eps.norm(u_eps - u_eff),
            'energy_gap': abs(sys_eps.E(0.0, u_eps) - sys_eff.E(0.0, u_eff)),
        })
    return pd.DataFrame(rows)


# --- ε-sweep ---

@dataclass(frozen=True)
class EpsRun:
    eps: float
    grid: Grid
    trajectory: Trajectory
    effective: Trajectory
    metrics: Dict[str, float]


def _weak_tests(grid: Grid, components: int) -> List[np.ndarray]:
    x = grid.nodes[:, 0]
    return [np.repeat(np.cos(k * np.pi * x)[:, None], components, axis=1).ravel()
            for k in range(WEAK_TEST_MODES)]


def _eps_metrics(plan: SweepPlan, traj: Trajectory, eff: Trajectory, grid: Grid) -> Dict[str, float]:
    sys_eps = traj.system
    weights = np.repeat(sys_eps.metadata['weights'], sys_eps.metadata['components'])
    out = {}
    for name in plan.metrics:
        if name == 'sup_state':
            out[name] = max(sys_eps.norm(a - b) for a, b in zip(traj.nodes, eff.nodes))
        elif name == 'energy':
            out[name] = float(np.max(np.abs(traj.energies - eff.energies)))
        elif name == 'primal_dissipation':
            out[name] = abs(primal_dissipation(traj) - primal_dissipation(eff))
        elif name == 'dual_dissipation':
            dual_eps = edb_report(traj, traj.t_start, traj.T, plan.substeps).dissipation_dual
            dual_eff = edb_report(eff, eff.t_start, eff.T, plan.substeps).dissipation_dual
            out[name] = abs(dual_eps - dual_eff)
        else:
            tests = _weak_tests(grid, sys_eps.metadata['components'])
            out[name] = max(abs(float(np.sum(weights * phi * (a - b))))
                            for a, b in zip(traj.nodes, eff.nodes) for phi in tests)
    return out


def _eps_run(coeffs: PeriodicCoefficients, plan: SweepPlan, eps: float, model: EffectiveModel,
             settings: Optional[SolverSettings]) -> EpsRun:
    grid = plan.rule.grid_for(eps, plan.dim)
    plan.rule.check(grid, eps)
    sys_eps = assemble_system(coeffs, eps, grid)
    sys_eff = build_effective_system(coeffs, grid, plan.dissipation_mode, plan.energy_mode, model)
    u_eps = initial_data(coeffs, grid, eps, plan.u0, plan.corrected, plan.rule.points_per_period)
    u_eff = initial_data(coeffs, grid, eps, plan.u0, False)
    traj = run_scheme(sys_eps, u_eps, plan.T, plan.N, settings)
    eff = run_scheme(sys_eff, u_eff, plan.T, plan.N, settings)
    metrics = _eps_metrics(plan, traj, eff, grid)
    logger.info(f"[{coeffs.name}] eps={eps:g}, cells={grid.cells_per_axis}: " +
                ", ".join(f"{k}={v:.3e}" for k, v in metrics.items()))
    return EpsRun(eps=eps, grid=grid, trajectory=traj, effective=eff, metrics=metrics)


def run_eps_sweep(coeffs: PeriodicCoefficients, plan: SweepPlan, settings: Optional[SolverSettings] = None,
                  model: Optional[EffectiveModel] = None) -> ConvergenceTable:
    """ε 마다 ε-시스템과 유효 시스템을 같은 격자/τ 로 풀어 수렴 지표를 비교한다."""
    eps_list = sorted(plan.values, reverse=True)
    for eps in eps_list:
        if not 0.0 < eps <= 1.0:
            raise InvalidSweepPlan(f"eps must lie in (0,1], got {eps}")
        plan.rule.check(plan.rule.grid_for(eps, plan.dim), eps)
    model = model or build_effective_model(coeffs)

    with ThreadPoolExecutor(max_workers=max(plan.workers, 1)) as executor:
        runs = list(executor.map(lambda e: _eps_run(coeffs, plan, e, model, settings), eps_list))

    metrics = {name: [run.metrics[name] for run in runs] for name in plan.metrics}
    reference = f"effective[{plan.dissipation_mode},{plan.energy_mode}] on matched grid"
    table = _table('eps', eps_list, metrics, reference, plan.decrease_factor, plan.gate_metrics, runs)
    table.rows.insert(1, 'cells', [run.grid.cells_per_axis for run in runs])
    for line in table.summary_lines():
        logger.info(f"[{coeffs.name}] {line}")
    return table


# --- liminf 증인 ---

@dataclass(frozen=True)
class LiminfReport:
    table: pd.DataFrame
    jensen_violations: int
    slack_decreasing: bool
    limits: pd.DataFrame
    limits_settled: bool

    @property
    def passed(self) -> bool:
        return self.jensen_violations == 0 and self.slack_decreasing and self.limits_settled


def coarse_dissipation(traj: Trajectory, coarse_steps: int) -> Tuple[float, int]:
    """τ̄ = T/coarse_steps 에서의 구간별 affine 재보간 소산과 Jensen 위반 수.

    기준점은 각 coarse 구간의 왼쪽 노드로 고정한다.
    """
    if traj.N % coarse_steps:
        raise ValueError(f"coarse steps {coarse_steps} must divide N={traj.N}")
    sys = traj.system
    ratio = traj.N // coarse_steps
    tau_bar = traj.tau * ratio
    total, violations = 0.0, 0
    for j in range(coarse_steps):
        start, stop = j * ratio, (j + 1) * ratio
        base = traj.nodes[start]
        mean_slope = (traj.nodes[stop] - base) / tau_bar
        coarse = sys.dissipation(base, mean_slope)
        fine = np.mean([sys.dissipation(base, (traj.nodes[n + 1] - traj.nodes[n]) / traj.tau)
                        for n in range(start, stop)])
        if coarse > fine + 1e-12 * (1.0 + abs(fine)):
            violations += 1
        total += tau_bar * coarse
    return float(total), violations


def liminf_witness(traj_seq: Sequence[Trajectory], effective: Union[Trajectory, Sequence[Trajectory]],
                   coarse_steps: Sequence[int] = (4, 8), tol: float = 1e-10) -> LiminfReport:
    """∫Ψ⁰(u₀') ≤ ∫Ψ^{ε_k}(u'_{ε_k}) + slack_k 를 coarse 재보간으로 확인 (보고 전용)."""
    effective_seq = list(effective) if isinstance(effective, (list, tuple)) else [effective] * len(traj_seq)
    if len(effective_seq) != len(traj_seq):
        raise ValueError("one effective trajectory per eps trajectory is required")
    if any(abs(t.T - e.T) > 1e-12 for t, e in zip(traj_seq, effective_seq)):
        raise ValueError("trajectories must share the horizon")

    rows, jensen = [], 0
    for M in coarse_steps:
        for k, (traj, eff) in enumerate(zip(traj_seq, effective_seq)):
            L_eps, v_eps = coarse_dissipation(traj, M)
            L_0, v_0 = coarse_dissipation(eff, M)
            jensen += v_eps + v_0
            rows.append({'coarse_steps': M, 'tau_bar': traj.T / M, 'k': k,
                         'L_eps': L_eps, 'L_0': L_0, 'slack': L_0 - L_eps})
    table = pd.DataFrame(rows)

    decreasing_ok = True
    limit_rows = []
    for M, group in table.groupby('coarse_steps', sort=True):
        slack = group['slack'].abs().values
        if not all(b <= a + tol for a, b in zip(slack[:-1], slack[1:])):
            decreasing_ok = False
        # 가장 작은 ε 의 slack 을 k 방향 극한의 추정값으로 쓴다
        limit_rows.append({'coarse_steps': M, 'tau_bar': group['tau_bar'].iloc[0],
                           'limit_slack': float(group['slack'].iloc[-1])})
    limits = pd.DataFrame(limit_rows)

    # τ̄ → 0 방향: 극한값의 연속 차이가 줄어들어야 한다
    changes = np.abs(np.diff(limits['limit_slack'].values))
    limits['change'] = np.concatenate([[np.nan], changes])
    settled = all(b <= a + tol for a, b in zip(changes[:-1], changes[1:]))
    if jensen:
        logger.warning(f"Jensen 부등식 위반 {jensen}건")
    if not settled:
        logger.warning(f"τ̄ 방향 liminf 극한이 수렴하지 않음: 변화 {changes.tolist()}")
    return LiminfReport(table=table, jensen_violations=jensen, slack_decreasing=decreasing_ok,
                        limits=limits, limits_settled=settled)
