import argparse
import os
import sys
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config.config import COMMANDS, Config, RunConfig, parse_config
from exceptions.exceptions import ConfigError, PGSError
from experiments.gamma_lab import SweepPlan, liminf_witness, run_eps_sweep, run_tau_sweep, well_preparedness
from formatters.result_formatter import ResultWriter
from homogenization.homog import (
    build_effective_model, closed_form_cell_value, mean_tensor_error, mean_tensors, solve_cell_problem,
    tabulate_fhom,
)
from models.catalog import SYSTEM_CATALOG, build_system, catalog_names
from models.pgs_model import PerturbedGradientSystem, gronwall_constants, run_all_probes
from models.rds_fd import INSTANCES, DiscreteField
from scheme.mm_engine import SolverSettings, StepProblem, edb_report, moreau_yosida_scan, run_scheme
from utils.logger import get_logger, setup_logger
from utils.sampling import ball_samples, make_rng

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_ERROR = 2

# 엄격 단조성/상한 검사 뒤 r→0 외삽 값의 허용 오차
MOREAU_LIMIT_TOL = 1e-6
DUEE_FACTOR = 10.0
SNAPSHOTS = 8


class ExperimentRunner:
    """설정 하나를 받아 해당 명령을 실행하고 결과 파일과 PASS/FAIL 을 만든다."""

    def __init__(self, cfg: RunConfig, config: Optional[Config] = None):
        self.cfg = cfg
        self.config = config or Config()
        self.logger = get_logger(__name__)
        self.writer = ResultWriter(self.config, cfg.output_dir)
        self.settings = SolverSettings(grad_tol=cfg.solver_grad_tol, max_iters=cfg.solver_max_iters,
                                       method=cfg.solver_method)
        self.commands: Dict[str, Callable[[], bool]] = {
            'solve': self.solve,
            'edb': self.edb,
            'moreau': self.moreau,
            'cell': self.cell,
            'means': self.means,
            'tau-sweep': self.tau_sweep,
            'eps-sweep': self.eps_sweep,
            'probes': self.probes,
        }
        self.probe_constants: Dict[str, float] = {}

    # --- 공통 ---

    def build(self, name: Optional[str] = None) -> PerturbedGradientSystem:
        name = name or self.cfg.system
        params = dict(self.cfg.system_params)
        if SYSTEM_CATALOG[name].pde:
            params.setdefault('eps', self.cfg.pde_eps)
            params.setdefault('cells', self.cfg.pde_cells)
            params.setdefault('dim', self.cfg.pde_dim)
        return build_system(name, params)

    def initial_state(self, system: PerturbedGradientSystem) -> np.ndarray:
        if self.cfg.u0 is not None:
            return system.check_dim(self.cfg.u0)
        return np.asarray(system.metadata['u0'], dtype=float)

    def _record_guard(self, traj) -> None:
        if traj.gronwall is not None:
            self.probe_constants = {'C': traj.gronwall.C, 'beta': traj.gronwall.beta}

    def _print_summary(self, title: str, lines: Sequence[str], passed: bool) -> None:
        print(self.writer.format_summary(title, lines, passed))

    # --- 명령 ---

    def solve(self) -> bool:
        system = self.build()
        traj = run_scheme(system, self.initial_state(system), self.cfg.T, self.cfg.N, self.settings,
                          t_start=self.cfg.t_start, seed=self.cfg.seed)
        self._record_guard(traj)
        self.writer.write_csv('trajectory.csv', traj.to_frame())

        grid = system.metadata.get('grid')
        if grid is not None:
            stride = max(traj.N // SNAPSHOTS, 1)
            frames = [DiscreteField.from_flat(traj.nodes[n], grid, system.metadata['components']).to_frame(traj.times[n])
                      for n in range(0, traj.N + 1, stride)]
            self.writer.write_csv('fields.csv', pd.concat(frames, ignore_index=True))

        energy_increase = float(np.max(np.diff(traj.energies), initial=0.0))
        self._print_summary(f"solve [{system.name}]", [
            f"T={self.cfg.T:g}, N={self.cfg.N}, tau={traj.tau:.4g}",
            f"E(0)={traj.energies[0]:.6e}, E(T)={traj.energies[-1]:.6e}",
            f"최대 에너지 증가: {energy_increase:.3e}",
            f"내부 반복 합계: {int(traj.step_iters.sum())}",
        ], True)
        return True

    def edb(self) -> bool:
        system = self.build()
        traj = run_scheme(system, self.initial_state(system), self.cfg.T, self.cfg.N, self.settings,
                          t_start=self.cfg.t_start, seed=self.cfg.seed)
        self._record_guard(traj)
        report = edb_report(traj, traj.t_start, traj.T, self.cfg.edb_substeps, self.cfg.edb_quadrature_tol,
                            workers=self.cfg.sweep_workers)
        leading = ['t_n', 'energy', 'duee_lhs', 'duee_rhs', 'duee_slack', 'edb_residual_cumulative', 'step_iters']
        rows = report.rows[leading + [c for c in report.rows.columns if c not in leading]]
        self.writer.write_csv('edb.csv', rows)

        violations = report.duee_violations(DUEE_FACTOR)
        self.writer.write_json('edb.json', {
            'interval': list(report.interval),
            'dissipation_primal': report.dissipation_primal,
            'dissipation_dual': report.dissipation_dual,
            'energy_start': report.energy_start,
            'energy_end': report.energy_end,
            'power_integral': report.power_integral,
            'perturbation_work': report.perturbation_work,
            'duee_lhs': report.duee_lhs,
            'duee_rhs': report.duee_rhs,
            'duee_slack': report.duee_slack,
            'edb_residual': report.edb_residual,
            'tolerance_budget': report.tolerance_budget,
            'quadrature_error': report.quadrature_error,
            'duee_violations': violations,
        })
        passed = violations == 0
        self._print_summary(f"edb [{system.name}]", [
            f"DUEE slack 합계: {report.duee_slack:.3e} (budget {report.tolerance_budget:.3e})",
            f"DUEE 위반 구간: {violations}",
            f"EDB 누적 잔차: {report.edb_residual:.3e}",
        ], passed)
        return passed

    def moreau(self) -> bool:
        system = self.build()
        u0 = self.initial_state(system)
        t = self.cfg.t_start
        w = np.asarray(system.perturbation(t, u0), dtype=float)
        horizon = t + self.cfg.T
        samples = ball_samples(u0, radius=1.0, count=64, t_range=(t, horizon), rng=make_rng(self.cfg.seed))
        constants = gronwall_constants(system, samples)
        self.probe_constants = {'C': constants.C, 'beta': constants.beta}

        problem = StepProblem(system, self.cfg.moreau_r[0], t, u0, w, horizon)
        scan = moreau_yosida_scan(problem, self.cfg.moreau_r, horizon, constants, self.settings)
        self.writer.write_csv('moreau.csv', scan.table)
        gap = abs(scan.limit_estimate - scan.limit_target)
        passed = scan.passed and gap <= MOREAU_LIMIT_TOL * (1.0 + abs(scan.limit_target))
        self.writer.write_json('moreau.json', {
            'limit_estimate': scan.limit_estimate,
            'limit_target': scan.limit_target,
            'limit_gap': gap,
            'violations': scan.violations,
        })
        self._print_summary(f"moreau [{system.name}]", [
            f"r→0 외삽: {scan.limit_estimate:.9g} (목표 {scan.limit_target:.9g}, 차이 {gap:.3e})",
            f"단조성/상한 위반: {scan.violations}",
        ], passed)
        return passed

    def cell(self) -> bool:
        coeffs = INSTANCES[self.cfg.pde_instance](dim=self.cfg.pde_dim)
        u = np.full(coeffs.components, self.cfg.homog_u)
        U = np.zeros((coeffs.components, coeffs.dim))
        U[:, 0] = self.cfg.homog_U
        problem = solve_cell_problem(coeffs, u, U, self.cfg.homog_resolution,
                                     self.cfg.solver_grad_tol, self.cfg.solver_max_iters)
        payload = {
            'instance': coeffs.name,
            'u': self.cfg.homog_u,
            'U': self.cfg.homog_U,
            'value': problem.value,
            'kkt_residual': problem.kkt_residual,
            'resolution': problem.resolution,
            'iters': problem.iters,
        }
        lines = [f"F_hom(u={self.cfg.homog_u:g}, U={self.cfg.homog_U:g}) = {problem.value:.9g}",
                 f"KKT 잔차: {problem.kkt_residual:.3e}"]
        passed = True
        if coeffs.dim == 1 and coeffs.components == 1 and coeffs.quadratic_in_gradient:
            exact = closed_form_cell_value(coeffs, u, self.cfg.homog_U)
            deviation = abs(problem.value - exact)
            # P1 corrector 의 이산화 오차는 O(h²)
            passed = deviation <= 10.0 / self.cfg.homog_resolution ** 2 * (1.0 + abs(exact))
            payload.update({'closed_form': exact, 'deviation': deviation})
            lines.append(f"닫힌 형식: {exact:.9g}, 차이 {deviation:.3e}")
        self.writer.write_json('cell.json', payload)

        if coeffs.dim == 1:
            y = np.arange(problem.resolution) / problem.resolution
            self.writer.write_csv('corrector.csv', pd.DataFrame({'y': y, 'chi': problem.corrector[:, 0]}))
        if self.cfg.homog_table:
            table = tabulate_fhom(coeffs, np.linspace(-2.0, 2.0, 9), np.linspace(-2.0, 2.0, 9),
                                  self.cfg.homog_resolution, workers=self.cfg.sweep_workers)
            self.writer.write_csv('fhom_table.csv', table.to_frame())
            lines.append(f"F_hom 표 오차 추정: {table.error:.3e}")
        self._print_summary(f"cell [{coeffs.name}]", lines, passed)
        return passed

    def means(self) -> bool:
        coeffs = INSTANCES[self.cfg.pde_instance](dim=self.cfg.pde_dim)
        u = np.full(coeffs.components, self.cfg.homog_u)
        A_aver, A_harm = mean_tensors(coeffs, u, self.cfg.homog_quad_points)
        error = mean_tensor_error(coeffs, u, self.cfg.homog_quad_points)
        # 행렬 조화-산술 평균 부등식 A_harm ⪯ A_aver
        gap = float(np.min(np.linalg.eigvalsh(0.5 * ((A_aver - A_harm) + (A_aver - A_harm).T))))
        passed = gap >= -1e-12
        payload = {
            'instance': coeffs.name,
            'u': self.cfg.homog_u,
            'quad_points': self.cfg.homog_quad_points,
            'quadrature_error': error,
            'A_aver': float(A_aver[0, 0]) if A_aver.size == 1 else A_aver.tolist(),
            'A_harm': float(A_harm[0, 0]) if A_harm.size == 1 else A_harm.tolist(),
            'min_eig_aver_minus_harm': gap,
        }
        self.writer.write_json('means.json', payload)
        self._print_summary(f"means [{coeffs.name}]", [
            f"A_aver = {payload['A_aver']}",
            f"A_harm = {payload['A_harm']}",
            f"구적 오차 추정: {error:.3e}",
        ], passed)
        return passed

    def tau_sweep(self) -> bool:
        system = self.build()
        table = run_tau_sweep(system, self.initial_state(system), self.cfg.T, self.cfg.tau_list, self.settings,
                              substeps=self.cfg.edb_substeps, decrease_factor=self.cfg.sweep_decrease_factor,
                              workers=self.cfg.sweep_workers)
        self.writer.write_csv('tau_sweep.csv', table.rows)
        self.writer.write_json('tau_sweep.json', {
            'reference': table.reference,
            'empirical_orders': table.empirical_orders,
            'verdicts': table.verdicts,
            'gate_metrics': list(table.gate_metrics),
        })
        self._print_summary(f"tau-sweep [{system.name}]", table.summary_lines(), table.passed)
        return table.passed

    def eps_sweep(self) -> bool:
        coeffs = INSTANCES[self.cfg.pde_instance](dim=self.cfg.pde_dim)
        plan = SweepPlan(
            family=coeffs.name, values=self.cfg.eps_list, T=self.cfg.T, N=self.cfg.N, dim=self.cfg.pde_dim,
            u0=self.cfg.sweep_u0, corrected=self.cfg.sweep_corrected,
            decrease_factor=self.cfg.sweep_decrease_factor, dissipation_mode=self.cfg.sweep_dissipation_mode,
            energy_mode=self.cfg.sweep_energy_mode, substeps=self.cfg.edb_substeps, workers=self.cfg.sweep_workers,
        )
        model = build_effective_model(coeffs, self.cfg.homog_quad_points, self.cfg.homog_resolution,
                                      workers=self.cfg.sweep_workers)
        table = run_eps_sweep(coeffs, plan, self.settings, model)
        self.writer.write_csv('eps_sweep.csv', table.rows)

        prepared = well_preparedness(coeffs, plan.values, plan.rule, plan.u0, plan.corrected, model, plan.dim)
        self.writer.write_csv('well_prepared.csv', prepared)

        coarse = [M for M in (2, 4, 8) if self.cfg.N % M == 0] or [1]
        liminf = liminf_witness([run.trajectory for run in table.runs], [run.effective for run in table.runs],
                                coarse_steps=coarse)
        self.writer.write_csv('liminf.csv', liminf.table)
        self.writer.write_csv('liminf_limits.csv', liminf.limits)
        self.writer.write_json('eps_sweep.json', {
            'reference': table.reference,
            'empirical_orders': table.empirical_orders,
            'verdicts': table.verdicts,
            'gate_metrics': list(table.gate_metrics),
            'jensen_violations': liminf.jensen_violations,
            'liminf_slack_decreasing': liminf.slack_decreasing,
            'liminf_limits_settled': liminf.limits_settled,
        })
        passed = table.passed and liminf.jensen_violations == 0
        lines = table.summary_lines() + [
            f"Jensen 위반: {liminf.jensen_violations}",
            f"liminf slack 감소: {'예' if liminf.slack_decreasing else '아니오'} (보고 전용)",
            f"τ̄ 방향 극한 수렴: {'예' if liminf.limits_settled else '아니오'} (보고 전용)",
        ]
        self._print_summary(f"eps-sweep [{coeffs.name}, {plan.dissipation_mode}/{plan.energy_mode}]", lines, passed)
        return passed

    def probes(self) -> bool:
        names = catalog_names() if self.cfg.system == 'all' else [self.cfg.system]
        results: List[dict] = []
        lines = []
        passed = True
        for name in names:
            system = self.build(name)
            u0 = np.asarray(system.metadata['u0'], dtype=float)
            samples = ball_samples(u0, radius=1.0, count=self.cfg.probe_samples,
                                   t_range=(self.cfg.t_start, self.cfg.t_start + self.cfg.T),
                                   rng=make_rng(self.cfg.seed))
            for report in run_all_probes(system, samples):
                results.append({'system': name, **report.to_dict()})
                passed = passed and report.passed
                if report.probe_name == 'power_control':
                    self.probe_constants[f'{name}.C'] = report.inferred_constants['C']
                if report.probe_name == 'perturbation_control':
                    self.probe_constants[f'{name}.beta'] = report.inferred_constants['beta']
            failed = [r['probe_name'] for r in results if r['system'] == name and not r['passed']]
            lines.append(f"{name}: {'PASS' if not failed else 'FAIL ' + ', '.join(failed)}")
        self.writer.write_json('probes.json', {'reports': results})
        self._print_summary("probes", lines, passed)
        return passed

    def run(self) -> int:
        self.logger.info(f"실행 시작: command={self.cfg.command}, system={self.cfg.system}, "
                         f"output={self.cfg.output_dir}")
        self.writer.write_config(self.cfg)
        passed = self.commands[self.cfg.command]()
        self.writer.write_manifest(self.cfg, passed, self.probe_constants)
        self.logger.info(f"실행 완료: {'PASS' if passed else 'FAIL'}")
        return EXIT_PASS if passed else EXIT_FAIL


def execute(cfg: RunConfig, config: Optional[Config] = None) -> int:
    """종료 코드: 0 PASS, 1 FAIL, 2 설정/수치 오류"""
    logger = get_logger(__name__)
    try:
        return ExperimentRunner(cfg, config).run()
    except PGSError as e:
        logger.error(f"실행 중 오류 발생: {str(e)}", exc_info=True)
        print(f"오류 발생: {str(e)}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:
        logger.error(f"예상치 못한 오류 발생: {str(e)}", exc_info=True)
        print(f"예상치 못한 오류: {str(e)}", file=sys.stderr)
        return EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='pgslab', description="perturbed gradient system experiments")
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', help="dotenv 형식 설정 파일")
    parser.add_argument('--system')
    parser.add_argument('--T')
    parser.add_argument('--N')
    parser.add_argument('--substeps', help="edb.substeps")
    parser.add_argument('--tol', help="solver.grad_tol")
    parser.add_argument('--seed')
    parser.add_argument('--output')
    parser.add_argument('--eps', help="쉼표로 구분한 ε 목록")
    parser.add_argument('--tau', help="쉼표로 구분한 τ 목록")
    parser.add_argument('--cells', help="pde.cells")
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE')
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, str]:
    overrides = {
        'command': args.command,
        'system': args.system,
        'T': args.T,
        'N': args.N,
        'edb.substeps': args.substeps,
        'solver.grad_tol': args.tol,
        'seed': args.seed,
        'output': args.output,
        'eps': args.eps,
        'tau': args.tau,
        'pde.cells': args.cells,
    }
    for item in args.set:
        if '=' not in item:
            raise ConfigError('set', f"expected KEY=VALUE, got '{item}'")
        key, value = item.split('=', 1)
        overrides[key.strip()] = value.strip()
    return {k: v for k, v in overrides.items() if v is not None}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    config = Config()
    try:
        cfg = parse_config(args.config, overrides_from_args(args), config)
    except ConfigError as e:
        setup_logger('root', level=config.LOG_LEVEL)
        get_logger(__name__).error(f"설정 오류: {str(e)}")
        print(f"설정 오류: {str(e)}", file=sys.stderr)
        return EXIT_ERROR

    # 루트 로거 설정
    setup_logger('root', log_file=os.path.join(cfg.output_dir, 'pgslab.log'), level=cfg.log_level)
    return execute(cfg, config)


if __name__ == "__main__":
    sys.exit(main())
