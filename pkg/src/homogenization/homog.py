"""주기 균질화: 산술/조화 평균 텐서, 셀 문제, 유효 시스템 조립.

유효 시스템의 소산은 산술 평균 A_aver, 에너지는 셀 문제로 얻은 F_hom, 섭동은
셀 평균 b_aver 를 쓴다. 조화 평균 소산과 산술 평균 에너지는 음성 대조용 진단 모드다.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.interpolate import RectBivariateSpline

from exceptions.exceptions import SingularInverse, TabulationGapTooCoarse
from models.pgs_model import PerturbedGradientSystem
from models.rds_fd import (
    Grid, PeriodicCoefficients, assemble_system, periodic_mesh, quadratic_coefficients,
)
from solvers.inner_solver import MinimizeSpec, minimize
from utils.logger import get_logger

logger = get_logger(__name__)

DISSIPATION_MODES = ('aver', 'harm')
ENERGY_MODES = ('hom', 'aver')
SINGULAR_COND = 1e12


def cell_points(dim: int, quad_points: int) -> np.ndarray:
    """단위 셀의 중점 텐서 격자 (Q^d, d)"""
    axis = (np.arange(quad_points) + 0.5) / quad_points
    mesh = np.meshgrid(*([axis] * dim), indexing='ij')
    return np.stack([m.ravel() for m in mesh], axis=1)


def _checked_inverse(A: np.ndarray) -> np.ndarray:
    cond = np.linalg.cond(A)
    if not np.all(np.isfinite(cond)) or np.any(cond > SINGULAR_COND):
        raise SingularInverse(f"cell coefficient is numerically singular (cond={np.max(cond):.3e})")
    return np.linalg.inv(A)


def mean_tensors(coeffs: PeriodicCoefficients, u, quad_points: int = 64) -> Tuple[np.ndarray, np.ndarray]:
    """(A_aver(u), A_harm(u)), A_harm(u)^{-1} = ∫𝔸(y,u)^{-1} dy"""
    if quad_points < 2:
        raise ValueError(f"quad_points must be >= 2, got {quad_points}")
    y = cell_points(coeffs.dim, quad_points)
    uu = np.tile(np.atleast_1d(np.asarray(u, dtype=float)), (len(y), 1))
    A = coeffs.A_cell(y, uu)
    A_aver = A.mean(axis=0)
    A_harm = _checked_inverse(_checked_inverse(A).mean(axis=0)[None])[0]
    return A_aver, A_harm


def mean_tensor_error(coeffs: PeriodicCoefficients, u, quad_points: int = 64) -> float:
    """quad_points 와 2·quad_points 결과의 최대 차이"""
    coarse = mean_tensors(coeffs, u, quad_points)
    fine = mean_tensors(coeffs, u, 2 * quad_points)
    return float(max(np.max(np.abs(c - f)) for c, f in zip(coarse, fine)))


def node_means(coeffs: PeriodicCoefficients, u: np.ndarray, quad_points: int) -> Tuple[np.ndarray, np.ndarray]:
    """노드별 상태 u (K, I) 에 대한 (A_aver, A_harm), 각각 (K, I, I)"""
    y = cell_points(coeffs.dim, quad_points)
    K, Q = len(u), len(y)
    yy = np.tile(y, (K, 1))
    uu = np.repeat(u, Q, axis=0)
    A = coeffs.A_cell(yy, uu).reshape(K, Q, u.shape[1], u.shape[1])
    A_aver = A.mean(axis=1)
    inv_mean = _checked_inverse(A.reshape(K * Q, u.shape[1], u.shape[1])).reshape(A.shape).mean(axis=1)
    return A_aver, _checked_inverse(inv_mean)


def averaged_perturbation(coeffs: PeriodicCoefficients, t: float, u: np.ndarray, quad_points: int) -> np.ndarray:
    """b_aver(t,u) = ∫𝔹(y,t,u) dy, u (K, I) → (K, I)"""
    y = cell_points(coeffs.dim, quad_points)
    K, Q = len(u), len(y)
    values = coeffs.b_cell(np.tile(y, (K, 1)), t, np.repeat(u, Q, axis=0))
    return values.reshape(K, Q, -1).mean(axis=1)


@dataclass(frozen=True)
class CellProblem:
    macro_state: Tuple[np.ndarray, np.ndarray]
    corrector: np.ndarray          # (n^d, I), 평균 0
    value: float
    kkt_residual: float
    resolution: int
    iters: int = 0

    def corrector_function(self) -> Callable[[np.ndarray], np.ndarray]:
        """1D 주기 보간 χ(y) (첫 성분)"""
        n = self.resolution
        nodes = np.arange(n) / n
        values = self.corrector[:, 0]
        return lambda y: np.interp(np.mod(y, 1.0), nodes, values, period=1.0)


def solve_cell_problem(coeffs: PeriodicCoefficients, u, U, resolution: int = 64,
                       grad_tol: Optional[float] = None, max_iters: Optional[int] = None) -> CellProblem:
    """F_hom(u,U) = min_φ ∫𝔽(y,u,U+∇φ) dy, 평균 0 주기 corrector 위에서."""
    if resolution < 8:
        raise ValueError(f"cell resolution must be >= 8, got {resolution}")
    I, d = coeffs.components, coeffs.dim
    u = np.atleast_1d(np.asarray(u, dtype=float))
    U = np.asarray(U, dtype=float).reshape(I, d)
    mesh = periodic_mesh(d, resolution)
    K, S = mesh.n_nodes, len(mesh.weights)
    y = mesh.centroids
    uu = np.tile(u, (S, 1))

    def objective(phi):
        grad = U[None] + mesh.gradients(phi.reshape(K, I))
        return float(mesh.weights @ coeffs.F_cell(y, uu, grad))

    def gradient(phi):
        grad = U[None] + mesh.gradients(phi.reshape(K, I))
        d_grad = mesh.weights[:, None, None] * coeffs.F_U(y, uu, grad)
        g = mesh.scatter(np.zeros((S, I)), d_grad, I)
        # 상수 이동 null space 제거
        return (g - g.mean(axis=0)).ravel()

    result = minimize(MinimizeSpec(objective=objective, start=np.zeros(K * I), gradient=gradient,
                                   grad_tol=grad_tol, max_iters=max_iters))
    result.raise_if_failed()
    phi = result.argmin.reshape(K, I)
    phi = phi - phi.mean(axis=0)
    return CellProblem(macro_state=(u, U), corrector=phi, value=objective(phi.ravel()),
                       kkt_residual=result.grad_norm, resolution=resolution, iters=result.iters)


def closed_form_cell_value(coeffs: PeriodicCoefficients, u, U: float, quad_points: int = 256) -> float:
    """1D 스칼라 2차 에너지의 닫힌 형식: ½κ_harm U² + ∫g(y,u)dy"""
    if coeffs.dim != 1 or coeffs.components != 1 or not coeffs.quadratic_in_gradient:
        raise ValueError("closed-form cell value needs a 1D scalar energy quadratic in the gradient")
    y = cell_points(1, quad_points)
    kappa_h = 1.0 / np.mean(1.0 / coeffs.conductivity(y))
    uu = np.tile(np.atleast_1d(np.asarray(u, dtype=float)), (len(y), 1))
    return float(0.5 * kappa_h * U ** 2 + np.mean(coeffs.potential(y, uu)))


def conductivity_only(coeffs: PeriodicCoefficients) -> PeriodicCoefficients:
    """𝔽 의 기울기 부분 ½κ(y)|U|² 만 남긴 계수"""
    zero = lambda y, u: np.zeros(len(u))
    return quadratic_coefficients(
        name=f"{coeffs.name}_conductivity", conductivity=coeffs.conductivity,
        potential=zero, potential_grad=lambda y, u: np.zeros_like(u),
        A_cell=coeffs.A_cell, b_cell=coeffs.b_cell, growth=coeffs.growth,
        dim=coeffs.dim, components=1,
    )


def conductivity_drift(coeffs: PeriodicCoefficients, kappa: float, resolution: int = 64) -> float:
    """1D 조화 평균 κ 와 단위 기울기 셀 문제 최소값 2·F_hom 의 차이"""
    cell = solve_cell_problem(conductivity_only(coeffs), [0.0], [[1.0]], max(resolution, 8))
    drift = abs(2.0 * cell.value - kappa)
    logger.debug(f"[{coeffs.name}] 조화 평균 {kappa:.10f}, 셀 문제 {2.0 * cell.value:.10f} (차이 {drift:.2e})")
    if drift > 10.0 / max(resolution, 8) ** 2 * (1.0 + kappa):
        logger.warning(f"[{coeffs.name}] 조화 평균과 셀 문제 해가 어긋남: 차이 {drift:.3e}")
    return drift


def homogenized_conductivity(coeffs: PeriodicCoefficients, resolution: int = 64) -> np.ndarray:
    """방향별 셀 문제로 얻은 A_hom (d×d); 1D 는 조화 평균 닫힌 형식"""
    d = coeffs.dim
    if coeffs.F_y_independent:
        return float(coeffs.conductivity(np.zeros((1, d)))[0]) * np.eye(d)
    if d == 1:
        y = cell_points(1, max(resolution, 64))
        kappa = 1.0 / np.mean(1.0 / coeffs.conductivity(y))
        conductivity_drift(coeffs, kappa, resolution)
        return np.array([[kappa]])
    base = conductivity_only(coeffs)
    A = np.zeros((d, d))
    for k in range(d):
        A[k, k] = 2.0 * solve_cell_problem(base, [0.0], np.eye(d)[k][None], resolution).value
    for k in range(d):
        for l in range(k + 1, d):
            mixed = 2.0 * solve_cell_problem(base, [0.0], (np.eye(d)[k] + np.eye(d)[l])[None], resolution).value
            A[k, l] = A[l, k] = 0.5 * (mixed - A[k, k] - A[l, l])
    return A


@dataclass(frozen=True)
class FhomTable:
    u_grid: np.ndarray
    U_grid: np.ndarray
    values: np.ndarray
    error: float
    spline: RectBivariateSpline = field(repr=False)

    def __call__(self, u, U):
        return self.spline.ev(u, U)

    def du(self, u, U):
        return self.spline.ev(u, U, dx=1)

    def dU(self, u, U):
        return self.spline.ev(u, U, dy=1)

    def to_frame(self) -> pd.DataFrame:
        uu, UU = np.meshgrid(self.u_grid, self.U_grid, indexing='ij')
        return pd.DataFrame({'u': uu.ravel(), 'U': UU.ravel(), 'value': self.values.ravel()})


def tabulate_fhom(coeffs: PeriodicCoefficients, u_grid: Sequence[float], U_grid: Sequence[float],
                  resolution: int = 64, tabulation_tol: float = 1e-4, workers: int = 1) -> FhomTable:
    """(u,U) 격자 위의 F_hom 표와 3차 spline, 격자 절반 spline 과의 차이를 오차 추정으로."""
    if coeffs.dim != 1 or coeffs.components != 1:
        raise ValueError("F_hom tabulation supports scalar 1D coefficients only")
    u_grid = np.asarray(u_grid, dtype=float)
    U_grid = np.asarray(U_grid, dtype=float)
    if len(u_grid) < 7 or len(U_grid) < 7:
        raise ValueError("tabulation grids need at least 7 points per axis")
    pairs = [(u, U) for u in u_grid for U in U_grid]
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as executor:
        cells = list(executor.map(lambda p: solve_cell_problem(coeffs, [p[0]], [[p[1]]], resolution), pairs))
    values = np.array([c.value for c in cells]).reshape(len(u_grid), len(U_grid))

    spline = RectBivariateSpline(u_grid, U_grid, values, kx=3, ky=3)
    coarse = RectBivariateSpline(u_grid[::2], U_grid[::2], values[::2, ::2], kx=3, ky=3)
    uu, UU = np.meshgrid(u_grid, U_grid, indexing='ij')
    error = float(np.max(np.abs(coarse.ev(uu.ravel(), UU.ravel()) - values.ravel())))
    if error > tabulation_tol:
        raise TabulationGapTooCoarse(
            f"F_hom table for '{coeffs.name}': grid-doubling error {error:.3e} exceeds {tabulation_tol:.1e}"
        )
    logger.info(f"F_hom 표 생성: {len(pairs)}개 셀 문제, 오차 추정 {error:.3e}")
    return FhomTable(u_grid=u_grid, U_grid=U_grid, values=values, error=error, spline=spline)


@dataclass(frozen=True)
class EffectiveModel:
    coefficients: PeriodicCoefficients
    A_hom: Optional[np.ndarray]
    table: Optional[FhomTable]
    quad_points: int
    cell_resolution: int

    def A_aver(self, u) -> np.ndarray:
        return mean_tensors(self.coefficients, u, self.quad_points)[0]

    def A_harm(self, u) -> np.ndarray:
        return mean_tensors(self.coefficients, u, self.quad_points)[1]

    def b_aver(self, t: float, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return averaged_perturbation(self.coefficients, t, u, self.quad_points)[0]

    def F_hom(self, u, U) -> float:
        c = self.coefficients
        u = np.atleast_1d(np.asarray(u, dtype=float))
        U = np.asarray(U, dtype=float).reshape(c.components, c.dim)
        if c.F_y_independent:
            return float(c.F_cell(np.zeros((1, c.dim)), u[None], U[None])[0])
        if self.A_hom is not None:
            y = cell_points(c.dim, self.quad_points)
            g = np.mean(c.potential(y, np.tile(u, (len(y), 1))))
            return float(0.5 * np.einsum('id,de,ie->', U, self.A_hom, U) + g)
        return float(self.table(u[0], U[0, 0]))

    def tensors_json(self, u_samples: Sequence[float]) -> Dict[str, list]:
        """u 별 A_aver/A_harm 표 (JSON 내보내기용)"""
        rows = []
        for u in u_samples:
            A_aver, A_harm = mean_tensors(self.coefficients, np.full(self.coefficients.components, u),
                                          self.quad_points)
            rows.append({'u': float(u), 'A_aver': A_aver.tolist(), 'A_harm': A_harm.tolist()})
        out = {'tensors': rows}
        if self.A_hom is not None:
            out['A_hom'] = np.asarray(self.A_hom).tolist()
        return out


def build_effective_model(coeffs: PeriodicCoefficients, quad_points: int = 64, resolution: int = 64,
                          u_grid: Optional[Sequence[float]] = None, U_grid: Optional[Sequence[float]] = None,
                          tabulation_tol: float = 1e-4, workers: int = 1) -> EffectiveModel:
    A_hom, table = None, None
    if coeffs.quadratic_in_gradient:
        A_hom = homogenized_conductivity(coeffs, resolution)
    elif not coeffs.F_y_independent:
        u_grid = np.linspace(-2.0, 2.0, 17) if u_grid is None else u_grid
        U_grid = np.linspace(-4.0, 4.0, 17) if U_grid is None else U_grid
        table = tabulate_fhom(coeffs, u_grid, U_grid, resolution, tabulation_tol, workers)
    return EffectiveModel(coefficients=coeffs, A_hom=A_hom, table=table,
                          quad_points=quad_points, cell_resolution=resolution)


def _metric_depends_on_state(coeffs: PeriodicCoefficients) -> bool:
    y = cell_points(coeffs.dim, 8)
    I = coeffs.components
    low = coeffs.A_cell(y, np.zeros((len(y), I)))
    high = coeffs.A_cell(y, np.full((len(y), I), 1.3))
    return not np.allclose(low, high, rtol=0.0, atol=1e-14)


def _effective_metric(coeffs: PeriodicCoefficients, mode: str, quad_points: int) -> Callable:
    if coeffs.A_y_independent:
        return coeffs.A_cell
    index = DISSIPATION_MODES.index(mode)
    if not _metric_depends_on_state(coeffs):
        # u 에 무관하면 한 번만 평균
        fixed = mean_tensors(coeffs, np.zeros(coeffs.components), quad_points)[index]
        return lambda y, u: np.broadcast_to(fixed, (len(u),) + fixed.shape)
    return lambda y, u: node_means(coeffs, u, quad_points)[index]


def _effective_perturbation(coeffs: PeriodicCoefficients, quad_points: int) -> Callable:
    if coeffs.b_y_independent:
        return coeffs.b_cell
    return lambda y, t, u: averaged_perturbation(coeffs, t, u, quad_points)


def _tensor_energy(A: np.ndarray, coeffs: PeriodicCoefficients, quad_points: int):
    yq = cell_points(coeffs.dim, quad_points)
    Q = len(yq)

    def mean_potential(u, fn):
        S = len(u)
        values = fn(np.tile(yq, (S, 1)), np.repeat(u, Q, axis=0))
        return values.reshape(S, Q, *values.shape[1:]).mean(axis=1)

    def F_cell(y, u, U):
        return 0.5 * np.einsum('sid,de,sie->s', U, A, U) + mean_potential(u, coeffs.potential)

    def F_u(y, u, U):
        return mean_potential(u, coeffs.potential_grad)

    def F_U(y, u, U):
        return np.einsum('sid,de->sie', U, A)

    return F_cell, F_u, F_U


def _table_energy(table: FhomTable):
    def F_cell(y, u, U):
        return table(u[:, 0], U[:, 0, 0])

    def F_u(y, u, U):
        return table.du(u[:, 0], U[:, 0, 0])[:, None]

    def F_U(y, u, U):
        return table.dU(u[:, 0], U[:, 0, 0])[:, None, None]

    return F_cell, F_u, F_U


def effective_coefficients(coeffs: PeriodicCoefficients, model: Optional[EffectiveModel] = None,
                           dissipation_mode: str = 'aver', energy_mode: str = 'hom') -> PeriodicCoefficients:
    """y 에 의존하지 않는 유효 계수 (rds_fd 조립 규약을 그대로 재사용)"""
    if dissipation_mode not in DISSIPATION_MODES:
        raise ValueError(f"dissipation_mode must be one of {DISSIPATION_MODES}")
    if energy_mode not in ENERGY_MODES:
        raise ValueError(f"energy_mode must be one of {ENERGY_MODES}")
    if coeffs.y_independent:
        return coeffs
    model = model or build_effective_model(coeffs)
    Q = model.quad_points

    if coeffs.F_y_independent:
        F_cell, F_u, F_U = coeffs.F_cell, coeffs.F_u, coeffs.F_U
    elif energy_mode == 'aver':
        if not coeffs.quadratic_in_gradient:
            raise ValueError("energy_mode='aver' needs an energy quadratic in the gradient")
        kappa = float(np.mean(coeffs.conductivity(cell_points(coeffs.dim, Q))))
        F_cell, F_u, F_U = _tensor_energy(kappa * np.eye(coeffs.dim), coeffs, Q)
    elif model.A_hom is not None:
        F_cell, F_u, F_U = _tensor_energy(model.A_hom, coeffs, Q)
    else:
        F_cell, F_u, F_U = _table_energy(model.table)

    return replace(
        coeffs,
        name=f"{coeffs.name}_effective[{dissipation_mode},{energy_mode}]",
        A_cell=_effective_metric(coeffs, dissipation_mode, Q),
        F_cell=F_cell, F_u=F_u, F_U=F_U,
        b_cell=_effective_perturbation(coeffs, Q),
        conductivity=None, potential=None, potential_grad=None,
        A_y_independent=True, F_y_independent=True, b_y_independent=True,
    )


def build_effective_system(coeffs: PeriodicCoefficients, grid: Grid, dissipation_mode: str = 'aver',
                           energy_mode: str = 'hom', model: Optional[EffectiveModel] = None) -> PerturbedGradientSystem:
    """균질화 시스템 (A_aver, F_hom, b_aver) 을 ε-시스템과 같은 격자 규약으로 조립"""
    effective = effective_coefficients(coeffs, model, dissipation_mode, energy_mode)
    system = assemble_system(effective, 1.0, grid, validate=False,
                             name=f"{coeffs.name}_effective[{dissipation_mode},{energy_mode}]")
    logger.info(f"유효 시스템 조립: {system.name}, cells={grid.cells_per_axis}")
    return system


def corrected_initial_data(coeffs: PeriodicCoefficients, grid: Grid, eps: float,
                           profile: Callable[[np.ndarray], np.ndarray],
                           derivative: Callable[[np.ndarray], np.ndarray],
                           resolution: int = 16) -> np.ndarray:
    """u0_ε(x) = u0(x) + ε χ(x/ε) u0'(x), χ 는 U=1 셀 문제의 corrector (1D)"""
    if coeffs.dim != 1 or coeffs.components != 1:
        raise ValueError("corrected initial data is implemented for scalar 1D coefficients")
    x = grid.nodes
    base = np.asarray(profile(x), dtype=float)
    if coeffs.F_y_independent:
        return base
    cell = solve_cell_problem(conductivity_only(coeffs) if coeffs.quadratic_in_gradient else coeffs,
                              [0.0], [[1.0]], resolution)
    chi = cell.corrector_function()
    return base + eps * chi(x[:, 0] / eps) * np.asarray(derivative(x), dtype=float)
