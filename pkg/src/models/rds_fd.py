"""준선형 반응-확산 계의 유한차분 실현.

꼭짓점 중심 격자 위에서 simplex(1D 구간, 2D 삼각형)마다 전진 차분 기울기와
무게중심 계수 샘플링을 쓰고, 소산은 질량 집중(대각) 형식이다. 경계의 한쪽
stencil 은 이산 에너지의 자연(Neumann) 조건과 같다.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np
import pandas as pd

from exceptions.exceptions import (
    CoefficientRelationViolated, CoercivityViolated, DimensionMismatch,
    EllipticityViolated, PeriodicityViolated,
)
from models.pgs_model import PerturbedGradientSystem
from utils.logger import get_logger
from utils.sampling import make_rng

logger = get_logger(__name__)

POINTS_PER_PERIOD = 16


@dataclass(frozen=True)
class Mesh:
    """simplex 메쉬: 노드 좌표, 꼭짓점 인덱스, 기울기 연산자, 가중치"""
    nodes: np.ndarray          # (K, d)
    simplices: np.ndarray      # (S, d+1)
    grad_ops: np.ndarray       # (S, d, d+1)
    weights: np.ndarray        # (S,)
    centroids: np.ndarray      # (S, d)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @cached_property
    def lumped_weights(self) -> np.ndarray:
        lumped = np.zeros(self.n_nodes)
        np.add.at(lumped, self.simplices, (self.weights / self.simplices.shape[1])[:, None])
        return lumped

    def gradients(self, values: np.ndarray) -> np.ndarray:
        """(K, I) 노드 값 → (S, I, d) simplex 기울기"""
        return np.einsum('sdv,svi->sid', self.grad_ops, values[self.simplices])

    def simplex_means(self, values: np.ndarray) -> np.ndarray:
        return values[self.simplices].mean(axis=1)

    def scatter(self, d_mean: np.ndarray, d_grad: np.ndarray, n_components: int) -> np.ndarray:
        """simplex 별 ∂/∂(평균값), ∂/∂(기울기) 를 노드 기울기로 모은다."""
        nv = self.simplices.shape[1]
        contrib = d_mean[:, None, :] / nv + np.einsum('sdv,sid->svi', self.grad_ops, d_grad)
        out = np.zeros((self.n_nodes, n_components))
        np.add.at(out, self.simplices, contrib)
        return out


def _triangles(index: Callable[[int, int], int], cells: int, h: float, wrap: bool):
    simplices, ops, centroids = [], [], []
    lower = np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]) / h
    upper = np.array([[1.0, -1.0, 0.0], [1.0, 0.0, -1.0]]) / h
    for i in range(cells):
        for j in range(cells):
            p00, p10, p01, p11 = index(i, j), index(i + 1, j), index(i, j + 1), index(i + 1, j + 1)
            simplices.append([p00, p10, p01])
            ops.append(lower)
            centroids.append([(i + 1.0 / 3.0) * h, (j + 1.0 / 3.0) * h])
            simplices.append([p11, p01, p10])
            ops.append(upper)
            centroids.append([(i + 2.0 / 3.0) * h, (j + 2.0 / 3.0) * h])
    count = len(simplices)
    return (np.array(simplices, dtype=int), np.array(ops), np.full(count, 0.5 * h * h),
            np.array(centroids))


def box_mesh(dim: int, cells: int) -> Mesh:
    """단위 구간/정사각형, 양 끝 노드 포함 (Neumann)"""
    h = 1.0 / cells
    if dim == 1:
        nodes = (np.arange(cells + 1) * h)[:, None]
        simplices = np.stack([np.arange(cells), np.arange(1, cells + 1)], axis=1)
        ops = np.tile(np.array([[[-1.0, 1.0]]]) / h, (cells, 1, 1))
        return Mesh(nodes=nodes, simplices=simplices, grad_ops=ops,
                    weights=np.full(cells, h), centroids=((np.arange(cells) + 0.5) * h)[:, None])
    n = cells + 1
    xs, ys = np.meshgrid(np.arange(n) * h, np.arange(n) * h, indexing='ij')
    nodes = np.stack([xs.ravel(), ys.ravel()], axis=1)
    simplices, ops, weights, centroids = _triangles(lambda i, j: i * n + j, cells, h, wrap=False)
    return Mesh(nodes=nodes, simplices=simplices, grad_ops=ops, weights=weights, centroids=centroids)


def periodic_mesh(dim: int, cells: int) -> Mesh:
    """단위 셀 (0,1)^d 의 주기 메쉬 (노드 j/n, 끝점 동일시)"""
    h = 1.0 / cells
    if dim == 1:
        idx = np.arange(cells)
        return Mesh(nodes=(idx * h)[:, None],
                    simplices=np.stack([idx, (idx + 1) % cells], axis=1),
                    grad_ops=np.tile(np.array([[[-1.0, 1.0]]]) / h, (cells, 1, 1)),
                    weights=np.full(cells, h), centroids=((idx + 0.5) * h)[:, None])
    xs, ys = np.meshgrid(np.arange(cells) * h, np.arange(cells) * h, indexing='ij')
    nodes = np.stack([xs.ravel(), ys.ravel()], axis=1)
    simplices, ops, weights, centroids = _triangles(
        lambda i, j: (i % cells) * cells + (j % cells), cells, h, wrap=True)
    return Mesh(nodes=nodes, simplices=simplices, grad_ops=ops, weights=weights, centroids=centroids)


@dataclass(frozen=True)
class Grid:
    dim: int
    cells_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {self.dim}")
        if self.cells_per_axis < 1:
            raise ValueError(f"cells_per_axis must be >= 1, got {self.cells_per_axis}")

    @property
    def h(self) -> float:
        return 1.0 / self.cells_per_axis

    @cached_property
    def mesh(self) -> Mesh:
        return box_mesh(self.dim, self.cells_per_axis)

    @property
    def nodes(self) -> np.ndarray:
        return self.mesh.nodes

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @classmethod
    def resolving(cls, eps: float, dim: int = 1, points_per_period: int = POINTS_PER_PERIOD) -> 'Grid':
        """h ≤ ε/points_per_period 를 만족하는 가장 거친 격자"""
        return cls(dim=dim, cells_per_axis=int(np.ceil(points_per_period / eps - 1e-9)))


@dataclass(frozen=True)
class Growth:
    p: float = 2.0
    q: Optional[float] = None
    r: float = 1.0
    C_F: float = 0.0
    C_A: float = 1.0
    C_B: float = 0.0


@dataclass(frozen=True)
class PeriodicCoefficients:
    """1-주기 셀 함수 𝔸(y,u), 𝔽(y,u,U), 𝔹(y,t,u) (벡터화된 오라클)

    A_cell(y (K,d), u (K,I)) → (K,I,I)
    F_cell/F_u/F_U(y (S,d), u (S,I), U (S,I,d)) → (S,), (S,I), (S,I,d)
    b_cell(y (K,d), t, u (K,I)) → (K,I)
    conductivity/potential 이 있으면 𝔽 = ½κ(y)|U|² + g(y,u) (닫힌 형식 균질화 경로).
    """
    name: str
    dim: int
    components: int
    A_cell: Callable
    F_cell: Callable
    F_u: Callable
    F_U: Callable
    b_cell: Callable
    growth: Growth = field(default_factory=Growth)
    conductivity: Optional[Callable[[np.ndarray], np.ndarray]] = None
    potential: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    potential_grad: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    A_y_independent: bool = False
    F_y_independent: bool = False
    b_y_independent: bool = False

    @property
    def y_independent(self) -> bool:
        return self.A_y_independent and self.F_y_independent and self.b_y_independent

    @property
    def quadratic_in_gradient(self) -> bool:
        return self.conductivity is not None and self.potential is not None


def quadratic_coefficients(name: str, conductivity: Callable, potential: Callable,
                           potential_grad: Callable, A_cell: Callable, b_cell: Callable,
                           growth: Growth, dim: int = 1, components: int = 1,
                           A_y_independent: bool = False, F_y_independent: bool = False,
                           b_y_independent: bool = False) -> PeriodicCoefficients:
    """𝔽(y,u,U) = ½κ(y)|U|² + g(y,u) 형태의 계수 묶음"""

    def F_cell(y, u, U):
        return 0.5 * conductivity(y) * np.sum(U * U, axis=(1, 2)) + potential(y, u)

    def F_u(y, u, U):
        return potential_grad(y, u)

    def F_U(y, u, U):
        return conductivity(y)[:, None, None] * U

    return PeriodicCoefficients(
        name=name, dim=dim, components=components, A_cell=A_cell, F_cell=F_cell, F_u=F_u,
        F_U=F_U, b_cell=b_cell, growth=growth, conductivity=conductivity, potential=potential,
        potential_grad=potential_grad, A_y_independent=A_y_independent,
        F_y_independent=F_y_independent, b_y_independent=b_y_independent,
    )


@dataclass(frozen=True)
class DiscreteField:
    values: np.ndarray         # (K, I)
    grid: Grid

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.n_nodes:
            raise DimensionMismatch(
                f"field shape {self.values.shape} does not match grid with {self.grid.n_nodes} nodes"
            )

    @classmethod
    def from_flat(cls, flat: np.ndarray, grid: Grid, components: int = 1) -> 'DiscreteField':
        return cls(values=np.asarray(flat, dtype=float).reshape(grid.n_nodes, components), grid=grid)

    @classmethod
    def from_profile(cls, grid: Grid, profile: Callable[[np.ndarray], np.ndarray],
                     components: int = 1) -> 'DiscreteField':
        values = np.asarray(profile(grid.nodes), dtype=float).reshape(grid.n_nodes, -1)
        if values.shape[1] == 1 and components > 1:
            values = np.repeat(values, components, axis=1)
        return cls(values=values, grid=grid)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def to_frame(self, time: Optional[float] = None) -> pd.DataFrame:
        """필드 스냅샷 (x[, y], u_0..u_{I-1})"""
        frame = pd.DataFrame(self.grid.nodes, columns=['x', 'y'][:self.grid.dim])
        for i in range(self.values.shape[1]):
            frame[f'u_{i}'] = self.values[:, i]
        if time is not None:
            frame.insert(0, 't', time)
        return frame


# --- 계수 프로브 ---

def _sample_cell(coeffs: PeriodicCoefficients, count: int, seed: int):
    rng = make_rng(seed)
    y = rng.uniform(0.0, 1.0, size=(count, coeffs.dim))
    u = rng.uniform(-2.0, 2.0, size=(count, coeffs.components))
    U = rng.uniform(-2.0, 2.0, size=(count, coeffs.components, coeffs.dim))
    return rng, y, u, U


def check_periodicity(coeffs: PeriodicCoefficients, count: int = 200, seed: int = 7,
                      tol: float = 1e-10) -> float:
    rng, y, u, U = _sample_cell(coeffs, count, seed)
    shift = rng.integers(-3, 4, size=y.shape).astype(float)
    deviation = max(
        float(np.max(np.abs(coeffs.A_cell(y + shift, u) - coeffs.A_cell(y, u)))),
        float(np.max(np.abs(coeffs.F_cell(y + shift, u, U) - coeffs.F_cell(y, u, U)))),
        float(np.max(np.abs(coeffs.b_cell(y + shift, 0.3, u) - coeffs.b_cell(y, 0.3, u)))),
    )
    if deviation > tol:
        raise PeriodicityViolated(f"coefficients '{coeffs.name}' are not 1-periodic (deviation {deviation:.3e})")
    return deviation


def check_ellipticity(coeffs: PeriodicCoefficients, count: int = 200, seed: int = 7) -> Tuple[float, float]:
    _, y, u, _ = _sample_cell(coeffs, count, seed)
    A = coeffs.A_cell(y, u)
    eig = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, 1, 2)))
    lo, hi = float(eig.min()), float(eig.max())
    C_A = coeffs.growth.C_A
    if lo < 1.0 / C_A - 1e-12 or hi > C_A + 1e-12:
        raise EllipticityViolated(
            f"coefficients '{coeffs.name}': eigenvalues in [{lo:.3e}, {hi:.3e}] not within [1/C_A, C_A] with C_A={C_A}"
        )
    return lo, hi


def check_coercivity(coeffs: PeriodicCoefficients, count: int = 200, seed: int = 7) -> float:
    """𝔽 ≥ C_F(1+|u|^q+|U|^p) (q 가 없으면 |u|^q 항 생략)"""
    g = coeffs.growth
    _, y, u, U = _sample_cell(coeffs, count, seed)
    lower = 1.0 + np.sum(U * U, axis=(1, 2)) ** (g.p / 2.0)
    if g.q is not None:
        lower = lower + np.sum(u * u, axis=1) ** (g.q / 2.0)
    margin = float(np.min(coeffs.F_cell(y, u, U) - g.C_F * lower))
    if margin < -1e-12:
        raise CoercivityViolated(f"coefficients '{coeffs.name}' violate coercivity (margin {margin:.3e})")
    return margin


def check_coefficient_relations(coeffs: PeriodicCoefficients) -> None:
    """1 − d/p > −d/q 그리고 q ≥ 2r"""
    g, d = coeffs.growth, coeffs.dim
    if g.q is None:
        return
    if not (1.0 - d / g.p > -d / g.q and g.q >= 2.0 * g.r):
        raise CoefficientRelationViolated(
            f"coefficients '{coeffs.name}': p={g.p}, q={g.q}, r={g.r} violate 1-d/p > -d/q, q >= 2r"
        )


def validate_coefficients(coeffs: PeriodicCoefficients) -> None:
    check_periodicity(coeffs)
    check_ellipticity(coeffs)
    check_coercivity(coeffs)
    check_coefficient_relations(coeffs)


# --- 조립 ---

def assemble_system(coeffs: PeriodicCoefficients, eps: float, grid: Grid,
                    validate: bool = True, name: Optional[str] = None) -> PerturbedGradientSystem:
    """ε-주기 계수로부터 이산 섭동 gradient system 을 만든다."""
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0,1], got {eps}")
    if grid.dim != coeffs.dim:
        raise DimensionMismatch(f"grid dim {grid.dim} != coefficient dim {coeffs.dim}")
    if validate:
        validate_coefficients(coeffs)
    if not coeffs.y_independent and grid.h > eps / POINTS_PER_PERIOD + 1e-15:
        logger.warning(f"해상도 부족: h={grid.h:.4g} > eps/{POINTS_PER_PERIOD}={eps / POINTS_PER_PERIOD:.4g}")

    mesh = grid.mesh
    I = coeffs.components
    K = mesh.n_nodes
    y_nodes = mesh.nodes / eps
    y_simplex = mesh.centroids / eps
    w = mesh.lumped_weights

    def fields(u):
        values = u.reshape(K, I)
        return values, mesh.simplex_means(values), mesh.gradients(values)

    def energy(t, u):
        _, mean, grad = fields(u)
        return float(mesh.weights @ coeffs.F_cell(y_simplex, mean, grad))

    def energy_grad(t, u):
        _, mean, grad = fields(u)
        d_mean = mesh.weights[:, None] * coeffs.F_u(y_simplex, mean, grad)
        d_grad = mesh.weights[:, None, None] * coeffs.F_U(y_simplex, mean, grad)
        return mesh.scatter(d_mean, d_grad, I).ravel()

    def metric(u):
        return coeffs.A_cell(y_nodes, u.reshape(K, I))

    def dissipation(u, v):
        vv = v.reshape(K, I)
        return 0.5 * float(np.sum(w * np.einsum('ki,kij,kj->k', vv, metric(u), vv)))

    def dissipation_grad(u, v):
        vv = v.reshape(K, I)
        return (w[:, None] * np.einsum('kij,kj->ki', metric(u), vv)).ravel()

    def dissipation_conj(u, xi):
        xx = xi.reshape(K, I)
        solved = np.linalg.solve(metric(u), xx[:, :, None])[:, :, 0]
        return 0.5 * float(np.sum(np.sum(xx * solved, axis=1) / w))

    def perturbation(t, u):
        return (w[:, None] * coeffs.b_cell(y_nodes, t, u.reshape(K, I))).ravel()

    def state_norm(u):
        return float(np.sqrt(np.sum(w[:, None] * u.reshape(K, I) ** 2)))

    return PerturbedGradientSystem(
        name=name or f"{coeffs.name}[eps={eps:g},cells={grid.cells_per_axis}]",
        dim=K * I,
        energy=energy,
        power=lambda t, u: 0.0,
        dissipation=dissipation,
        dissipation_conj=dissipation_conj,
        perturbation=perturbation,
        energy_grad=energy_grad,
        dissipation_grad=dissipation_grad,
        autonomous=coeffs.b_y_independent and _b_time_independent(coeffs),
        state_norm=state_norm,
        metadata={'grid': grid, 'eps': eps, 'coefficients': coeffs, 'weights': w,
                  'components': I, 'conjugate_check': False},
    )


def _b_time_independent(coeffs: PeriodicCoefficients) -> bool:
    rng, y, u, _ = _sample_cell(coeffs, 16, 3)
    return bool(np.allclose(coeffs.b_cell(y, 0.0, u), coeffs.b_cell(y, 0.77, u)))


def energy_grad_check(sys: PerturbedGradientSystem, u, directions: int = 5,
                      step: float = 1e-5, seed: int = 11) -> float:
    """조립된 기울기와 중심 차분의 최대 상대 오차 (기울기 노름 기준)"""
    flat = u.flat if isinstance(u, DiscreteField) else np.asarray(u, dtype=float)
    rng = make_rng(seed)
    grad = sys.energy_grad(0.0, flat)
    scale = float(np.linalg.norm(grad)) + 1e-12
    worst = 0.0
    for d in rng.normal(size=(directions, flat.size)):
        d /= np.linalg.norm(d)
        fd = (sys.energy(0.0, flat + step * d) - sys.energy(0.0, flat - step * d)) / (2.0 * step)
        worst = max(worst, abs(fd - float(grad @ d)) / scale)
    return worst


# --- 기본 제공 계수 ---

TWO_PI = 2.0 * np.pi


def _cos_profile(y: np.ndarray) -> np.ndarray:
    return 2.0 + np.cos(TWO_PI * y[:, 0])


def _scalar_metric(profile: Callable[[np.ndarray], np.ndarray]) -> Callable:
    return lambda y, u: profile(y)[:, None, None] * np.ones((1, 1, 1))


def _const_metric(value: float) -> Callable:
    return lambda y, u: np.full((len(y), 1, 1), value)


def _no_forcing(y, t, u):
    return np.zeros_like(u)


def default_instance(dim: int = 1, kappa: float = 0.5,
                     forcing: Callable[[float], float] = lambda t: np.sin(TWO_PI * t)) -> PeriodicCoefficients:
    """𝔸=2+cos(2πy₁), 𝔽=½(2+cos 2πy₁)|U|²+¼u⁴+¼, 𝔹=sin(2πy₁)g(t)−κu; p=2, q=4, r=1."""
    return quadratic_coefficients(
        name='rds_default',
        conductivity=_cos_profile,
        potential=lambda y, u: 0.25 * u[:, 0] ** 4 + 0.25,
        potential_grad=lambda y, u: u ** 3,
        A_cell=_scalar_metric(_cos_profile),
        b_cell=lambda y, t, u: np.sin(TWO_PI * y[:, :1]) * forcing(t) - kappa * u,
        growth=Growth(p=2.0, q=4.0, r=1.0, C_F=0.25, C_A=3.0, C_B=max(1.0, kappa)),
        dim=dim,
    )


def heat_instance(dim: int = 1) -> PeriodicCoefficients:
    """𝔸=1, 𝔽=½|U|²+¼, 𝔹=0 (y 무관, 이산 열방정식)"""
    return quadratic_coefficients(
        name='rds_heat',
        conductivity=lambda y: np.ones(len(y)),
        potential=lambda y, u: np.full(len(u), 0.25),
        potential_grad=lambda y, u: np.zeros_like(u),
        A_cell=_const_metric(1.0),
        b_cell=_no_forcing,
        growth=Growth(p=2.0, q=None, r=1.0, C_F=0.25, C_A=1.0),
        dim=dim, A_y_independent=True, F_y_independent=True, b_y_independent=True,
    )


def oscillatory_diffusion_instance(dim: int = 1) -> PeriodicCoefficients:
    """𝔸=1, 𝔽=½(2+cos 2πy₁)|U|²+¼, 유효 확산은 조화 평균 √3"""
    return quadratic_coefficients(
        name='rds_osc_diffusion',
        conductivity=_cos_profile,
        potential=lambda y, u: np.full(len(u), 0.25),
        potential_grad=lambda y, u: np.zeros_like(u),
        A_cell=_const_metric(1.0),
        b_cell=_no_forcing,
        growth=Growth(p=2.0, q=None, r=1.0, C_F=0.25, C_A=1.0),
        dim=dim, A_y_independent=True, b_y_independent=True,
    )


def oscillatory_dissipation_instance(dim: int = 1) -> PeriodicCoefficients:
    """𝔸=2+cos(2πy₁), 𝔽=½|U|²+¼, 유효 소산은 산술 평균 2"""
    return quadratic_coefficients(
        name='rds_osc_dissipation',
        conductivity=lambda y: np.ones(len(y)),
        potential=lambda y, u: np.full(len(u), 0.25),
        potential_grad=lambda y, u: np.zeros_like(u),
        A_cell=_scalar_metric(_cos_profile),
        b_cell=_no_forcing,
        growth=Growth(p=2.0, q=None, r=1.0, C_F=0.25, C_A=3.0),
        dim=dim, F_y_independent=True, b_y_independent=True,
    )


INSTANCES = {
    'default': default_instance,
    'heat': heat_instance,
    'osc_diffusion': oscillatory_diffusion_instance,
    'osc_dissipation': oscillatory_dissipation_instance,
}
