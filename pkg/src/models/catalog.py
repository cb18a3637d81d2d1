"""이름으로 선택하는 내장 시스템 카탈로그.

스칼라(또는 대각) ODE 테스트 시스템과 rds_fd 반응-확산 인스턴스를 같은 방식으로 등록한다.
에너지 하한이 양수가 되도록 floor 상수를 더한다 (floor=0 은 닫힌 형식 예제용).
"""
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Mapping, Optional

import numpy as np

from convex.convex_core import viscoplastic
from models import rds_fd
from models.pgs_model import PerturbedGradientSystem
from solvers.inner_solver import viscoplastic_step


def _sq(u: np.ndarray) -> float:
    return float(np.dot(u, u))


def quadratic_system(dim: int = 1, floor: float = 1.0, forcing: float = 0.0,
                     name: Optional[str] = None) -> PerturbedGradientSystem:
    """E = floor + ½|u|², Ψ = ½|v|², B ≡ forcing; 정확해 u(t) = forcing + (u0−forcing)e^{−t}"""

    def exact(t, u0):
        return forcing + (np.asarray(u0, dtype=float) - forcing) * np.exp(-t)

    return PerturbedGradientSystem(
        name=name or ('forced_decay' if forcing else 'decay'),
        dim=dim,
        energy=lambda t, u: floor + 0.5 * _sq(u),
        power=lambda t, u: 0.0,
        dissipation=lambda u, v: 0.5 * _sq(v),
        dissipation_conj=lambda u, xi: 0.5 * _sq(xi),
        perturbation=lambda t, u: np.full(dim, float(forcing)),
        energy_grad=lambda t, u: np.asarray(u, dtype=float).copy(),
        dissipation_grad=lambda u, v: np.asarray(v, dtype=float).copy(),
        autonomous=True,
        metadata={'exact': exact, 'u0': np.full(dim, 0.0 if forcing else 1.0), 'floor': floor},
    )


def nonautonomous_system(dim: int = 1) -> PerturbedGradientSystem:
    """E_t = (2+sin t)(1+½|u|²), Ψ = ½|v|², B = ½cos t"""
    return PerturbedGradientSystem(
        name='nonautonomous',
        dim=dim,
        energy=lambda t, u: (2.0 + np.sin(t)) * (1.0 + 0.5 * _sq(u)),
        power=lambda t, u: np.cos(t) * (1.0 + 0.5 * _sq(u)),
        dissipation=lambda u, v: 0.5 * _sq(v),
        dissipation_conj=lambda u, xi: 0.5 * _sq(xi),
        perturbation=lambda t, u: np.full(dim, 0.5 * np.cos(t)),
        energy_grad=lambda t, u: (2.0 + np.sin(t)) * np.asarray(u, dtype=float),
        dissipation_grad=lambda u, v: np.asarray(v, dtype=float).copy(),
        metadata={'u0': np.ones(dim)},
    )


def state_dependent_system(dim: int = 1) -> PerturbedGradientSystem:
    """Ψ_u(v) = ½(1+|u|²)|v|², E = 1+½|u|², B = sin t"""
    return PerturbedGradientSystem(
        name='state_dependent',
        dim=dim,
        energy=lambda t, u: 1.0 + 0.5 * _sq(u),
        power=lambda t, u: 0.0,
        dissipation=lambda u, v: 0.5 * (1.0 + _sq(u)) * _sq(v),
        dissipation_conj=lambda u, xi: 0.5 * _sq(xi) / (1.0 + _sq(u)),
        perturbation=lambda t, u: np.full(dim, np.sin(t)),
        energy_grad=lambda t, u: np.asarray(u, dtype=float).copy(),
        dissipation_grad=lambda u, v: (1.0 + _sq(u)) * np.asarray(v, dtype=float),
        metadata={'u0': np.ones(dim)},
    )


def stick_slip_system(dim: int = 1, mu: float = 0.5, viscosity: float = 1.0,
                      stiffness: float = 1.0, amplitude: float = 2.0) -> PerturbedGradientSystem:
    """Ψ = μ|v|₁ + ½a|v|², E = 1 + ½k|u|², B = A sin(2πt), 닫힌 형식 proximal 스텝 사용"""
    psi = viscoplastic(mu=mu, a=viscosity)

    def prox(r, t, u, w):
        return viscoplastic_step(r, u, w, mu=mu, viscosity=viscosity, stiffness=stiffness)

    return PerturbedGradientSystem(
        name='stick_slip',
        dim=dim,
        energy=lambda t, u: 1.0 + 0.5 * stiffness * _sq(u),
        power=lambda t, u: 0.0,
        dissipation=lambda u, v: psi(v),
        dissipation_conj=lambda u, xi: psi.conjugate(xi),
        perturbation=lambda t, u: np.full(dim, amplitude * np.sin(2.0 * np.pi * t)),
        energy_grad=lambda t, u: stiffness * np.asarray(u, dtype=float),
        step_prox=prox,
        metadata={'u0': np.zeros(dim), 'prox': 'viscoplastic_quadratic'},
    )


def pde_system(instance: str, eps: float = 0.25, cells: Optional[int] = None,
               dim: int = 1) -> PerturbedGradientSystem:
    """rds_fd 인스턴스 조립 (cells 가 없으면 h ≤ ε/16 을 만족하는 격자)"""
    coeffs = rds_fd.INSTANCES[instance](dim=dim)
    grid = rds_fd.Grid(dim=dim, cells_per_axis=cells) if cells else rds_fd.Grid.resolving(eps, dim=dim)
    system = rds_fd.assemble_system(coeffs, eps, grid, name=f"rds_{instance}")
    profile = rds_fd.DiscreteField.from_profile(
        grid, lambda x: np.prod(np.sin(np.pi * x) ** 2, axis=1), components=coeffs.components)
    system.metadata['u0'] = profile.flat
    return system


@dataclass(frozen=True)
class CatalogEntry:
    builder: Callable[..., PerturbedGradientSystem]
    description: str
    pde: bool = False


SYSTEM_CATALOG: Dict[str, CatalogEntry] = {
    'decay': CatalogEntry(lambda **kw: quadratic_system(**kw), "u' = -u"),
    'forced_decay': CatalogEntry(lambda **kw: quadratic_system(forcing=1.0, **kw), "u' = -u + 1"),
    'nonautonomous': CatalogEntry(nonautonomous_system, "E_t = (2+sin t)(1+u^2/2), B = cos(t)/2"),
    'state_dependent': CatalogEntry(state_dependent_system, "Psi_u(v) = (1+u^2)v^2/2, B = sin t"),
    'stick_slip': CatalogEntry(stick_slip_system, "Psi = mu|v| + v^2/2, prox step"),
    'rds_default': CatalogEntry(lambda **kw: pde_system('default', **kw), "oscillatory reaction-diffusion", pde=True),
    'rds_heat': CatalogEntry(lambda **kw: pde_system('heat', **kw), "discrete heat equation", pde=True),
    'rds_osc_diffusion': CatalogEntry(lambda **kw: pde_system('osc_diffusion', **kw),
                                      "a(y) = 2+cos(2 pi y) in the energy", pde=True),
    'rds_osc_dissipation': CatalogEntry(lambda **kw: pde_system('osc_dissipation', **kw),
                                        "a(y) = 2+cos(2 pi y) in the dissipation", pde=True),
}


def catalog_names() -> List[str]:
    return sorted(SYSTEM_CATALOG)


def pde_instance_name(system_name: str) -> str:
    """'rds_osc_diffusion' → 'osc_diffusion'"""
    return system_name[len('rds_'):]


def build_system(name: str, params: Optional[Mapping[str, Any]] = None) -> PerturbedGradientSystem:
    if name not in SYSTEM_CATALOG:
        raise KeyError(f"unknown system '{name}', catalog: {catalog_names()}")
    return SYSTEM_CATALOG[name].builder(**dict(params or {}))
