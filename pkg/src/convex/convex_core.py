"""유한 차원 볼록 해석 기본 연산.

Legendre-Fenchel 변환(수치/닫힌 형식), Fenchel-Young gap, 부분미분 잔차,
그리고 다른 모듈이 공통으로 쓰는 함수 팩토리를 제공한다.
"""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from exceptions.exceptions import InfiniteValue, NotConvex, UnboundedConjugate
from utils.sampling import make_rng

DEFAULT_OVERFLOW = 1e8
# 차원별 안전장치 격자 점 수 (총 점 수가 과도하지 않도록)
GRID_POINTS = {1: 2001, 2: 201, 3: 41}


def _everywhere(u: np.ndarray) -> bool:
    return True


def as_vector(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Functional:
    """확장 실수 값 함수 오라클 (Ψ, Ψ*, E_t 를 담는 그릇)"""
    evaluate: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dom_indicator: Callable[[np.ndarray], bool] = _everywhere
    convex: bool = True
    conjugate: Optional[Callable[[np.ndarray], float]] = None
    name: str = ""

    def __call__(self, u) -> float:
        u = as_vector(u)
        if not self.dom_indicator(u):
            return float('inf')
        return float(self.evaluate(u))

    def grad(self, u) -> np.ndarray:
        if self.gradient is None:
            raise AttributeError(f"functional '{self.name}' has no gradient")
        return as_vector(self.gradient(as_vector(u)))


@dataclass(frozen=True)
class DualPair:
    """(u, ξ, Fenchel-Young gap) 삼중쌍"""
    point: np.ndarray
    covector: np.ndarray
    gap: float
    tol: float = 0.0

    @property
    def in_subdifferential(self) -> bool:
        return self.gap <= self.tol


@dataclass(frozen=True)
class SearchBox:
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def symmetric(cls, radius: float, dim: int = 1) -> 'SearchBox':
        return cls(lower=-radius * np.ones(dim), upper=radius * np.ones(dim))

    @property
    def dim(self) -> int:
        return len(np.atleast_1d(self.lower))

    def contains(self, u: np.ndarray) -> bool:
        return bool(np.all(u >= self.lower) and np.all(u <= self.upper))

    def enlarged(self, factor: float) -> 'SearchBox':
        mid = 0.5 * (self.lower + self.upper)
        half = 0.5 * (self.upper - self.lower) * factor
        return SearchBox(lower=mid - half, upper=mid + half)

    def grid(self, points: int) -> np.ndarray:
        axes = [np.linspace(lo, hi, points) for lo, hi in
                zip(np.atleast_1d(self.lower), np.atleast_1d(self.upper))]
        mesh = np.meshgrid(*axes, indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=1)


def gap_tolerance(f_value: float, f_star_value: float, rel: float = 1e-8) -> float:
    """gap 분류 허용 오차 tol = rel·(1+|f(u)|+|f*(ξ)|)"""
    return rel * (1.0 + abs(f_value) + abs(f_star_value))


def legendre_fenchel(f: Functional, xi, search: Optional[SearchBox] = None,
                     overflow: float = DEFAULT_OVERFLOW) -> float:
    """Ψ*(ξ) = sup_u {⟨ξ,u⟩ − f(u)}.

    닫힌 형식이 등록되어 있으면 그것을 쓰고, 아니면 상자 위 조밀 격자로
    최대점 후보를 찾은 뒤 좌표별 1D 유계 최소화로 다듬는다.
    """
    xi = as_vector(xi)
    if f.conjugate is not None:
        value = float(f.conjugate(xi))
    else:
        if search is None:
            raise ValueError("numeric conjugate requires a search box")
        value = _numeric_conjugate(f, xi, search)

    if not np.isfinite(value) or value > overflow:
        raise UnboundedConjugate(
            f"conjugate of '{f.name}' at xi={xi.tolist()} exceeds overflow threshold {overflow:g}"
        )
    return value


def _numeric_conjugate(f: Functional, xi: np.ndarray, search: SearchBox) -> float:
    dim = search.dim
    if dim > 3:
        raise ValueError("numeric conjugate supports at most 3 dimensions")
    if xi.size != dim:
        raise ValueError(f"xi has dimension {xi.size}, box has {dim}")

    points = search.grid(GRID_POINTS[dim])
    values = np.array([f(p) for p in points])
    finite = np.isfinite(values)
    if not finite.any():
        raise InfiniteValue(f"'{f.name}' is +inf on the whole search box")
    objective = np.where(finite, points @ xi - values, -np.inf)
    best = points[int(np.argmax(objective))].copy()
    best_value = float(objective.max())

    # 좌표별 유계 정제 (분리 가능한 소산에서는 정확)
    spacing = (np.atleast_1d(search.upper) - np.atleast_1d(search.lower)) / (GRID_POINTS[dim] - 1)
    for sweep in range(2):
        for i in range(dim):
            lo = max(search.lower[i], best[i] - spacing[i])
            hi = min(search.upper[i], best[i] + spacing[i])
            if hi <= lo:
                continue

            def negated(s, i=i):
                trial = best.copy()
                trial[i] = s
                val = f(trial)
                return np.inf if not np.isfinite(val) else val - float(trial @ xi)

            res = minimize_scalar(negated, bounds=(lo, hi), method='bounded',
                                  options={'xatol': 1e-12})
            if np.isfinite(res.fun) and -res.fun > best_value:
                best[i] = res.x
                best_value = -float(res.fun)
    return best_value


def fenchel_young_gap(f: Functional, f_star: Functional, u, xi) -> float:
    """gap = f(u) + f*(ξ) − ⟨ξ,u⟩ (항상 ≥ 0)"""
    u, xi = as_vector(u), as_vector(xi)
    fu = f(u)
    fs = f_star(xi)
    if not np.isfinite(fu) or not np.isfinite(fs):
        raise InfiniteValue(f"infinite value in Fenchel-Young gap: f(u)={fu}, f*(xi)={fs}")
    return fu + fs - float(xi @ u)


def make_dual_pair(f: Functional, f_star: Functional, u, xi, rel: float = 1e-8) -> DualPair:
    u, xi = as_vector(u), as_vector(xi)
    gap = fenchel_young_gap(f, f_star, u, xi)
    return DualPair(point=u, covector=xi, gap=gap, tol=gap_tolerance(f(u), f_star(xi), rel))


def _probe_points(u: np.ndarray, radius: float, count: int,
                  rng: np.random.Generator) -> np.ndarray:
    steps = np.linspace(-radius, radius, count)
    axis_points = [u + s * e for e in np.eye(u.size) for s in steps]
    directions = rng.normal(size=(count, u.size))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    lengths = rng.uniform(0.0, radius, size=(count, 1))
    return np.vstack([np.array(axis_points), u + lengths * directions])


def subdiff_residual(f: Functional, u, xi, radius: float = 1.0, count: int = 401,
                     samples: Optional[np.ndarray] = None, seed: Optional[int] = None) -> float:
    """max_v [F(u) − F(v) − ⟨ξ,u−v⟩]; ≤ tol 이면 샘플 위에서 ξ ∈ ∂F(u)."""
    if not f.convex:
        raise NotConvex(f"'{f.name}' is not flagged convex")
    u, xi = as_vector(u), as_vector(xi)
    fu = f(u)
    if not np.isfinite(fu):
        raise InfiniteValue(f"'{f.name}' is +inf at u")
    points = samples if samples is not None else _probe_points(u, radius, count, make_rng(seed))
    worst = -np.inf
    for v in np.atleast_2d(points):
        fv = f(v)
        if not np.isfinite(fv):
            continue
        worst = max(worst, fu - fv - float(xi @ (u - v)))
    return float(worst)


def convexity_violation(f: Functional, points: np.ndarray, seed: Optional[int] = None,
                        pairs: int = 200) -> float:
    """무작위 (a,b,λ) 에 대한 f(λa+(1−λ)b) − λf(a) − (1−λ)f(b) 의 최댓값"""
    rng = make_rng(seed)
    points = np.atleast_2d(points)
    worst = -np.inf
    for _ in range(pairs):
        a, b = points[rng.integers(len(points), size=2)]
        lam = rng.uniform()
        fa, fb = f(a), f(b)
        if not (np.isfinite(fa) and np.isfinite(fb)):
            continue
        worst = max(worst, f(lam * a + (1 - lam) * b) - lam * fa - (1 - lam) * fb)
    return float(worst)


def discrete_conjugate(values: np.ndarray, grid: np.ndarray, xi_grid: np.ndarray) -> np.ndarray:
    """1D 격자 위 이산 Legendre-Fenchel 변환 max_j (ξ u_j − f_j)"""
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    table = np.outer(xi_grid, grid[finite]) - values[finite]
    return table.max(axis=1)


def biconjugate_on_grid(f: Functional, grid: Sequence[float], xi_grid: Sequence[float]) -> np.ndarray:
    """격자 위에서 (f*)* 를 다시 계산 (볼록 f 이면 f 와 격자 오차 내에서 일치)"""
    grid = np.asarray(grid, dtype=float)
    xi_grid = np.asarray(xi_grid, dtype=float)
    values = np.array([f(g) for g in grid])
    f_star = discrete_conjugate(values, grid, xi_grid)
    return discrete_conjugate(f_star, xi_grid, grid)


# --- 닫힌 형식 팩토리 ---

def quadratic(a=1.0, name: str = "") -> Functional:
    """½⟨a v, v⟩ (a 는 스칼라 또는 대각 벡터), 켤레 ½⟨ξ, ξ/a⟩"""
    a = np.asarray(a, dtype=float)
    return Functional(
        evaluate=lambda v: 0.5 * float(np.sum(a * v * v)),
        gradient=lambda v: a * v,
        conjugate=lambda xi: 0.5 * float(np.sum(xi * xi / a)),
        name=name or "quadratic",
    )


def absolute(mu: float = 1.0, name: str = "") -> Functional:
    """μ|v|_1, 켤레는 단위 공 지시 함수 (|ξ|_∞ ≤ μ 에서 0, 밖에서 +∞)"""
    return Functional(
        evaluate=lambda v: mu * float(np.sum(np.abs(v))),
        conjugate=lambda xi: 0.0 if np.all(np.abs(xi) <= mu * (1 + 1e-12)) else float('inf'),
        name=name or "absolute",
    )


def quartic(name: str = "") -> Functional:
    """¼ Σ v⁴, 켤레 ¾ Σ |ξ|^{4/3}"""
    return Functional(
        evaluate=lambda v: 0.25 * float(np.sum(v ** 4)),
        gradient=lambda v: v ** 3,
        conjugate=lambda xi: 0.75 * float(np.sum(np.abs(xi) ** (4.0 / 3.0))),
        name=name or "quartic",
    )


def viscoplastic(mu: float = 1.0, a=1.0, name: str = "") -> Functional:
    """μ|v| + ½ a v², 켤레 ½ (|ξ|−μ)₊² / a"""
    a = np.asarray(a, dtype=float)
    return Functional(
        evaluate=lambda v: float(np.sum(mu * np.abs(v) + 0.5 * a * v * v)),
        conjugate=lambda xi: 0.5 * float(np.sum(np.maximum(np.abs(xi) - mu, 0.0) ** 2 / a)),
        name=name or "viscoplastic",
    )


def without_conjugate(f: Functional) -> Functional:
    """등록된 닫힌 형식을 지운 복사본 (수치 변환 경로 강제)"""
    return Functional(evaluate=f.evaluate, gradient=f.gradient, dom_indicator=f.dom_indicator,
                      convex=f.convex, conjugate=None, name=f.name)


def conjugate_functional(f: Functional, search: Optional[SearchBox] = None,
                         overflow: float = DEFAULT_OVERFLOW) -> Functional:
    """f* 를 Functional 로 감싼다 (overflow 시 +∞)."""

    def evaluate(xi):
        try:
            return legendre_fenchel(f, xi, search, overflow)
        except UnboundedConjugate:
            return float('inf')

    return Functional(evaluate=evaluate, convex=True, name=f"{f.name}*")
