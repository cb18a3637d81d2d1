"""스텝 범함수의 근사 최소화.

gradient 모드(최급강하 + backtracking), lbfgs 모드(limited-memory quasi-Newton,
같은 line search), 기울기가 없을 때의 compass 탐색을 제공한다.
"""
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from exceptions.exceptions import InvalidMinimizeSpec, MaxItersExceeded, NonFiniteObjective
from utils.logger import get_logger

logger = get_logger(__name__)

METHODS = ('lbfgs', 'gradient')
ARMIJO_C1 = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 60
LBFGS_MEMORY = 10
ROUNDOFF = 1e-12


@dataclass
class MinimizeSpec:
    objective: Callable[[np.ndarray], float]
    start: np.ndarray
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    grad_tol: Optional[float] = None
    f_tol: float = 0.0
    max_iters: Optional[int] = None
    method: str = 'lbfgs'

    def __post_init__(self):
        self.start = np.atleast_1d(np.asarray(self.start, dtype=float)).copy()
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise InvalidMinimizeSpec(f"grad_tol must be > 0, got {self.grad_tol}")
        if self.f_tol < 0:
            raise InvalidMinimizeSpec(f"f_tol must be >= 0, got {self.f_tol}")
        if self.max_iters is not None and self.max_iters < 1:
            raise InvalidMinimizeSpec(f"max_iters must be >= 1, got {self.max_iters}")
        if self.method not in METHODS:
            raise InvalidMinimizeSpec(f"unknown method '{self.method}', expected one of {METHODS}")

    @property
    def dim(self) -> int:
        return self.start.size


@dataclass(frozen=True)
class MinimizeResult:
    argmin: np.ndarray
    value: float
    grad_norm: float
    iters: int
    converged: bool
    history: Tuple[float, ...] = field(default=(), repr=False)

    def raise_if_failed(self) -> 'MinimizeResult':
        if not self.converged:
            raise MaxItersExceeded(
                f"minimizer stopped after {self.iters} iterations with grad_norm={self.grad_norm:.3e}",
                result=self,
            )
        return self


def _checked(value: float) -> float:
    value = float(value)
    if np.isnan(value) or value == -np.inf:
        raise NonFiniteObjective(f"objective returned {value}")
    return value


def minimize(spec: MinimizeSpec) -> MinimizeResult:
    """spec 의 목적 함수를 start 에서부터 내려가며 최소화한다.

    목적 함수 값은 단조 비증가이며, 실패 시 converged=False 인 best-so-far 를 돌려준다.
    """
    f0 = _checked(spec.objective(spec.start))
    if not np.isfinite(f0):
        raise NonFiniteObjective("objective is +inf at the start point")
    if spec.gradient is None:
        return _compass_search(spec, f0)
    return _descent(spec, f0)


def _descent(spec: MinimizeSpec, f0: float) -> MinimizeResult:
    x = spec.start.copy()
    f = f0
    g = np.asarray(spec.gradient(x), dtype=float)
    gnorm = float(np.linalg.norm(g))
    grad_tol = spec.grad_tol if spec.grad_tol is not None else 1e-9 * (1.0 + gnorm)
    max_iters = spec.max_iters if spec.max_iters is not None else 500 * spec.dim

    history = [f]
    s_hist: deque = deque(maxlen=LBFGS_MEMORY)
    y_hist: deque = deque(maxlen=LBFGS_MEMORY)
    step = 1.0 / max(gnorm, 1.0)
    iters = 0

    while gnorm > grad_tol and iters < max_iters:
        if spec.method == 'lbfgs' and s_hist:
            d = -_two_loop(g, s_hist, y_hist)
            alpha = 1.0
        else:
            d = -g
            alpha = step
        slope = float(g @ d)
        if slope >= 0:
            # quasi-Newton 방향이 하강 방향이 아니면 초기화
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = -gnorm ** 2
            alpha = step

        accepted = False
        g_new = None
        for _ in range(MAX_BACKTRACKS):
            x_new = x + alpha * d
            f_new = _checked(spec.objective(x_new))
            if np.isfinite(f_new):
                if f_new <= f + ARMIJO_C1 * alpha * slope:
                    accepted = True
                    break
                # 함수값 차이가 반올림 수준이면 기울기 노름 감소로 판정
                if f_new - f <= ROUNDOFF * (1.0 + abs(f)):
                    g_trial = np.asarray(spec.gradient(x_new), dtype=float)
                    if np.linalg.norm(g_trial) < gnorm:
                        g_new = g_trial
                        accepted = True
                        break
            alpha *= BACKTRACK
        if not accepted:
            logger.debug(f"line search 실패 (iter={iters}, grad_norm={gnorm:.3e})")
            break

        if g_new is None:
            g_new = np.asarray(spec.gradient(x_new), dtype=float)
        s, y = x_new - x, g_new - g
        if float(s @ y) > 1e-16 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        history.append(f)
        iters += 1
        step = min(alpha * 2.0, 1e6)

    converged = gnorm <= grad_tol
    if not converged:
        logger.warning(f"최소화 미수렴: iters={iters}, grad_norm={gnorm:.3e}, grad_tol={grad_tol:.3e}")
    return MinimizeResult(argmin=x, value=f, grad_norm=gnorm, iters=iters,
                          converged=converged, history=tuple(history))


def _two_loop(g: np.ndarray, s_hist, y_hist) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((rho, a))
        q -= a * y
    s, y = s_hist[-1], y_hist[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def _compass_search(spec: MinimizeSpec, f0: float) -> MinimizeResult:
    """좌표 방향 polling. 보고되는 grad_norm 은 마지막 polling step 크기."""
    x = spec.start.copy()
    f = f0
    min_step = np.sqrt(spec.f_tol) if spec.f_tol > 0 else 1e-8
    step = max(1.0, float(np.max(np.abs(x)))) * 0.5
    max_iters = spec.max_iters if spec.max_iters is not None else 500 * spec.dim
    history = [f]
    iters = 0
    directions = np.vstack([np.eye(spec.dim), -np.eye(spec.dim)])

    while step > min_step and iters < max_iters:
        improved = False
        for d in directions:
            trial = x + step * d
            f_trial = _checked(spec.objective(trial))
            if f_trial < f:
                x, f = trial, f_trial
                improved = True
                break
        if not improved:
            step *= 0.5
        history.append(f)
        iters += 1

    converged = step <= min_step
    if not converged:
        logger.warning(f"compass 탐색 미수렴: iters={iters}, step={step:.3e}")
    return MinimizeResult(argmin=x, value=f, grad_norm=step, iters=iters,
                          converged=converged, history=tuple(history))


# --- 닫힌 형식 proximal 스텝 (분리 가능한 비매끄러운 소산) ---

def soft_threshold(q: np.ndarray, mu: float) -> np.ndarray:
    return np.sign(q) * np.maximum(np.abs(q) - mu, 0.0)


def viscoplastic_step(r: float, u: np.ndarray, w: np.ndarray, mu: float,
                      viscosity: float, stiffness: float) -> np.ndarray:
    """argmin_v rΨ((v−u)/r) + ½k v² − ⟨w,v⟩, Ψ(z)=μ|z|+½a z² (좌표별)."""
    q = w - stiffness * u
    return u + soft_threshold(q, mu) / (viscosity / r + stiffness)


PROX_REGISTRY: Dict[str, Callable[..., np.ndarray]] = {
    'viscoplastic_quadratic': viscoplastic_step,
}


def registered_prox(name: str) -> Callable[..., np.ndarray]:
    if name not in PROX_REGISTRY:
        raise KeyError(f"no registered proximal step '{name}', known: {sorted(PROX_REGISTRY)}")
    return PROX_REGISTRY[name]
