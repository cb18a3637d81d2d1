from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

DEFAULT_SEED = 20240521


def make_rng(seed: Optional[int] = None) -> np.random.Generator:
    """고정 시드 난수 생성기 (시드가 없으면 DEFAULT_SEED)"""
    return np.random.default_rng(DEFAULT_SEED if seed is None else seed)


@dataclass(frozen=True)
class SampleSet:
    """프로브용 (시간, 상태) 샘플 묶음"""
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states must have the same length")

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self):
        return iter(zip(self.times, self.states))


def ball_samples(center: np.ndarray, radius: float, count: int,
                 t_range: Tuple[float, float] = (0.0, 1.0),
                 rng: Optional[np.random.Generator] = None) -> SampleSet:
    """center 주변 상자 [center-radius, center+radius] 에서 균등 샘플"""
    rng = rng if rng is not None else make_rng()
    center = np.atleast_1d(np.asarray(center, dtype=float))
    states = center + radius * rng.uniform(-1.0, 1.0, size=(count, center.size))
    times = rng.uniform(t_range[0], t_range[1], size=count)
    return SampleSet(times=times, states=states)


def grid_samples(times, states) -> SampleSet:
    """주어진 시간/상태의 모든 조합"""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    states = np.atleast_2d(np.asarray(states, dtype=float))
    tt = np.repeat(times, len(states))
    ss = np.tile(states, (len(times), 1))
    return SampleSet(times=tt, states=ss)
