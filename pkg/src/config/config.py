import os
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from exceptions.exceptions import ConfigError
from utils.sampling import DEFAULT_SEED

# .env 파일 로드
load_dotenv()

VERSION = '0.4.0'
COMMANDS = ('solve', 'edb', 'moreau', 'cell', 'means', 'tau-sweep', 'eps-sweep', 'probes')


@dataclass
class Config:
    # src의 상위 디렉토리(프로젝트 루트)를 ROOT_DIR로 설정
    ROOT_DIR: str = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

    def __post_init__(self):
        # 출력 루트는 환경변수로 덮어쓸 수 있음
        output_root = os.getenv('PGS_OUTPUT_ROOT', 'runs')
        if not os.path.isabs(output_root):
            output_root = os.path.join(self.ROOT_DIR, output_root)
        self.OUTPUT_ROOT = output_root
        self.LOG_LEVEL = os.getenv('PGS_LOG_LEVEL', 'INFO')

        seed = os.getenv('PGS_SEED')
        try:
            self.SEED = int(seed) if seed else DEFAULT_SEED
        except ValueError:
            raise ConfigError('PGS_SEED', f"PGS_SEED must be an integer, got '{seed}'")
        self.VERSION = VERSION


@dataclass
class RunConfig:
    command: str
    system: str = 'decay'
    system_params: Dict[str, float] = field(default_factory=dict)
    T: float = 1.0
    N: int = 64
    t_start: float = 0.0
    u0: Optional[List[float]] = None
    tau_list: Tuple[float, ...] = (0.25, 0.125, 0.0625, 0.03125)
    eps_list: Tuple[float, ...] = (0.25, 0.125, 0.0625)
    moreau_r: Tuple[float, ...] = tuple(2.0 ** -k for k in range(10, 0, -1))
    pde_eps: float = 0.25
    pde_cells: Optional[int] = None
    pde_instance: str = 'osc_diffusion'
    pde_dim: int = 1
    solver_grad_tol: Optional[float] = None
    solver_max_iters: Optional[int] = None
    solver_method: str = 'lbfgs'
    edb_substeps: int = 8
    edb_quadrature_tol: float = 1e-4
    homog_quad_points: int = 64
    homog_resolution: int = 64
    homog_u: float = 0.0
    homog_U: float = 1.0
    homog_table: bool = False
    sweep_points_per_period: int = 16
    sweep_decrease_factor: float = 0.8
    sweep_u0: str = 'sin2'
    sweep_corrected: bool = False
    sweep_workers: int = 1
    sweep_dissipation_mode: str = 'aver'
    sweep_energy_mode: str = 'hom'
    probe_samples: int = 1000
    seed: int = DEFAULT_SEED
    log_level: str = 'INFO'
    output_dir: str = ''

    @property
    def tau(self) -> float:
        return self.T / self.N

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(item) for item in str(text).split(',') if item.strip())


def _optional_int(text: str) -> Optional[int]:
    return None if str(text).strip().lower() in ('', 'none') else int(text)


def _optional_float(text: str) -> Optional[float]:
    return None if str(text).strip().lower() in ('', 'none') else float(text)


def _bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: '{text}'")


def _number(text: str):
    value = float(text)
    return int(value) if value.is_integer() and '.' not in str(text) and 'e' not in str(text).lower() else value


# 설정 키 → (RunConfig 필드, 변환 함수)
KEY_MAP: Dict[str, Tuple[str, Callable[[str], Any]]] = {
    'command': ('command', str),
    'system': ('system', str),
    'T': ('T', float),
    'N': ('N', int),
    't_start': ('t_start', float),
    'u0': ('u0', lambda s: list(_floats(s))),
    'tau': ('tau_list', _floats),
    'eps': ('eps_list', _floats),
    'moreau.r': ('moreau_r', _floats),
    'pde.eps': ('pde_eps', float),
    'pde.cells': ('pde_cells', _optional_int),
    'pde.instance': ('pde_instance', str),
    'pde.dim': ('pde_dim', int),
    'solver.grad_tol': ('solver_grad_tol', _optional_float),
    'solver.max_iters': ('solver_max_iters', _optional_int),
    'solver.method': ('solver_method', str),
    'edb.substeps': ('edb_substeps', int),
    'edb.quadrature_tol': ('edb_quadrature_tol', float),
    'homog.quad_points': ('homog_quad_points', int),
    'homog.resolution': ('homog_resolution', int),
    'homog.u': ('homog_u', float),
    'homog.U': ('homog_U', float),
    'homog.table': ('homog_table', _bool),
    'sweep.points_per_period': ('sweep_points_per_period', int),
    'sweep.decrease_factor': ('sweep_decrease_factor', float),
    'sweep.u0': ('sweep_u0', str),
    'sweep.corrected': ('sweep_corrected', _bool),
    'sweep.workers': ('sweep_workers', int),
    'sweep.dissipation_mode': ('sweep_dissipation_mode', str),
    'sweep.energy_mode': ('sweep_energy_mode', str),
    'probes.samples': ('probe_samples', int),
    'seed': ('seed', int),
    'log_level': ('log_level', str),
    'output': ('output_dir', str),
}


def read_config_file(path: str) -> Dict[str, str]:
    """dotenv 형식 (key = value, # 주석) 설정 파일"""
    if not os.path.exists(path):
        raise ConfigError('config', f"config file not found: {path}")
    return {k: v for k, v in dotenv_values(path).items() if v is not None}


def parse_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
                 env: Optional[Config] = None) -> RunConfig:
    """기본값 < 설정 파일 < 명령행 순으로 합치고 모든 값을 검증한다."""
    env = env or Config()
    raw: Dict[str, Any] = {}
    if path:
        raw.update(read_config_file(path))
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})

    if 'command' not in raw:
        raise ConfigError('command', f"a command is required, one of {list(COMMANDS)}")

    values: Dict[str, Any] = {'seed': env.SEED, 'log_level': env.LOG_LEVEL}
    system_params: Dict[str, float] = {}
    for key, text in raw.items():
        if key.startswith('system.'):
            try:
                system_params[key[len('system.'):]] = _number(text)
            except ValueError:
                raise ConfigError(key, f"system parameter must be numeric, got '{text}'")
            continue
        if key not in KEY_MAP:
            raise ConfigError(key, f"unknown config key '{key}'")
        name, convert = KEY_MAP[key]
        try:
            values[name] = text if not isinstance(text, str) else convert(text)
        except ValueError as e:
            raise ConfigError(key, f"invalid value '{text}': {e}")

    cfg = RunConfig(system_params=system_params, **values)
    if not cfg.output_dir:
        cfg.output_dir = os.path.join(env.OUTPUT_ROOT, f"{cfg.command}_{cfg.system}")
    validate(cfg)
    return cfg


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise ConfigError(key, message)


def _monotone(values) -> bool:
    diffs = [b - a for a, b in zip(values[:-1], values[1:])]
    return all(d > 0 for d in diffs) or all(d < 0 for d in diffs)


def validate(cfg: RunConfig) -> None:
    """모듈 선행 조건에 맞춰 수치 설정을 검증 (계산 시작 전)"""
    from models.catalog import catalog_names
    from models.rds_fd import INSTANCES
    from solvers.inner_solver import METHODS
    from experiments.gamma_lab import U0_PROFILES
    from homogenization.homog import DISSIPATION_MODES, ENERGY_MODES

    _require(cfg.command in COMMANDS, 'command', f"unknown command '{cfg.command}', expected one of {list(COMMANDS)}")
    known = catalog_names() + (['all'] if cfg.command == 'probes' else [])
    _require(cfg.system in known, 'system', f"unknown system '{cfg.system}', catalog: {known}")
    _require(cfg.T > 0, 'T', f"T must be > 0, got {cfg.T}")
    _require(cfg.N >= 1, 'N', f"N must be >= 1, got {cfg.N}")
    _require(cfg.t_start >= 0, 't_start', f"t_start must be >= 0, got {cfg.t_start}")
    _require(cfg.solver_grad_tol is None or cfg.solver_grad_tol > 0, 'solver.grad_tol', "solver.grad_tol must be > 0")
    _require(cfg.solver_max_iters is None or cfg.solver_max_iters >= 1, 'solver.max_iters', "solver.max_iters must be >= 1")
    _require(cfg.solver_method in METHODS, 'solver.method', f"solver.method must be one of {list(METHODS)}")
    _require(cfg.edb_substeps >= 1, 'edb.substeps', "edb.substeps must be >= 1")
    _require(cfg.edb_quadrature_tol > 0, 'edb.quadrature_tol', "edb.quadrature_tol must be > 0")
    _require(cfg.homog_quad_points >= 2, 'homog.quad_points', "homog.quad_points must be >= 2")
    _require(cfg.homog_resolution >= 8, 'homog.resolution', "homog.resolution must be >= 8")
    _require(cfg.pde_instance in INSTANCES, 'pde.instance', f"unknown instance '{cfg.pde_instance}', known: {sorted(INSTANCES)}")
    _require(cfg.pde_dim in (1, 2), 'pde.dim', "pde.dim must be 1 or 2")
    _require(0.0 < cfg.pde_eps <= 1.0, 'pde.eps', f"pde.eps must lie in (0,1], got {cfg.pde_eps}")
    _require(cfg.pde_cells is None or cfg.pde_cells >= 1, 'pde.cells', "pde.cells must be >= 1")
    _require(0.0 < cfg.sweep_decrease_factor <= 1.0, 'sweep.decrease_factor', "sweep.decrease_factor must lie in (0,1]")
    _require(cfg.sweep_workers >= 1, 'sweep.workers', "sweep.workers must be >= 1")
    _require(cfg.sweep_points_per_period >= 1, 'sweep.points_per_period', "sweep.points_per_period must be >= 1")
    _require(cfg.sweep_u0 in U0_PROFILES, 'sweep.u0', f"sweep.u0 must be one of {sorted(U0_PROFILES)}")
    _require(cfg.sweep_dissipation_mode in DISSIPATION_MODES, 'sweep.dissipation_mode',
             f"sweep.dissipation_mode must be one of {list(DISSIPATION_MODES)}")
    _require(cfg.sweep_energy_mode in ENERGY_MODES, 'sweep.energy_mode',
             f"sweep.energy_mode must be one of {list(ENERGY_MODES)}")
    _require(cfg.probe_samples >= 1, 'probes.samples', "probes.samples must be >= 1")
    _require(bool(cfg.moreau_r) and all(r > 0 for r in cfg.moreau_r) and
             all(b > a for a, b in zip(cfg.moreau_r[:-1], cfg.moreau_r[1:])),
             'moreau.r', "moreau.r must be positive and strictly increasing")

    if cfg.command == 'moreau':
        _require(cfg.moreau_r[-1] <= cfg.T * (1 + 1e-12), 'moreau.r',
                 "moreau.r values must stay within the horizon T")
    if cfg.command == 'tau-sweep':
        _require(len(cfg.tau_list) >= 3 and _monotone(cfg.tau_list), 'tau',
                 "tau must list at least 3 strictly monotone values")
        _require(all(t > 0 for t in cfg.tau_list), 'tau', "tau values must be > 0")
    if cfg.command == 'eps-sweep':
        _require(len(cfg.eps_list) >= 3 and _monotone(cfg.eps_list), 'eps',
                 "eps must list at least 3 strictly monotone values")
        _require(all(0.0 < e <= 1.0 for e in cfg.eps_list), 'eps', "eps values must lie in (0,1]")
        if cfg.pde_cells is not None:
            h = 1.0 / cfg.pde_cells
            worst = min(cfg.eps_list)
            _require(h <= worst / cfg.sweep_points_per_period * (1 + 1e-12), 'pde.cells',
                     f"resolution rule h <= eps/{cfg.sweep_points_per_period} violated: "
                     f"h={h:.4g} > {worst / cfg.sweep_points_per_period:.4g} at eps={worst:g}")
