import hashlib
import json
import os
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from config.config import Config, RunConfig
from utils.logger import get_logger

logger = get_logger(__name__)

FLOAT_FORMAT = '%.12e'


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"value of type {type(value).__name__} is not JSON serializable")


def config_hash(cfg: RunConfig) -> str:
    """출력 디렉토리를 제외한 설정의 sha256"""
    data = cfg.to_dict()
    data.pop('output_dir', None)
    payload = json.dumps(data, sort_keys=True, default=_jsonable)
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


class ResultWriter:
    """실행 결과를 출력 디렉토리에 CSV/JSON 으로 기록한다.

    같은 설정과 시드로 다시 실행하면 같은 바이트가 나오도록 키 정렬과 고정 float 형식을 쓴다.
    """

    def __init__(self, config: Config, output_dir: str):
        self.config = config
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)
        self.files: List[str] = []

    def _path(self, name: str) -> str:
        path = os.path.join(self.output_dir, name)
        self.files.append(name)
        return path

    def write_csv(self, name: str, frame: pd.DataFrame) -> str:
        path = self._path(name)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        logger.info(f"CSV 저장: {path} ({len(frame)}행)")
        return path

    def write_json(self, name: str, payload: Dict[str, Any]) -> str:
        path = self._path(name)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, sort_keys=True, indent=2, default=_jsonable)
            f.write('\n')
        logger.info(f"JSON 저장: {path}")
        return path

    def write_config(self, cfg: RunConfig) -> str:
        return self.write_json('config.json', cfg.to_dict())

    def write_manifest(self, cfg: RunConfig, passed: bool, probe_constants: Optional[Dict[str, float]] = None,
                       extra: Optional[Dict[str, Any]] = None) -> str:
        manifest = {
            'version': self.config.VERSION,
            'command': cfg.command,
            'system': cfg.system,
            'seed': cfg.seed,
            'config_sha256': config_hash(cfg),
            'probe_constants': dict(probe_constants or {}),
            'passed': bool(passed),
            'files': sorted(set(self.files)),
        }
        manifest.update(extra or {})
        return self.write_json('manifest.json', manifest)

    @staticmethod
    def format_summary(title: str, lines: Iterable[str], passed: bool) -> str:
        body = ["=" * 50 + "\n", f"{title}\n", "-" * 20 + "\n"]
        body.extend(f"{line}\n" for line in lines)
        body.extend(["-" * 20 + "\n", f"결과: {'PASS' if passed else 'FAIL'}\n"])
        return "".join(body)
