# src/config/settings.py

import os
from dataclasses import dataclass
from typing import Optional


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    return int(raw) if raw not in (None, '') else default


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    return float(raw) if raw not in (None, '') else default


@dataclass
class Settings:
    FK_SEED: int
    FK_TIMEOUT_S: float
    FK_WARMUP_ITERS: int
    FK_TIMED_RUNS: int
    FK_BOOTSTRAP_REPLICATES: int
    FK_CI_LEVEL: float
    FK_TOPK: int
    FK_MAX_WORKERS: int
    FK_IMPUTED_SPEEDUP: float

    def __init__(self):
        self.FK_SEED = _env_int('FK_SEED', 42)
        self.FK_TIMEOUT_S = _env_float('FK_TIMEOUT_S', 60.0)
        self.FK_WARMUP_ITERS = _env_int('FK_WARMUP_ITERS', 10)
        self.FK_TIMED_RUNS = _env_int('FK_TIMED_RUNS', 3)
        self.FK_BOOTSTRAP_REPLICATES = _env_int('FK_BOOTSTRAP_REPLICATES', 10_000)
        self.FK_CI_LEVEL = _env_float('FK_CI_LEVEL', 0.95)
        self.FK_TOPK = _env_int('FK_TOPK', 20)
        self.FK_MAX_WORKERS = _env_int('FK_MAX_WORKERS', 1)
        self.FK_IMPUTED_SPEEDUP = _env_float('FK_IMPUTED_SPEEDUP', 0.01)
        self._validate_settings()

    def _validate_settings(self):
        checks = {
            'FK_TIMEOUT_S': self.FK_TIMEOUT_S > 0,
            'FK_WARMUP_ITERS': self.FK_WARMUP_ITERS >= 0,
            'FK_TIMED_RUNS': self.FK_TIMED_RUNS >= 1,
            'FK_BOOTSTRAP_REPLICATES': self.FK_BOOTSTRAP_REPLICATES >= 1,
            'FK_CI_LEVEL': 0.0 < self.FK_CI_LEVEL < 1.0,
            'FK_TOPK': self.FK_TOPK >= 1,
            'FK_MAX_WORKERS': self.FK_MAX_WORKERS >= 1,
            'FK_IMPUTED_SPEEDUP': self.FK_IMPUTED_SPEEDUP > 0,
        }
        invalid = [name for name, ok in checks.items() if not ok]
        if invalid:
            raise ValueError(f"invalid environment variables: {', '.join(invalid)}")

    def resolve_seed(self, seed: Optional[int]) -> int:
        """explicit flag wins, FK_SEED is the fallback"""
        return self.FK_SEED if seed is None else seed
