import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, TypeVar

logger = logging.getLogger(__name__)

CONFIG_FILE_NAME = "edgecalc.json"
THREADS_ENV_VAR = "EDGECALC_THREADS"

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class Settings:
    # grid preset
    m: int = 1
    q: int = 1
    T: float = 12.0
    N_t: int = 128
    N_sigma: int = 16
    N_u: int = 16
    eps: float = 0.5
    eps1: float = 0.1
    eps2: float = 0.3
    # stochastic checks
    seed: int = 0
    ensemble_size: int = 16
    # 0 means "use every core"
    threads: int = 0

    def grid_kwargs(self) -> dict:
        return {
            "m": self.m, "q": self.q, "T": self.T,
            "N_t": self.N_t, "N_sigma": self.N_sigma, "N_u": self.N_u,
            "eps": self.eps, "eps1": self.eps1, "eps2": self.eps2,
        }

    def to_dict(self) -> dict:
        return asdict(self)


def load_settings(path: Optional[str | Path] = None, **overrides) -> Settings:
    """
    Build the effective settings.

    Precedence, lowest first: defaults, the config file, EDGECALC_THREADS, explicit overrides
    (the CLI passes its flags here; None values are ignored).
    """
    settings = Settings()
    config_path = Path(path) if path is not None else Path.cwd() / CONFIG_FILE_NAME
    if config_path.exists():
        with open(config_path, "r") as f:
            raw = json.load(f)
        known = {f.name for f in fields(Settings)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"Unknown keys in {config_path}: {sorted(unknown)}")
        settings = replace(settings, **raw)
        logger.debug(f"Loaded settings from {config_path}")
    elif path is not None:
        raise FileNotFoundError(f"Config file {config_path} does not exist")

    threads = os.getenv(THREADS_ENV_VAR)
    if threads:
        try:
            settings = replace(settings, threads=int(threads))
        except ValueError:
            raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {threads!r}")

    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(settings, **overrides)


def thread_count(settings: Optional[Settings] = None) -> int:
    requested = settings.threads if settings is not None else int(os.getenv(THREADS_ENV_VAR) or 0)
    if requested <= 0:
        return os.cpu_count() or 1
    return requested


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> list[R]:
    """Map func over items on a capped thread pool; results keep the input order."""
    items = list(items)
    workers = min(threads or thread_count(), max(len(items), 1))
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
