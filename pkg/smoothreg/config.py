"""Experiment configuration: YAML file, .env overrides and typed settings."""
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import yaml
from dotenv import load_dotenv

from smoothreg.errors import ConfigError
from smoothreg.kernels import KernelSpec
from smoothreg.noise import NoiseSpec

logger = logging.getLogger(__name__)

LEARNERS = ("mlp", "kernel_gd")
NOISE_TYPES = ("G", "L", "N")
REGULARIZERS = ("early_stop", "weight_decay")
LAPLACE_FORMS = ("classical", "generalized", "tensor")


def default_sigma_grid() -> Tuple[float, ...]:
    """0.0 to 0.6 in steps of 0.05."""
    return tuple(round(0.05 * i, 10) for i in range(13))


@dataclass(frozen=True)
class KernelGdSettings:
    augmentations: int = 64
    beta_c: float = 0.5
    t_max: int = 100_000
    check_every: int = 200
    alpha: float = 1e-3
    weight_decay_iterations: int = 10_000
    mode: str = "closed_form"
    kernel: dict = field(default_factory=lambda: {"family": "matern", "nu": 1.5, "rho": 0.5})


@dataclass(frozen=True)
class MlpSettings:
    hidden: Tuple[int, ...] = (100, 100)
    augmentations: int = 1000
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 10
    eval_every: int = 200
    max_iters_early_stop: int = 100_000
    max_iters_weight_decay: int = 10_000
    weight_decay: float = 1e-4
    weight_decay_mode: str = "fixed"
    weight_decay_candidates: Tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    aug_subsample: int = 8
    eval_augmentations: int = 0
    loss: str = "per_augmentation"


@dataclass(frozen=True)
class NoiseSettings:
    laplace_form: str = "classical"
    m_eps: float = 1.0
    shared: bool = True


@dataclass(frozen=True)
class DatagenSettings:
    nu: float = 5.0
    rho: float = 1.0
    variance: float = 1.0
    radius: float = 1.0
    anchors: int = 2000
    jitter: float = 1e-10
    noise_var: float = 0.01
    n_test: int = 500


@dataclass(frozen=True)
class RateSettings:
    sizes: Tuple[int, ...] = (25, 50, 100, 200, 400)
    regime: str = "gaussian"
    dim: int = 1
    mf: float = 2.0
    c_prop: float = 1.0
    augmentations: int = 32
    seeds: int = 15
    y_scale: float = 1.0
    kernel: dict = field(default_factory=lambda: {"family": "matern", "m0": 2.0, "phi": 1.0})


@dataclass(frozen=True)
class VerifySettings:
    sup_gap_sizes: Tuple[int, ...] = (100, 1000, 10_000, 100_000)
    sup_gap_reps: int = 5
    floor_designs: int = 100
    gd_problems: int = 20
    cf_draws: int = 100_000
    mc_draws: int = 100_000


@dataclass(frozen=True)
class StorageSettings:
    enabled: bool = True
    database_path: str = "smoothreg.db"


@dataclass(frozen=True)
class LoggingSettings:
    level: str = "INFO"
    file: Optional[str] = None


_SECTIONS = {
    "kernel_gd": KernelGdSettings,
    "mlp": MlpSettings,
    "noise": NoiseSettings,
    "datagen": DatagenSettings,
    "rate": RateSettings,
    "verify": VerifySettings,
    "storage": StorageSettings,
    "logging": LoggingSettings,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """The simulation-study grid and every nested setting.

    ``sigma_grid`` holds the smoothing scale: sigma_n for Gaussian noise and
    the Laplace scale b for classical Laplace noise.
    """
    learner: str = "mlp"
    dims: Tuple[int, ...] = (1, 2, 3)
    noise_types: Tuple[str, ...] = NOISE_TYPES
    regularizers: Tuple[str, ...] = REGULARIZERS
    sizes: Tuple[int, ...] = (50, 100, 200)
    sigma_grid: Tuple[float, ...] = field(default_factory=default_sigma_grid)
    seeds: int = 15
    master_seed: int = 0
    workers: int = 1
    out_dir: str = "results"
    kernel_gd: KernelGdSettings = field(default_factory=KernelGdSettings)
    mlp: MlpSettings = field(default_factory=MlpSettings)
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    datagen: DatagenSettings = field(default_factory=DatagenSettings)
    rate: RateSettings = field(default_factory=RateSettings)
    verify: VerifySettings = field(default_factory=VerifySettings)
    storage: StorageSettings = field(default_factory=StorageSettings)
    logging: LoggingSettings = field(default_factory=LoggingSettings)

    def __post_init__(self):
        for name in ("dims", "noise_types", "regularizers", "sizes", "sigma_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "sigma_grid", tuple(float(s) for s in self.sigma_grid))
        self._validate()

    def _validate(self):
        if self.learner not in LEARNERS:
            raise ConfigError(f"unknown learner {self.learner!r}; choose from {LEARNERS}")
        if self.seeds < 1:
            raise ConfigError(f"seeds must be >= 1, got {self.seeds}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if not self.sigma_grid or list(self.sigma_grid) != sorted(self.sigma_grid) or self.sigma_grid[0] < 0:
            raise ConfigError(f"sigma_grid must be nonempty, nonnegative and sorted ascending: {self.sigma_grid}")
        if len(set(self.sigma_grid)) != len(self.sigma_grid):
            raise ConfigError("sigma_grid has repeated values")
        for code in self.noise_types:
            if code not in NOISE_TYPES:
                raise ConfigError(f"unknown noise type {code!r}; choose from {NOISE_TYPES}")
        for reg in self.regularizers:
            if reg not in REGULARIZERS:
                raise ConfigError(f"unknown regularizer {reg!r}; choose from {REGULARIZERS}")
        for D in self.dims:
            if D not in (1, 2, 3):
                raise ConfigError(f"dims must be drawn from 1, 2, 3, got {D}")
        if any(n < 2 for n in self.sizes):
            raise ConfigError(f"sizes must be >= 2: {self.sizes}")
        if self.noise.laplace_form not in LAPLACE_FORMS:
            raise ConfigError(f"unknown laplace_form {self.noise.laplace_form!r}")
        if self.mlp.weight_decay_mode not in ("fixed", "select"):
            raise ConfigError(f"weight_decay_mode must be fixed or select, got {self.mlp.weight_decay_mode!r}")
        for D in self.dims:
            self.kernel_spec(D)
            if "L" in self.noise_types:
                self.noise_spec("L", max(self.sigma_grid), D)

    # --- derived specs ---

    def kernel_spec(self, D: int) -> KernelSpec:
        return KernelSpec.from_dict(self.kernel_gd.kernel, dim=D)

    def noise_spec(self, code: str, sigma: float, D: int) -> NoiseSpec:
        """Augmentation law for a table noise type at smoothing scale ``sigma``."""
        if code == "N" or sigma == 0.0:
            return NoiseSpec.none(D)
        if code == "G":
            return NoiseSpec.gaussian(sigma, D)
        form = self.noise.laplace_form
        if form == "classical":
            return NoiseSpec.laplace(sigma, D)
        if form == "generalized":
            return NoiseSpec.generalized_laplace(sigma, self.noise.m_eps, D)
        return NoiseSpec.tensor_laplace(sigma, self.noise.m_eps, D)

    def sigmas_for(self, code: str) -> Tuple[float, ...]:
        """No-smoothing runs collapse the grid to sigma = 0."""
        return (0.0,) if code == "N" else self.sigma_grid

    # --- variants ---

    def quick(self) -> "ExperimentConfig":
        """Reduced grids for a desk-scale smoke run."""
        return replace(
            self,
            sizes=tuple(n for n in self.sizes if n in (50, 200)) or self.sizes[:2],
            sigma_grid=tuple(s for i, s in enumerate(self.sigma_grid) if i % 2 == 0),
            seeds=min(self.seeds, 5),
            mlp=replace(self.mlp, augmentations=min(self.mlp.augmentations, 200),
                        max_iters_early_stop=min(self.mlp.max_iters_early_stop, 20_000),
                        max_iters_weight_decay=min(self.mlp.max_iters_weight_decay, 5_000)),
            kernel_gd=replace(self.kernel_gd, augmentations=min(self.kernel_gd.augmentations, 32),
                              t_max=min(self.kernel_gd.t_max, 20_000)),
            rate=replace(self.rate, sizes=tuple(n for n in self.rate.sizes if n <= 200) or self.rate.sizes,
                         seeds=min(self.rate.seeds, 5)),
            verify=replace(self.verify, sup_gap_sizes=tuple(N for N in self.verify.sup_gap_sizes if N <= 10_000),
                           sup_gap_reps=min(self.verify.sup_gap_reps, 3),
                           floor_designs=min(self.verify.floor_designs, 20),
                           gd_problems=min(self.verify.gd_problems, 5)),
        )

    # --- serialization ---

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "ExperimentConfig":
        data = dict(data or {})
        experiment = dict(data.pop("experiment", {}) or {})
        kwargs = {}
        for name, section_cls in _SECTIONS.items():
            raw = data.pop(name, None)
            if raw is None:
                raw = experiment.pop(name, None)
            if raw is not None:
                kwargs[name] = _build_section(section_cls, name, raw)
        experiment.update({k: v for k, v in data.items() if k in _top_level_names()})
        unknown = set(experiment) - _top_level_names()
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        if "sigma_grid" in experiment and isinstance(experiment["sigma_grid"], dict):
            experiment["sigma_grid"] = _expand_grid(experiment["sigma_grid"])
        kwargs.update(experiment)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc

    def config_hash(self) -> str:
        """Digest of every setting that changes results (not workers, paths or logging)."""
        payload = self.to_dict()
        for volatile in ("workers", "out_dir", "storage", "logging"):
            payload.pop(volatile, None)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _top_level_names() -> set:
    return {f.name for f in fields(ExperimentConfig)} - set(_SECTIONS)


def _build_section(section_cls, name: str, raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(section_cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return section_cls(**values)
    except TypeError as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from exc


def _expand_grid(spec: dict) -> Tuple[float, ...]:
    """{start, stop, step} -> inclusive grid rounded to 10 decimals."""
    start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
    if step <= 0:
        raise ConfigError(f"sigma_grid step must be positive, got {step}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + i * step, 10) for i in range(count))


def _find_config() -> Optional[str]:
    """Find config.yaml: check CWD, then the package's parent directory."""
    candidates = [
        Path.cwd() / "config.yaml",
        Path(__file__).parent.parent / "config.yaml",
    ]
    for p in candidates:
        if p.exists():
            return str(p)
    return None


def _env_overrides(data: dict) -> dict:
    experiment = data.setdefault("experiment", {}) or {}
    data["experiment"] = experiment
    if os.getenv("SMOOTHREG_SEED"):
        experiment["master_seed"] = int(os.environ["SMOOTHREG_SEED"])
    if os.getenv("SMOOTHREG_WORKERS"):
        experiment["workers"] = int(os.environ["SMOOTHREG_WORKERS"])
    if os.getenv("SMOOTHREG_OUT"):
        experiment["out_dir"] = os.environ["SMOOTHREG_OUT"]
    if os.getenv("SMOOTHREG_LOG_LEVEL"):
        section = data.setdefault("logging", {}) or {}
        section["level"] = os.environ["SMOOTHREG_LOG_LEVEL"]
        data["logging"] = section
    return data


def load_config(path: Optional[str] = None, *, use_env: bool = True) -> ExperimentConfig:
    """Read the YAML config, apply environment overrides and validate.

    Without ``path`` the file is searched for like ``_find_config``; a missing
    file yields the built-in defaults.

    Raises:
        FileNotFoundError: if an explicit ``path`` does not exist.
        ConfigError: on malformed or invalid settings.
    """
    if use_env:
        load_dotenv()
    if path is not None and not os.path.exists(path):
        raise FileNotFoundError(f"Config not found: {path}")
    path = path or _find_config()
    data = {}
    if path:
        with open(path) as f:
            try:
                data = yaml.safe_load(f) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"could not parse {path}: {exc}") from exc
        logger.debug(f"Loaded config from {path}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at top level")
    if use_env:
        data = _env_overrides(data)
    return ExperimentConfig.from_dict(data)
