"""Pipeline configuration: a sectioned ``key = value`` file checked against
:data:`SCHEMA`, with environment overrides.

Any key can be overridden from the environment as
``RSM_<SECTION>_<KEY>`` (upper case, dashes as underscores), e.g.
``RSM_CORPUS_N=60``. Overrides are applied after the file is read and are
recorded in the copy of the config written next to the results.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..noise_lab import NoiseSpec

ENV_PREFIX = "RSM_"
LARGE_SCALE_N = 12_000


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


# section -> key -> (type, default)
SCHEMA: dict[str, dict[str, tuple[type, str]]] = {
    "run": {
        "seed": (int, "0"),
        "out": (str, "runs/default"),
        "jobs": (int, "1"),
        "replicates": (int, "1"),
    },
    "corpus": {
        "n": (int, "600"),
        "train_fraction": (float, "0.8333333333333334"),
        "width": (int, "100"),
        "height": (int, "100"),
        "background": (str, "procedural"),
    },
    "noise": {
        "specs": (str, "blur:sigma=2,k=6; sp:p=0.1; gauss:sigma=25"),
    },
    "filters": {
        "blur": (str, "wiener:nsr=0.001,pad=12"),
        "sp": (str, "median:k=1"),
        "gauss": (str, "nlm+iftsvm:patch=3,window=7,alpha_edge=0.6,alpha_smooth=1.4"),
    },
    "segmenter": {
        "L": (int, "6"),
        "include_rgb": (bool, "true"),
        "hidden": (int, "32"),
        "lr": (float, "0.05"),
        "epochs": (int, "500"),
        "batch": (int, "1024"),
        "pixels_per_epoch": (int, "4096"),
        "white_threshold": (float, "0.8"),
        "train": (bool, "true"),
    },
    "denoiser": {
        "patch_images": (int, "20"),
        "samples_per_class": (int, "200"),
    },
    "evaluate": {
        "denoise": (bool, "true"),
        "baselines": (bool, "true"),
    },
}

FILTER_KINDS = {"wiener": {"nsr", "pad"},
                "median": {"k"},
                "nlm": {"h", "patch", "window"},
                "nlm+iftsvm": {"h", "patch", "window", "alpha_edge", "alpha_smooth", "model"}}
FILTER_ALIASES = {"nlm-iftsvm": "nlm+iftsvm"}
STRING_PARAMS = {"model"}


@dataclass(frozen=True)
class FilterSpec:
    kind: str
    params: tuple = ()

    @property
    def options(self) -> dict:
        return dict(self.params)

    def __str__(self) -> str:
        if not self.params:
            return self.kind
        return self.kind + ":" + ",".join(
            f"{k}={v}" if isinstance(v, str) else f"{k}={v:g}" for k, v in self.params)

    @classmethod
    def parse(cls, text: str) -> "FilterSpec":
        kind, _, rest = text.strip().partition(":")
        kind = kind.strip().lower()
        kind = FILTER_ALIASES.get(kind, kind)
        if kind not in FILTER_KINDS:
            raise ConfigError(f"unknown filter {kind!r}; expected one of {sorted(FILTER_KINDS)}")
        params = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, value = item.partition("=")
            key = key.strip().lower()
            if not eq or key not in FILTER_KINDS[kind]:
                raise ConfigError(f"bad parameter {item!r} for filter {kind}")
            if key in STRING_PARAMS:
                params[key] = value.strip()
                continue
            try:
                params[key] = float(value)
            except ValueError:
                raise ConfigError(f"filter parameter {item!r} is not a number") from None
        return cls(kind, tuple(sorted(params.items())))


@dataclass
class PipelineConfig:
    seed: int = 0
    out: Path = Path("runs/default")
    jobs: int = 1
    replicates: int = 1
    n: int = 600
    train_fraction: float = 5 / 6
    size: tuple[int, int] = (100, 100)
    background: str = "procedural"
    noise: list[NoiseSpec] = field(default_factory=list)
    filters: dict[str, FilterSpec] = field(default_factory=dict)
    seg: dict = field(default_factory=dict)
    denoiser: dict = field(default_factory=dict)
    denoise: bool = True
    baselines: bool = True
    raw: configparser.ConfigParser | None = field(default=None, repr=False)

    def validate(self) -> None:
        from ..arm_world import BACKGROUND_KINDS
        from .. import arm_world

        if self.n < 2:
            raise ConfigError(f"corpus n must be >= 2, got {self.n}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        n_train, n_test = arm_world.split_counts(self.n, self.train_fraction)
        if n_train < 1 or n_test < 1:
            raise ConfigError(f"n={self.n} leaves an empty train or test split")
        if min(self.size) < 16:
            raise ConfigError("image size must be at least 16 x 16")
        if self.background not in BACKGROUND_KINDS:
            raise ConfigError(f"unknown background {self.background!r}; "
                              f"expected one of {BACKGROUND_KINDS}")
        if self.jobs < 1 or self.replicates < 1:
            raise ConfigError("jobs and replicates must be >= 1")
        labels = [spec.label for spec in self.noise]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate noise specs: {labels}")
        if self.denoise:
            for spec in self.noise:
                if spec.kind not in self.filters:
                    raise ConfigError(f"no filter bound to noise kind {spec.kind!r}; "
                                      f"bindings: {self.binding_text()}")
        if not 0 < self.seg["white_threshold"] < 1:
            raise ConfigError("white_threshold must lie in (0, 1)")
        if self.seg["epochs"] < 1 or self.seg["lr"] <= 0:
            raise ConfigError("segmenter needs epochs >= 1 and lr > 0")
        if self.denoiser["patch_images"] < 1:
            raise ConfigError("denoiser patch_images must be >= 1")

    def binding_text(self) -> str:
        return ", ".join(f"{k} -> {v}" for k, v in sorted(self.filters.items())) or "(none)"


def default_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for section, keys in SCHEMA.items():
        cp[section] = {k: default for k, (_, default) in keys.items()}
    return cp


def _env_overrides(cp: configparser.ConfigParser, environ) -> None:
    for section, keys in SCHEMA.items():
        for key in keys:
            name = f"{ENV_PREFIX}{section}_{key}".upper().replace("-", "_")
            if name in environ:
                cp[section][key] = environ[name]


def _convert(section: str, key: str, text: str):
    kind = SCHEMA[section][key][0]
    try:
        if kind is bool:
            lowered = text.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {text!r} is not a valid {kind.__name__}") from None


def load_config(path=None, environ=None, overrides: dict | None = None) -> PipelineConfig:
    """Read ``path`` (or the defaults), apply environment and explicit
    overrides (``{(section, key): value}``), then validate."""
    cp = default_parser()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        user = configparser.ConfigParser(interpolation=None)
        user.optionxform = str
        try:
            user.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in user.sections():
            if section not in SCHEMA:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, value in user[section].items():
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                cp[section][key] = value
    _env_overrides(cp, os.environ if environ is None else environ)
    for (section, key), value in (overrides or {}).items():
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown setting [{section}] {key}")
        cp[section][key] = str(value)

    v = {s: {k: _convert(s, k, cp[s][k]) for k in SCHEMA[s]} for s in SCHEMA}
    try:
        noise = [NoiseSpec.parse(t) for t in v["noise"]["specs"].split(";") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"[noise] specs: {exc}") from None
    filters = {}
    for kind, text in v["filters"].items():
        if text.strip():
            filters[kind] = FilterSpec.parse(text)
    cfg = PipelineConfig(
        seed=v["run"]["seed"], out=Path(v["run"]["out"]), jobs=v["run"]["jobs"],
        replicates=v["run"]["replicates"],
        n=v["corpus"]["n"], train_fraction=v["corpus"]["train_fraction"],
        size=(v["corpus"]["width"], v["corpus"]["height"]),
        background=v["corpus"]["background"],
        noise=noise, filters=filters, seg=v["segmenter"], denoiser=v["denoiser"],
        denoise=v["evaluate"]["denoise"], baselines=v["evaluate"]["baselines"], raw=cp)
    cfg.validate()
    return cfg


def write_config(cfg: PipelineConfig, path) -> None:
    """Write the effective settings (file + overrides) as a config file."""
    cp = cfg.raw if cfg.raw is not None else default_parser()
    cp["run"]["seed"] = str(cfg.seed)
    cp["run"]["out"] = str(cfg.out)
    cp["run"]["jobs"] = str(cfg.jobs)
    cp["corpus"]["n"] = str(cfg.n)
    cp["evaluate"]["denoise"] = "true" if cfg.denoise else "false"
    with open(path, "w") as fh:
        cp.write(fh)
