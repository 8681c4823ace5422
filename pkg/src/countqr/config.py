"""Run configuration: JSON file plus command-line overrides.

Precedence is command-line flags, then the config file, then defaults.
Unknown keys are rejected so a typo never silently falls back to a default.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

COMMANDS = ("simulate", "fit", "quantile", "regress", "baseline", "compare", "report", "run", "summary")
BASELINES = ("continuous-poisson", "jittering")


@dataclass
class RunConfig:
    command: str = "run"
    input: str | None = None
    response: str = "y"
    covariates: list[str] | None = None
    exclude_rows: list[int] = field(default_factory=list)
    output_dir: str = "countqr-out"
    taus: list[float] = field(default_factory=lambda: [0.1, 0.5, 0.9])
    # sampler schedule
    burn_in: int = 2000
    iterations: int = 20000
    thin: int = 10
    M: int = 10
    chains: int = 2
    rw_step: float = 0.1
    # prior on the partition: targets for K_N or explicit parameters
    cluster_mean: float | None = 20.0
    cluster_sd: float | None = 20.0
    discount: float | None = None
    strength: float | None = None
    prior_only: bool = False
    # spline regression
    spline_degree: int = 3
    spline_knots: int = 20
    penalty_order: int = 2
    smoothing: float | str = "auto"
    grid_points: int = 200
    # quantile engine and model variants
    mode: str = "paper"
    quantile_tol: float = 1e-8
    paper_latent: bool = False
    shared_fresh: bool = False
    include_x_term: bool = True
    standardize: bool = True
    seed: int = 0
    # simulation
    setting: int | None = None
    n: int = 300
    # baselines
    baseline: str = "continuous-poisson"
    bootstrap: int = 0
    n_jitters: int = 50

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.command in COMMANDS, f"command must be one of {COMMANDS}")
        need(isinstance(self.taus, list) and len(self.taus) > 0, "taus must be a nonempty list")
        need(all(isinstance(t, (int, float)) and 0 < t < 1 for t in self.taus), "every tau must lie in (0, 1)")
        for name in ("burn_in", "iterations", "thin", "M", "chains", "spline_degree", "spline_knots",
                     "penalty_order", "grid_points", "seed", "n", "bootstrap", "n_jitters"):
            v = getattr(self, name)
            need(isinstance(v, int) and not isinstance(v, bool), f"{name} must be an integer")
        need(self.burn_in >= 0, "burn_in must be >= 0")
        need(self.iterations >= 1 and self.thin >= 1, "iterations and thin must be >= 1")
        need(self.iterations >= self.thin, "iterations must be at least thin")
        need(self.M >= 1 and self.chains >= 1, "M and chains must be >= 1")
        need(self.rw_step > 0, "rw_step must be positive")
        need(self.seed >= 0, "seed must be unsigned")
        explicit = self.discount is not None or self.strength is not None
        if explicit:
            need(self.discount is not None and self.strength is not None,
                 "discount and strength must be given together")
            need(0 <= self.discount < 1, "discount must lie in [0, 1)")
            need(self.strength > -self.discount, "strength must exceed -discount")
        else:
            need(self.cluster_mean is not None and self.cluster_sd is not None,
                 "give cluster_mean and cluster_sd, or discount and strength")
            need(self.cluster_mean > 1 and self.cluster_sd > 0, "cluster targets must satisfy mean > 1, sd > 0")
        need(self.spline_degree >= 0 and self.spline_knots >= 0, "spline sizes must be nonnegative")
        need(0 <= self.penalty_order < self.spline_degree + self.spline_knots + 1,
             "penalty_order must be below the basis dimension")
        need(self.smoothing == "auto" or (isinstance(self.smoothing, (int, float)) and self.smoothing >= 0),
             "smoothing must be 'auto' or a nonnegative number")
        need(self.grid_points >= 2, "grid_points must be >= 2")
        need(self.mode in ("paper", "exact"), "mode must be 'paper' or 'exact'")
        need(0 < self.quantile_tol < 1e-2, "quantile_tol must lie in (0, 0.01)")
        need(self.setting in (None, 1, 2), "setting must be 1 or 2")
        need(self.n >= 10, "n must be >= 10")
        need(self.baseline in BASELINES, f"baseline must be one of {BASELINES}")
        need(self.bootstrap >= 0 and self.n_jitters >= 1, "bootstrap >= 0 and n_jitters >= 1 required")
        need(all(isinstance(r, int) and r >= 1 for r in self.exclude_rows),
             "exclude_rows must list 1-based data row numbers")

    @property
    def explicit_py(self) -> bool:
        return self.discount is not None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, updated by the file at ``path``, updated by non-None overrides."""
    merged: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            merged = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(merged, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k] = v
    return RunConfig.from_dict(merged)
