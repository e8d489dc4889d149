"""Flat ``key = value`` settings files shared by the CLI subcommands."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, get_type_hints

from . import simulator as sim
from .cf import CfConfig
from .dimred import SvdConfig
from .synopsis import SynopsisConfig


class ConfigError(ValueError):
    """Bad settings file or value."""


@dataclass(frozen=True)
class Settings:
    # data
    workload: str = "cf"
    data: str = ""
    requests: str = ""
    # held-out CF ratings (user_id,item_id,actual_rating)
    testset: str = ""
    components: int = 8
    seed: int = 0
    # synthetic data used when no data path is given
    gen_points: int = 3600
    gen_requests: int = 200
    # synopsis
    compression_ratio: float = 20.0
    min_entries: int = 2
    max_entries: int = 8
    min_synopsis_size: int = 2
    full_reduce_on_update: bool = False
    svd_j: int = 3
    svd_iters: int = 100
    svd_learning_rate: float = 0.002
    svd_regularization: float = 0.02
    # workloads
    cf_mode: str = "centered"
    cf_min_overlap: int = 2
    cf_count_weighted: bool = False
    search_k: int = 10
    search_stats: str = "local"
    # strategies
    strategies: tuple = ("basic", "reissue", "partial", "accuracy_aware")
    l_spe_ms: float = 100.0
    i_max: Optional[int] = None
    i_max_fraction: Optional[float] = None
    partial_deadline_ms: float = 100.0
    reissue_percentile: float = 95.0
    reissue_min_samples: int = 100
    reissue_window: int = 1000
    # arrivals
    rate_factors: tuple = (0.5, 1.0, 1.5, 2.0, 3.0)
    n_requests: int = 5000
    trace: str = ""
    # service-time model; point costs are calibrated from full_scan_ms when unset
    fixed_ms: float = 2.0
    full_scan_ms: float = 75.0
    original_point_ms: Optional[float] = None
    synopsis_point_ms: Optional[float] = None
    # interference
    interference: bool = True
    interference_median: float = 1.5
    interference_sigma: float = 0.3
    interference_on_ms: float = 1000.0
    interference_off_ms: float = 3000.0
    straggler_component: Optional[int] = None
    straggler_factor: float = 10.0
    window_ms: float = 60_000.0
    outcomes: bool = False

    def __post_init__(self):
        if self.workload not in ("cf", "search"):
            raise ConfigError(f"workload must be cf or search, not {self.workload!r}")
        if self.search_stats not in ("local", "global"):
            raise ConfigError("search_stats must be local or global")
        unknown = set(self.strategies) - set(sim.STRATEGY_NAMES)
        if unknown:
            raise ConfigError(f"unknown strategies {sorted(unknown)}")
        if self.components < 1:
            raise ConfigError("components must be >= 1")

    # -- derived configs --

    def synopsis_config(self) -> SynopsisConfig:
        svd = SvdConfig(self.svd_j, self.svd_iters, self.svd_learning_rate, self.svd_regularization, self.seed)
        return SynopsisConfig(svd, self.compression_ratio, self.min_entries, self.max_entries,
                              self.min_synopsis_size, self.full_reduce_on_update)

    def cf_config(self, scale=(1.0, 5.0)) -> CfConfig:
        return CfConfig(tuple(scale), self.cf_min_overlap, self.cf_mode, self.cf_count_weighted)

    def cost_model(self, mean_points: float) -> sim.CostModel:
        base = sim.CostModel.calibrated(mean_points, self.full_scan_ms, self.fixed_ms)
        return sim.CostModel(
            self.fixed_ms,
            base.synopsis_point_ms if self.synopsis_point_ms is None else self.synopsis_point_ms,
            base.original_point_ms if self.original_point_ms is None else self.original_point_ms,
        )

    def interference_config(self) -> sim.InterferenceConfig:
        return sim.InterferenceConfig(self.interference, self.interference_median, self.interference_sigma,
                                      self.interference_on_ms, self.interference_off_ms)

    def strategy_objects(self) -> list:
        table = {
            "basic": sim.Basic(),
            "reissue": sim.Reissue(self.reissue_percentile, self.reissue_min_samples, self.reissue_window),
            "partial": sim.Partial(self.partial_deadline_ms),
            "accuracy_aware": sim.AccuracyAware(self.l_spe_ms, self.i_max, self.i_max_fraction),
        }
        return [table[name] for name in self.strategies]

    def scenario(self, mean_points: float, strategy=None) -> sim.ScenarioConfig:
        stragglers = () if self.straggler_component is None else ((self.straggler_component, self.straggler_factor),)
        return sim.ScenarioConfig(self.components, strategy or sim.Basic(), self.cost_model(mean_points),
                                  self.interference_config(), stragglers, self.seed, self.window_ms)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str, hint):
    text = raw.strip()
    optional = getattr(hint, "__args__", None) and type(None) in hint.__args__
    if optional:
        if text.lower() in ("", "none"):
            return None
        hint = next(a for a in hint.__args__ if a is not type(None))
    try:
        if hint is bool:
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            v = float(text)
            if math.isnan(v):
                raise ValueError(text)
            return v
        if hint is tuple:
            items = [x.strip() for x in text.split(",") if x.strip()]
            return tuple(float(x) for x in items) if key == "rate_factors" else tuple(items)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_settings(text: str, base: Settings | None = None, source: str = "<config>") -> Settings:
    hints = get_type_hints(Settings)
    names = {f.name for f in fields(Settings)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        if key not in names:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw, hints[key])
    try:
        return dataclasses.replace(base or Settings(), **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_settings(path, base: Settings | None = None) -> Settings:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_settings(p.read_text(encoding="utf-8"), base, str(p))
