"""Run configuration read from an INI-style ``key = value`` file.

Every section maps onto one config dataclass; keys not listed there are an
error, missing keys keep their defaults. Tuples are written comma-separated.
The only seed is ``[run] seed``; every stage derives its randomness from it.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .boost import GbtConfig
from .dataprep import WindowConfig
from .evalkit import ProtocolConfig
from .neural import DaeSpec, TrainConfig
from .pipeline import SelectionConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSection:
    scale: str = "desk"
    episode_len: int = 500
    qos_kind: str = "latency"
    g_mode: str = "linear"
    cpi_mode: str = "confounded"


@dataclass(frozen=True)
class EvalSection:
    tune: bool = True
    cv_rows: int = 2000
    gbt_rows: int = 0          # 0 means every training row
    loao_gbt_rows: int = 5000  # same cap for the leave-one-app-out folds
    practical_k: int = 20
    practical_trees: int = 20
    K_max: int = 6
    holdout_ratio: float = 0.8
    threshold: float = 0.05
    attribution_k: int = 3
    attribution_samples: int = 600
    attribution_background: int = 200


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    scenario: ScenarioSection = ScenarioSection()
    windows: WindowConfig = WindowConfig()
    selection: SelectionConfig = SelectionConfig()
    dae_spec: DaeSpec = DaeSpec()
    dae: TrainConfig = TrainConfig(epochs=100, momentum=0.9)
    dadae: TrainConfig = TrainConfig(epochs=40, momentum=0.9, lambda_max=0.003)
    gbt: GbtConfig = GbtConfig(n_trees=200, max_depth=4, eta=0.1)
    eval: EvalSection = EvalSection()
    source: str | None = field(default=None, compare=False)

    def protocol_config(self, seed=None, protocol="offline_8_2") -> ProtocolConfig:
        seed = self.seed if seed is None else seed
        e = self.eval
        rows = e.gbt_rows if protocol == "offline_8_2" else e.loao_gbt_rows
        return ProtocolConfig(
            seed=seed, qos_kind=self.scenario.qos_kind, windows=self.windows,
            selection=self.selection, dae_spec=self.dae_spec, dae_train=self.dae,
            dadae_train=self.dadae, gbt=self.gbt, tune=e.tune, cv_rows=e.cv_rows,
            gbt_rows=rows or None, practical_k=e.practical_k,
            practical_trees=e.practical_trees, K_max=e.K_max, holdout_ratio=e.holdout_ratio)


# section name -> RunConfig attribute
SECTIONS = {"scenario": "scenario", "windows": "windows", "selection": "selection",
            "dae_spec": "dae_spec", "dae": "dae", "dadae": "dadae", "gbt": "gbt", "eval": "eval"}


def _parse(raw: str, default, key):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(s) for s in items)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    return raw


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def load_config(path=None) -> RunConfig:
    """Defaults overlaid with the file at ``path`` (if any)."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    changes = {}
    for section in parser.sections():
        if section == "run":
            for key, raw in parser[section].items():
                if key != "seed":
                    raise ConfigError(f"unknown key [run] {key}")
                changes["seed"] = _parse(raw, 0, "seed")
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        current = getattr(cfg, SECTIONS[section])
        known = {f.name: getattr(current, f.name) for f in fields(current) if f.name != "seed"}
        upd = {}
        for key, raw in parser[section].items():
            if key not in known:
                raise ConfigError(f"unknown key [{section}] {key}")
            upd[key] = _parse(raw, known[key], f"{section}.{key}")
        try:
            changes[SECTIONS[section]] = dataclasses.replace(current, **upd)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from None
    return dataclasses.replace(cfg, source=str(path), **changes)


def dump_config(cfg: RunConfig, path=None) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {"seed": str(cfg.seed)}
    for section, attr in SECTIONS.items():
        value = getattr(cfg, attr)
        parser[section] = {f.name: _format(getattr(value, f.name)) for f in fields(value)
                           if f.name != "seed"}
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in parser[section].items()]
        lines.append("")
    text = "\n".join(lines)
    if path is not None:
        Path(path).write_text(text)
    return text
