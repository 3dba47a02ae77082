"""Synthetic co-location telemetry with known ground-truth degradation.

Every second a VM emits a metric vector split into three roles (VM resource
usage ``rv_``, hardware events ``hw_``, host-wide usage ``host_``) together
with an application-level QoS value. Interference from the four shared
resources is injected as an additive, resource-specific perturbation of the
clean metrics; QoS worsens linearly (or, optionally, with saturation) in the
per-resource intensity, scaled by the application's sensitivity.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd


class SoIKind(enum.IntEnum):
    LLC = 0
    MBW = 1
    NBW = 2
    DBW = 3


N_SOI = len(SoIKind)
SOI_COLUMNS = ["soi_llc", "soi_mbw", "soi_nbw", "soi_dbw"]
LABEL_COLUMNS = ["t", "app", "intensity", *SOI_COLUMNS, "qos"]
ROLE_PREFIXES = ("rv_", "hw_", "host_")

APP_NAMES = ["cassandra", "etcd", "hbase", "hpc", "kafka", "mongodb", "rabbitmq", "redis"]

_RV_NAMES = ["cpu_time", "mem_used", "mem_cached", "net_rd_bytes", "net_wr_bytes",
             "disk_rd_bytes", "disk_wr_bytes", "system_time", "net_rd_pkts", "net_wr_pkts",
             "disk_rd_reqs", "disk_wr_reqs", "mem_swap", "vcpu_wait", "user_time"]
_HW_NAMES = ["cpi", "instructions", "cycles", "llc_misses", "llc_refs", "llc_occupancy",
             "mem_loads", "mem_stores", "mbw_local", "mbw_remote", "stlb_misses",
             "branch_misses", "l2_misses", "l1d_misses", "rs_empty_cycles", "stall_cycles"]
_HOST_NAMES = ["cpu_util", "mem_bw", "llc_occupancy", "net_rx", "net_tx", "disk_rd",
               "disk_wr", "load"]

# metrics each resource mainly perturbs (disjoint), completed with random hw_evt_* columns
_SOI_SIGNATURE = {
    SoIKind.LLC: ["hw_llc_misses", "hw_llc_occupancy", "hw_l2_misses", "host_llc_occupancy"],
    SoIKind.MBW: ["hw_mbw_local", "hw_mbw_remote", "host_mem_bw", "hw_mem_loads"],
    SoIKind.NBW: ["host_net_rx", "host_net_tx", "rv_vcpu_wait", "rv_net_rd_pkts"],
    SoIKind.DBW: ["host_disk_rd", "host_disk_wr", "rv_disk_rd_reqs", "rv_disk_wr_reqs"],
}
# the CPI analog: its rise tracks the application's own slowdown
_PERF_COUPLED = ["hw_cpi"]

SCALES = {"desk": (8, 40, 8), "full": (15, 175, 28)}


def metric_names(n_rv: int, n_hw: int, n_host: int) -> list[str]:
    def block(prefix, named, n):
        names = [prefix + s for s in named[:n]]
        names += [f"{prefix}evt_{j:03d}" for j in range(len(names), n)]
        return names
    return block("rv_", _RV_NAMES, n_rv) + block("hw_", _HW_NAMES, n_hw) + block("host_", _HOST_NAMES, n_host)


def metric_columns(columns: Sequence[str]) -> list[str]:
    return [c for c in columns if c.startswith(ROLE_PREFIXES)]


@dataclass
class AppProfile:
    """Clean behaviour and interference response of one application.

    ``base_offset + base_slope * i`` is the clean metric vector at workload
    intensity ``i``; ``soi_response[:, k]`` is the metric shift per unit of
    resource-``k`` interference. Latency at intensity ``i`` without
    interference is ``qos_base * (1 + qos_slope * (i - 1))``.
    """

    name: str
    base_offset: np.ndarray
    base_slope: np.ndarray
    soi_response: np.ndarray
    sensitivity: np.ndarray
    qos_base: float
    qos_slope: float
    noise_scale: np.ndarray
    qos_noise: float = 0.0

    def __post_init__(self):
        self.base_offset = np.asarray(self.base_offset, dtype=float)
        self.base_slope = np.asarray(self.base_slope, dtype=float)
        self.soi_response = np.asarray(self.soi_response, dtype=float)
        self.sensitivity = np.asarray(self.sensitivity, dtype=float)
        self.noise_scale = np.broadcast_to(np.asarray(self.noise_scale, dtype=float),
                                           self.base_offset.shape).copy()
        m = self.base_offset.shape[0]
        if self.base_slope.shape != (m,) or self.soi_response.shape != (m, N_SOI):
            raise ValueError("profile arrays disagree on the number of metrics")
        if self.sensitivity.shape != (N_SOI,) or np.any((self.sensitivity < 0) | (self.sensitivity > 1)):
            raise ValueError("sensitivity must be a 4-vector in [0, 1]")
        if self.qos_base <= 0:
            raise ValueError("qos_base must be positive")
        if np.any(self.noise_scale < 0) or self.qos_noise < 0:
            raise ValueError("noise scales must be non-negative")

    @property
    def n_metrics(self) -> int:
        return int(self.base_offset.shape[0])

    def base_metric(self, i: float) -> np.ndarray:
        return self.base_offset + self.base_slope * i

    def clean_qos(self, i: float) -> float:
        return self.qos_base * (1.0 + self.qos_slope * (i - 1.0))


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    soi: tuple

    def __post_init__(self):
        s = tuple(float(v) for v in self.soi)
        if len(s) != N_SOI or any(v < 0 or v > 1 for v in s):
            raise ValueError("segment intensities must be a 4-vector in [0, 1]")
        if self.end <= self.start:
            raise ValueError("segment end must be after its start")
        object.__setattr__(self, "soi", s)


@dataclass
class Sample:
    t: float
    metrics: np.ndarray
    qos: float
    app: str
    intensity: float
    soi_intensity: np.ndarray

    @property
    def clean(self) -> bool:
        return not np.any(self.soi_intensity > 0)


@dataclass
class ScenarioConfig:
    apps: list
    episode_len: int
    workload_levels: list
    interference_schedule: list
    seed: int = 0
    n_vm_resource_metrics: int = 8
    n_hw_event_metrics: int = 40
    n_host_metrics: int = 8
    g_mode: str = "linear"
    qos_kind: str = "latency"
    cpi_mode: str = "confounded"
    cpi_scale: float = 0.1
    names: list = field(default=None)

    def __post_init__(self):
        if self.names is None:
            self.names = metric_names(self.n_vm_resource_metrics, self.n_hw_event_metrics,
                                      self.n_host_metrics)
        if len(self.names) != self.n_metrics:
            raise ValueError("metric name list does not match the role counts")
        if any(a.n_metrics != self.n_metrics for a in self.apps):
            raise ValueError("every AppProfile must cover all metric columns")
        if len({a.name for a in self.apps}) != len(self.apps):
            raise ValueError("application names must be unique")
        if self.g_mode not in ("linear", "saturating"):
            raise ValueError(f"unknown g_mode {self.g_mode!r}")
        if self.qos_kind not in ("latency", "throughput"):
            raise ValueError(f"unknown qos_kind {self.qos_kind!r}")
        if self.cpi_mode not in ("confounded", "proportional"):
            raise ValueError(f"unknown cpi_mode {self.cpi_mode!r}")
        if self.episode_len <= 0 or not self.workload_levels:
            raise ValueError("episode_len and workload_levels must be non-empty")
        segs = sorted(self.interference_schedule, key=lambda s: s.start)
        for a, b in zip(segs, segs[1:]):
            if b.start < a.end:
                raise ValueError("interference segments overlap")
        for s in segs:
            if s.start < 0 or s.end > self.episode_len:
                raise ValueError("interference segment outside [0, episode_len]")
        if self.soi_schedule().any(axis=1).all():
            raise ValueError("schedule leaves no interference-free second")

    @property
    def n_metrics(self) -> int:
        return self.n_vm_resource_metrics + self.n_hw_event_metrics + self.n_host_metrics

    @property
    def app_names(self) -> list[str]:
        return [a.name for a in self.apps]

    def app(self, name: str) -> AppProfile:
        for a in self.apps:
            if a.name == name:
                return a
        raise KeyError(f"unknown application {name!r}")

    def soi_schedule(self) -> np.ndarray:
        """(episode_len, 4) interference intensity for each second; zero outside segments."""
        s = np.zeros((self.episode_len, N_SOI))
        for seg in self.interference_schedule:
            s[seg.start:seg.end] = seg.soi
        return s

    def column_index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def cpi_column(self) -> str:
        return "hw_cpi"

    @property
    def mem_column(self) -> str:
        return "rv_mem_used"


def _g(s, mode):
    if mode == "saturating":
        return np.minimum(1.0, 1.25 * s)
    return s


def synth_sample(profile: AppProfile, i: float, s, t: float, rng, *, g_mode="linear",
                 qos_kind="latency", proportional_cpi: int | None = None,
                 cpi_scale: float = 0.1) -> Sample:
    """One telemetry sample.

    metrics = base(i) + soi_response @ s + N(0, noise_scale), clamped at 0;
    latency = clean_qos(i) * (1 + sum_k sensitivity_k * g(s_k)) + N(0, qos_noise * clean_qos(i)).
    In throughput mode the bracket divides instead of multiplies.

    ``proportional_cpi`` names a column overwritten with ``cpi_scale * qos``
    (a sanity mode in which CPI is an exact performance proxy).
    """
    s = np.asarray(s, dtype=float)
    if s.shape != (N_SOI,) or np.any((s < 0) | (s > 1)):
        raise ValueError("soi intensity must be a 4-vector in [0, 1]")
    metrics = profile.base_metric(i) + profile.soi_response @ s
    metrics = metrics + rng.normal(0.0, 1.0, profile.n_metrics) * profile.noise_scale
    np.maximum(metrics, 0.0, out=metrics)
    q0 = profile.clean_qos(i)
    slowdown = 1.0 + float(profile.sensitivity @ _g(s, g_mode))
    qos = q0 * slowdown if qos_kind == "latency" else q0 / slowdown
    qos += rng.normal(0.0, 1.0) * profile.qos_noise * q0
    qos = max(qos, 1e-6 * q0)
    if proportional_cpi is not None:
        metrics[proportional_cpi] = cpi_scale * qos
    return Sample(float(t), metrics, float(qos), profile.name, float(i), s.copy())


def _episode_rng(config: ScenarioConfig, app: str, i: float):
    if i not in config.workload_levels:
        raise ValueError(f"intensity {i} is not one of the configured workload levels")
    a = config.app_names.index(app)
    lvl = config.workload_levels.index(i)
    return np.random.default_rng(np.random.SeedSequence([config.seed, a, lvl]))


def run_episode(config: ScenarioConfig, app: str, i: float) -> list[Sample]:
    """One sample per second for ``config.episode_len`` seconds following the schedule."""
    profile = config.app(app)
    rng = _episode_rng(config, app, i)
    sched = config.soi_schedule()
    cpi = config.column_index(config.cpi_column) if config.cpi_mode == "proportional" else None
    return [synth_sample(profile, i, sched[t], float(t), rng, g_mode=config.g_mode,
                         qos_kind=config.qos_kind, proportional_cpi=cpi,
                         cpi_scale=config.cpi_scale)
            for t in range(config.episode_len)]


def ground_truth_degradation(samples: Sequence[Sample], target: Sample,
                             qos_kind: str = "latency") -> float:
    """Degradation of ``target`` relative to the clean mean QoS of its (app, intensity)."""
    clean = [s.qos for s in samples
             if s.app == target.app and s.intensity == target.intensity and s.clean]
    if not clean:
        raise ValueError(f"no interference-free samples for ({target.app}, {target.intensity})")
    d = target.qos / float(np.mean(clean))
    return d - 1.0 if qos_kind == "latency" else 1.0 - d


def samples_to_frame(samples: Sequence[Sample], names: Sequence[str]) -> pd.DataFrame:
    frame = pd.DataFrame({
        "t": [s.t for s in samples],
        "app": [s.app for s in samples],
        "intensity": [s.intensity for s in samples],
    })
    soi = np.array([s.soi_intensity for s in samples]).reshape(-1, N_SOI)
    for k, col in enumerate(SOI_COLUMNS):
        frame[col] = soi[:, k]
    frame["qos"] = [s.qos for s in samples]
    metrics = np.array([s.metrics for s in samples]).reshape(len(samples), len(names))
    return pd.concat([frame, pd.DataFrame(metrics, columns=list(names))], axis=1)


def generate_dataset(config: ScenarioConfig) -> pd.DataFrame:
    """Every (app, workload level) episode stacked into one table."""
    frames = [samples_to_frame(run_episode(config, a, i), config.names)
              for a in config.app_names for i in config.workload_levels]
    return pd.concat(frames, ignore_index=True)


def degradation_labels(frame: pd.DataFrame, qos_kind: str = "latency") -> np.ndarray:
    """Vectorised ground truth D for every row of a dataset table."""
    clean = ~(frame[SOI_COLUMNS].to_numpy() > 0).any(axis=1)
    keys = ["app", "intensity"]
    qbar = frame.loc[clean].groupby(keys)["qos"].mean()
    idx = pd.MultiIndex.from_frame(frame[keys])
    missing = ~idx.isin(qbar.index)
    if missing.any():
        bad = frame.loc[missing, keys].drop_duplicates().to_records(index=False).tolist()
        raise ValueError(f"no interference-free samples for {bad}")
    d = frame["qos"].to_numpy() / qbar.reindex(idx).to_numpy()
    return d - 1.0 if qos_kind == "latency" else 1.0 - d


def export_dataset(traces, path) -> Path:
    """Write a dataset table (or a list of per-episode tables) as CSV."""
    frame = traces if isinstance(traces, pd.DataFrame) else pd.concat(list(traces), ignore_index=True)
    if frame.empty:
        raise ValueError("nothing to export")
    cols = list(frame.columns)
    if cols[:len(LABEL_COLUMNS)] != LABEL_COLUMNS or not all(
            c.startswith(ROLE_PREFIXES) for c in cols[len(LABEL_COLUMNS):]):
        raise ValueError("table does not follow the dataset column layout")
    path = Path(path)
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    return path


def import_dataset(path) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip", dtype={"app": str})
    missing = [c for c in LABEL_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"dataset is missing columns {missing}")
    for c in frame.columns:
        if c != "app":
            frame[c] = frame[c].astype(float)
    return frame


# --- default scenario ------------------------------------------------------------

def default_schedule(episode_len: int = 500) -> list[Segment]:
    """Clean warm-up, single-resource sweeps at 0.3/0.6/0.9, two mixed blocks, clean gaps."""
    if episode_len < 100:
        return [Segment(episode_len // 2, episode_len, (0.0, 0.6, 0.0, 0.0))]
    u = episode_len / 500.0

    def at(x):
        return int(round(x * u))

    segs = []
    starts = {SoIKind.LLC: 60, SoIKind.MBW: 135, SoIKind.NBW: 250, SoIKind.DBW: 325}
    for kind, start in starts.items():
        for j, level in enumerate((0.3, 0.6, 0.9)):
            vec = [0.0] * N_SOI
            vec[kind] = level
            segs.append(Segment(at(start + 25 * j), at(start + 25 * (j + 1)), tuple(vec)))
    segs.append(Segment(at(400), at(430), (0.5, 0.5, 0.0, 0.0)))
    segs.append(Segment(at(430), at(460), (0.0, 0.0, 0.5, 0.5)))
    return segs


def _make_profile(name, names, rng, sig_idx, perf_idx, scale, loadings, z, own_idx):
    """One application drawn from the scenario's shared latent family.

    Clean offsets and slopes are log-linear in the app's latent vector ``z``,
    so metrics co-vary across applications the way real counters do (busier
    apps retire more instructions, touch more cache, ...). Metrics in
    ``own_idx`` are footprint-like: their level is specific to the app and
    unrelated to the shared structure.
    """
    m = len(names)
    off_load, slope_load = loadings
    base_offset = scale * np.exp(off_load @ z + rng.normal(0.0, 0.05, m))
    base_slope = 0.2 * scale * np.exp(slope_load @ z + rng.normal(0.0, 0.05, m))
    base_offset[own_idx] = scale[own_idx] * rng.uniform(0.3, 2.0, len(own_idx))
    mem = names.index("rv_mem_used")
    base_slope[mem] = scale[mem] * rng.uniform(0.6, 1.0)
    sensitivity = np.round(rng.uniform(0.2, 0.9, N_SOI), 3)
    gain = rng.uniform(0.7, 1.3)
    response = np.zeros((m, N_SOI))
    for k, idx in sig_idx.items():
        response[idx, k] = gain * scale[idx] * rng.uniform(0.6, 1.4, len(idx))
    cross = rng.random((m, N_SOI)) < 0.04
    response[cross] += (scale[:, None] * rng.uniform(0.03, 0.1, (m, N_SOI)))[cross]
    ref = base_offset + base_slope * 2.0
    for j in perf_idx:
        response[j] = ref[j] * (sensitivity + rng.uniform(0.0, 0.15, N_SOI))
    noise = scale * rng.uniform(0.03, 0.08, m)
    noise[mem] = 0.01 * scale[mem]
    return AppProfile(name=name, base_offset=base_offset, base_slope=base_slope,
                      soi_response=response, sensitivity=sensitivity,
                      qos_base=float(rng.uniform(2.0, 20.0)), qos_slope=float(rng.uniform(0.05, 0.3)),
                      noise_scale=noise, qos_noise=0.01)


N_LATENT = 3
OWN_FRACTION = 0.5  # share of non-signature metrics whose level is app-specific


def make_default_scenario(seed: int = 0, scale: str = "desk", episode_len: int = 500,
                          **overrides) -> ScenarioConfig:
    """Eight applications, five workload levels, the default interference schedule."""
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {sorted(SCALES)}")
    n_rv, n_hw, n_host = SCALES[scale]
    names = metric_names(n_rv, n_hw, n_host)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    m = len(names)
    metric_scale = np.exp(rng.normal(0.0, 1.0, m))
    taken = set(_PERF_COUPLED) | {"rv_mem_used"}
    sig_idx = {}
    spare = [j for j, n in enumerate(names) if n.startswith("hw_evt_")]
    rng.shuffle(spare)
    per_soi = 4 if scale == "desk" else 12
    for k in SoIKind:
        chosen = [names.index(n) for n in _SOI_SIGNATURE[k] if n in names]
        chosen += spare[k * per_soi:(k + 1) * per_soi]
        sig_idx[k] = np.array(chosen)
        taken.update(names[j] for j in chosen)
    perf_idx = [names.index(n) for n in _PERF_COUPLED if n in names]
    loadings = (rng.normal(0.0, 0.25, (m, N_LATENT)), rng.normal(0.0, 0.25, (m, N_LATENT)))
    candidates = [j for j, n in enumerate(names) if n not in taken]
    own_idx = np.sort(rng.choice(candidates, int(OWN_FRACTION * len(candidates)), replace=False))
    apps = []
    for name in APP_NAMES:
        z = rng.normal(0.0, 1.0, N_LATENT)
        if name == "etcd":
            z *= 2.0  # the odd one out, far from the rest of the family
        apps.append(_make_profile(name, names, rng, sig_idx, perf_idx, metric_scale, loadings, z,
                                  own_idx))
    cfg = ScenarioConfig(
        apps=apps, episode_len=episode_len, workload_levels=[1.0, 1.5, 2.0, 2.5, 3.0],
        interference_schedule=default_schedule(episode_len), seed=seed,
        n_vm_resource_metrics=n_rv, n_hw_event_metrics=n_hw, n_host_metrics=n_host, names=names)
    return replace(cfg, **overrides) if overrides else cfg

