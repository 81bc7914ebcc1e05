"""Monte-Carlo runners for the four evaluation figures.

Every runner takes an :class:`ExperimentConfig` and returns a :class:`Table`
whose rows are averages over ``cfg.trials`` random scenes.  Per-trial
randomness comes from :func:`trial_seed`, a pure function of the master
seed, the trial index and a stream id, so trials can run in any order or in
parallel without changing results.  The same scene draws are reused at every
sweep point (common random numbers), which keeps the curves smooth.

Scene
-----
The transmitter sits at the origin with the identity pose.  The receiver is
placed at distance ``D`` in a random direction (azimuth uniform in
``+-angle_spread_deg``, elevation uniform in half that range) with its array
facing the transmitter.  Scatterers for the ``n_paths - 1`` single-bounce
paths are drawn in a box beside the link midpoint that scales with ``D``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .beamforming import analog_block_diagonal, design_wsms_hybrid, spectral_efficiency
from .channel import approximation_error_db, gen_hspm, gen_pwm, gen_swm, pwm_factors, sample_paths
from .errors import ConfigError
from .estimation import (
    build_far_field_codebook,
    build_subarray_codebook,
    dse_estimate,
    omp_estimate,
    simulate_pilots,
    sse_estimate,
)
from .geometry import ArrayGeometry, PlacedArray, Pose, build_upa, build_wsms, wavelength_from_ghz
from .metrics import DEFAULT_NOISE_DBM, capacity_from_gains, dbm_to_watt, mode_gains, nmse_db

__all__ = [
    "ExperimentConfig",
    "Table",
    "FIGURES",
    "parse_config",
    "parse_sweep",
    "trial_seed",
    "make_scene",
    "run_fig_capacity",
    "run_fig_approx_error",
    "run_fig_estimation",
    "run_fig_spectral_efficiency",
    "run_figure",
]

# stream ids for trial_seed
_STREAM_SCENE = 0
_STREAM_PATHS = 1
_STREAM_PILOTS = 2


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment parameters.

    Sweeps (``subarray_spacing_wl``, ``distance_m``, ``snr_db``,
    ``tx_power_dbm``) are tuples.  Figures that need a single value of a
    sweep use its first entry.
    """

    frequency_ghz: float = 300.0
    n_antennas: int = 1024
    n_subarrays: int = 4
    n_rf: int = 4
    n_paths: int = 2
    subarray_spacing_wl: tuple[float, ...] = (64.0,)
    distance_m: tuple[float, ...] = (40.0,)
    snr_db: tuple[float, ...] = (15.0,)
    tx_power_dbm: tuple[float, ...] = (15.0,)
    trials: int = 10
    seed: int = 2024
    output_path: str | None = None
    noise_dbm: float = float(DEFAULT_NOISE_DBM)
    angle_spread_deg: float = 30.0
    capacity_input: str = "uniform"
    pilot_compression: int = 8
    pilot_rx_per_frame: int = 4
    atoms_per_block: int = 2
    dse_halfwidth: int = 2
    workers: int = 1

    @property
    def wavelength(self) -> float:
        return wavelength_from_ghz(self.frequency_ghz)

    @property
    def noise_power(self) -> float:
        return float(dbm_to_watt(self.noise_dbm))


_SWEEPS = ("subarray_spacing_wl", "distance_m", "snr_db", "tx_power_dbm")

# per-figure defaults layered over the dataclass defaults
FIGURE_DEFAULTS: dict[str, dict[str, Any]] = {
    "fig-capacity": {
        "subarray_spacing_wl": (64.0,),
        "distance_m": (10.0, 15.0, 20.0, 30.0, 40.0, 60.0, 80.0, 100.0),
        "tx_power_dbm": (0.0,),
    },
    "fig-approx-error": {
        "subarray_spacing_wl": (32.0,),
        "distance_m": (1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 60.0, 80.0, 100.0),
    },
    "fig-estimation": {
        "subarray_spacing_wl": (32.0,),
        "distance_m": (40.0,),
        "snr_db": (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0),
    },
    "fig-spectral-efficiency": {
        "subarray_spacing_wl": (64.0, 128.0, 256.0),
        "distance_m": (40.0,),
        "tx_power_dbm": (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0),
    },
}


def parse_sweep(key: str, value) -> tuple[float, ...]:
    """Accept a number, a list of numbers or a comma separated string."""
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",") if p.strip()]
    elif isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        parts = [value]
    out = []
    for p in parts:
        if isinstance(p, bool):
            raise ConfigError(key, f"expected a number, got {p!r}")
        try:
            out.append(float(p))
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a number, got {p!r}") from None
    return tuple(out)


def _coerce(key: str, kind: type, value):
    if key in _SWEEPS:
        return parse_sweep(key, value)
    if value is None and key == "output_path":
        return None
    if kind is int:
        if isinstance(value, bool):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, str):
            try:
                return int(value.strip())
            except ValueError:
                pass
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if kind is float:
        if isinstance(value, bool):
            raise ConfigError(key, f"expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a number, got {value!r}") from None
    if not isinstance(value, str):
        raise ConfigError(key, f"expected a string, got {value!r}")
    return value


_FIELD_TYPES = {
    f.name: {"int": int, "float": float}.get(f.type, str) for f in dataclasses.fields(ExperimentConfig)
}


def _subarray_layout(n_subarrays: int) -> tuple[int, int]:
    rows = max(d for d in range(1, math.isqrt(n_subarrays) + 1) if n_subarrays % d == 0)
    return rows, n_subarrays // rows


def _validate(cfg: ExperimentConfig) -> None:
    for key in _SWEEPS:
        vals = getattr(cfg, key)
        if not vals:
            raise ConfigError(key, "sweep must not be empty")
        if any(not math.isfinite(v) for v in vals):
            raise ConfigError(key, "sweep values must be finite")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError(key, "sweep must be strictly increasing")
    for key in ("trials", "n_antennas", "n_subarrays", "n_rf", "n_paths", "workers",
                "pilot_compression", "pilot_rx_per_frame", "atoms_per_block"):
        if getattr(cfg, key) < 1:
            raise ConfigError(key, "must be >= 1")
    if cfg.dse_halfwidth < 0:
        raise ConfigError("dse_halfwidth", "must be >= 0")
    if cfg.seed < 0:
        raise ConfigError("seed", "must be non-negative")
    if cfg.frequency_ghz <= 0:
        raise ConfigError("frequency_ghz", "must be positive")
    if not 0 <= cfg.angle_spread_deg < 90:
        raise ConfigError("angle_spread_deg", "must lie in [0, 90)")
    if any(d <= 0 for d in cfg.distance_m):
        raise ConfigError("distance_m", "distances must be positive")
    if cfg.n_antennas % cfg.n_subarrays:
        raise ConfigError("n_subarrays", "must divide n_antennas")
    per = cfg.n_antennas // cfg.n_subarrays
    if math.isqrt(per) ** 2 != per:
        raise ConfigError("n_antennas", "antennas per subarray must be a perfect square")
    if math.isqrt(cfg.n_antennas) ** 2 != cfg.n_antennas:
        raise ConfigError("n_antennas", "must be a perfect square (the compact baseline is square)")
    if cfg.n_rf != cfg.n_subarrays:
        raise ConfigError("n_rf", "one RF chain per subarray is required")
    side = math.isqrt(per)
    if min(cfg.subarray_spacing_wl) < 0.5 * side:
        raise ConfigError("subarray_spacing_wl", f"subarrays overlap below {0.5 * side} wavelengths")
    if cfg.capacity_input not in ("uniform", "water-filling"):
        raise ConfigError("capacity_input", "must be 'uniform' or 'water-filling'")


def _load_file(file_path) -> dict:
    if file_path is None:
        return {}
    path = Path(file_path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    if not text.strip():
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    return data


def parse_config(file_path=None, cli_overrides: dict | None = None, figure: str | None = None) -> ExperimentConfig:
    """Resolve a config from defaults, a JSON file and command-line overrides.

    Later layers win: dataclass defaults, then the figure's defaults, then
    the file, then ``cli_overrides`` (entries set to ``None`` are ignored).
    Raises :class:`ConfigError` naming the offending key.
    """
    if figure is not None and figure not in FIGURE_DEFAULTS:
        raise ConfigError("figure", f"unknown figure {figure!r}")
    values: dict[str, Any] = dict(FIGURE_DEFAULTS.get(figure, {}))
    layers = [_load_file(file_path), {k: v for k, v in (cli_overrides or {}).items() if v is not None}]
    for layer in layers:
        for key, value in layer.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(key, "unknown configuration key")
            values[key] = _coerce(key, _FIELD_TYPES[key], value)
    cfg = ExperimentConfig(**values)
    _validate(cfg)
    return cfg


@dataclass
class Table:
    """Column-named numeric table rendered as the figure CSV."""

    figure: str
    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)

    def to_csv(self, cfg: ExperimentConfig) -> str:
        lines = [f"# crossfield {__version__} {self.figure}"]
        for f in dataclasses.fields(cfg):
            if f.name in ("output_path", "workers"):
                continue  # do not affect the numbers
            val = getattr(cfg, f.name)
            if isinstance(val, tuple):
                val = ",".join(repr(v) for v in val)
            lines.append(f"# {f.name} = {val}")
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(format(float(v), ".9g") for v in row))
        return "\n".join(lines) + "\n"


def trial_seed(master: int, trial: int, stream: int) -> int:
    """32-bit seed for one random stream of one trial.

    Derived with ``numpy.random.SeedSequence(master, spawn_key=(trial,
    stream))`` so it depends only on these three integers.
    """
    ss = np.random.SeedSequence(master, spawn_key=(trial, stream))
    return int(ss.generate_state(1, np.uint32)[0])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def make_scene(cfg: ExperimentConfig, tx_geo: ArrayGeometry, rx_geo: ArrayGeometry, distance: float, trial: int):
    """Place both arrays and draw the paths for one trial at one distance."""
    rng = np.random.default_rng(trial_seed(cfg.seed, trial, _STREAM_SCENE))
    spread = math.radians(cfg.angle_spread_deg)
    az = rng.uniform(-spread, spread)
    el = rng.uniform(-spread / 2, spread / 2)
    rot = _rot_y(az) @ _rot_x(-el)
    origin = rot @ np.array([0.0, 0.0, distance])
    tx_pose = Pose.identity()
    # local z of the receiver points back at the transmitter
    rx_pose = Pose(origin, rot @ np.diag([-1.0, 1.0, -1.0]))
    mid = origin / 2
    lo = mid + distance * np.array([0.1, -0.1, -0.25])
    hi = mid + distance * np.array([0.4, 0.1, 0.25])
    paths = sample_paths(trial_seed(cfg.seed, trial, _STREAM_PATHS), cfg.n_paths - 1, tx_pose, rx_pose, (lo, hi))
    return PlacedArray(tx_geo, tx_pose), PlacedArray(rx_geo, rx_pose), paths


def wsms_geometry(cfg: ExperimentConfig, spacing_wl: float) -> ArrayGeometry:
    k_rows, k_cols = _subarray_layout(cfg.n_subarrays)
    side = math.isqrt(cfg.n_antennas // cfg.n_subarrays)
    return build_wsms(k_rows, k_cols, side, side, 0.5, spacing_wl, cfg.wavelength)


def compact_geometry(cfg: ExperimentConfig) -> ArrayGeometry:
    side = math.isqrt(cfg.n_antennas)
    return build_upa(side, side, 0.5, cfg.wavelength)


def _map_trials(fn: Callable, cfg: ExperimentConfig) -> list:
    tasks = [(cfg, t) for t in range(cfg.trials)]
    if cfg.workers <= 1 or cfg.trials == 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, tasks))


def _mean(results: list) -> np.ndarray:
    """Average per-trial arrays in trial order."""
    acc = np.zeros_like(np.asarray(results[0], dtype=float))
    for r in results:
        acc = acc + np.asarray(r, dtype=float)
    return acc / len(results)


# capacity ------------------------------------------------------------------

def _pwm_gains(tx: PlacedArray, rx: PlacedArray, paths) -> np.ndarray:
    a_rx, g, a_tx = pwm_factors(tx, rx, paths)
    r_rx = np.linalg.qr(a_rx, mode="r")
    r_tx = np.linalg.qr(a_tx, mode="r")
    return np.linalg.svd(r_rx @ np.diag(g) @ r_tx.conj().T, compute_uv=False) ** 2


def _capacity_trial(task) -> np.ndarray:
    cfg, trial = task
    geo = wsms_geometry(cfg, cfg.subarray_spacing_wl[0])
    power = float(dbm_to_watt(cfg.tx_power_dbm[0]))
    noise = cfg.noise_power
    n_tx = geo.n_elements
    out = []
    for d in cfg.distance_m:
        tx, rx, paths = make_scene(cfg, geo, geo, d, trial)
        g_swm = mode_gains(gen_swm(tx, rx, paths))
        g_pwm = _pwm_gains(tx, rx, paths)
        row = []
        for alloc in (cfg.capacity_input, "water-filling" if cfg.capacity_input == "uniform" else "uniform"):
            c_swm = capacity_from_gains(g_swm, power, noise, alloc, n_tx)
            c_pwm = capacity_from_gains(g_pwm, power, noise, alloc, n_tx)
            row += [c_swm, c_pwm]
        out.append(row)
    return np.array(out)


def run_fig_capacity(cfg: ExperimentConfig) -> Table:
    """SWM vs PWM capacity over distance.

    ``capacity_swm``/``capacity_pwm`` use ``cfg.capacity_input`` and
    ``gap_percent = 100 (1 - mean C_pwm / mean C_swm)``; the ``*_alt``
    columns repeat the comparison under the other input allocation.
    """
    mean = _mean(_map_trials(_capacity_trial, cfg))
    table = Table("fig-capacity", ["distance_m", "capacity_swm", "capacity_pwm", "gap_percent",
                                   "capacity_swm_alt", "capacity_pwm_alt", "gap_percent_alt"])
    for d, (cs, cp, cs2, cp2) in zip(cfg.distance_m, mean):
        table.rows.append([d, cs, cp, 100 * (1 - cp / cs), cs2, cp2, 100 * (1 - cp2 / cs2)])
    return table


# approximation error -------------------------------------------------------

def _approx_trial(task) -> np.ndarray:
    cfg, trial = task
    geo = wsms_geometry(cfg, cfg.subarray_spacing_wl[0])
    out = []
    for d in cfg.distance_m:
        tx, rx, paths = make_scene(cfg, geo, geo, d, trial)
        h_swm = gen_swm(tx, rx, paths)
        out.append([
            approximation_error_db(gen_pwm(tx, rx, paths), h_swm),
            approximation_error_db(gen_hspm(tx, rx, paths), h_swm),
            approximation_error_db(h_swm, h_swm),
        ])
    return np.array(out)


def run_fig_approx_error(cfg: ExperimentConfig) -> Table:
    """Mean PWM and HSPM approximation error (dB) against SWM over distance.

    ``error_db_swm`` is the SWM-vs-SWM control and sits at the error floor.
    """
    mean = _mean(_map_trials(_approx_trial, cfg))
    table = Table("fig-approx-error", ["distance_m", "error_db_pwm", "error_db_hspm", "error_db_swm"])
    for d, row in zip(cfg.distance_m, mean):
        table.rows.append([d, *row])
    return table


# estimation ----------------------------------------------------------------

def _estimation_trial(task) -> np.ndarray:
    cfg, trial = task
    geo = wsms_geometry(cfg, cfg.subarray_spacing_wl[0])
    whole = build_far_field_codebook(geo)
    sub = build_subarray_codebook(geo)
    tx, rx, paths = make_scene(cfg, geo, geo, cfg.distance_m[0], trial)
    h = gen_swm(tx, rx, paths)
    n_meas = h.shape[0] * h.shape[1] // cfg.pilot_compression
    q_frames = n_meas // cfg.pilot_rx_per_frame
    pilot_seed = trial_seed(cfg.seed, trial, _STREAM_PILOTS)
    a = cfg.atoms_per_block
    out = []
    for snr in cfg.snr_db:
        obs = simulate_pilots(h, q_frames, cfg.pilot_rx_per_frame, snr, pilot_seed)
        ests = (
            omp_estimate(obs, whole, whole, a * a, like=h),
            sse_estimate(obs, (sub, sub), a, like=h),
            dse_estimate(obs, (sub, sub), cfg.dse_halfwidth, a, like=h),
        )
        out.append([nmse_db(e.h_hat, h) for e in ests] + [e.counters["correlations"] for e in ests])
    return np.array(out)


def run_fig_estimation(cfg: ExperimentConfig) -> Table:
    """NMSE of whole-array DFT OMP, SSE and DSE over SNR.

    NMSE is averaged in dB over trials.  The OMP budget is
    ``atoms_per_block**2`` atom pairs, the size of the separable support SSE
    and DSE fit per subarray pair.  ``correlations_*`` are the mean counts of
    scored candidates.
    """
    mean = _mean(_map_trials(_estimation_trial, cfg))
    table = Table("fig-estimation", ["snr_db", "nmse_db_dft", "nmse_db_sse", "nmse_db_dse",
                                     "correlations_dft", "correlations_sse", "correlations_dse"])
    for snr, row in zip(cfg.snr_db, mean):
        table.rows.append([snr, *row])
    return table


# spectral efficiency -------------------------------------------------------

def _se_trial(task) -> np.ndarray:
    cfg, trial = task
    noise = cfg.noise_power
    powers = [float(dbm_to_watt(p)) for p in cfg.tx_power_dbm]
    d = cfg.distance_m[0]
    compact = compact_geometry(cfg)
    tx, rx, paths = make_scene(cfg, compact, compact, d, trial)
    g_compact = mode_gains(gen_swm(tx, rx, paths))
    cols = [[capacity_from_gains(g_compact, p, noise) for p in powers]]
    caps = []
    for spacing in cfg.subarray_spacing_wl:
        geo = wsms_geometry(cfg, spacing)
        tx, rx, paths = make_scene(cfg, geo, geo, d, trial)
        h = gen_swm(tx, rx, paths)
        analog = (analog_block_diagonal(h.entries, geo, "right"), analog_block_diagonal(h.entries, geo, "left"))
        se = []
        for p in powers:
            pre, comb = design_wsms_hybrid(h, geo, geo, cfg.n_rf, cfg.n_rf, p, noise, analog=analog)
            se.append(spectral_efficiency(h, pre, comb, p, noise))
        cols.append(se)
        g = mode_gains(h)
        caps.append([capacity_from_gains(g, p, noise) for p in powers])
    return np.array(cols + caps).T


def run_fig_spectral_efficiency(cfg: ExperimentConfig) -> Table:
    """Hybrid WSMS spectral efficiency vs the compact fully digital bound.

    ``se_compact`` is the water-filled capacity of the half-wavelength UPA
    with the same antenna count.  ``se_wsms_<s>wl`` is the hybrid design with
    one RF chain per subarray at subarray spacing ``s`` wavelengths and
    ``cap_wsms_<s>wl`` the capacity of the same WSMS channel.
    """
    mean = _mean(_map_trials(_se_trial, cfg))
    tags = [format(s, "g") for s in cfg.subarray_spacing_wl]
    cols = ["tx_power_dbm", "se_compact"] + [f"se_wsms_{t}wl" for t in tags] + [f"cap_wsms_{t}wl" for t in tags]
    table = Table("fig-spectral-efficiency", cols)
    for p, row in zip(cfg.tx_power_dbm, mean):
        table.rows.append([p, *row])
    return table


FIGURES: dict[str, Callable[[ExperimentConfig], Table]] = {
    "fig-capacity": run_fig_capacity,
    "fig-approx-error": run_fig_approx_error,
    "fig-estimation": run_fig_estimation,
    "fig-spectral-efficiency": run_fig_spectral_efficiency,
}


def run_figure(figure: str, cfg: ExperimentConfig) -> str:
    """Run one figure and return its CSV text."""
    return FIGURES[figure](cfg).to_csv(cfg)
