"""Compiling control-configuration transitions into AWG voltage waveforms.

Waveforms are multi-channel time series on the AWG timing grid.  A transition
is a per-channel linear ramp (inclusive endpoints); routes concatenate ramps
and constant dwells.  Quantization snaps samples to the AWG discretization
grid (round-half-to-even), and `apply_filter` models the per-channel low-pass
filters between AWG and electrodes as a cascade of identical first-order
stages, evaluated exactly (piecewise polynomial-plus-exponential) so it can be
queried at arbitrary times.

The slew-rate audit runs on the unfiltered waveform: it constrains the AWG
output, not the electrode voltage.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import MS
from .trapmodel import (CONTROL_CHANNEL_NAMES, ConfigurationError, ControlConfig,
                        N_CONTROL_CHANNELS)


@dataclass(frozen=True)
class AwgSpec:
    """AWG output constraints: range, discretization, timing grid."""

    v_min: float = -10.0
    v_max: float = 10.0
    v_step: float = 3e-4           # V, discretization limit per channel
    timing_resolution: float = 10e-9  # s

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ConfigurationError("v_min must be below v_max")
        if self.v_step <= 0 or self.timing_resolution <= 0:
            raise ConfigurationError("v_step and timing_resolution must be positive")


@dataclass(frozen=True)
class FilterModel:
    """Low-pass filter between AWG and electrode: `order` identical RC stages."""

    cutoff: float = 2.0 * np.pi * 7e3  # rad/s
    order: int = 1

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ConfigurationError("filter cutoff must be positive")
        if self.order < 1:
            raise ConfigurationError("filter order must be >= 1")

    @property
    def time_constant(self) -> float:
        return 1.0 / self.cutoff


DEFAULT_AWG = AwgSpec()
DEFAULT_FILTER = FilterModel()
DEFAULT_SAMPLE_PERIOD = 1e-6  # s, resolves ramps well below the filter constant


@dataclass
class Waveform:
    """Multi-channel voltage time series; immutable after compilation."""

    channel_names: tuple[str, ...]
    sample_period: float
    samples: np.ndarray            # (n_samples, n_channels), V
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[1] != len(self.channel_names):
            raise ConfigurationError("samples must be (n_samples, n_channels)")
        if self.samples.shape[0] < 1:
            raise ConfigurationError("waveform needs at least one sample")
        if self.sample_period <= 0:
            raise ConfigurationError("sample_period must be positive")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return (self.n_samples - 1) * self.sample_period

    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.sample_period

    def validate(self, awg: AwgSpec = DEFAULT_AWG) -> None:
        """Check AWG range and timing-grid invariants."""
        lo, hi = awg.v_min, awg.v_max
        if np.any(self.samples < lo) or np.any(self.samples > hi):
            bad = np.argwhere((self.samples < lo) | (self.samples > hi))[0]
            raise ConfigurationError(
                f"sample outside AWG range on channel '{self.channel_names[bad[1]]}'")
        n_ticks = self.sample_period / awg.timing_resolution
        if abs(n_ticks - round(n_ticks)) > 1e-9 * max(n_ticks, 1.0):
            raise ConfigurationError("sample_period not on the AWG timing grid")


@dataclass(frozen=True)
class RouteLeg:
    config_name: str
    t_playback: float  # s, ramp duration into this configuration
    dwell: float = 0.0  # s, hold after arrival


@dataclass(frozen=True)
class Route:
    """Ordered configuration legs; the first leg defines the start config."""

    legs: tuple[RouteLeg, ...]

    T_PLAYBACK_RANGE = (1e-5, 1e-2)  # s

    def __post_init__(self):
        if len(self.legs) == 0:
            raise ConfigurationError("route must have at least one leg")

    def validate(self, known_configs, *, allow_any_timing: bool = False) -> None:
        lo, hi = self.T_PLAYBACK_RANGE
        for i, leg in enumerate(self.legs):
            if leg.config_name not in known_configs:
                raise ConfigurationError(f"unknown configuration '{leg.config_name}'")
            if leg.dwell < 0 or leg.t_playback < 0:
                raise ConfigurationError("negative leg duration")
            if i > 0 and not allow_any_timing and not lo <= leg.t_playback <= hi:
                raise ConfigurationError(
                    f"t_playback {leg.t_playback} s outside [{lo}, {hi}] s")

    def reversed(self) -> "Route":
        """Route whose compiled waveform is the time reverse of this one."""
        legs = list(self.legs)
        out = [RouteLeg(legs[-1].config_name, 0.0, legs[-1].dwell)]
        for i in range(len(legs) - 1, 0, -1):
            out.append(RouteLeg(legs[i - 1].config_name, legs[i].t_playback,
                                legs[i - 1].dwell))
        return Route(tuple(out))


def _require_31(config: ControlConfig) -> None:
    if config.voltages.shape != (N_CONTROL_CHANNELS,):
        raise ConfigurationError("configuration must have 31 channels")


def _check_range(config: ControlConfig, awg: AwgSpec) -> None:
    v = config.voltages
    bad = np.nonzero((v < awg.v_min) | (v > awg.v_max))[0]
    if bad.size:
        raise ConfigurationError(
            f"voltage on channel '{CONTROL_CHANNEL_NAMES[bad[0]]}' outside AWG range")


def _grid_intervals(duration: float, sample_period: float, awg: AwgSpec) -> int:
    """Number of sample intervals covering `duration`, rounded up with warning."""
    n = duration / sample_period
    n_int = int(round(n))
    if abs(n - n_int) > 1e-9 * max(n, 1.0):
        n_int = int(np.ceil(n - 1e-12))
        warnings.warn(
            f"duration {duration} s not on the sample grid; rounded up to "
            f"{n_int * sample_period} s", stacklevel=3)
    return max(n_int, 1)


def compile_ramp(config_from: ControlConfig, config_to: ControlConfig,
                 t_playback: float, sample_period: float = DEFAULT_SAMPLE_PERIOD,
                 awg: AwgSpec = DEFAULT_AWG) -> Waveform:
    """Linear per-channel ramp between two configurations, endpoints inclusive."""
    _require_31(config_from)
    _require_31(config_to)
    _check_range(config_from, awg)
    _check_range(config_to, awg)
    if t_playback < sample_period:
        raise ConfigurationError("t_playback must be at least one sample period")
    n_int = _grid_intervals(t_playback, sample_period, awg)
    frac = np.arange(n_int + 1)[:, None] / n_int
    samples = config_from.voltages[None, :] * (1.0 - frac) \
        + config_to.voltages[None, :] * frac
    wf = Waveform(CONTROL_CHANNEL_NAMES, sample_period, samples,
                  meta={"from": config_from.name, "to": config_to.name})
    wf.validate(awg)
    return wf


def constant_waveform(config: ControlConfig, duration: float,
                      sample_period: float = DEFAULT_SAMPLE_PERIOD,
                      awg: AwgSpec = DEFAULT_AWG) -> Waveform:
    """Constant hold of one configuration."""
    _require_31(config)
    _check_range(config, awg)
    n_int = _grid_intervals(duration, sample_period, awg) if duration > 0 else 0
    samples = np.tile(config.voltages, (n_int + 1, 1))
    return Waveform(CONTROL_CHANNEL_NAMES, sample_period, samples,
                    meta={"from": config.name, "to": config.name})


def quantize(waveform: Waveform, awg: AwgSpec = DEFAULT_AWG) -> Waveform:
    """Snap samples to the AWG grid (ties to even multiple), clamp to range.

    Clamping is silent but counted in the returned waveform's
    ``meta['clamped_samples']``.  Idempotent.
    """
    steps = np.round(waveform.samples / awg.v_step)  # round-half-to-even
    snapped = steps * awg.v_step
    clamped = np.clip(snapped, awg.v_min, awg.v_max)
    n_clamped = int(np.count_nonzero(snapped != clamped))
    meta = dict(waveform.meta)
    meta["clamped_samples"] = n_clamped
    return Waveform(waveform.channel_names, waveform.sample_period, clamped, meta)


@dataclass(frozen=True)
class SlewReport:
    """Maximal |dV/dt| per channel and overall, on the unfiltered waveform."""

    per_channel: np.ndarray  # (n_channels,), V/s
    overall: float           # V/s
    worst_channel: str

    def overall_v_per_ms(self) -> float:
        return self.overall * MS


def max_slew_rate(waveform: Waveform) -> SlewReport:
    if waveform.n_samples < 2:
        per = np.zeros(len(waveform.channel_names))
    else:
        dv = np.abs(np.diff(waveform.samples, axis=0))
        per = dv.max(axis=0) / waveform.sample_period
    idx = int(np.argmax(per))
    return SlewReport(per, float(per[idx]), waveform.channel_names[idx])


def compile_route(route: Route, configs: dict[str, ControlConfig],
                  sample_period: float = DEFAULT_SAMPLE_PERIOD,
                  awg: AwgSpec = DEFAULT_AWG, *,
                  allow_any_timing: bool = False) -> Waveform:
    """Concatenate ramps and dwells; joins are continuous by construction."""
    route.validate(configs, allow_any_timing=allow_any_timing)
    legs = route.legs
    first = configs[legs[0].config_name]
    parts = [constant_waveform(first, legs[0].dwell, sample_period, awg).samples]
    prev = first
    for leg in legs[1:]:
        target = configs[leg.config_name]
        ramp = compile_ramp(prev, target, leg.t_playback, sample_period, awg)
        parts.append(ramp.samples[1:])
        if leg.dwell > 0:
            hold = constant_waveform(target, leg.dwell, sample_period, awg)
            parts.append(hold.samples[1:])
        prev = target
    samples = np.concatenate(parts, axis=0)
    names = " -> ".join(l.config_name for l in legs)
    wf = Waveform(CONTROL_CHANNEL_NAMES, sample_period, samples,
                  meta={"route": names})
    wf.validate(awg)
    return wf


class FilteredWaveform:
    """Exact response of the RC-stage cascade to a sampled waveform.

    The AWG output is reconstructed either as a zero-order hold ("hold",
    default: each sample value held for one period, matching a real AWG) or
    as the piecewise-linear interpolant ("linear").  Per segment and channel
    the response of every stage has the closed form
    ``alpha + beta*s + exp(-s/tau) * poly(s)``, which is propagated exactly
    through the cascade; the result is callable at any t >= 0 (beyond the end
    the input is held at the final sample).
    """

    def __init__(self, waveform: Waveform, filt: FilterModel = DEFAULT_FILTER,
                 input_mode: str = "hold"):
        if input_mode not in ("hold", "linear"):
            raise ValueError("input_mode must be 'hold' or 'linear'")
        self.channel_names = waveform.channel_names
        self.sample_period = waveform.sample_period
        self.filter = filt
        self.input_mode = input_mode
        self.duration = waveform.duration
        self._build(waveform.samples, filt.time_constant, filt.order)

    def _build(self, samples: np.ndarray, tau: float, order: int) -> None:
        n, c = samples.shape
        sp = self.sample_period
        n_seg = max(n - 1, 1) + 1  # per-sample segments plus the final hold
        alpha = np.zeros((n_seg, c))
        beta = np.zeros((n_seg, c))
        gamma = np.zeros((n_seg, order, c))
        state = np.tile(samples[0], (order, 1))  # initial condition: first sample
        for k in range(n_seg):
            if k < n - 1:
                v0, v1 = samples[k], samples[k + 1]
                seg_len = sp
            else:
                v0 = v1 = samples[-1]
                seg_len = np.inf
            if self.input_mode == "linear":
                a_in, b_in = v0, (v1 - v0) / sp if np.isfinite(seg_len) else np.zeros(c)
            else:
                a_in, b_in = v0, np.zeros(c)
            g_in = np.zeros((0, c))
            a, b, g = a_in, b_in, g_in
            new_state = np.empty_like(state)
            for j in range(order):
                a2 = a - b * tau
                b2 = b
                g2 = np.zeros((g.shape[0] + 1, c))
                for i in range(g.shape[0]):
                    g2[i + 1] = g[i] / (tau * (i + 1))
                g2[0] = state[j] - a2
                # stage output value at segment end -> next segment's state
                if np.isfinite(seg_len):
                    s = seg_len
                    decay = np.exp(-s / tau)
                    poly = np.zeros(c)
                    for i in range(g2.shape[0] - 1, -1, -1):
                        poly = poly * s + g2[i]
                    new_state[j] = a2 + b2 * s + decay * poly
                else:
                    new_state[j] = a2
                a, b, g = a2, b2, g2
            pad = order - g.shape[0]
            gamma[k] = np.pad(g, ((0, pad), (0, 0))) if pad > 0 else g[:order]
            alpha[k], beta[k] = a, b
            state = new_state
        self._alpha, self._beta, self._gamma = alpha, beta, gamma
        self._n_segments = n_seg

    def __call__(self, t) -> np.ndarray:
        """Filtered voltages, shape (..., n_channels), for t >= 0."""
        tt = np.asarray(t, dtype=float)
        if np.any(tt < 0):
            raise ValueError("filtered waveform is defined for t >= 0")
        scalar = tt.ndim == 0
        tt = np.atleast_1d(tt)
        k = np.minimum((tt / self.sample_period).astype(int), self._n_segments - 1)
        s = tt - k * self.sample_period
        tau = self.filter.time_constant
        out = self._alpha[k] + self._beta[k] * s[:, None]
        poly = np.zeros_like(out)
        for i in range(self._gamma.shape[1] - 1, -1, -1):
            poly = poly * s[:, None] + self._gamma[k, i]
        out = out + np.exp(-s / tau)[:, None] * poly
        return out[0] if scalar else out.reshape(np.shape(t) + (len(self.channel_names),))

    def settle_window(self, n_time_constants: float = 5.0) -> float:
        return self.duration + n_time_constants * self.filter.time_constant


def apply_filter(waveform: Waveform, filt: FilterModel = DEFAULT_FILTER,
                 input_mode: str = "hold") -> FilteredWaveform:
    """Continuous electrode-voltage function of time after the low-pass stage."""
    return FilteredWaveform(waveform, filt, input_mode)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def waveform_to_csv(waveform: Waveform, comments: list[str] | None = None) -> str:
    lines = [f"# {c}" for c in (comments or [])]
    lines.append("time_s," + ",".join(waveform.channel_names))
    for t, row in zip(waveform.times(), waveform.samples):
        lines.append(f"{t:.9f}," + ",".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"


def save_route(route: Route, path) -> None:
    lines = ["# ionshuttle route: config, t_playback_ms, dwell_ms"]
    for leg in route.legs:
        lines.append(f"{leg.config_name},{leg.t_playback / MS:g},{leg.dwell / MS:g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_route(path) -> Route:
    legs = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ConfigurationError(f"{path}:{lineno}: need 'config,t_ms,dwell_ms'")
        legs.append(RouteLeg(parts[0], float(parts[1]) * MS, float(parts[2]) * MS))
    return Route(tuple(legs))
