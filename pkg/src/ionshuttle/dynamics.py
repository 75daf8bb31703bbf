"""Classical single-ion motion through time-dependent trap potentials.

`integrate` is a generic velocity-Verlet driver for any potential object with
a ``gradient(position, t)`` method (synthetic wells in tests).  The transport
path (`transport_simulate`) runs a compiled numba kernel over the reference
trap fields and the filtered waveform, then projects the final phase-space
point onto the secular modes of the arrival site.

Noise, when enabled, adds an independent Gaussian velocity impulse per step
with variance q^2 S_E dt / (2 m^2) per axis (S_E the one-sided electric-field
noise spectral density), which reproduces the standard white-noise heating
rate q^2 S_E / (4 m) in energy per unit time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .constants import BOLTZMANN, CONSTANTS, IonSpecies
from .sites import TrapSite, field_mode_analysis
from .trapmodel import ControlConfig, ElectrodeLayout, RfDrive, TotalPotential
from .waveform import FilteredWaveform

DEFAULT_MAX_EXCURSION = 200e-6  # m
DEFAULT_SETTLE_TIME_CONSTANTS = 10.0
Z_FLOOR = 1e-6  # m; below this the ion counts as lost to the chip


@dataclass(frozen=True)
class NoiseModel:
    """White electric-field noise, one-sided spectral density per axis."""

    field_noise_density: tuple[float, float, float] = (0.0, 0.0, 0.0)  # (V/m)^2/Hz
    enabled: bool = False

    def __post_init__(self):
        if any(d < 0 for d in self.field_noise_density):
            raise ValueError("noise spectral densities must be non-negative")


@dataclass(frozen=True)
class SimulationOptions:
    mode: str = "secular"            # "secular" | "full_rf"
    dt: float | None = None          # s; None uses the mode default
    rng_seed: int = 0
    noise: NoiseModel | None = None
    max_excursion: float = DEFAULT_MAX_EXCURSION
    decimation: int = 200
    thermal_temperature: float = 0.0  # K; 0 starts the ion at rest

    def __post_init__(self):
        if self.mode not in ("secular", "full_rf"):
            raise ValueError("mode must be 'secular' or 'full_rf'")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")


@dataclass
class Trajectory:
    t: np.ndarray           # (n,)
    positions: np.ndarray   # (n, 3)
    velocities: np.ndarray  # (n, 3)
    decimation: int
    lost: bool = False

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")


@dataclass(frozen=True)
class TransportResult:
    confined: bool
    final_site: str | None
    quanta_per_mode: np.ndarray   # (3,)
    secular_energy: np.ndarray    # (3,), J
    max_excursion: float          # m
    ion_lost: bool = False
    final_position: np.ndarray | None = None
    final_velocity: np.ndarray | None = None

    @property
    def total_quanta(self) -> float:
        return float(np.sum(self.quanta_per_mode))


def default_timestep(mode: str, omega_max: float, omega_rf: float) -> float:
    """Mode defaults: secular T_min/200, full_rf 2 pi / (100 Omega_rf)."""
    if mode == "full_rf":
        return 2.0 * np.pi / (100.0 * omega_rf)
    return 2.0 * np.pi / (200.0 * omega_max)


def integrate(species: IonSpecies, potential_of_time, initial_state, t_span,
              options: SimulationOptions) -> Trajectory:
    """Velocity-Verlet integration of a single ion in a generic potential.

    `potential_of_time` needs ``gradient(position, t) -> (3,)`` in J/m.
    `initial_state` is ``(position, velocity)``; `t_span` is ``(t0, t1)``.
    Excess excursion or z <= 0 marks the ion lost (not an exception).
    """
    if options.dt is None:
        raise ValueError("integrate() requires an explicit dt in options")
    dt = options.dt
    t0, t1 = t_span
    n_steps = max(int(round((t1 - t0) / dt)), 1)
    pos = np.array(initial_state[0], dtype=float)
    vel = np.array(initial_state[1], dtype=float)
    if pos[2] <= 0:
        raise ValueError("initial position must be above the chip plane")
    m = species.mass
    rng = np.random.default_rng(options.rng_seed)
    noise_dv = _noise_impulses(options, species, dt, n_steps, rng)

    decim = options.decimation
    rows_t = [t0]
    rows_p = [pos.copy()]
    rows_v = [vel.copy()]
    lost = False
    start = pos.copy()
    acc = -potential_of_time.gradient(pos, t0) / m
    t = t0
    for step in range(n_steps):
        t_new = t0 + (step + 1) * dt
        pos = pos + vel * dt + 0.5 * acc * dt * dt
        if pos[2] <= 0 or np.linalg.norm(pos - start) > options.max_excursion:
            lost = True
            t = t_new
            break
        acc_new = -potential_of_time.gradient(pos, t_new) / m
        vel = vel + 0.5 * (acc + acc_new) * dt
        if noise_dv is not None:
            vel = vel + noise_dv[step]
        acc = acc_new
        t = t_new
        if (step + 1) % decim == 0:
            rows_t.append(t)
            rows_p.append(pos.copy())
            rows_v.append(vel.copy())
    if rows_t[-1] < t:
        rows_t.append(t)
        rows_p.append(pos.copy())
        rows_v.append(vel.copy())
    return Trajectory(np.array(rows_t), np.array(rows_p), np.array(rows_v),
                      decim, lost=lost)


def _noise_impulses(options: SimulationOptions, species: IonSpecies, dt: float,
                    n_steps: int, rng: np.random.Generator):
    if options.noise is None or not options.noise.enabled:
        return None
    dens = np.asarray(options.noise.field_noise_density, dtype=float)
    sigma_v = species.charge * np.sqrt(dens * dt / 2.0) / species.mass
    return rng.standard_normal((n_steps, 3)) * sigma_v[None, :]


def thermal_state(site: TrapSite, species: IonSpecies, temperature: float,
                  rng: np.random.Generator):
    """Sample a classical thermal displacement/velocity in the site's modes."""
    if temperature <= 0:
        return site.position.copy(), np.zeros(3)
    kt = BOLTZMANN * temperature
    m = species.mass
    amps = np.sqrt(kt / m) / site.mode_frequencies   # position sigma per mode
    dx = site.mode_vectors @ (rng.standard_normal(3) * amps)
    dv = site.mode_vectors @ (rng.standard_normal(3) * np.sqrt(kt / m))
    return site.position + dx, dv


def transport_simulate(layout: ElectrodeLayout, drive: RfDrive,
                       species: IonSpecies, filtered_waveform: FilteredWaveform,
                       route_sites: list[TrapSite],
                       options: SimulationOptions,
                       *, settle_time_constants: float = DEFAULT_SETTLE_TIME_CONSTANTS
                       ) -> TransportResult:
    """Integrate through the waveform plus settle time and score the arrival.

    The ion starts at rest at `route_sites[0]` (or with a sampled thermal
    state); the final phase-space point is projected onto the secular modes of
    the arrival site, located by Newton refinement from `route_sites[-1]`
    under the final configuration.
    """
    if len(route_sites) < 1:
        raise ValueError("route_sites must contain at least the start site")
    start = route_sites[0]
    rng = np.random.default_rng(options.rng_seed)
    pos0, vel0 = thermal_state(start, species, options.thermal_temperature, rng)

    omega_max = float(np.max(start.mode_frequencies))
    dt = options.dt or default_timestep(options.mode, omega_max, drive.omega_rf)
    t_end = filtered_waveform.duration \
        + settle_time_constants * filtered_waveform.filter.time_constant \
        * filtered_waveform.filter.order
    n_steps = max(int(np.ceil(t_end / dt)), 1)

    noise_dv = _noise_impulses(options, species, dt, n_steps, rng)
    if noise_dv is None:
        noise_dv = np.zeros((0, 3))

    mask = layout.patch_channel >= 0
    ps_scale = (species.charge ** 2 * drive.u_rf ** 2
                / (4.0 * species.mass * drive.omega_rf ** 2))
    fw = filtered_waveform
    traj_rows, n_rows, final, lost, max_exc = _kernels.run_transport(
        pos0, vel0, dt, n_steps,
        layout.x_lo[layout.rf_mask], layout.x_hi[layout.rf_mask],
        layout.y_lo[layout.rf_mask], layout.y_hi[layout.rf_mask],
        layout.x_lo[mask], layout.x_hi[mask],
        layout.y_lo[mask], layout.y_hi[mask],
        layout.patch_channel[mask],
        fw._alpha, fw._beta, fw._gamma, fw.filter.time_constant,
        fw.sample_period, fw._n_segments,
        1.0 / layout.sheet_height,
        ps_scale, species.charge, species.mass,
        0 if options.mode == "secular" else 1,
        drive.u_rf, drive.omega_rf,
        noise_dv, options.max_excursion, Z_FLOOR, options.decimation)

    final_pos = final[:3]
    final_vel = final[3:]
    if lost:
        return TransportResult(confined=False, final_site=None,
                               quanta_per_mode=np.full(3, np.nan),
                               secular_energy=np.full(3, np.nan),
                               max_excursion=float(max_exc), ion_lost=True,
                               final_position=final_pos, final_velocity=final_vel)

    arrival = _arrival_site(layout, drive, species, fw, route_sites)
    omega, vectors = arrival.mode_frequencies, arrival.mode_vectors
    dr = final_pos - arrival.position
    m = species.mass
    hbar = CONSTANTS.reduced_planck
    e_mode = np.empty(3)
    for i in range(3):
        e = vectors[:, i]
        e_mode[i] = (0.5 * m * float(np.dot(final_vel, e)) ** 2
                     + 0.5 * m * omega[i] ** 2 * float(np.dot(dr, e)) ** 2)
    quanta = e_mode / (hbar * omega)

    dist = np.linalg.norm(final_pos - arrival.position)
    label = None
    for s in route_sites:
        if np.linalg.norm(arrival.position - s.position) < 5e-6:
            label = s.label
    confined = dist <= 5e-6
    return TransportResult(confined=confined, final_site=label,
                           quanta_per_mode=quanta, secular_energy=e_mode,
                           max_excursion=float(max_exc),
                           final_position=final_pos, final_velocity=final_vel)


def _arrival_site(layout, drive, species, fw: FilteredWaveform,
                  route_sites) -> TrapSite:
    """Refine the final configuration's minimum near the intended end site."""
    v_final = fw(fw.duration + 50.0 * fw.filter.time_constant)
    config = ControlConfig("arrival", np.round(v_final, 12))
    tot = TotalPotential(layout, drive, config, species)
    p = np.array(route_sites[-1].position, dtype=float)
    for _ in range(60):
        g = tot.gradient(p)
        if np.linalg.norm(g) < 1e-22:
            break
        h = tot.hessian(p)
        step = np.linalg.solve(h, -g)
        n = np.linalg.norm(step)
        if n > 2e-6:
            step *= 2e-6 / n
        p = p + step
    omega, vectors = field_mode_analysis(tot, p, species.mass)
    return TrapSite(route_sites[-1].label, p, omega, vectors,
                    float(tot.energy(p)))


def quanta_gained(energy: float, omega: float) -> float:
    """Motional energy expressed in units of hbar * omega."""
    return energy / (CONSTANTS.reduced_planck * omega)


def trajectory_to_csv(traj: Trajectory, comments: list[str] | None = None) -> str:
    lines = [f"# {c}" for c in (comments or [])]
    lines.append("t_s,x_m,y_m,z_m,vx_mps,vy_mps,vz_mps")
    for i in range(len(traj.t)):
        p, v = traj.positions[i], traj.velocities[i]
        lines.append(f"{traj.t[i]:.9e},{p[0]:.9e},{p[1]:.9e},{p[2]:.9e},"
                     f"{v[0]:.6e},{v[1]:.6e},{v[2]:.6e}")
    return "\n".join(lines) + "\n"
