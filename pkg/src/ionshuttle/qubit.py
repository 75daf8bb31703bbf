"""Hyperfine-qubit Ramsey simulation through shuttling sequences.

Phase evolution is modelled as pure dephasing: a deterministic detuning
integral (local light shifts plus the quadratic field dependence of the
clock-like transition sampled along the ion's route) with an exponential
contrast envelope.  Fringes are fitted by weighted linear least squares in
(1, cos phi, sin phi); detection is emulated by a two-component Poisson
mixture with known bright/dark rates.

Sign convention: a positive qubit-frequency shift advances the fringe phase
(the fitted offset adds to the analysis phase).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import UM

TWO_PI = 2.0 * np.pi


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class QubitParams:
    omega_qubit: float = TWO_PI * 1762.974e6   # rad/s
    tau_coh: float = 6e-3                      # s
    initial_contrast: float = 0.86
    b_quant: float = 10.9e-3                   # T
    b_gradient: tuple[float, float, float] = (0.0, 0.0, 0.013)  # T/m
    quadratic_shift_coeff: float = 3.0e10      # Hz/T^2, calibrated placeholder
    field_origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.tau_coh <= 0:
            raise ValueError("tau_coh must be positive")
        if not 0.0 <= self.initial_contrast <= 1.0:
            raise ValueError("initial_contrast must lie in [0, 1]")

    def field_magnitude(self, position) -> np.ndarray:
        """|B| along the route: quantizing field plus linear gradient."""
        rel = np.asarray(position, dtype=float) - np.asarray(self.field_origin)
        return self.b_quant + rel @ np.asarray(self.b_gradient)


@dataclass(frozen=True)
class StarkPulse:
    shift: float = TWO_PI * 2.21e3  # rad/s
    duration: float = 50e-6         # s
    site: str = "T_1"

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("pulse duration must be non-negative")


@dataclass(frozen=True)
class Wait:
    duration: float
    site: str


@dataclass(frozen=True)
class Shuttle:
    site_from: str
    site_to: str
    duration: float


@dataclass(frozen=True)
class Stark:
    pulse: StarkPulse


@dataclass(frozen=True)
class RamseySequence:
    """Segments between the two pi/2 pulses of a Ramsey experiment."""

    segments: tuple

    @property
    def total_duration(self) -> float:
        out = 0.0
        for seg in self.segments:
            if isinstance(seg, Stark):
                out += seg.pulse.duration
            else:
                out += seg.duration
        return out


@dataclass
class RamseyResult:
    phase_samples: list            # (phi, p_down, sigma)
    fitted_contrast: float
    contrast_sigma: float
    fitted_phase_offset: float     # rad
    phase_sigma: float
    phase_defined: bool = True


def accumulate_phase(sequence: RamseySequence, params: QubitParams,
                     site_positions: dict[str, np.ndarray]) -> float:
    """Deterministic phase integral (rad) over the sequence.

    The detuning is the local Stark shift during Stark segments plus
    2 pi c2 (|B(r)|^2 - b_quant^2) from the field map; positions follow the
    route geometry (site positions, linear interpolation during shuttles).
    """
    def quad_shift(pos) -> float:
        b = params.field_magnitude(pos)
        return TWO_PI * params.quadratic_shift_coeff * (b * b - params.b_quant ** 2)

    def site(label: str) -> np.ndarray:
        try:
            return np.asarray(site_positions[label], dtype=float)
        except KeyError:
            raise KeyError(f"unresolved site label '{label}'") from None

    phase = 0.0
    for seg in sequence.segments:
        if isinstance(seg, Wait):
            phase += quad_shift(site(seg.site)) * seg.duration
        elif isinstance(seg, Stark):
            pos = site(seg.pulse.site)
            phase += (seg.pulse.shift + quad_shift(pos)) * seg.pulse.duration
        elif isinstance(seg, Shuttle):
            # linear position interpolation; |B|^2 is quadratic along the leg,
            # integrate exactly with Simpson's rule
            a, b = site(seg.site_from), site(seg.site_to)
            f0 = quad_shift(a)
            fm = quad_shift(0.5 * (a + b))
            f1 = quad_shift(b)
            phase += seg.duration * (f0 + 4.0 * fm + f1) / 6.0
        else:
            raise TypeError(f"unknown sequence segment {seg!r}")
    return phase


def ramsey_probability(phase_offset: float, contrast: float, phi) -> np.ndarray:
    """P(down) = (1 + C cos(phi - phase_offset)) / 2."""
    return 0.5 * (1.0 + contrast * np.cos(np.asarray(phi) - phase_offset))


def contrast_model(params: QubitParams, total_duration: float) -> float:
    """Exponential contrast envelope C0 exp(-t / tau_coh)."""
    return params.initial_contrast * np.exp(-total_duration / params.tau_coh)


def fit_fringe(samples) -> RamseyResult:
    """Weighted linear least squares of P(phi) = a + b cos phi + c sin phi.

    `samples` is a sequence of (phi, p, sigma); contrast = 2 sqrt(b^2 + c^2)
    (clipped to [0, 1]), phase = atan2(c, b), uncertainties propagated from
    the parameter covariance.
    """
    samples = [(float(p), float(v), float(s)) for (p, v, s) in samples]
    if len(samples) < 4:
        raise FitError("need at least 4 phase samples to fit a fringe")
    phi = np.array([s[0] for s in samples])
    y = np.array([s[1] for s in samples])
    sig = np.array([s[2] for s in samples])
    sig = np.where(sig > 0, sig, np.max(sig[sig > 0]) if np.any(sig > 0) else 1.0)
    x = np.stack([np.ones_like(phi), np.cos(phi), np.sin(phi)], axis=1)
    w = 1.0 / sig
    xw = x * w[:, None]
    yw = y * w
    try:
        cov = np.linalg.inv(xw.T @ xw)
    except np.linalg.LinAlgError:
        raise FitError("degenerate design matrix (poorly spread phases)") from None
    beta = cov @ (xw.T @ yw)
    a, b, c = beta
    amp = float(np.hypot(b, c))
    contrast = float(np.clip(2.0 * amp, 0.0, 1.0))
    phase_defined = amp > 1e-10
    phase = float(np.arctan2(c, b)) if phase_defined else 0.0
    var_b, var_c = cov[1, 1], cov[2, 2]
    cov_bc = cov[1, 2]
    if amp > 0:
        var_amp = (b * b * var_b + c * c * var_c + 2 * b * c * cov_bc) / amp ** 2
        var_phase = (c * c * var_b + b * b * var_c - 2 * b * c * cov_bc) / amp ** 4
    else:
        var_amp = var_b + var_c
        var_phase = np.inf
    return RamseyResult(phase_samples=samples,
                        fitted_contrast=contrast,
                        contrast_sigma=2.0 * float(np.sqrt(max(var_amp, 0.0))),
                        fitted_phase_offset=phase,
                        phase_sigma=float(np.sqrt(var_phase)),
                        phase_defined=phase_defined)


@dataclass(frozen=True)
class DetectionModel:
    """Two-component Poisson photon-count model, rates in counts/s."""

    bright_rate: float = 1e5
    dark_rate: float = 4e3
    window: float = 5e-4

    def __post_init__(self):
        if self.bright_rate <= self.dark_rate:
            raise ValueError("bright_rate must exceed dark_rate")
        if self.window <= 0:
            raise ValueError("detection window must be positive")


@dataclass
class DetectionOutcome:
    histogram: np.ndarray     # counts per photon number
    p_down_estimate: float
    shots: int


def detection_emulate(p_down: float, bright_rate: float, dark_rate: float,
                      window: float, shots: int, seed: int) -> DetectionOutcome:
    """Draw photon counts for `shots` Bernoulli state preparations and
    estimate P(down) by two-component Poisson mixture maximum likelihood
    (the |down> state is the bright, cycling state)."""
    model = DetectionModel(bright_rate, dark_rate, window)
    rng = np.random.default_rng(seed)
    bright = rng.random(shots) < p_down
    lam_b = model.bright_rate * model.window
    lam_d = model.dark_rate * model.window
    counts = np.where(bright, rng.poisson(lam_b, shots), rng.poisson(lam_d, shots))
    hist = np.bincount(counts)
    p_hat = _mixture_mle(counts, lam_b, lam_d)
    return DetectionOutcome(histogram=hist, p_down_estimate=p_hat, shots=shots)


def _mixture_mle(counts: np.ndarray, lam_b: float, lam_d: float) -> float:
    """Maximize L(p) = prod_k [p Pois(k; lam_b) + (1-p) Pois(k; lam_d)]."""
    from scipy.stats import poisson as _poisson
    pb = _poisson.pmf(counts, lam_b)
    pd = _poisson.pmf(counts, lam_d)

    def neg_ll(p):
        mix = p * pb + (1.0 - p) * pd
        return -np.sum(np.log(np.maximum(mix, 1e-300)))

    # log-likelihood is concave in p: golden-section on [0, 1]
    lo, hi = 0.0, 1.0
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - inv_phi * (hi - lo)
    x2 = lo + inv_phi * (hi - lo)
    f1, f2 = neg_ll(x1), neg_ll(x2)
    for _ in range(80):
        if f1 < f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - inv_phi * (hi - lo)
            f1 = neg_ll(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + inv_phi * (hi - lo)
            f2 = neg_ll(x2)
    return 0.5 * (lo + hi)


def simulate_sequence(sequence: RamseySequence, params: QubitParams,
                      site_positions: dict[str, np.ndarray], phis,
                      shots: int, seed: int,
                      detection: DetectionModel | None = None) -> RamseyResult:
    """Simulate the Ramsey fringe over the analysis-phase grid and fit it.

    ``shots == 0`` is the analytic (infinite-shot) mode: probabilities enter
    the fit exactly.  Otherwise each phase point draws `shots` Bernoulli
    outcomes (optionally through the photon-count detection model) with a
    per-point child seed derived from `seed`.
    """
    phis = np.asarray(phis, dtype=float)
    if phis.size < 4:
        raise FitError("need at least 4 analysis phases")
    offset = accumulate_phase(sequence, params, site_positions)
    contrast = contrast_model(params, sequence.total_duration)
    seeds = np.random.SeedSequence(seed).spawn(phis.size)
    samples = []
    for i, phi in enumerate(phis):
        p = float(ramsey_probability(offset, contrast, phi))
        if shots == 0:
            samples.append((phi, p, 1e-6))
            continue
        child = np.random.default_rng(seeds[i])
        if detection is None:
            n_down = child.binomial(shots, p)
            p_hat = n_down / shots
        else:
            out = detection_emulate(p, detection.bright_rate, detection.dark_rate,
                                    detection.window, shots,
                                    int(child.integers(0, 2 ** 63 - 1)))
            p_hat = out.p_down_estimate
        sigma = max(np.sqrt(p_hat * (1.0 - p_hat) / shots), 0.5 / shots)
        samples.append((phi, p_hat, sigma))
    return fit_fringe(samples)


# ---------------------------------------------------------------------------
# Published measurement scenarios
# ---------------------------------------------------------------------------

SCENARIO_LEG_DURATION = 1e-4  # s, one shuttle leg
STARK_SITE = "T_1"


def scenario_sequence(which: str, *, leg: float = SCENARIO_LEG_DURATION,
                      stark: StarkPulse | None = None) -> RamseySequence:
    """The published sequences: i/ii are 0.25 ms roundtrips to T_1 (ii adds a
    50 us local light shift), iii is a 0.6 ms tour of all three sites, and
    'reference' waits at the hub for 0.25 ms."""
    pulse = stark or StarkPulse()
    hold = pulse.duration  # i/ii share timing; i replaces the pulse by a wait
    if which == "reference":
        return RamseySequence((Wait(2 * leg + hold, "T_H"),))
    if which == "i":
        return RamseySequence((Shuttle("T_H", "T_1", leg),
                               Wait(hold, "T_1"),
                               Shuttle("T_1", "T_H", leg)))
    if which == "ii":
        return RamseySequence((Shuttle("T_H", "T_1", leg),
                               Stark(pulse),
                               Shuttle("T_1", "T_H", leg)))
    if which == "iii":
        segs = []
        for s in ("T_0", "T_1", "T_2"):
            segs.append(Shuttle("T_H", s, leg))
            segs.append(Shuttle(s, "T_H", leg))
        return RamseySequence(tuple(segs))
    raise ValueError("scenario must be one of: i, ii, iii, reference")


def calibrate_quadratic_coeff(params: QubitParams,
                              site_positions: dict[str, np.ndarray],
                              target_phase_rad: float,
                              sequence: RamseySequence | None = None) -> float:
    """Quadratic-shift coefficient making the gradient-only roundtrip phase
    equal `target_phase_rad` (the published scenario-i background offset)."""
    seq = sequence or scenario_sequence("i")
    probe = QubitParams(omega_qubit=params.omega_qubit, tau_coh=params.tau_coh,
                        initial_contrast=params.initial_contrast,
                        b_quant=params.b_quant, b_gradient=params.b_gradient,
                        quadratic_shift_coeff=1.0,
                        field_origin=params.field_origin)
    unit_phase = accumulate_phase(seq, probe, site_positions)
    if unit_phase == 0.0:
        raise ValueError("route is insensitive to the field gradient")
    return target_phase_rad / unit_phase


def result_to_csv(result: RamseyResult, comments: list[str] | None = None) -> str:
    lines = [f"# {c}" for c in (comments or [])]
    lines.append("phi_deg,p_down,sigma")
    for phi, p, s in result.phase_samples:
        lines.append(f"{np.degrees(phi):.4f},{p:.6f},{s:.6f}")
    lines.append(f"# fitted_contrast,{result.fitted_contrast:.6f},"
                 f"{result.contrast_sigma:.6f}")
    lines.append(f"# fitted_phase_deg,{np.degrees(result.fitted_phase_offset):.4f},"
                 f"{np.degrees(result.phase_sigma):.4f}")
    lines.append(f"# phase_defined,{result.phase_defined}")
    return "\n".join(lines) + "\n"
