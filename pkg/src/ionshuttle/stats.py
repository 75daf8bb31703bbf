"""Reliability and fluorescence statistics for the shuttling experiments.

Covers the automated-loading success model (Bernoulli attempts with a retry
cap), the Doppler-broadened fluorescence model that converts a fractional
fluorescence drop into an upper bound on motional heating, photon-histogram
comparison, zero-failure rate bounds (exact binomial and rule-of-three), and
storage-lifetime expectations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as _scipy_stats

from .constants import CONSTANTS, MG24, IonSpecies

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class LoadingModel:
    """Automated single-ion loading: independent attempts, capped retries."""

    p_success: float = 0.4
    attempt_duration: float = 1.2    # s (ablation burst + camera check)
    detection_window: float = 0.5    # s, informational
    max_attempts: int = 10
    pulses_per_burst: tuple[int, int] = (5, 10)  # informational

    def __post_init__(self):
        if not 0.0 <= self.p_success <= 1.0:
            raise ValueError("p_success must lie in [0, 1]")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass
class LoadingOutcome:
    attempts_histogram: np.ndarray  # counts for 1..max_attempts successes
    n_trials: int
    n_terminated: int               # all attempts failed
    mean_attempts: float            # attempts used per trial incl. failures
    success_within: np.ndarray      # fraction succeeding within k attempts, k=1..max

    @property
    def success_fraction(self) -> float:
        return 1.0 - self.n_terminated / self.n_trials


def loading_simulate(model: LoadingModel, n_trials: int, seed: int) -> LoadingOutcome:
    """Monte Carlo of the loading automaton."""
    rng = np.random.default_rng(seed)
    m = model.max_attempts
    draws = rng.random((n_trials, m)) < model.p_success
    any_hit = draws.any(axis=1)
    first = np.where(any_hit, draws.argmax(axis=1) + 1, m + 1)
    hist = np.bincount(first[any_hit], minlength=m + 1)[1:m + 1]
    attempts_used = np.where(any_hit, first, m)
    within = np.cumsum(hist) / n_trials
    return LoadingOutcome(attempts_histogram=hist, n_trials=n_trials,
                          n_terminated=int(np.count_nonzero(~any_hit)),
                          mean_attempts=float(attempts_used.mean()),
                          success_within=within)


@dataclass(frozen=True)
class LoadingAnalytics:
    success_within: np.ndarray      # P(success within k attempts), k=1..max
    p_terminated: float             # all max_attempts fail
    mean_attempts: float            # incl. terminated trials at max_attempts
    mean_attempts_given_success: float
    mean_wall_time: float           # s
    mean_wall_time_given_success: float


def loading_analytics(model: LoadingModel) -> LoadingAnalytics:
    """Closed-form geometric-law quantities with truncation at max_attempts."""
    p, m = model.p_success, model.max_attempts
    q = 1.0 - p
    k = np.arange(1, m + 1)
    within = 1.0 - q ** k
    p_term = q ** m
    pmf = p * q ** (k - 1)
    mean_attempts = float(np.sum(k * pmf) + m * p_term)
    mean_given_success = (float(np.sum(k * pmf) / (1.0 - p_term))
                          if p > 0 else float("inf"))
    return LoadingAnalytics(success_within=within, p_terminated=float(p_term),
                            mean_attempts=mean_attempts,
                            mean_attempts_given_success=mean_given_success,
                            mean_wall_time=mean_attempts * model.attempt_duration,
                            mean_wall_time_given_success=(mean_given_success
                                                          * model.attempt_duration))


def expected_attempts_untruncated(model: LoadingModel) -> float:
    """Geometric mean attempts 1/p (no retry cap)."""
    if model.p_success <= 0:
        return float("inf")
    return 1.0 / model.p_success


# ---------------------------------------------------------------------------
# Fluorescence -> heating bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FluorescenceModel:
    """Doppler-broadened scattering of the detection beam off one mode.

    The beam lies along a single axis; the velocity spread of the probed mode
    is Gaussian with <v^2> = hbar omega (nbar + 1/2) / m.  The published
    conversion used unpublished beam parameters; the defaults here are the
    model's calibration point, not a fit.
    """

    gamma: float = TWO_PI * 42e6        # rad/s, natural linewidth
    detuning: float = -TWO_PI * 42e6 / 4.0  # rad/s (red, close to resonance)
    saturation: float = 0.5
    wavelength: float = 280e-9          # m
    mode_freq: float = TWO_PI * 1e6     # rad/s, lowest (most conservative) mode
    mass: float = MG24.mass             # kg

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("linewidth must be positive")
        if self.saturation < 0:
            raise ValueError("saturation must be non-negative")

    def velocity_sigma(self, nbar: float) -> float:
        e = CONSTANTS.reduced_planck * self.mode_freq * (nbar + 0.5)
        return np.sqrt(e / self.mass)


_GH_NODES = 64


def scatter_rate_relative(model: FluorescenceModel, nbar,
                          n_nodes: int = _GH_NODES) -> np.ndarray:
    """Thermally averaged scattering rate, normalized to the nbar = 0 value.

    R(nbar) ~ < (s/2) / (1 + s + (2 (Delta + k v)/Gamma)^2) > over
    v ~ N(0, sigma_v^2), evaluated by Gauss-Hermite quadrature.
    """
    nbar = np.asarray(nbar, dtype=float)
    scalar = nbar.ndim == 0
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    k_beam = TWO_PI / model.wavelength

    def raw(nb):
        sigma = model.velocity_sigma(nb)
        v = np.sqrt(2.0) * sigma * nodes
        x = 2.0 * (model.detuning + k_beam * v) / model.gamma
        integrand = (model.saturation / 2.0) / (1.0 + model.saturation + x * x)
        return float(np.sum(weights * integrand) / np.sqrt(np.pi))

    r0 = raw(0.0)
    out = np.array([raw(float(nb)) / r0 for nb in np.atleast_1d(nbar)])
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class HeatingBound:
    nbar: float
    flag: str = "ok"   # "ok" | "no_heating_detectable" | "unbounded"


def heating_bound_from_fluorescence(delta_fluo_fraction: float,
                                    model: FluorescenceModel,
                                    rel_tol: float = 1e-4) -> HeatingBound:
    """Invert the rate model: nbar such that R(nbar)/R(0) = 1 + delta.

    A positive delta means no detectable heating (returns 0); a delta at or
    below -1 is outside the model's range.
    """
    if delta_fluo_fraction > 0:
        return HeatingBound(0.0, "no_heating_detectable")
    if delta_fluo_fraction <= -1.0:
        return HeatingBound(float("inf"), "unbounded")
    target = 1.0 + delta_fluo_fraction
    if target >= 1.0:
        return HeatingBound(0.0, "no_heating_detectable")
    hi = 1.0
    while scatter_rate_relative(model, hi) > target:
        hi *= 4.0
        if hi > 1e14:
            return HeatingBound(float("inf"), "unbounded")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if scatter_rate_relative(model, mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rel_tol * max(hi, 1.0):
            break
    return HeatingBound(0.5 * (lo + hi), "ok")


# ---------------------------------------------------------------------------
# Histogram comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HistogramPair:
    """Photon-count histograms: occurrences per count bin."""

    reference: np.ndarray
    test: np.ndarray
    bin_edges: np.ndarray

    def __post_init__(self):
        ref = np.asarray(self.reference)
        tst = np.asarray(self.test)
        edges = np.asarray(self.bin_edges, dtype=float)
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "test", tst)
        object.__setattr__(self, "bin_edges", edges)
        if ref.shape != tst.shape or edges.shape != (ref.size + 1,):
            raise ValueError("histograms and bin edges have inconsistent shapes")
        if np.any(ref < 0) or np.any(tst < 0):
            raise ValueError("histogram counts must be non-negative")

    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


def histogram_delta(pair: HistogramPair) -> tuple[float, float]:
    """Fractional mean-fluorescence change test vs reference, with Poisson
    uncertainty of the two means."""
    n_ref = float(np.sum(pair.reference))
    n_tst = float(np.sum(pair.test))
    if n_ref == 0 or n_tst == 0:
        raise ValueError("histograms must contain counts")
    c = pair.centers()
    m_ref = float(np.dot(c, pair.reference)) / n_ref
    m_tst = float(np.dot(c, pair.test)) / n_tst
    if m_ref <= 0:
        raise ValueError("reference mean must be positive")
    delta = m_tst / m_ref - 1.0
    var = (m_tst / m_ref) ** 2 * (1.0 / (n_tst * m_tst) + 1.0 / (n_ref * m_ref))
    return delta, float(np.sqrt(var))


def histogram_pair_to_csv(pair: HistogramPair) -> str:
    lines = ["bin_lo,bin_hi,reference,test"]
    for i in range(pair.reference.size):
        lines.append(f"{pair.bin_edges[i]:g},{pair.bin_edges[i + 1]:g},"
                     f"{int(pair.reference[i])},{int(pair.test[i])}")
    return "\n".join(lines) + "\n"


def load_histogram_csv(text: str) -> HistogramPair:
    rows = [r for r in text.splitlines() if r.strip() and not r.startswith("#")]
    body = rows[1:]
    lo, hi, ref, tst = [], [], [], []
    for r in body:
        a, b, c, d = r.split(",")
        lo.append(float(a)); hi.append(float(b)); ref.append(int(c)); tst.append(int(d))
    edges = np.array(lo + [hi[-1]])
    return HistogramPair(np.array(ref), np.array(tst), edges)


# ---------------------------------------------------------------------------
# Failure-rate and storage bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FailureRateBound:
    n_trials: int
    n_failures: int
    confidence: float
    upper: float          # exact binomial (Clopper-Pearson) upper limit
    lower: float
    rule_of_three: float  # 3/n approximation (95 %)
    naive: float          # point estimate max(k, 1)/n


def failure_rate_bound(n_successes: int, n_failures: int,
                       confidence: float = 0.95) -> FailureRateBound:
    """Binomial failure-rate interval after n_successes + n_failures trials.

    With zero failures the exact upper bound is 1 - (1 - confidence)^(1/n).
    """
    if n_successes < 0 or n_failures < 0 or n_successes + n_failures < 1:
        raise ValueError("need at least one trial")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    n = n_successes + n_failures
    k = n_failures
    if k == 0:
        upper = 1.0 - (1.0 - confidence) ** (1.0 / n)
        lower = 0.0
    else:
        upper = float(_scipy_stats.beta.ppf(confidence, k + 1, n - k))
        lower = float(_scipy_stats.beta.ppf(1.0 - confidence, k, n - k + 1))
    return FailureRateBound(n_trials=n, n_failures=k, confidence=confidence,
                            upper=upper, lower=lower,
                            rule_of_three=3.0 / n,
                            naive=max(k, 1) / n)


@dataclass(frozen=True)
class StorageExpectation:
    survival_probability: float    # per sequence
    expected_consecutive: float    # exact geometric mean run length
    ratio_approximation: float     # tau / duration
    p_survive_all: float           # all n_sequences survive
    unlimited: bool = False


def storage_limited_expectation(storage_tau: float, sequence_duration: float,
                                n_sequences: int = 0) -> StorageExpectation:
    """Consecutive-sequence expectations for an exponential storage lifetime."""
    if storage_tau <= 0:
        raise ValueError("storage_tau must be positive")
    if sequence_duration < 0:
        raise ValueError("sequence_duration must be non-negative")
    if sequence_duration == 0:
        return StorageExpectation(1.0, float("inf"), float("inf"), 1.0,
                                  unlimited=True)
    p = float(np.exp(-sequence_duration / storage_tau))
    expected = p / (1.0 - p) if p < 1.0 else float("inf")
    p_all = p ** n_sequences if n_sequences > 0 else 1.0
    return StorageExpectation(p, expected, storage_tau / sequence_duration, p_all)
