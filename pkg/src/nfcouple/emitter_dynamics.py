"""Three-level emitter: rate equations, analytic g2 and time-tag simulation.

Levels are 1 (ground), 2 (excited), 3 (metastable shelving state). Powers are
in mW, rates in 1/s, time tags in integer picoseconds.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateEigenvalues, ValidationError


@dataclass(frozen=True)
class ThreeLevelRates:
    k12: float
    k21: float
    k23: float
    k31: float
    radiative_fraction: float = 1.0

    def __post_init__(self):
        for name in ("k12", "k21", "k23", "k31"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be nonnegative")
        if not self.k21 > 0:
            raise ValidationError("k21 must be positive")
        if not 0.0 <= self.radiative_fraction <= 1.0:
            raise ValidationError("radiative_fraction must lie in [0, 1]")
        if self.k23 > 0 and self.k31 == 0:
            raise ValidationError("shelving without deshelving (k23 > 0, k31 = 0) has no steady state")
        gen = self.generator()
        assert np.allclose(gen.sum(axis=0), 0.0, atol=1e-9 * np.abs(gen).max()), \
            "rate matrix columns must sum to zero"

    @property
    def gamma_tot(self):
        """Total decay rate out of the excited state."""
        return self.k21 + self.k23

    @property
    def tau_tot(self):
        return 1.0 / self.gamma_tot

    def generator(self):
        """d rho / dt = L rho for rho = (rho1, rho2, rho3)."""
        k12, k21, k23, k31 = self.k12, self.k21, self.k23, self.k31
        return np.array([
            [-k12, k21, k31],
            [k12, -(k21 + k23), 0.0],
            [0.0, k23, -k31],
        ])

    def steady_state(self):
        k12, k21, k23, k31 = self.k12, self.k21, self.k23, self.k31
        if k12 == 0:
            return np.array([1.0, 0.0, 0.0])
        shelf = k23 / k31 if k23 > 0 else 0.0
        rho2 = k12 / (k12 * (1.0 + shelf) + k21 + k23)
        rho1 = rho2 * (k21 + k23) / k12
        return np.array([rho1, rho2, rho2 * shelf])


@dataclass(frozen=True)
class Channel:
    name: str
    det_eff: float
    dark_rate: float = 0.0
    bg_coeff: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.det_eff <= 1.0:
            raise ValidationError(f"channel {self.name}: det_eff must lie in [0, 1]")
        if self.dark_rate < 0 or self.bg_coeff < 0:
            raise ValidationError(f"channel {self.name}: background rates must be >= 0")


@dataclass(frozen=True)
class EmissionModel:
    """Pump mapping, level rates and detection channels.

    ``sigma_p`` converts power (mW) to pump rate k12 (1/s). Each emitted photon
    reaches channel i with probability ``det_eff`` (thinning); ``bg_coeff`` is
    an uncorrelated background rate per mW of excitation.
    """

    sigma_p: float
    k21: float
    k23: float
    k31: float
    radiative_fraction: float
    channels: tuple
    resolution: float = 77e-12

    def __post_init__(self):
        if self.sigma_p < 0:
            raise ValidationError("sigma_p must be nonnegative")
        if sum(ch.det_eff for ch in self.channels) > 1.0 + 1e-12:
            raise ValidationError("channel detection efficiencies sum above one")
        if not self.resolution > 0:
            raise ValidationError("timestamp resolution must be positive")
        ThreeLevelRates(0.0, self.k21, self.k23, self.k31, self.radiative_fraction)

    @property
    def resolution_ps(self):
        return int(round(self.resolution * 1e12))

    def channel_index(self, name):
        for i, ch in enumerate(self.channels):
            if ch.name == name:
                return i
        raise ValidationError(f"no channel named {name!r}")


def rates_from_power(model, power):
    """Level rates at excitation ``power`` (mW); only k12 depends on power."""
    if power < 0:
        raise ValidationError("power must be nonnegative")
    return ThreeLevelRates(model.sigma_p * power, model.k21, model.k23, model.k31,
                           model.radiative_fraction)


@dataclass(frozen=True)
class AnalyticG2:
    """g2(t) = 1 - (1 + c) exp(-|t|/tau1) + c exp(-|t|/tau2) for the bare emitter.

    ``tau1`` is the antibunching time (fast eigenvalue), ``tau2`` the bunching
    time. In the degenerate branch the curve is 1 - (1 + d |t|) exp(-|t|/tau1)
    and ``c`` is nan.
    """

    tau1: float
    tau2: float
    c: float
    degenerate: bool = False
    slope: float = 0.0

    def curve(self, tau):
        t = np.abs(np.asarray(tau, dtype=float))
        if self.degenerate:
            return 1.0 - (1.0 + self.slope * t) * np.exp(-t / self.tau1)
        e2 = np.exp(-t / self.tau2) if np.isfinite(self.tau2) else np.ones_like(t)
        return 1.0 - (1.0 + self.c) * np.exp(-t / self.tau1) + self.c * e2

    def __call__(self, tau):
        return self.curve(tau)


def analytic_g2(rates, rel_tol=1e-9):
    """Closed-form g2 parameters from the two nonzero eigenvalues of the generator.

    g2(t) = rho2(t | ground at 0) / rho2(steady state). Raises
    :class:`DegenerateEigenvalues` if the eigenvalues are complex; equal real
    eigenvalues take the confluent branch.
    """
    k12, k21, k23, k31 = rates.k12, rates.k21, rates.k23, rates.k31
    if k12 == 0:
        raise ValidationError("g2 is undefined without excitation (k12 = 0)")
    A = k12 + k21 + k23 + k31
    B = k12 * k23 + k12 * k31 + k21 * k31 + k23 * k31
    disc = A * A - 4.0 * B
    rho2 = rates.steady_state()[1]
    slope0 = k12 / rho2
    if disc < -rel_tol * A * A:
        raise DegenerateEigenvalues(
            "complex eigenvalues: g2 oscillates and has no two-exponential form")
    if abs(disc) <= rel_tol * A * A:
        lam = 0.5 * A
        # g2 = 1 + (a + d t) e^{-lam t}, a = -1, d - lam a = slope0
        return AnalyticG2(1.0 / lam, 1.0 / lam, float("nan"), True, slope0 - lam)
    root = np.sqrt(disc)
    lam_f = 0.5 * (A + root)
    lam_s = B / lam_f  # product of roots, avoids cancellation
    if lam_s <= 0:
        # no shelving: a single exponential, c = 0
        return AnalyticG2(1.0 / lam_f, np.inf, 0.0)
    # a_f + a_s = -1 and -lam_f a_f - lam_s a_s = slope0
    a_s = (slope0 - lam_f) / (lam_f - lam_s)
    return AnalyticG2(1.0 / lam_f, 1.0 / lam_s, float(a_s))


def signal_rate(model, rates, channel):
    """Detected emitter photons per second on ``channel`` (index)."""
    ch = model.channels[channel]
    return ch.det_eff * rates.radiative_fraction * rates.k21 * rates.steady_state()[1]


def background_rate(model, power, channel):
    ch = model.channels[channel]
    return ch.dark_rate + ch.bg_coeff * power


def steady_state_rate(model, power, channel):
    """Expected total count rate (counts/s) on ``channel`` at ``power`` (mW)."""
    rates = rates_from_power(model, power)
    return signal_rate(model, rates, channel) + background_rate(model, power, channel)


def signal_fraction(model, power, channel):
    s = signal_rate(model, rates_from_power(model, power), channel)
    b = background_rate(model, power, channel)
    return s / (s + b) if s + b > 0 else 0.0


def expected_g2(model, power, channel_a, channel_b):
    """Ground-truth (p_f, tau1, tau2, c) for the cross-correlation of two channels.

    Uncorrelated background on either channel scales the bunching/antibunching
    terms by the product of signal fractions, so p_f^2 = rho_a rho_b.
    """
    g = analytic_g2(rates_from_power(model, power))
    pf = np.sqrt(signal_fraction(model, power, channel_a) * signal_fraction(model, power, channel_b))
    return {"p_f": float(pf), "tau1": g.tau1, "tau2": g.tau2, "c": g.c}


@dataclass(frozen=True)
class TimeTagStream:
    channel: int
    tags: np.ndarray = field(repr=False)
    duration: float
    resolution_ps: int = 77

    def __post_init__(self):
        tags = np.ascontiguousarray(self.tags, dtype=np.int64)
        tags.setflags(write=False)
        object.__setattr__(self, "tags", tags)

    def __len__(self):
        return len(self.tags)

    @property
    def duration_ps(self):
        return int(round(self.duration * 1e12))

    def rate(self):
        return len(self.tags) / self.duration

    def shifted(self, offset_ps):
        return replace(self, tags=self.tags + int(offset_ps))


def make_rng(seed, index=None):
    """Counter-based generator for ``seed``; ``index`` selects an independent substream."""
    ss = np.random.SeedSequence(int(seed) % (1 << 64),
                                spawn_key=() if index is None else (int(index),))
    return np.random.Generator(np.random.Philox(ss))


def _emitter_times(rates, p_detect, horizon, rng):
    """Times (s) of detected photons on [0, horizon), starting in the ground state.

    Between successive 2 -> 1 jumps the system renews in state 1, so the gap
    between detected photons is the sum of a Geometric(p_detect) number N of
    such cycles. Each cycle is one or more 1 -> 2 excursions, the extra ones
    passing through the shelving state; over N cycles the number of shelving
    visits is NegBinomial(N, k21 / (k21 + k23)). Summing the exponential
    sojourns by level gives Gamma-distributed totals, so the gap is drawn
    exactly with a handful of variates instead of one per jump.
    """
    k12, k21, k23, k31 = rates.k12, rates.k21, rates.k23, rates.k31
    if k12 == 0 or p_detect <= 0:
        return np.empty(0)
    q_return = k21 / (k21 + k23)
    mean_gap = (1 / k12 + 1 / (k21 + k23)) / q_return / p_detect
    if k23 > 0:
        mean_gap += (1 - q_return) / q_return / k31 / p_detect
    chunks = []
    t0 = 0.0
    while t0 < horizon:
        n = int(1.1 * (horizon - t0) / mean_gap) + 1000
        N = rng.geometric(p_detect, size=n)
        X = rng.negative_binomial(N, q_return) if k23 > 0 else np.zeros(n, dtype=np.int64)
        M = N + X
        gap = rng.gamma(M, 1.0 / k12) + rng.gamma(M, 1.0 / (k21 + k23))
        if k23 > 0:
            shelved = X > 0
            gap[shelved] += rng.gamma(X[shelved], 1.0 / k31)
        t = t0 + np.cumsum(gap)
        chunks.append(t)
        t0 = t[-1]
    t = np.concatenate(chunks)
    return t[t < horizon]


def simulate_time_tags(model, power, duration, seed, warmup=20e-6, stream_index=None):
    """Simulate all detector channels for ``duration`` seconds at ``power`` mW.

    Emitter photons are split over channels by independent thinning; each
    channel also receives Poisson dark and background counts. Tags are
    floored onto the ``model.resolution`` grid and sorted. The emitter starts
    in the ground state ``warmup`` seconds before the record begins. Identical
    arguments give bit-identical streams.
    """
    if not duration > 0:
        raise ValidationError("duration must be positive")
    rng = make_rng(seed, stream_index)
    rates = rates_from_power(model, power)
    det = np.array([ch.det_eff for ch in model.channels])
    p_detect = rates.radiative_fraction * det.sum()
    times = _emitter_times(rates, p_detect, duration + warmup, rng) - warmup
    times = times[times >= 0]
    if det.sum() > 0 and times.size:
        which = rng.choice(len(det), size=times.size, p=det / det.sum())
    else:
        which = np.empty(0, dtype=np.int64)

    res_ps = model.resolution_ps
    dur_ps = int(round(duration * 1e12))
    streams = []
    for i, ch in enumerate(model.channels):
        sig = times[which == i]
        n_bg = rng.poisson((ch.dark_rate + ch.bg_coeff * power) * duration)
        bg = rng.uniform(0.0, duration, size=n_bg)
        t = np.concatenate([sig, bg])
        tags = np.floor(t * (1e12 / res_ps)).astype(np.int64) * res_ps
        tags = np.sort(tags[tags < dur_ps], kind="stable")
        streams.append(TimeTagStream(i, tags, duration, res_ps))
    return streams


def calibrate_emission_model(tau_tot=63e-9, p_sat=1.17, k23=5e5, k31=3e6,
                             gamma_rad=1.944e6, channel_groups=None, resolution=77e-12):
    """Emission model reproducing target observables.

    Chooses k21 = 1/tau_tot - k23, radiative_fraction = gamma_rad / k21 and
    sigma_p so the detected rate saturates at ``p_sat`` (mW). Each entry of
    ``channel_groups`` is ``(names, saturated_rate, dark_rate, bg_coeff)``:
    the detectors in ``names`` share ``saturated_rate`` (counts/s summed over
    the group at P -> infinity) equally, and the per-detector dark and
    background rates are given directly.
    """
    gamma_tot = 1.0 / tau_tot
    k21 = gamma_tot - k23
    if k21 <= 0:
        raise ValidationError("k23 exceeds the total decay rate")
    shelf = k23 / k31 if k23 > 0 else 0.0
    sigma_p = gamma_tot / (p_sat * (1.0 + shelf))
    rf = gamma_rad / k21
    rho2_sat = 1.0 / (1.0 + shelf)
    channels = []
    for names, sat_rate, dark, bg in channel_groups or ():
        eff = sat_rate / (rf * k21 * rho2_sat) / len(names)
        channels.extend(Channel(n, eff, dark, bg) for n in names)
    return EmissionModel(sigma_p, k21, k23, k31, rf, tuple(channels), resolution)


def merge_streams(streams):
    """Globally time-ordered (channel, tag) records, ties broken by channel."""
    if not streams:
        return np.empty(0, dtype=np.uint8), np.empty(0, dtype=np.int64)
    ch = np.concatenate([np.full(len(s), s.channel, dtype=np.uint8) for s in streams])
    t = np.concatenate([s.tags for s in streams])
    order = np.lexsort((ch, t))
    return ch[order], t[order]
