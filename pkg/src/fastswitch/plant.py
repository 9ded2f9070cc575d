"""Phenomenological DS-DBR laser and coherent-receiver model.

The laser is described by a mirror (Vernier) peak set by the rear and front
gratings, a comb of cavity modes that follows the mirror only partially and is
pulled by the phase section, and first-order carrier dynamics on every
driven section. Lasing happens on the cavity mode nearest the mirror peak,
with hysteresis, which is what produces transient mode hops.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numba
import numpy as np

from .waveform import (
    AWG_RATE,
    BURST_PERIOD,
    DEFAULT_IV,
    SECTION_RANGES,
    SECTIONS,
    DriveWaveform,
    RangeError,
    front_pair_encoding,
)


@dataclass
class PlantParams:
    # static tuning map
    base_frequency: float = 190.58  # THz, pair 1 / zero front scaling / zero rear / mid phase
    band_spacing: float = 0.853  # THz between adjacent front-pair bands
    front_tuning: float = 0.06  # THz shift for 0 -> 5 mA on the scaled front grating
    rear_tuning: float = 0.95  # THz shift for 0 -> rear_reference mA
    rear_reference: float = 47.5  # mA
    rear_saturation: float = 45.0  # mA, curvature of the rear tuning curve
    rear_range: float = 60.0
    phase_range: float = 12.0
    front_range: float = 5.0
    n_front_pairs: int = 7
    cavity_mode_spacing: float = 45.0  # GHz
    mode_pull: float = 0.3  # fraction of a mirror shift the cavity comb follows
    mode_hysteresis: float = 0.1  # of a mode spacing
    # dynamics
    carrier_time_constant: float = 1.5  # ns
    slow_time_constant: float = 20.0  # ns, at zero injection
    phase_slow_time_constant: float | None = None  # ns; None shares slow_time_constant
    slow_knee_current: float = 8.0  # mA; slow pole speeds up as 1/(1 + I/knee)
    slow_fraction: dict = field(default_factory=lambda: {"rear": 0.7, "phase": 0.1, "front": 0.1})
    drive_bandwidth: float = 125.0  # MHz
    awg_rate: float = 250.0  # MS/s
    dynamics_step: float = 0.1  # ns, integration step of the carrier dynamics
    mux_delay_range: tuple = (3.0, 7.0)  # ns
    # receiver
    combined_linewidth: float = 1.0  # MHz
    rx_bandwidth: float = 22.0  # GHz
    rx_filter_order: int = 8
    rx_sample_rate: float = 50.0  # GS/s
    snr_db: float = 20.0
    rng_seed: int = 0

    def __post_init__(self):
        self.mux_delay_range = tuple(float(v) for v in self.mux_delay_range)
        self.slow_fraction = dict(self.slow_fraction)
        self.validate()

    def validate(self) -> None:
        if self.tuning_span <= 0:
            raise ValueError("tuning span must be positive")
        for name in ("rear_range", "phase_range", "front_range", "cavity_mode_spacing",
                     "carrier_time_constant", "slow_time_constant", "drive_bandwidth",
                     "rx_bandwidth", "rx_sample_rate", "awg_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for k, v in self.slow_fraction.items():
            if not 0 <= v < 1:
                raise ValueError(f"slow_fraction[{k}] must lie in [0, 1)")
        if self.carrier_time_constant >= min(self.slow_time_constant, self.phase_slow_tau):
            raise ValueError("carrier time constant must be shorter than the slow one")
        lo, hi = self.mux_delay_range
        if not 0 <= lo <= hi:
            raise ValueError("mux delay range must satisfy 0 <= min <= max")
        if not 0 <= self.mode_pull < 1:
            raise ValueError("mode_pull must lie in [0, 1)")

    @property
    def tuning_span(self) -> float:
        """THz from the lowest to the highest mirror frequency on the map."""
        return ((self.n_front_pairs - 1) * self.band_spacing + self.front_tuning
                + self.rear_tuning * _rear_shape(self.rear_range, self))

    @property
    def phase_slow_tau(self) -> float:
        return self.slow_time_constant if self.phase_slow_time_constant is None else self.phase_slow_time_constant

    @property
    def phase_anchor(self) -> float:
        return self.phase_range / 2

    @property
    def ranges(self) -> dict:
        return {"rear": self.rear_range, "phase": self.phase_range,
                "front_even": self.front_range, "front_odd": self.front_range}

    @property
    def upsample(self) -> int:
        return int(round(self.rx_sample_rate * 1e3 / self.awg_rate))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mux_delay_range"] = list(self.mux_delay_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PlantParams:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown plant parameters: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LaserState:
    effective_currents: dict
    slow_components: dict
    active_front_pair: int
    current_cavity_mode: int
    time: float


@dataclass
class Trajectory:
    time: np.ndarray  # ns
    offset: np.ndarray  # GHz relative to base_frequency
    mode: np.ndarray
    mux_delays: list
    final_state: LaserState
    sample_rate: float

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time_ns,offset_GHz\n")
            for t, f in zip(self.time, self.offset):
                fh.write(f"{t:.4f},{f:.6f}\n")


@dataclass
class IQCapture:
    samples: np.ndarray
    sample_rate: float  # GS/s
    burst_period: float  # ns
    n_bursts: int

    def __post_init__(self):
        expected = self.sample_rate * self.burst_period * self.n_bursts
        if abs(len(self.samples) - expected) > 1:
            raise ValueError(f"capture holds {len(self.samples)} samples, expected {expected:.0f}")


def _rear_shape(current, p: PlantParams):
    """Saturating rear tuning curve, 0 at 0 mA and 1 at the reference current."""
    c = np.asarray(current, dtype=float)
    return np.expm1(-c / p.rear_saturation) / np.expm1(-p.rear_reference / p.rear_saturation)


def mirror_offset(rear, front_scaling, front_pair, p: PlantParams):
    """Mirror-peak frequency above base_frequency, GHz."""
    return 1e3 * ((np.asarray(front_pair) - 1) * p.band_spacing
                  + p.front_tuning * np.asarray(front_scaling) / p.front_range
                  + p.rear_tuning * _rear_shape(rear, p))


def phase_pull(phase, p: PlantParams):
    """Cavity-comb shift from the phase section, GHz; zero at mid range."""
    return p.cavity_mode_spacing * (np.asarray(phase, dtype=float) - p.phase_anchor) / p.phase_range


def _check_currents(currents: dict, front_pair: int, p: PlantParams) -> None:
    limits = {"rear": p.rear_range, "phase": p.phase_range, "front": p.front_range}
    for name, limit in limits.items():
        v = currents[name]
        if not 0 <= v <= limit:
            raise RangeError(f"{name} current {v} mA outside [0, {limit}] mA")
    if not 1 <= int(front_pair) <= p.n_front_pairs:
        raise RangeError(f"front pair {front_pair} outside 1..{p.n_front_pairs}")


def static_frequency(currents: dict, front_pair: int, p: PlantParams | None = None) -> float:
    """Steady-state lasing frequency in THz.

    ``currents`` maps ``rear``, ``phase`` and ``front`` (the scaled grating of
    the active pair) to mA.
    """
    p = p or PlantParams()
    _check_currents(currents, front_pair, p)
    m_off = float(mirror_offset(currents["rear"], currents["front"], front_pair, p))
    pull = float(phase_pull(currents["phase"], p))
    S = p.cavity_mode_spacing
    u = (1 - p.mode_pull) * m_off - pull
    mode = math.floor(u / S + 0.5)
    return p.base_frequency + (m_off - (u - mode * S)) * 1e-3


def mode_detuning(currents: dict, front_pair: int, p: PlantParams) -> float:
    """Mirror peak minus lasing frequency at steady state, GHz."""
    m_off = float(mirror_offset(currents["rear"], currents["front"], front_pair, p))
    f = static_frequency(currents, front_pair, p)
    return m_off - (f - p.base_frequency) * 1e3


@numba.njit(cache=True)
def _carrier_dynamics(drive, dt, sub, tau_lp, tau_fast, tau_slow0, knee, frac, hi):
    """Drive-chain low-pass followed by a fast and a density-dependent slow pole.

    Integrates every ``sub``-th drive sample with step ``sub*dt`` and fills
    the intermediate output samples by linear interpolation.
    """
    n = drive.shape[0]
    eff = np.empty(n)
    h = dt * sub
    a_lp = math.exp(-h / tau_lp)
    a_f = math.exp(-h / tau_fast)
    x = drive[0]
    f = max(x, 0.0)
    s = max(x, 0.0)
    prev = min((1.0 - frac) * f + frac * s, hi)
    i = 0
    while i < n:
        x = a_lp * x + (1.0 - a_lp) * drive[i]
        f = a_f * f + (1.0 - a_f) * x
        if f < 0.0:
            f = 0.0
        # first-order step of ds/dt = (x - s) / tau_s(s), h << tau_s
        s += (x - s) * h * (1.0 + s / knee) / tau_slow0
        if s < 0.0:
            s = 0.0
        v = (1.0 - frac) * f + frac * s
        if v > hi:
            v = hi
        for j in range(sub):
            if i + j < n:
                eff[i + j] = prev + (v - prev) * (j + 1) / sub
        prev = v
        i += sub
    return eff, s


@numba.njit(cache=True)
def _select_modes(mirror, pull, beta, spacing, hyst, m0):
    n = mirror.shape[0]
    out = np.empty(n)
    modes = np.empty(n, dtype=np.int64)
    m = m0
    edge = spacing * (0.5 + hyst)
    for i in range(n):
        u = (1.0 - beta) * mirror[i] - pull[i]
        r = u - m * spacing
        while r > edge:
            m += 1
            r -= spacing
        while r < -edge:
            m -= 1
            r += spacing
        out[i] = mirror[i] - r
        modes[i] = m
    return out, modes


def _front_role_currents(eff_even, eff_odd, pair_fine):
    # odd pair i holds the odd grating, so its scaled grating is on the even path
    return np.where(pair_fine % 2 == 1, eff_even, eff_odd)


def simulate(drive: DriveWaveform, params: PlantParams | None = None,
             rng: np.random.Generator | None = None, iv: dict | None = None) -> Trajectory:
    """Lasing-frequency trajectory at the receiver sample rate for a drive waveform.

    One full drive period is run first as warm-up so the returned trajectory
    starts from the periodic steady state.
    """
    p = params or PlantParams()
    iv = iv or DEFAULT_IV
    rng = rng if rng is not None else np.random.default_rng(p.rng_seed)
    if drive.n_bursts < 1:
        raise ValueError("drive must cover at least one burst")
    if abs(drive.sample_rate * 1e3 - p.awg_rate) > 1e-9:
        raise ValueError("drive sample rate does not match the plant's AWG rate")

    up = p.upsample
    dt = 1.0 / p.rx_sample_rate
    spb = drive.samples_per_burst
    warm = min(2 * spb, drive.n_samples)
    n_awg = drive.n_samples + warm

    def with_warmup(a):
        return np.concatenate([a[-warm:], a])

    drive_i = {s: with_warmup(iv[s].current(drive.samples[s])) for s in SECTIONS}
    pair_awg = with_warmup(drive.front_pair)

    fine = {s: np.repeat(drive_i[s], up) for s in SECTIONS}
    pair_fine = np.repeat(pair_awg, up)

    # digital-select analogue-route mux: front changes land late by a random delay
    lo, hi = p.mux_delay_range
    delays = []
    changes = np.nonzero(np.diff(pair_awg))[0] + 1
    for c in changes:
        d = rng.uniform(lo, hi)
        k = int(round(d * p.rx_sample_rate))
        start = c * up
        stop = min(start + k, len(pair_fine))
        for s in ("front_even", "front_odd"):
            fine[s][start:stop] = fine[s][start - 1]
        pair_fine[start:stop] = pair_fine[start - 1]
        if c >= warm:
            delays.append(d)

    tau_lp = 1e3 / (2 * math.pi * p.drive_bandwidth)
    ranges = p.ranges
    eff, slow = {}, {}
    sub = max(1, int(round(p.dynamics_step * p.rx_sample_rate)))
    for s in SECTIONS:
        frac = p.slow_fraction["front" if s.startswith("front") else s]
        if np.all(fine[s] == fine[s][0]):
            level = min(max(float(fine[s][0]), 0.0), ranges[s])
            eff[s] = np.full(len(fine[s]), level)
            slow[s] = max(float(fine[s][0]), 0.0)
            continue
        eff[s], slow[s] = _carrier_dynamics(
            fine[s], dt, sub, tau_lp, p.carrier_time_constant,
            p.phase_slow_tau if s == "phase" else p.slow_time_constant,
            p.slow_knee_current, frac, ranges[s])

    scaled = _front_role_currents(eff["front_even"], eff["front_odd"], pair_fine)
    mirror = mirror_offset(eff["rear"], scaled, pair_fine, p)
    pull = phase_pull(eff["phase"], p)
    S = p.cavity_mode_spacing
    m0 = int(math.floor(((1 - p.mode_pull) * mirror[0] - pull[0]) / S + 0.5))
    freq, modes = _select_modes(mirror, pull, p.mode_pull, S, p.mode_hysteresis, m0)

    n0 = warm * up
    freq, modes = freq[n0:], modes[n0:]
    time = np.arange(len(freq)) * dt
    state = LaserState(
        effective_currents={s: float(eff[s][-1]) for s in SECTIONS},
        slow_components={s: float(slow[s]) for s in SECTIONS},
        active_front_pair=int(pair_fine[-1]),
        current_cavity_mode=int(modes[-1]),
        time=float(time[-1]),
    )
    return Trajectory(time, freq, modes, delays, state, p.rx_sample_rate)


@numba.njit(cache=True)
def _accumulate_beat(z, offs, phase_noise, ecl, dt, bw, order):
    phi = 0.0
    two_pi = 2.0 * math.pi
    for i in range(offs.shape[0]):
        beat = offs[i] - ecl
        gain = 1.0 / math.sqrt(1.0 + (beat / bw) ** (2 * order))
        ph = phi + phase_noise[i]
        z[i] += gain * complex(math.cos(ph), math.sin(ph))
        phi += two_pi * beat * dt


def rx_response(freq_ghz, p: PlantParams):
    """Magnitude response of the receiver's analogue front end (Butterworth)."""
    x = np.asarray(freq_ghz, dtype=float) / p.rx_bandwidth
    return 1.0 / np.sqrt(1.0 + x ** (2 * p.rx_filter_order))


def capture_iq(trajectory, ecl_frequency_offset, params: PlantParams | None = None,
               rng: np.random.Generator | None = None, snr_db: float | None = None,
               linewidth: float | None = None, burst_period: float = BURST_PERIOD) -> IQCapture:
    """Coherent-receiver samples of the laser beating against one or more ECLs.

    ``trajectory`` is a Trajectory or an array of frequency offsets (GHz) at the
    receiver sample rate, in the same frame as ``ecl_frequency_offset``. Each
    beat note is weighted by the receiver response at its instantaneous
    frequency, which stands in for the analogue low-pass ahead of the ADC.
    """
    p = params or PlantParams()
    rng = rng if rng is not None else np.random.default_rng(p.rng_seed)
    offs = trajectory.offset if isinstance(trajectory, Trajectory) else np.asarray(trajectory, float)
    snr_db = p.snr_db if snr_db is None else snr_db
    linewidth = p.combined_linewidth if linewidth is None else linewidth
    dt = 1.0 / p.rx_sample_rate
    n = len(offs)

    if linewidth > 0:
        # Wiener phase noise with Lorentzian FWHM = linewidth (MHz)
        sigma = math.sqrt(2 * math.pi * linewidth * 1e-3 * dt)
        phase_noise = np.cumsum(rng.normal(0.0, sigma, n))
    else:
        phase_noise = 0.0

    z = np.zeros(n, dtype=complex)
    pn = np.zeros(n) + phase_noise
    for ecl in np.atleast_1d(np.asarray(ecl_frequency_offset, dtype=float)):
        _accumulate_beat(z, offs, pn, ecl, dt, p.rx_bandwidth, p.rx_filter_order)

    if np.isfinite(snr_db):
        scale = math.sqrt(10 ** (-snr_db / 10) / 2)
        z += scale * rng.standard_normal(2 * n).view(complex)
    n_bursts = int(round(n * dt / burst_period))
    return IQCapture(z, p.rx_sample_rate, burst_period, n_bursts)
