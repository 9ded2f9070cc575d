"""Bin-based LMS pre-emphasis optimiser for the rear and phase sections."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Protocol

import numpy as np

from .dsp import (
    BinnedError,
    FrequencyTrace,
    bin_errors,
    detect_mode_hop,
    estimate_instantaneous_frequency,
    measure_switch_time,
    segment_and_average,
)
from .plant import PlantParams, capture_iq, simulate
from .waveform import DriveWaveform, PreEmphasisWeights, edge_direction, synthesize


@dataclass
class OptimizerConfig:
    mu: float = 0.02  # (GHz*V)^-1, rear
    mu_phase: float = 0.005  # (GHz*V)^-1, phase
    n_updates: int = 10
    n_seeds: int = 10
    seed_step: float = 0.2
    K_rising: int = 2
    K_falling: int = 4
    K_phase: int = 4
    bin_width: float = 4.0  # ns
    bin_delay: float = 2.0  # ns from switch instant to the first bin
    settle_threshold: float = 10.0  # GHz
    weight_limit: float = 3.0
    phase_weight_floor: float = 0.05
    n_average: int = 16
    n_bursts: int = 32
    estimator_window: float = 1.0  # ns
    mode_spacing: float = 45.0  # GHz, for mode-hop detection
    hop_dwell: float = 2.0  # ns

    def __post_init__(self):
        if self.mu <= 0 or self.mu_phase <= 0:
            raise ValueError("learning rates must be positive")
        if self.n_updates < 1 or self.n_seeds < 1:
            raise ValueError("n_updates and n_seeds must be at least 1")
        if self.n_bursts < 2 * self.n_average:
            raise ValueError("capture too short for the requested averaging")

    @property
    def seed_grid(self) -> np.ndarray:
        return np.round(np.arange(self.n_seeds) * self.seed_step, 12)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> OptimizerConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise KeyError(f"unknown optimizer settings: {sorted(unknown)}")
        return cls(**d)


class Testbed(Protocol):
    def apply(self, drive: DriveWaveform) -> FrequencyTrace:
        """Drive the laser and return the burst-averaged trace of the target bursts."""


class SimulatedTestbed:
    """Simulated AWG, laser and coherent receiver observing one target channel."""

    def __init__(self, target_offset: float, params: PlantParams | None = None,
                 rng: np.random.Generator | None = None, config: OptimizerConfig | None = None):
        self.params = params or PlantParams()
        self.config = config or OptimizerConfig()
        self.target_offset = float(target_offset)  # GHz above base_frequency
        self.rng = rng if rng is not None else np.random.default_rng(self.params.rng_seed)
        self.n_applies = 0

    @classmethod
    def for_channel(cls, target, params: PlantParams | None = None, **kw) -> SimulatedTestbed:
        params = params or PlantParams()
        return cls((target.itu_frequency - params.base_frequency) * 1e3, params, **kw)

    def apply(self, drive: DriveWaveform) -> FrequencyTrace:
        self.n_applies += 1
        traj = simulate(drive, self.params, self.rng)
        cap = capture_iq(traj, self.target_offset, self.params, self.rng)
        trace = estimate_instantaneous_frequency(cap, self.config.estimator_window)
        return segment_and_average(trace, cap.burst_period, self.config.n_average)


class SeedSearchError(RuntimeError):
    pass


def update_step(h, e, x, mu: float) -> np.ndarray:
    """h(k) - mu * e(k) * x(k), elementwise."""
    h = np.asarray(h, dtype=float)
    e = e.e if isinstance(e, BinnedError) else np.asarray(e, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (h.shape == e.shape == x.shape):
        raise ValueError(f"length mismatch: h {h.shape}, e {e.shape}, x {x.shape}")
    return h - mu * e * x


def valid_from(trace: FrequencyTrace) -> float:
    """Earliest time after which the trace never drops out of the receiver band."""
    bad = np.nonzero(~trace.valid)[0]
    if len(bad) == 0:
        return float(trace.time[0])
    if bad[-1] == len(trace) - 1:
        return math.inf
    return float(trace.time[bad[-1] + 1])


@dataclass
class CalibrationRecord:
    pair_id: str
    edge: str
    K: int
    seed: float
    h_history: list
    error_history: list
    switch_history: list
    rear_weights: PreEmphasisWeights
    switch_time: float
    switch_time_5ghz: float
    mode_hop: bool = False
    phase_weights: PreEmphasisWeights | None = None
    phase_h_history: list = field(default_factory=list)
    phase_error_history: list = field(default_factory=list)
    mode_hop_corrected: bool = False
    unresolved: bool = False
    rear_only_switch_time: float | None = None
    trace: FrequencyTrace | None = None

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None else (float(v) if math.isfinite(v) else "inf")

        return {
            "pair_id": self.pair_id,
            "edge": self.edge,
            "K": self.K,
            "seed": self.seed,
            "h_history": [[float(v) for v in h] for h in self.h_history],
            "error_history": [[float(v) for v in e] for e in self.error_history],
            "switch_history": [num(t) for t in self.switch_history],
            "rear_weights": self.rear_weights.to_dict(),
            "phase_weights": self.phase_weights.to_dict() if self.phase_weights else None,
            "phase_h_history": [[float(v) for v in h] for h in self.phase_h_history],
            "phase_error_history": [[float(v) for v in e] for e in self.phase_error_history],
            "switch_time": num(self.switch_time),
            "switch_time_5ghz": num(self.switch_time_5ghz),
            "rear_only_switch_time": num(self.rear_only_switch_time),
            "mode_hop": self.mode_hop,
            "mode_hop_corrected": self.mode_hop_corrected,
            "unresolved": self.unresolved,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _pair_id(pair) -> str:
    a, b = pair
    return f"{a.itu_frequency:.2f}->{b.itu_frequency:.2f}" if hasattr(a, "itu_frequency") else "pair"


def seed_search(pair, testbed: Testbed, config: OptimizerConfig | None = None):
    """Pick the first-tap seed whose trace enters the receiver band for good earliest.

    Returns ``(h, trace)``; ties go to the smaller first tap.
    """
    config = config or OptimizerConfig()
    drive0 = synthesize(pair, n_bursts=config.n_bursts)
    dv = drive0.delta_v["rear"]
    K = config.K_rising if dv > 0 else config.K_falling
    best = None
    for v in config.seed_grid:
        h = np.zeros(K)
        h[0] = v
        w = PreEmphasisWeights(h, "additive", "rear", edge_direction(dv), config.bin_width)
        trace = testbed.apply(synthesize(pair, w, n_bursts=config.n_bursts))
        t = valid_from(trace)
        if best is None or t < best[0]:
            best = (t, h, trace)
    if not math.isfinite(best[0]):
        raise SeedSearchError(f"no seed brought {_pair_id(pair)} into the receiver band")
    return best[1], best[2]


def _errors(trace: FrequencyTrace, K: int, config: OptimizerConfig) -> BinnedError:
    return bin_errors(trace, K, config.bin_width, start=config.bin_delay)


def optimize_rear(pair, testbed: Testbed, config: OptimizerConfig | None = None) -> CalibrationRecord:
    """Seed search followed by ``n_updates`` additive LMS updates on the rear section.

    The regressor for the rear is the zero-mean square wave, i.e. dV/2 signed
    by the edge direction, so the update pushes overdrive the right way on both
    rising and falling edges.
    """
    config = config or OptimizerConfig()
    dv = synthesize(pair, n_bursts=config.n_bursts).delta_v["rear"]
    edge = edge_direction(dv)
    h, trace = seed_search(pair, testbed, config)
    K = len(h)
    x = np.full(K, dv / 2)
    h_hist, e_hist, t_hist = [h.copy()], [], [measure_switch_time(trace, config.settle_threshold)]
    for u in range(config.n_updates):
        e = _errors(trace, K, config)
        h = np.clip(update_step(h, e, x, config.mu), -config.weight_limit, config.weight_limit)
        w = PreEmphasisWeights(h, "additive", "rear", edge, config.bin_width)
        try:
            trace = testbed.apply(synthesize(pair, w, n_bursts=config.n_bursts))
        except Exception as exc:
            raise RuntimeError(f"{_pair_id(pair)}: update {u + 1} failed: {exc}") from exc
        h_hist.append(h.copy())
        e_hist.append(e.e.copy())
        t_hist.append(measure_switch_time(trace, config.settle_threshold))
    hop = detect_mode_hop(trace, config.settle_threshold, config.mode_spacing, config.hop_dwell)
    return CalibrationRecord(
        pair_id=_pair_id(pair),
        edge=edge,
        K=K,
        seed=float(h_hist[0][0]),
        h_history=h_hist,
        error_history=e_hist,
        switch_history=t_hist,
        rear_weights=PreEmphasisWeights(h, "additive", "rear", edge, config.bin_width),
        switch_time=t_hist[-1],
        switch_time_5ghz=measure_switch_time(trace, 5.0),
        mode_hop=hop.detected,
        trace=trace,
    )


def optimize_phase(pair, testbed: Testbed, config: OptimizerConfig | None = None,
                   rear: CalibrationRecord | PreEmphasisWeights | None = None) -> CalibrationRecord:
    """Multiplicative phase-section weights, seeded at ones, with the rear weights fixed.

    Returns a copy of the rear record extended with the phase history. The
    regressor is the phase drive voltage on the target plateau.
    """
    config = config or OptimizerConfig()
    if isinstance(rear, CalibrationRecord):
        record, rear_w = rear, rear.rear_weights
    else:
        record, rear_w = None, rear
    K = config.K_phase
    base = synthesize(pair, rear_w, n_bursts=config.n_bursts)
    spb = base.samples_per_burst
    x = synthesize(pair, n_bursts=config.n_bursts).samples["phase"][spb:spb + K].astype(float)
    edge = edge_direction(base.delta_v["phase"]) if base.delta_v["phase"] else "rising"

    h = np.ones(K)
    w = PreEmphasisWeights(h, "multiplicative", "phase", edge, config.bin_width)
    trace = testbed.apply(synthesize(pair, rear_w, w, n_bursts=config.n_bursts))
    h_hist, e_hist = [h.copy()], []
    for _ in range(config.n_updates):
        e = _errors(trace, K, config)
        h = np.clip(update_step(h, e, x, config.mu_phase), config.phase_weight_floor, config.weight_limit)
        w = PreEmphasisWeights(h, "multiplicative", "phase", edge, config.bin_width)
        trace = testbed.apply(synthesize(pair, rear_w, w, n_bursts=config.n_bursts))
        h_hist.append(h.copy())
        e_hist.append(e.e.copy())
    hop = detect_mode_hop(trace, config.settle_threshold, config.mode_spacing, config.hop_dwell)
    t = measure_switch_time(trace, config.settle_threshold)
    if record is None:
        record = CalibrationRecord(_pair_id(pair), edge, K, 1.0, [], [], [], rear_w, math.inf, math.inf)
    out = CalibrationRecord(**{f.name: getattr(record, f.name) for f in fields(CalibrationRecord)})
    out.rear_only_switch_time = record.switch_time
    out.phase_weights = w
    out.phase_h_history = h_hist
    out.phase_error_history = e_hist
    out.switch_time = t
    out.switch_time_5ghz = measure_switch_time(trace, 5.0)
    out.mode_hop_corrected = record.mode_hop and not hop.detected
    out.unresolved = hop.detected or not math.isfinite(t)
    out.trace = trace
    return out
