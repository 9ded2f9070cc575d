"""Static tuning map, ITU channel placement and worst-case test-set selection."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .plant import PlantParams, mirror_offset, static_frequency
from .waveform import DEFAULT_IV, quantize

ITU_START = 190.65  # THz
ITU_SPACING = 50.0  # GHz
N_CHANNELS = 122
REAR_CAP = 47.5  # mA
STATIC_TOLERANCE = 300.0  # MHz


@dataclass(frozen=True)
class ChannelPoint:
    itu_frequency: float  # THz
    front_pair: int
    front_scaling: float  # mA on the scaled grating
    rear: float  # mA
    phase: float  # mA
    static_error: float = 0.0  # MHz, lasing minus ITU at the quantised drive

    def __post_init__(self):
        if self.rear > REAR_CAP + 1e-9:
            raise ValueError(f"rear current {self.rear} mA above the {REAR_CAP} mA cap")
        if abs(self.static_error) > STATIC_TOLERANCE:
            raise ValueError(f"static error {self.static_error} MHz beyond {STATIC_TOLERANCE} MHz")

    @property
    def currents(self) -> dict:
        return {"rear": self.rear, "phase": self.phase, "front": self.front_scaling}

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TuningMap:
    front_grid: np.ndarray  # mA
    rear_grid: np.ndarray  # mA
    frequency: np.ndarray  # THz, shape (n_pairs, n_front, n_rear)
    phase: float  # mA held during the sweep

    @property
    def n_pairs(self) -> int:
        return self.frequency.shape[0]

    @property
    def resolutions(self) -> tuple[float, float]:
        return float(self.front_grid[1] - self.front_grid[0]), float(self.rear_grid[1] - self.rear_grid[0])

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("pair,front_mA,rear_mA,freq_THz\n")
            for i in range(self.n_pairs):
                for j, fr in enumerate(self.front_grid):
                    for k, r in enumerate(self.rear_grid):
                        fh.write(f"{i + 1},{fr:.3f},{r:.3f},{self.frequency[i, j, k]:.6f}\n")

    @classmethod
    def from_csv(cls, path, phase: float = 6.0) -> TuningMap:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        fronts = np.unique(data[:, 1])
        rears = np.unique(data[:, 2])
        n_pairs = int(data[:, 0].max())
        freq = data[:, 3].reshape(n_pairs, len(fronts), len(rears))
        return cls(fronts, rears, freq, phase)


def sweep_map(query: Callable | None = None, rear_step: float = 0.5, front_step: float = 0.25,
              params: PlantParams | None = None) -> TuningMap:
    """Steady-state frequency over every (pair, front scaling, rear) grid point.

    ``query(currents, front_pair)`` returns THz; by default the plant's static map.
    The phase section is held at mid range.
    """
    p = params or PlantParams()
    if rear_step <= 0 or front_step <= 0:
        raise ValueError("resolutions must be positive")
    query = query or (lambda cur, pair: static_frequency(cur, pair, p))
    fronts = np.round(np.arange(0.0, p.front_range + 1e-9, front_step), 9)
    rears = np.round(np.arange(0.0, p.rear_range + 1e-9, rear_step), 9)
    freq = np.empty((p.n_front_pairs, len(fronts), len(rears)))
    for i in range(p.n_front_pairs):
        for j, fr in enumerate(fronts):
            for k, r in enumerate(rears):
                freq[i, j, k] = query({"rear": r, "phase": p.phase_anchor, "front": fr}, i + 1)
    return TuningMap(fronts, rears, freq, p.phase_anchor)


def _rear_for_mirror(target_ghz, front_pair, front_scaling, p: PlantParams) -> float:
    """Rear current putting the mirror peak at ``target_ghz`` above base; NaN if unreachable."""
    rest = float(mirror_offset(0.0, front_scaling, front_pair, p))
    g = (target_ghz - rest) / (p.rear_tuning * 1e3)
    # invert g(I) = expm1(-I/I0) / expm1(-Iref/I0)
    arg = g * math.expm1(-p.rear_reference / p.rear_saturation)
    if not -1.0 < arg <= 0.0:
        return math.nan
    return -p.rear_saturation * math.log1p(arg)


def _phase_for_pull(pull_ghz, p: PlantParams) -> float:
    return p.phase_anchor + pull_ghz * p.phase_range / p.cavity_mode_spacing


def _quantised_current(section: str, current: float, iv, limit: float) -> float:
    """Current actually delivered once the drive voltage is quantised, within range."""
    return min(max(float(iv[section].current(quantize(iv[section].voltage(current)))), 0.0), limit)


def fine_tune(itu: float, front_pair: int, front_scaling: float, p: PlantParams, rear_floor: float,
              max_detuning: float, iv=None) -> ChannelPoint | None:
    """Rear and phase currents that lase at ``itu`` on the given pair and front setting.

    The mirror is placed a detuning ``r`` above the target (|r| <= max_detuning)
    and the phase pull closes the gap to the nearest cavity mode; ``r`` is chosen
    to keep the phase current as close to mid range as possible.
    """
    iv = iv or DEFAULT_IV
    S, beta = p.cavity_mode_spacing, p.mode_pull
    f_t = (itu - p.base_frequency) * 1e3
    best = None
    for r in np.linspace(-max_detuning, max_detuning, 2 * int(math.ceil(max_detuning / 0.25)) + 1):
        m_target = f_t + r
        rear = _rear_for_mirror(m_target, front_pair, front_scaling, p)
        if not (rear_floor <= rear <= REAR_CAP):
            continue
        u0 = (1 - beta) * m_target - r
        m = math.floor(u0 / S + 0.5)
        pull = u0 - m * S
        phase = _phase_for_pull(pull, p)
        if not 0 <= phase <= p.phase_range:
            continue
        key = (abs(r), abs(pull))
        if best is None or key < best[0]:
            best = (key, rear, phase)
    if best is None:
        return None
    _, rear, phase = best
    rear_q = _quantised_current("rear", rear, iv, p.rear_range)
    phase_q = _quantised_current("phase", phase, iv, p.phase_range)
    front_q = _quantised_current("front_even", front_scaling, iv, p.front_range)
    f = static_frequency({"rear": rear_q, "phase": phase_q, "front": front_q}, front_pair, p)
    err = (f - itu) * 1e6
    if abs(err) > STATIC_TOLERANCE or rear > REAR_CAP:
        return None
    return ChannelPoint(round(itu, 4), front_pair, float(front_scaling), float(rear), float(phase), float(err))


def place_itu_channels(tmap: TuningMap, spacing: float = ITU_SPACING, start: float = ITU_START,
                       n_channels: int = N_CHANNELS, params: PlantParams | None = None,
                       rear_floor: float = 2.0, max_detuning: float | None = None,
                       tight_detuning: float | None = None, min_per_pair: int = 2) -> list[ChannelPoint]:
    """Put every ITU channel on the lowest-rear setting that reaches it.

    Candidates come from map points within half a cavity-mode spacing of the
    channel; each is then fine-tuned in rear and phase. Settings that keep the
    mirror within ``tight_detuning`` of the lasing mode are preferred over
    lower rear current.
    """
    p = params or PlantParams()
    S = p.cavity_mode_spacing
    max_detuning = 0.25 * S if max_detuning is None else max_detuning
    tight_detuning = 0.05 * S if tight_detuning is None else tight_detuning
    span = (tmap.frequency.max() - tmap.frequency.min()) * 1e3
    if span < (n_channels - 1) * spacing:
        raise ValueError(f"map spans {span:.0f} GHz, need {(n_channels - 1) * spacing:.0f} GHz")

    out = []
    for n in range(n_channels):
        itu = round(start + n * spacing * 1e-3, 6)
        near = np.abs(tmap.frequency - itu) * 1e3 <= S / 2
        near &= (tmap.rear_grid <= REAR_CAP)[None, None, :]
        cands = np.argwhere(near)
        settings = sorted({(i, j) for i, j, _ in cands.tolist()})
        placed = None
        # a mirror centred on its cavity mode keeps the full hysteresis margin on
        # both sides, so only detune when no setting allows otherwise
        for limit in (tight_detuning, max_detuning):
            feasible = [c for i, j in settings
                        if (c := fine_tune(itu, i + 1, float(tmap.front_grid[j]), p, rear_floor, limit))]
            if feasible:
                # lowest rear, then lower pair, then higher front scaling
                placed = min(feasible, key=lambda c: (round(c.rear, 9), c.front_pair, -c.front_scaling))
                break
        if placed is None:
            raise ValueError(f"no feasible setting for {itu:.2f} THz")
        out.append(placed)

    counts = np.bincount([c.front_pair for c in out], minlength=p.n_front_pairs + 1)[1:]
    if np.any(counts < min_per_pair):
        short = list(np.nonzero(counts < min_per_pair)[0] + 1)
        raise ValueError(f"front pairs {short} host fewer than {min_per_pair} channels")
    return out


def select_worst_case(channels: list[ChannelPoint], n_extra: int = 8) -> list[ChannelPoint]:
    """Min- and max-rear channel of every front pair plus ``n_extra`` extremes.

    Extras are taken in turn from the band-edge frequencies, then the lowest
    and highest phase currents, then the lowest and highest front scaling,
    skipping channels already chosen. The result is sorted by frequency.
    """
    pairs = sorted({c.front_pair for c in channels})
    chosen: dict[float, ChannelPoint] = {}
    for pr in pairs:
        members = [c for c in channels if c.front_pair == pr]
        if len(members) < 2:
            raise ValueError(f"front pair {pr} hosts fewer than 2 channels")
        for c in (min(members, key=lambda c: (c.rear, c.itu_frequency)),
                  max(members, key=lambda c: (c.rear, -c.itu_frequency))):
            chosen[c.itu_frequency] = c

    rankings = [
        sorted(channels, key=lambda c: c.itu_frequency),
        sorted(channels, key=lambda c: -c.itu_frequency),
        sorted(channels, key=lambda c: (c.phase, c.itu_frequency)),
        sorted(channels, key=lambda c: (-c.phase, c.itu_frequency)),
        sorted(channels, key=lambda c: (c.front_scaling, c.itu_frequency)),
        sorted(channels, key=lambda c: (-c.front_scaling, c.itu_frequency)),
    ]
    target = len(chosen) + n_extra
    if target > len(channels):
        raise ValueError("not enough channels for the requested extras")
    while len(chosen) < target:
        for ranking in rankings:
            if len(chosen) >= target:
                break
            for c in ranking:
                if c.itu_frequency not in chosen:
                    chosen[c.itu_frequency] = c
                    break
    return sorted(chosen.values(), key=lambda c: c.itu_frequency)


def ordered_pairs(test_set: list[ChannelPoint]) -> list[tuple[ChannelPoint, ChannelPoint]]:
    return [(a, b) for a in test_set for b in test_set if a is not b]


def save_channels(channels: list[ChannelPoint], path) -> None:
    with open(path, "w") as fh:
        json.dump([c.to_dict() for c in channels], fh, indent=2)


def load_channels(path) -> list[ChannelPoint]:
    with open(path) as fh:
        return [ChannelPoint(**d) for d in json.load(fh)]
