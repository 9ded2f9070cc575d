"""AWG drive synthesis: IV mapping, square waves, pre-emphasis and mux select lines."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.special import lambertw

if TYPE_CHECKING:
    from .channels import ChannelPoint

AWG_RATE = 0.25  # GS/s, i.e. one sample every 4 ns
BURST_PERIOD = 100.0  # ns per wavelength dwell (5 MHz square wave)
AWG_BITS = 12
AWG_FULL_SCALE = (0.0, 2.0)  # volts, every arbitrary channel

SECTIONS = ("rear", "phase", "front_even", "front_odd")
FRONT_HOLD_CURRENT = 5.0  # mA on the held grating of the active pair

# Current ranges in mA; both front paths share the front grating range.
SECTION_RANGES = {"rear": 60.0, "phase": 12.0, "front_even": 5.0, "front_odd": 5.0}


class RangeError(ValueError):
    """A current or pair index outside the laser's operating range."""


@dataclass(frozen=True)
class IVCurve:
    """Diode-like section IV map: V = v0 + a*ln(1 + I/b) + r*I for I >= 0.

    Below the zero-bias voltage ``v0`` the driver pulls charge back out of the
    junction; that region is modelled as a linear extraction current with
    slope ``r_extract`` (V/mA), so I < 0 there.
    """

    v0: float
    a: float
    b: float
    r: float
    r_extract: float

    def voltage(self, current):
        i = np.asarray(current, dtype=float)
        fwd = self.v0 + self.a * np.log1p(np.maximum(i, 0.0) / self.b) + self.r * np.maximum(i, 0.0)
        return np.where(i >= 0, fwd, self.v0 + self.r_extract * i)

    def current(self, voltage):
        v = np.asarray(voltage, dtype=float)
        # a*ln(J) + r*b*J = v - v0 + r*b with J = 1 + I/b; closed form via Lambert W
        c = self.r * self.b / self.a
        arg = (v - self.v0 + self.r * self.b) / self.a
        with np.errstate(over="ignore"):
            w = np.real(lambertw(c * np.exp(np.minimum(arg, 700.0))))
        fwd = self.b * (w / c - 1.0)
        return np.where(v >= self.v0, fwd, (v - self.v0) / self.r_extract)


DEFAULT_IV = {
    "rear": IVCurve(v0=0.65, a=0.08, b=0.5, r=0.006, r_extract=0.004),
    "phase": IVCurve(v0=0.65, a=0.06, b=0.3, r=0.02, r_extract=0.006),
    "front_even": IVCurve(v0=0.70, a=0.05, b=0.2, r=0.03, r_extract=0.02),
    "front_odd": IVCurve(v0=0.70, a=0.05, b=0.2, r=0.03, r_extract=0.02),
}


def _check_section(section: str) -> None:
    if section not in SECTIONS:
        raise KeyError(f"unknown section {section!r}")


def current_to_voltage(section: str, current, iv: dict | None = None, ranges: dict | None = None):
    """Drive voltage that produces ``current`` mA in steady state."""
    _check_section(section)
    limit = (ranges or SECTION_RANGES)[section]
    i = np.asarray(current, dtype=float)
    if np.any(i < 0) or np.any(i > limit):
        raise RangeError(f"{section} current outside [0, {limit}] mA")
    v = (iv or DEFAULT_IV)[section].voltage(i)
    return float(v) if np.ndim(v) == 0 else v


def voltage_to_current(section: str, voltage, iv: dict | None = None):
    """Inverse IV map. Voltages below the zero-bias point give negative current."""
    _check_section(section)
    i = (iv or DEFAULT_IV)[section].current(voltage)
    return float(i) if np.ndim(i) == 0 else i


def quantize(volts, full_scale=AWG_FULL_SCALE, bits: int = AWG_BITS):
    lo, hi = full_scale
    lsb = (hi - lo) / (2**bits - 1)
    codes = np.clip(np.round((np.asarray(volts, dtype=float) - lo) / lsb), 0, 2**bits - 1)
    return lo + codes * lsb


def lsb_volts(full_scale=AWG_FULL_SCALE, bits: int = AWG_BITS) -> float:
    return (full_scale[1] - full_scale[0]) / (2**bits - 1)


@dataclass(frozen=True)
class FrontRouting:
    pair: int
    select: tuple[int, int, int, int]  # D1, D2, D3, D4
    even_grating: int
    odd_grating: int
    held_path: str  # "front_even" or "front_odd"
    scaled_path: str


def front_pair_encoding(front_pair: int, n_pairs: int = 7) -> FrontRouting:
    """Mux routing for front pair i: grating i held at 5 mA, grating i+1 scaled.

    Even gratings (2, 4, 6, 8) hang off the front-even channel and are picked by
    D1D2; odd gratings (1, 3, 5, 7) by D3D4. Codes are the grating's position
    within its group, MSB first.
    """
    if not 1 <= int(front_pair) <= n_pairs:
        raise RangeError(f"front pair {front_pair} outside 1..{n_pairs}")
    i = int(front_pair)
    held, scaled = i, i + 1
    even = held if held % 2 == 0 else scaled
    odd = held if held % 2 == 1 else scaled
    e_code = even // 2 - 1
    o_code = (odd - 1) // 2
    select = ((e_code >> 1) & 1, e_code & 1, (o_code >> 1) & 1, o_code & 1)
    held_path = "front_even" if held % 2 == 0 else "front_odd"
    scaled_path = "front_odd" if held_path == "front_even" else "front_even"
    return FrontRouting(i, select, even, odd, held_path, scaled_path)


def channel_currents(ch: ChannelPoint) -> dict[str, float]:
    """Per-path drive currents (mA) for a static channel point."""
    routing = front_pair_encoding(ch.front_pair)
    out = {"rear": ch.rear, "phase": ch.phase}
    out[routing.held_path] = FRONT_HOLD_CURRENT
    out[routing.scaled_path] = ch.front_scaling
    return out


@dataclass
class PreEmphasisWeights:
    """Per-sample pre-emphasis weights for one section of one ordered switch.

    Additive mode applies y = x + dV*h to the first K samples after the
    switch; multiplicative mode applies y = h*x.
    """

    h: np.ndarray
    mode: str = "additive"
    section: str = "rear"
    edge: str = "falling"
    bin_width: float = 4.0

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float).copy()
        if self.mode not in ("additive", "multiplicative"):
            raise ValueError(f"unknown weight mode {self.mode!r}")
        if self.edge not in ("rising", "falling"):
            raise ValueError(f"unknown edge {self.edge!r}")
        if self.mode == "multiplicative" and np.any(self.h <= 0):
            raise ValueError("multiplicative weights must be positive")

    @property
    def K(self) -> int:
        return len(self.h)

    @classmethod
    def zeros(cls, K: int, **kw) -> PreEmphasisWeights:
        return cls(np.zeros(K), mode="additive", **kw)

    @classmethod
    def ones(cls, K: int = 4, **kw) -> PreEmphasisWeights:
        kw.setdefault("section", "phase")
        return cls(np.ones(K), mode="multiplicative", **kw)

    def to_dict(self) -> dict:
        return {"h": [float(v) for v in self.h], "mode": self.mode, "section": self.section,
                "edge": self.edge, "bin_width": self.bin_width}


@dataclass
class DriveWaveform:
    """Sampled AWG output for a repeating lambda1 -> lambda2 -> lambda1 pattern.

    Even bursts dwell on the source channel, odd bursts on the target, so the
    pre-emphasised switch happens at the start of every odd burst.
    """

    samples: dict[str, np.ndarray]
    select: np.ndarray  # (n_samples, 4) uint8, columns D1..D4
    front_pair: np.ndarray  # active pair per sample, decoded from select lines
    delta_v: dict[str, float]
    burst_period: float = BURST_PERIOD
    sample_rate: float = AWG_RATE
    clamped: bool = False
    clamp_sections: tuple[str, ...] = ()

    @property
    def n_samples(self) -> int:
        return len(self.samples["rear"])

    @property
    def samples_per_burst(self) -> int:
        return int(round(self.burst_period * self.sample_rate))

    @property
    def n_bursts(self) -> int:
        return self.n_samples // self.samples_per_burst

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def switch_indices(self) -> np.ndarray:
        """Sample index of every source -> target transition."""
        spb = self.samples_per_burst
        return np.arange(1, self.n_bursts, 2) * spb

    def export(self, directory: str | Path, stem: str = "drive") -> list[Path]:
        """Write one CSV per section plus a JSON header an AWG driver can consume."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in SECTIONS:
            p = directory / f"{stem}_{name}.csv"
            with p.open("w") as fh:
                fh.write("sample_index,volts\n")
                for n, v in enumerate(self.samples[name]):
                    fh.write(f"{n},{v:.6f}\n")
            paths.append(p)
        header = {
            "sample_rate_GSps": self.sample_rate,
            "burst_period_ns": self.burst_period,
            "n_samples": self.n_samples,
            "bits": AWG_BITS,
            "full_scale_V": list(AWG_FULL_SCALE),
            "delta_v": self.delta_v,
            "clamped": self.clamped,
            "select_per_burst": [
                [int(b) for b in self.select[k * self.samples_per_burst]] for k in range(self.n_bursts)
            ],
        }
        hp = directory / f"{stem}_header.json"
        hp.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
        paths.append(hp)
        return paths


def synthesize(
    pair: Sequence[ChannelPoint],
    weights_rear: PreEmphasisWeights | None = None,
    weights_phase: PreEmphasisWeights | None = None,
    n_bursts: int = 32,
    iv: dict | None = None,
    ranges: dict | None = None,
) -> DriveWaveform:
    """Square-wave drive between two channel points with optional pre-emphasis."""
    src, dst = pair
    iv = iv or DEFAULT_IV
    ranges = ranges or SECTION_RANGES
    if n_bursts < 2 or n_bursts % 2:
        raise ValueError("n_bursts must be a positive even number")
    spb = int(round(BURST_PERIOD * AWG_RATE))
    n = spb * n_bursts

    cur_src, cur_dst = channel_currents(src), channel_currents(dst)
    v_src = {s: float(iv[s].voltage(cur_src[s])) for s in SECTIONS}
    v_dst = {s: float(iv[s].voltage(cur_dst[s])) for s in SECTIONS}
    for s in SECTIONS:
        if not (0 <= cur_src[s] <= ranges[s] and 0 <= cur_dst[s] <= ranges[s]):
            raise RangeError(f"{s} current outside [0, {ranges[s]}] mA")

    on_dst = (np.arange(n) // spb) % 2 == 1
    samples = {s: np.where(on_dst, v_dst[s], v_src[s]) for s in SECTIONS}
    delta_v = {s: v_dst[s] - v_src[s] for s in SECTIONS}
    edges = np.arange(1, n_bursts, 2) * spb

    if weights_rear is not None and weights_rear.K:
        if weights_rear.mode != "additive":
            raise ValueError("rear pre-emphasis is additive")
        for e in edges:
            samples["rear"][e:e + weights_rear.K] += delta_v["rear"] * weights_rear.h
    if weights_phase is not None and weights_phase.K:
        if weights_phase.mode != "multiplicative":
            raise ValueError("phase pre-emphasis is multiplicative")
        for e in edges:
            samples["phase"][e:e + weights_phase.K] *= weights_phase.h

    clamp_sections = []
    for s in SECTIONS:
        lo, hi = AWG_FULL_SCALE[0], float(iv[s].voltage(ranges[s]))
        if np.any(samples[s] < lo) or np.any(samples[s] > hi):
            clamp_sections.append(s)
        samples[s] = quantize(np.clip(samples[s], lo, hi))

    r_src, r_dst = front_pair_encoding(src.front_pair), front_pair_encoding(dst.front_pair)
    select = np.where(on_dst[:, None], np.array(r_dst.select), np.array(r_src.select)).astype(np.uint8)
    front_pair = np.where(on_dst, dst.front_pair, src.front_pair).astype(np.int64)
    return DriveWaveform(
        samples=samples,
        select=select,
        front_pair=front_pair,
        delta_v=delta_v,
        clamped=bool(clamp_sections),
        clamp_sections=tuple(clamp_sections),
    )


def decode_select(select) -> int:
    """Recover the front pair from a (D1, D2, D3, D4) tuple."""
    d1, d2, d3, d4 = (int(v) for v in select)
    even = 2 * ((d1 << 1 | d2) + 1)
    odd = 2 * (d3 << 1 | d4) + 1
    if abs(even - odd) != 1:
        raise RangeError(f"select lines {select} do not address an adjacent grating pair")
    return min(even, odd)


def edge_direction(delta_v: float) -> str:
    return "rising" if delta_v > 0 else "falling"
