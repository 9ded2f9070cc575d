"""Receiver-side processing: frequency estimation, burst averaging, bins and switch metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

FALLBACK_ERROR = 25.0  # GHz used for a bin with no valid samples
NOT_SETTLED = math.inf


@dataclass
class FrequencyTrace:
    time: np.ndarray  # ns, uniform
    offset: np.ndarray  # GHz, NaN where invalid
    valid: np.ndarray

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        self.offset = np.where(self.valid, np.asarray(self.offset, dtype=float), np.nan)
        if not (len(self.time) == len(self.offset) == len(self.valid)):
            raise ValueError("time, offset and valid must have equal length")
        if len(self.time) > 1 and np.any(np.diff(self.time) <= 0):
            raise ValueError("time grid must be strictly increasing")

    @property
    def dt(self) -> float:
        return float(self.time[1] - self.time[0]) if len(self.time) > 1 else 0.0

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.dt

    def __len__(self) -> int:
        return len(self.time)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time_ns,offset_GHz,valid\n")
            for t, f, v in zip(self.time, self.offset, self.valid):
                fh.write(f"{t:.4f},{'' if not v else f'{f:.6f}'},{int(v)}\n")

    @classmethod
    def from_csv(cls, path) -> FrequencyTrace:
        t, f, v = [], [], []
        with open(path) as fh:
            next(fh)
            for line in fh:
                a, b, c = line.rstrip("\n").split(",")
                t.append(float(a))
                f.append(float(b) if b else np.nan)
                v.append(c == "1")
        return cls(np.array(t), np.array(f), np.array(v))


@dataclass
class BinnedError:
    e: np.ndarray  # GHz
    bin_width: float = 4.0  # ns
    filled: np.ndarray | None = None  # False where the fallback value was used

    def __post_init__(self):
        self.e = np.asarray(self.e, dtype=float)
        if self.filled is None:
            self.filled = np.ones(len(self.e), dtype=bool)
        self.filled = np.asarray(self.filled, dtype=bool)

    @property
    def K(self) -> int:
        return len(self.e)


def _samples(capture):
    if hasattr(capture, "samples"):
        return np.asarray(capture.samples), float(capture.sample_rate)
    raise TypeError("capture must provide samples and sample_rate")


def estimate_instantaneous_frequency(capture, window: float = 1.0, threshold_db: float = -10.0,
                                     reference_power: float | None = 1.0) -> FrequencyTrace:
    """Phase-increment frequency estimate smoothed by a centred moving average.

    The lag-one products z[n] conj(z[n-1]) are averaged over ``window`` ns
    before taking the angle. Samples whose windowed power falls more than
    ``threshold_db`` below ``reference_power`` are flagged invalid. The default
    reference is the unit in-band power of a receiver capture; pass None to
    use the 95th percentile of the windowed power instead.
    """
    z, fs = _samples(capture)
    if len(z) < 2:
        raise ValueError("capture must hold at least two samples")
    w = int(round(window * fs))
    if w < 2:
        raise ValueError(f"window of {window} ns is under two samples at {fs} GS/s")

    prod = np.empty(len(z), dtype=complex)
    prod[1:] = z[1:] * np.conj(z[:-1])
    prod[0] = prod[1]
    avg = uniform_filter1d(prod.real, w, mode="nearest") + 1j * uniform_filter1d(prod.imag, w, mode="nearest")
    offset = fs / (2 * math.pi) * np.angle(avg)

    power = uniform_filter1d(np.abs(z) ** 2, w, mode="nearest")
    ref = float(np.percentile(power, 95)) if reference_power is None else reference_power
    valid = power >= ref * 10 ** (threshold_db / 10) if ref > 0 else np.zeros(len(z), bool)
    time = np.arange(len(z)) / fs
    return FrequencyTrace(time, offset, valid)


def segment_and_average(trace: FrequencyTrace, burst_period: float = 100.0, n_average: int = 16,
                        first_target_burst: int = 1, stride: int = 2) -> FrequencyTrace:
    """Average every ``stride``-th burst starting at ``first_target_burst``.

    The returned trace starts at the switch instant (time 0). A point is valid
    when it is valid in at least half the averaged bursts; the offset there is
    the mean over the bursts where it is valid.
    """
    spb = int(round(burst_period * trace.sample_rate))
    n_bursts = len(trace) // spb
    starts = list(range(first_target_burst, n_bursts, stride))
    if len(starts) < n_average:
        raise ValueError(f"trace holds {len(starts)} target bursts, {n_average} needed")
    starts = starts[:n_average]
    idx = np.array(starts)[:, None] * spb + np.arange(spb)[None, :]
    valid = trace.valid[idx]
    vals = np.where(valid, trace.offset[idx], 0.0)
    count = valid.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = vals.sum(axis=0) / count
    ok = count * 2 >= n_average
    return FrequencyTrace(np.arange(spb) * trace.dt, mean, ok)


def bin_errors(trace: FrequencyTrace, K: int, bin_width: float = 4.0, start: float = 0.0,
               n_lookahead: int | None = None) -> BinnedError:
    """Mean offset over each of ``K`` bins beginning ``start`` ns into the trace.

    Bins without valid samples take +/-25 GHz with the sign of the next valid
    bin. The search for a sign continues past bin K (up to ``n_lookahead``
    bins, default to the end of the trace), then falls back to the nearest
    earlier valid bin, and finally to +25 GHz.
    """
    if K < 1:
        raise ValueError("K must be positive")
    dt = trace.dt
    per_bin = int(round(bin_width / dt))
    first = int(round(start / dt))
    if first + K * per_bin > len(trace):
        raise ValueError("trace does not cover the requested bins")
    total = (len(trace) - first) // per_bin
    if n_lookahead is not None:
        total = min(total, K + n_lookahead)
    total = max(total, K)

    means = np.full(total, np.nan)
    for k in range(total):
        sl = slice(first + k * per_bin, first + (k + 1) * per_bin)
        v = trace.valid[sl]
        if v.any():
            means[k] = trace.offset[sl][v].mean()

    e = np.empty(K)
    filled = ~np.isnan(means[:K])
    for k in range(K):
        if filled[k]:
            e[k] = means[k]
            continue
        later = np.nonzero(~np.isnan(means[k + 1:]))[0]
        earlier = np.nonzero(~np.isnan(means[:k]))[0]
        if len(later):
            ref = means[k + 1 + later[0]]
        elif len(earlier):
            ref = means[earlier[-1]]
        else:
            ref = 1.0
        e[k] = math.copysign(FALLBACK_ERROR, ref)
    return BinnedError(e, bin_width, filled)


def measure_switch_time(trace: FrequencyTrace, threshold: float = 10.0) -> float:
    """Earliest time after which the trace stays valid and within +/-threshold.

    Returns ``math.inf`` when the trace is out of band at its last sample.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    good = trace.valid & (np.abs(np.nan_to_num(trace.offset, nan=np.inf)) <= threshold)
    if len(good) == 0 or not good[-1]:
        return NOT_SETTLED
    bad = np.nonzero(~good)[0]
    if len(bad) == 0:
        return float(trace.time[0])
    return float(trace.time[bad[-1] + 1])


def band_entry_time(trace: FrequencyTrace, threshold: float = 10.0) -> float:
    """First time the trace is valid and within +/-threshold; inf if never."""
    good = trace.valid & (np.abs(np.nan_to_num(trace.offset, nan=np.inf)) <= threshold)
    idx = np.nonzero(good)[0]
    return float(trace.time[idx[0]]) if len(idx) else NOT_SETTLED


@dataclass
class ModeHop:
    detected: bool
    window: tuple[float, float] | None = None


def detect_mode_hop(trace: FrequencyTrace, threshold: float = 10.0, mode_spacing: float = 45.0,
                    min_dwell: float = 2.0) -> ModeHop:
    """Look for an excursion after first in-band entry that later returns.

    An excursion counts when the trace goes invalid or lies more than half a
    cavity-mode spacing beyond the +/-threshold band for at least
    ``min_dwell`` ns. The reported window runs from leaving the band to
    coming back into it.
    """
    good = trace.valid & (np.abs(np.nan_to_num(trace.offset, nan=np.inf)) <= threshold)
    entry = np.nonzero(good)[0]
    if len(entry) == 0:
        return ModeHop(False)
    first = entry[0]
    far = ~trace.valid | (np.abs(np.nan_to_num(trace.offset, nan=np.inf)) > threshold + mode_spacing / 2)
    dt = trace.dt
    i, n = first, len(trace)
    while i < n:
        if good[i]:
            i += 1
            continue
        j = i
        while j < n and not good[j]:
            j += 1
        if j < n:
            # longest continuous far run within this out-of-band stretch
            run = best = 0
            for v in far[i:j]:
                run = run + 1 if v else 0
                best = max(best, run)
            if best * dt >= min_dwell:
                return ModeHop(True, (float(trace.time[i]), float(trace.time[j])))
        i = j
    return ModeHop(False)
