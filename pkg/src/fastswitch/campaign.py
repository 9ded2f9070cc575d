"""Worst-case switching campaign and its CSV/JSON report."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import spearmanr

from .channels import ChannelPoint, ordered_pairs
from .optimizer import CalibrationRecord, OptimizerConfig, SimulatedTestbed, optimize_phase, optimize_rear
from .plant import PlantParams
from .waveform import PreEmphasisWeights

SETTLE_CHECK_TIME = 15.0  # ns, instant from which every trace must sit within +/-5 GHz
TIGHT_THRESHOLD = 5.0  # GHz


@dataclass
class SwitchResult:
    pair_id: str
    src: float  # THz
    dst: float  # THz
    delta_rear: float  # mA, signed
    edge: str = ""
    rear_only_switch_time: float = math.inf
    switch_time: float = math.inf
    switch_time_5ghz: float = math.inf
    mode_hop: bool = False
    phase_applied: bool = False
    mode_hop_corrected: bool = False
    unresolved: bool = False
    rear_weights: list = field(default_factory=list)
    phase_weights: list = field(default_factory=list)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def within_tight_band(self) -> bool:
        return self.switch_time_5ghz <= SETTLE_CHECK_TIME

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("rear_only_switch_time", "switch_time", "switch_time_5ghz"):
            d[k] = _num(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SwitchResult:
        d = dict(d)
        for k in ("rear_only_switch_time", "switch_time", "switch_time_5ghz"):
            d[k] = math.inf if d[k] == "inf" else float(d[k])
        return cls(**d)


def _num(v):
    return float(v) if math.isfinite(v) else "inf"


def pair_seed(seed: int, src: ChannelPoint, dst: ChannelPoint) -> np.random.SeedSequence:
    """Per-pair entropy from the run seed and the two ITU frequencies.

    Keying on the channels rather than on the loop position means a single
    ``calibrate`` reproduces the same pair inside a campaign.
    """
    return np.random.SeedSequence([int(seed), round(src.itu_frequency * 1e3), round(dst.itu_frequency * 1e3)])


def default_testbed_factory(params: PlantParams, config: OptimizerConfig) -> Callable:
    def make(target: ChannelPoint, rng: np.random.Generator):
        return SimulatedTestbed.for_channel(target, params, rng=rng, config=config)
    return make


def calibrate_pair(src: ChannelPoint, dst: ChannelPoint, testbed, config: OptimizerConfig
                   ) -> tuple[CalibrationRecord, SwitchResult]:
    """Rear optimisation, escalating to the phase section only when a mode hop remains."""
    pair = (src, dst)
    rec = optimize_rear(pair, testbed, config)
    res = SwitchResult(rec.pair_id, src.itu_frequency, dst.itu_frequency, dst.rear - src.rear, rec.edge,
                       rear_only_switch_time=rec.switch_time, mode_hop=rec.mode_hop)
    if rec.mode_hop:
        phase = optimize_phase(pair, testbed, config, rec)
        res.phase_applied = True
        if phase.switch_time <= rec.switch_time:
            rec = phase
        else:
            # phase weights made things worse; keep them at unity
            rec.rear_only_switch_time = rec.switch_time
            rec.phase_weights = PreEmphasisWeights.ones(config.K_phase, edge=phase.phase_weights.edge)
            rec.phase_h_history, rec.phase_error_history = phase.phase_h_history, phase.phase_error_history
            rec.unresolved = True
        res.mode_hop_corrected = rec.mode_hop_corrected
        res.unresolved = rec.unresolved
        res.phase_weights = [float(v) for v in rec.phase_weights.h]
    else:
        rec.rear_only_switch_time = rec.switch_time
    res.switch_time = rec.switch_time
    res.switch_time_5ghz = rec.switch_time_5ghz
    res.rear_weights = [float(v) for v in rec.rear_weights.h]
    return rec, res


def _run_one(args):
    src, dst, seed, params, config, factory = args
    factory = factory or default_testbed_factory(params, config)
    rng = np.random.default_rng(pair_seed(seed, src, dst))
    try:
        return calibrate_pair(src, dst, factory(dst, rng), config)[1]
    except Exception as exc:  # recorded, the campaign carries on
        return SwitchResult(f"{src.itu_frequency:.2f}->{dst.itu_frequency:.2f}", src.itu_frequency,
                            dst.itu_frequency, dst.rear - src.rear, error=f"{type(exc).__name__}: {exc}")


def run_campaign(test_set: list[ChannelPoint], params: PlantParams | None = None,
                 config: OptimizerConfig | None = None, seed: int = 0,
                 testbed_factory: Callable | None = None, workers: int | None = 1,
                 progress: Callable[[int, SwitchResult], None] | None = None) -> list[SwitchResult]:
    """Calibrate every ordered pair of ``test_set`` and return results in pair order.

    ``workers=None`` uses every available core. Each pair draws its noise from
    its own seed, so the result does not depend on the worker count.
    """
    if not test_set:
        raise ValueError("empty test set")
    params = params or PlantParams()
    config = config or OptimizerConfig()
    jobs = [(a, b, seed, params, config, testbed_factory) for a, b in ordered_pairs(test_set)]
    workers = workers or os.cpu_count() or 1
    out = []
    if workers == 1:
        results = map(_run_one, jobs)
    else:
        pool = ProcessPoolExecutor(workers)
        results = pool.map(_run_one, jobs, chunksize=4)
    try:
        for i, r in enumerate(results):
            out.append(r)
            if progress:
                progress(i, r)
    finally:
        if workers != 1:
            pool.shutdown()
    return out


@dataclass
class CampaignReport:
    results: list[SwitchResult]
    cdf_10: np.ndarray  # (time_ns, fraction settled by then)
    cdf_5: np.ndarray
    scatter: np.ndarray  # (|dI_rear| mA, mean switch ns, count)
    spearman: float
    weights: dict  # edge -> array (n_records, K)
    summary: dict


def cdf_table(times) -> np.ndarray:
    """Empirical CDF over the given switch times; unsettled switches never count."""
    t = np.asarray(times, dtype=float)
    if len(t) == 0:
        raise ValueError("no switch times")
    finite = np.sort(t[np.isfinite(t)])
    levels, idx = np.unique(finite, return_index=True)
    counts = np.append(idx[1:], len(finite))
    return np.column_stack([levels, counts / len(t)])


def scatter_table(results: list[SwitchResult]) -> np.ndarray:
    """Mean final switch time for each distinct |dI_rear| (0.01 mA resolution)."""
    di = np.round(np.abs([r.delta_rear for r in results]), 2)
    t = np.array([r.switch_time for r in results])
    rows = []
    for v in np.unique(di):
        sel = t[di == v]
        rows.append((v, float(np.mean(sel)), len(sel)))
    return np.array(rows, dtype=float).reshape(-1, 3)


def build_report(results: list[SwitchResult]) -> CampaignReport:
    if not results:
        raise ValueError("no records to report")
    ok = [r for r in results if not r.failed]
    if not ok:
        raise ValueError("every pair failed")
    rear_only = [r.rear_only_switch_time for r in ok]
    final = [r.switch_time for r in ok]
    scatter = scatter_table(ok)
    if len(scatter) > 1 and np.ptp(scatter[:, 1][np.isfinite(scatter[:, 1])]) > 0:
        rho = float(spearmanr(scatter[:, 0], scatter[:, 1]).statistic)
    else:
        rho = math.nan
    weights = {}
    for edge in ("rising", "falling"):
        hs = [r.rear_weights for r in ok if r.edge == edge]
        if hs:
            weights[edge] = np.array(hs)

    def frac(ts, lim):
        return float(np.mean(np.asarray(ts) <= lim))

    finite = np.array([t for t in final if math.isfinite(t)])
    summary = {
        "n_pairs": len(results),
        "n_failed": len(results) - len(ok),
        "failures": [{"pair_id": r.pair_id, "error": r.error} for r in results if r.failed],
        "rear_only_le_10ns": frac(rear_only, 10.0),
        "rear_only_le_20ns": frac(rear_only, 20.0),
        "rear_only_p95_ns": _num(float(np.percentile(rear_only, 95))),
        "rear_only_max_ns": _num(float(np.max(rear_only))),
        "final_le_10ns": frac(final, 10.0),
        "final_p95_ns": _num(float(np.percentile(final, 95))),
        "final_max_ns": _num(float(np.max(final))),
        "within_5ghz_at_15ns": frac([r.switch_time_5ghz for r in ok], SETTLE_CHECK_TIME),
        "mode_hops_detected": sum(r.mode_hop for r in ok),
        "phase_corrected": sum(r.mode_hop_corrected for r in ok),
        "unresolved": sum(r.unresolved for r in ok),
        "spearman_abs_delta_rear_vs_time": None if math.isnan(rho) else rho,
        "mean_switch_ns": float(finite.mean()) if len(finite) else "inf",
    }
    return CampaignReport(results, cdf_table(rear_only), cdf_table([r.switch_time_5ghz for r in ok]),
                          scatter, rho, weights, summary)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])


def write_report(report: CampaignReport, out_dir) -> list[Path]:
    """Write the report tables under ``out_dir``; identical records give identical bytes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    def p(name):
        paths.append(out / name)
        return paths[-1]

    final = cdf_table([r.switch_time for r in report.results if not r.failed])
    _write_csv(p("cdf_rear_only_10ghz.csv"), ["time_ns", "fraction"], report.cdf_10.tolist())
    _write_csv(p("cdf_final_10ghz.csv"), ["time_ns", "fraction"], final.tolist())
    _write_csv(p("cdf_final_5ghz.csv"), ["time_ns", "fraction"], report.cdf_5.tolist())
    _write_csv(p("scatter_delta_rear.csv"), ["abs_delta_rear_mA", "mean_switch_ns", "count"],
               [[a, b, int(c)] for a, b, c in report.scatter.tolist()])
    for edge, hs in report.weights.items():
        _write_csv(p(f"weights_{edge}.csv"), [f"h{k + 1}" for k in range(hs.shape[1])], hs.tolist())
    fields_ = ["pair_id", "src", "dst", "delta_rear", "edge", "rear_only_switch_time", "switch_time",
               "switch_time_5ghz", "mode_hop", "phase_applied", "mode_hop_corrected", "unresolved", "error"]
    _write_csv(p("results.csv"), fields_, [[r.to_dict()[k] for k in fields_] for r in report.results])
    with open(p("results.json"), "w") as fh:
        json.dump([r.to_dict() for r in report.results], fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(p("summary.json"), "w") as fh:
        json.dump(report.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def load_results(path) -> list[SwitchResult]:
    with open(path) as fh:
        return [SwitchResult.from_dict(d) for d in json.load(fh)]
