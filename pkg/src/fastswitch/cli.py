"""Command-line front end: sweep, plan, calibrate, campaign and report."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .campaign import (
    build_report,
    calibrate_pair,
    default_testbed_factory,
    load_results,
    pair_seed,
    run_campaign,
    write_report,
)
from .channels import (
    ITU_SPACING,
    ITU_START,
    N_CHANNELS,
    ChannelPoint,
    TuningMap,
    load_channels,
    place_itu_channels,
    save_channels,
    select_worst_case,
    sweep_map,
)
from .optimizer import OptimizerConfig
from .plant import PlantParams

log = logging.getLogger("fastswitch")


@dataclass
class RunConfig:
    plant: PlantParams = field(default_factory=PlantParams)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    plan: dict = field(default_factory=dict)
    output_dir: str = "runs"
    seed: int = 0
    workers: int | None = None  # None uses every available core

    PLAN_DEFAULTS = {"spacing": ITU_SPACING, "start": ITU_START, "n_channels": N_CHANNELS,
                     "n_extra": 8, "rear_step": 0.5, "front_step": 0.25}

    def __post_init__(self):
        unknown = set(self.plan) - set(self.PLAN_DEFAULTS)
        if unknown:
            raise KeyError(f"unknown plan settings: {sorted(unknown)}")
        self.plan = {**self.PLAN_DEFAULTS, **self.plan}

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(d)
        known = {"plant", "optimizer", "plan", "output_dir", "seed", "workers"}
        if set(d) - known:
            raise KeyError(f"unknown config keys: {sorted(set(d) - known)}")
        return cls(PlantParams.from_dict(d.get("plant", {})), OptimizerConfig.from_dict(d.get("optimizer", {})),
                   d.get("plan", {}), d.get("output_dir", "runs"), int(d.get("seed", 0)), d.get("workers"))

    def to_dict(self) -> dict:
        return {"plant": self.plant.to_dict(), "optimizer": self.optimizer.to_dict(), "plan": self.plan,
                "output_dir": self.output_dir, "seed": self.seed, "workers": self.workers}

    def run_dir(self, command: str) -> Path:
        """Output directory stamped by command, seed and a digest of the settings.

        Worker count and output location do not change results, so they are
        left out of the digest.
        """
        d = self.to_dict()
        d.pop("workers")
        d.pop("output_dir")
        digest = hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]
        return Path(self.output_dir) / f"{command}-seed{self.seed}-{digest}"


def load_config(path: str | None, seed: int | None = None, output_dir: str | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        with open(path) as fh:
            cfg = RunConfig.from_dict(json.load(fh))
    if seed is not None:
        cfg.seed = seed
        cfg.plant.rng_seed = seed
    if output_dir is not None:
        cfg.output_dir = output_dir
    return cfg


def _prepare(run_dir: Path, cfg: RunConfig) -> Path:
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return run_dir


def make_plan(cfg: RunConfig) -> tuple[TuningMap, list[ChannelPoint], list[ChannelPoint]]:
    pl = cfg.plan
    tmap = sweep_map(rear_step=pl["rear_step"], front_step=pl["front_step"], params=cfg.plant)
    channels = place_itu_channels(tmap, pl["spacing"], pl["start"], pl["n_channels"], cfg.plant)
    return tmap, channels, select_worst_case(channels, pl["n_extra"])


def _find_channel(channels: list[ChannelPoint], key: str) -> ChannelPoint:
    """Look up a channel by ITU frequency in THz or by 0-based plan index."""
    if key.isdigit():
        return channels[int(key)]
    f = float(key)
    for c in channels:
        if abs(c.itu_frequency - f) < 1e-6:
            return c
    raise KeyError(f"no planned channel at {f} THz")


def cmd_sweep(cfg: RunConfig, args) -> int:
    out = _prepare(cfg.run_dir("sweep"), cfg)
    pl = cfg.plan
    sweep_map(rear_step=pl["rear_step"], front_step=pl["front_step"], params=cfg.plant).to_csv(out / "tuning_map.csv")
    print(out)
    return 0


def cmd_plan(cfg: RunConfig, args) -> int:
    out = _prepare(cfg.run_dir("plan"), cfg)
    tmap, channels, worst = make_plan(cfg)
    tmap.to_csv(out / "tuning_map.csv")
    save_channels(channels, out / "channels.json")
    save_channels(worst, out / "test_set.json")
    log.info("%d channels, %d in the worst-case set", len(channels), len(worst))
    print(out)
    return 0


def _channels_for(cfg: RunConfig, args) -> tuple[list[ChannelPoint], list[ChannelPoint]]:
    if getattr(args, "channels", None):
        channels = load_channels(args.channels)
        worst = load_channels(args.test_set) if getattr(args, "test_set", None) else select_worst_case(
            channels, cfg.plan["n_extra"])
        return channels, worst
    _, channels, worst = make_plan(cfg)
    return channels, worst


def cmd_calibrate(cfg: RunConfig, args) -> int:
    channels, _ = _channels_for(cfg, args)
    src, dst = _find_channel(channels, args.src), _find_channel(channels, args.dst)
    out = _prepare(cfg.run_dir(f"calibrate-{src.itu_frequency:.2f}-{dst.itu_frequency:.2f}"), cfg)
    rng = np.random.default_rng(pair_seed(cfg.seed, src, dst))
    testbed = default_testbed_factory(cfg.plant, cfg.optimizer)(dst, rng)
    record, result = calibrate_pair(src, dst, testbed, cfg.optimizer)
    record.to_json(out / "record.json")
    record.trace.to_csv(out / "trace.csv")
    with open(out / "results.json", "w") as fh:
        json.dump([result.to_dict()], fh, indent=1, sort_keys=True)
        fh.write("\n")
    log.info("%s: %.2f ns (rear only %.2f ns)%s", result.pair_id, result.switch_time,
             result.rear_only_switch_time, ", phase escalated" if result.phase_applied else "")
    print(out)
    return 0


def cmd_campaign(cfg: RunConfig, args) -> int:
    out = _prepare(cfg.run_dir("campaign"), cfg)
    _, worst = _channels_for(cfg, args)
    save_channels(worst, out / "test_set.json")
    n = len(worst) * (len(worst) - 1)

    def progress(i, r):
        if r.failed:
            log.warning("[%d/%d] %s failed: %s", i + 1, n, r.pair_id, r.error)
        else:
            log.info("[%d/%d] %s %.2f ns", i + 1, n, r.pair_id, r.switch_time)

    results = run_campaign(worst, cfg.plant, cfg.optimizer, cfg.seed, workers=cfg.workers, progress=progress)
    report = build_report(results)
    write_report(report, out)
    print(json.dumps(report.summary, indent=2, sort_keys=True))
    print(out)
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    results = []
    for path in args.results:
        results.extend(load_results(path))
    report = build_report(results)
    out = Path(args.out) if args.out else cfg.run_dir("report")
    write_report(report, out)
    print(json.dumps(report.summary, indent=2, sort_keys=True))
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fastswitch", description="Pre-emphasis calibration of a simulated DS-DBR laser.")
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="override the configured rng seed")
    ap.add_argument("--output-dir", help="override the configured output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("sweep", help="write the static tuning map")
    sub.add_parser("plan", help="place the ITU channels and pick the worst-case set")

    p = sub.add_parser("calibrate", help="optimise one ordered channel pair")
    p.add_argument("--from", dest="src", required=True, help="source channel, THz or plan index")
    p.add_argument("--to", dest="dst", required=True, help="target channel, THz or plan index")
    p.add_argument("--channels", help="channels.json from a previous plan")

    p = sub.add_parser("campaign", help="optimise every ordered pair of the worst-case set")
    p.add_argument("--channels", help="channels.json from a previous plan")
    p.add_argument("--test-set", help="test_set.json to use instead of the default selection")

    p = sub.add_parser("report", help="rebuild report tables from results.json files")
    p.add_argument("results", nargs="+")
    p.add_argument("--out", help="output directory")
    return ap


COMMANDS = {"sweep": cmd_sweep, "plan": cmd_plan, "calibrate": cmd_calibrate,
            "campaign": cmd_campaign, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.seed, args.output_dir)
        return COMMANDS[args.command](cfg, args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
