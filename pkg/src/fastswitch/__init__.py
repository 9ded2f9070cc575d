"""Regression-optimised pre-emphasis for fast DS-DBR laser wavelength switching, in simulation."""

from .campaign import CampaignReport, SwitchResult, build_report, calibrate_pair, run_campaign, write_report
from .channels import (
    ChannelPoint,
    TuningMap,
    ordered_pairs,
    place_itu_channels,
    select_worst_case,
    sweep_map,
)
from .dsp import (
    BinnedError,
    FrequencyTrace,
    ModeHop,
    bin_errors,
    detect_mode_hop,
    estimate_instantaneous_frequency,
    measure_switch_time,
    segment_and_average,
)
from .optimizer import (
    CalibrationRecord,
    OptimizerConfig,
    SimulatedTestbed,
    Testbed,
    optimize_phase,
    optimize_rear,
    seed_search,
    update_step,
)
from .plant import IQCapture, PlantParams, Trajectory, capture_iq, simulate, static_frequency
from .waveform import DriveWaveform, PreEmphasisWeights, synthesize

__version__ = "0.1.0"
