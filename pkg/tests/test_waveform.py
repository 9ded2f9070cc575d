import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastswitch.channels import ChannelPoint
from fastswitch.waveform import (
    AWG_FULL_SCALE,
    DEFAULT_IV,
    FRONT_HOLD_CURRENT,
    SECTIONS,
    PreEmphasisWeights,
    RangeError,
    channel_currents,
    current_to_voltage,
    decode_select,
    edge_direction,
    front_pair_encoding,
    lsb_volts,
    quantize,
    synthesize,
    voltage_to_current,
)

SRC = ChannelPoint(191.0, 2, 2.5, 47.0, 6.0)
DST = ChannelPoint(191.5, 4, 1.0, 2.0, 3.0)


def test_zero_current_is_zero_bias_voltage():
    for s in SECTIONS:
        assert current_to_voltage(s, 0.0) == pytest.approx(DEFAULT_IV[s].v0)


@pytest.mark.parametrize("section,limit", [("rear", 60.0), ("phase", 12.0), ("front_even", 5.0)])
def test_iv_round_trip(section, limit):
    i = np.linspace(0, limit, 501)
    back = voltage_to_current(section, current_to_voltage(section, i))
    assert np.max(np.abs(back - i)) < 0.01


def test_round_trip_through_quantiser():
    i = np.linspace(0, 60, 301)
    back = voltage_to_current("rear", quantize(current_to_voltage("rear", i)))
    assert np.max(np.abs(back - i)) < 0.05


def test_iv_monotone_on_random_pairs():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(0, 60, (2, 1000))
    va, vb = current_to_voltage("rear", a), current_to_voltage("rear", b)
    assert np.all((a < b) == (va < vb))


def test_out_of_range_current_rejected():
    with pytest.raises(RangeError):
        current_to_voltage("phase", 12.5)
    with pytest.raises(RangeError):
        current_to_voltage("rear", -1.0)
    with pytest.raises(KeyError):
        current_to_voltage("gain", 1.0)


def test_extraction_region_gives_negative_current():
    assert voltage_to_current("rear", 0.3) < 0


@settings(max_examples=100, deadline=None)
@given(st.floats(AWG_FULL_SCALE[0], AWG_FULL_SCALE[1]))
def test_quantisation_within_half_lsb(v):
    assert abs(float(quantize(v)) - v) <= lsb_volts() / 2 + 1e-12


def test_pair_one_routing():
    r = front_pair_encoding(1)
    assert (r.odd_grating, r.even_grating) == (1, 2)
    assert r.held_path == "front_odd" and r.scaled_path == "front_even"


def test_encoding_table():
    # (pair) -> (D1, D2, D3, D4), even gratings on D1D2, odd on D3D4
    table = {1: (0, 0, 0, 0), 2: (0, 0, 0, 1), 3: (0, 1, 0, 1), 4: (0, 1, 1, 0),
             5: (1, 0, 1, 0), 6: (1, 0, 1, 1), 7: (1, 1, 1, 1)}
    for pair, sel in table.items():
        r = front_pair_encoding(pair)
        assert r.select == sel
        assert {r.even_grating, r.odd_grating} == {pair, pair + 1}
        assert decode_select(sel) == pair


def test_pair_four_gratings():
    r = front_pair_encoding(4)
    assert (r.even_grating, r.odd_grating) == (4, 5)
    assert r.held_path == "front_even"


def test_pair_out_of_range():
    with pytest.raises(RangeError):
        front_pair_encoding(8)
    with pytest.raises(RangeError):
        front_pair_encoding(0)
    with pytest.raises(RangeError):
        decode_select((0, 0, 1, 1))


def test_channel_currents_hold_and_scale():
    cur = channel_currents(SRC)  # pair 2: grating 2 held on even, 3 scaled on odd
    assert cur["front_even"] == FRONT_HOLD_CURRENT
    assert cur["front_odd"] == 2.5


def test_zero_weights_are_identity():
    plain = synthesize((SRC, DST))
    w = PreEmphasisWeights.zeros(4, section="rear", edge="falling")
    assert all(np.array_equal(plain.samples[s], synthesize((SRC, DST), w).samples[s]) for s in SECTIONS)


def test_unit_phase_weights_are_identity():
    plain = synthesize((SRC, DST))
    w = PreEmphasisWeights.ones(4, edge="falling")
    assert np.array_equal(plain.samples["phase"], synthesize((SRC, DST), None, w).samples["phase"])


def test_rear_pre_emphasis_arithmetic():
    h = np.array([0.3, 0.1, -0.05, 0.02])
    w = PreEmphasisWeights(h, "additive", "rear", "falling")
    d = synthesize((SRC, DST), w)
    v_src = current_to_voltage("rear", 47.0)
    v_dst = current_to_voltage("rear", 2.0)
    dv = v_dst - v_src
    assert d.delta_v["rear"] == pytest.approx(dv)
    for e in d.switch_indices():
        expected = quantize(v_dst + dv * h)
        assert np.array_equal(d.samples["rear"][e:e + 4], expected)
        assert np.all(d.samples["rear"][e + 4:e + 25] == quantize(v_dst))
    assert not d.clamped


def test_phase_weights_scale_samples():
    h = np.array([1.25, 1.2, 0.9, 1.0])
    d = synthesize((SRC, DST), None, PreEmphasisWeights(h, "multiplicative", "phase", "falling"))
    v = current_to_voltage("phase", 3.0)
    e = d.switch_indices()[0]
    assert np.array_equal(d.samples["phase"][e:e + 4], quantize(v * h))


def test_clamp_is_flagged():
    w = PreEmphasisWeights(np.array([3.0, 3.0]), "additive", "rear", "rising")
    d = synthesize((DST, SRC), w)
    assert d.clamped and d.clamp_sections == ("rear",)
    assert d.samples["rear"].max() <= current_to_voltage("rear", 60.0) + lsb_volts()


def test_plateaus_map_back_to_channel_currents():
    d = synthesize((SRC, DST))
    spb = d.samples_per_burst
    for ch, k in ((SRC, 0), (DST, 1)):
        cur = channel_currents(ch)
        for s in SECTIONS:
            assert abs(voltage_to_current(s, d.samples[s][k * spb + 10]) - cur[s]) < 0.05


def test_layout_and_select_lines():
    d = synthesize((SRC, DST), n_bursts=32)
    assert d.n_samples == 800 and d.samples_per_burst == 25 and d.n_bursts == 32
    assert d.duration == pytest.approx(3200.0)
    changes = np.nonzero(np.any(np.diff(d.select, axis=0) != 0, axis=1))[0] + 1
    assert np.all(changes % d.samples_per_burst == 0)
    assert set(np.unique(d.front_pair)) == {2, 4}
    assert np.array_equal(d.switch_indices(), np.arange(1, 32, 2) * 25)


def test_synthesize_is_deterministic():
    w = PreEmphasisWeights(np.array([0.2, 0.1]), "additive", "rear", "rising")
    a, b = synthesize((DST, SRC), w), synthesize((DST, SRC), w)
    assert all(np.array_equal(a.samples[s], b.samples[s]) for s in SECTIONS)


def test_invalid_weights_rejected():
    with pytest.raises(ValueError):
        PreEmphasisWeights(np.array([1.0, -0.1]), "multiplicative", "phase", "rising")
    with pytest.raises(ValueError):
        PreEmphasisWeights(np.zeros(2), "sideways")
    with pytest.raises(ValueError):
        synthesize((SRC, DST), PreEmphasisWeights.ones(4))
    with pytest.raises(ValueError):
        synthesize((SRC, DST), n_bursts=3)


def test_edge_direction():
    assert edge_direction(0.2) == "rising"
    assert edge_direction(-0.2) == "falling"


def test_export_files(tmp_path):
    paths = synthesize((SRC, DST), n_bursts=2).export(tmp_path)
    assert len(paths) == 5
    lines = (tmp_path / "drive_rear.csv").read_text().splitlines()
    assert lines[0] == "sample_index,volts" and len(lines) == 51
