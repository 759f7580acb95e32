import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsense import flowgraph as fg
from flowsense.flowgraph import (
    Dataset,
    Edge,
    FlowsheetTopology,
    Node,
    SensorBinding,
    SensorKind,
    SnapshotFrame,
    UnitKind,
)


def two_node(extra_sensors=()):
    return FlowsheetTopology(
        "tiny",
        (Node("F", UnitKind.FEED), Node("V", UnitKind.FLASH_VESSEL)),
        (Edge("s1", "F", "V"),),
        (SensorBinding("s1.F", "s1", SensorKind.FLOW), *extra_sensors),
    )


def toy_dataset(n=10, fractions=(0.8, 0.1, 0.1)):
    t = two_node((SensorBinding("V.L", "V", SensorKind.LEVEL),))
    frames = tuple(SnapshotFrame(36.0 * i, {"s1.F": 1.0 + i, "V.L": 0.5}, 0.1 * i) for i in range(n))
    return Dataset(t, frames, fractions)


# -- enums and validation


def test_enum_indices():
    assert [k.name for k in UnitKind] == [
        "FEED", "PRODUCT", "COMPRESSOR", "FLASH_VESSEL", "HEATER_COOLER", "REACTOR", "MIXER", "PURGE_SPLITTER",
    ]
    assert [int(k) for k in UnitKind] == list(range(8))
    assert len(SensorKind) == 7 and [int(k) for k in SensorKind] == list(range(7))


def test_valid_two_node_graph():
    assert fg.validate_topology(two_node()) == []


def test_unknown_endpoint_reported():
    t = FlowsheetTopology("bad", (Node("F", UnitKind.FEED),), (Edge("s1", "F", "X"),), ())
    errors = fg.validate_topology(t)
    assert any("unknown endpoint X" in e for e in errors)
    with pytest.raises(fg.FlowgraphError):
        fg.check_topology(t)


def test_duplicate_sensor_kind_reported():
    t = two_node((SensorBinding("s1.T", "s1", SensorKind.TEMPERATURE), SensorBinding("s1.T2", "s1", SensorKind.TEMPERATURE)))
    assert any("duplicate sensor kind at location" in e for e in fg.validate_topology(t))


def test_duplicate_ids_and_missing_location_reported():
    t = FlowsheetTopology(
        "dup",
        (Node("F", UnitKind.FEED), Node("F", UnitKind.PRODUCT)),
        (Edge("s", "F", "F"), Edge("s", "F", "F")),
        (SensorBinding("x", "nowhere", SensorKind.FLOW),),
    )
    errors = fg.validate_topology(t)
    assert len(errors) >= 3


# -- encoding


def test_reactor_without_sensors_is_pure_one_hot():
    t = FlowsheetTopology("r", (Node("R", UnitKind.REACTOR),), (), ())
    row = fg.encode_node_features(t, SnapshotFrame(0.0, {}))[0]
    expected = np.zeros(22)
    expected[5] = 1.0
    assert np.array_equal(row, expected)


def test_flash_level_slot():
    t = two_node((SensorBinding("V.L", "V", SensorKind.LEVEL),))
    row = fg.encode_node_features(t, SnapshotFrame(0.0, {"V.L": 0.5, "s1.F": 1.0}))[1]
    assert row[3] == 1.0 and row[:8].sum() == 1.0
    assert row[8 + 3] == 0.5 and row[15 + 3] == 1.0
    assert row[8:15].sum() == 0.5 and row[15:].sum() == 1.0


def test_all_kinds_present_gives_full_mask():
    sensors = tuple(SensorBinding(f"V.{k.name}", "V", k) for k in SensorKind)
    t = two_node(sensors)
    readings = {s.sensor_id: 1.0 for s in sensors}
    row = fg.encode_node_features(t, SnapshotFrame(0.0, readings))[1]
    assert np.array_equal(row[15:], np.ones(7))


def test_edge_slots_and_zero_reading_mask():
    t = two_node((SensorBinding("s1.T", "s1", SensorKind.TEMPERATURE), SensorBinding("s1.P", "s1", SensorKind.PRESSURE)))
    row = fg.encode_edge_features(t, SnapshotFrame(0.0, {"s1.F": 2.0, "s1.T": 300.0}))[0]
    assert row[0] == 2.0 and row[1] == 300.0 and row[7] == 1.0 and row[8] == 1.0
    assert row[2:7].sum() == 0 and row[9:].sum() == 0
    row = fg.encode_edge_features(t, SnapshotFrame(0.0, {"s1.P": 0.0}))[0]
    assert row[2] == 0.0 and row[9] == 1.0


def test_unsensored_stream_is_zero():
    t = FlowsheetTopology("t", (Node("a", UnitKind.FEED), Node("b", UnitKind.PRODUCT)), (Edge("e", "a", "b"),), ())
    assert np.array_equal(fg.encode_edge_features(t, SnapshotFrame(0.0, {})), np.zeros((1, 14)))


def test_unknown_reading_rejected():
    with pytest.raises(fg.FlowgraphError):
        fg.encode_node_features(two_node(), SnapshotFrame(0.0, {"ghost": 1.0}))


def test_target_sensor_never_encoded():
    t = FlowsheetTopology(
        "t",
        (Node("a", UnitKind.FEED), Node("b", UnitKind.PRODUCT)),
        (Edge("e", "a", "b"),),
        (SensorBinding("e.F", "e", SensorKind.FLOW), SensorBinding("e.X", "e", SensorKind.COMPOSITION)),
        target="e.X",
    )
    ef = fg.encode_edge_features(t, SnapshotFrame(0.0, {"e.F": 1.0, "e.X": 0.9}))
    assert ef[0, int(SensorKind.COMPOSITION)] == 0.0 and ef[0, 7 + int(SensorKind.COMPOSITION)] == 0.0


def test_batch_encoder_matches_single_frame(data_a):
    frames = data_a.frames[:4]
    nf, ef = fg.encode_frames(data_a.topology, frames)
    for i, f in enumerate(frames):
        assert np.array_equal(nf[i], fg.encode_node_features(data_a.topology, f))
        assert np.array_equal(ef[i], fg.encode_edge_features(data_a.topology, f))


def test_mask_zero_implies_value_zero(data_a):
    nf, ef = fg.encode_frames(data_a.topology, data_a.frames[:20])
    assert np.all(nf[..., 8:15][nf[..., 15:] == 0] == 0)
    assert np.all(ef[..., :7][ef[..., 7:] == 0] == 0)


def test_node_permutation_permutes_rows():
    t = FlowsheetTopology(
        "p",
        (Node("a", UnitKind.FEED), Node("b", UnitKind.MIXER), Node("c", UnitKind.PRODUCT)),
        (Edge("e1", "a", "b"), Edge("e2", "b", "c")),
        (SensorBinding("b.T", "b", SensorKind.TEMPERATURE),),
    )
    perm = [2, 0, 1]
    tp = FlowsheetTopology("p", tuple(t.nodes[i] for i in perm), t.edges, t.sensors)
    f = SnapshotFrame(0.0, {"b.T": 5.0})
    assert np.array_equal(fg.encode_node_features(t, f)[perm], fg.encode_node_features(tp, f))


# -- log scaling


def test_log_scale_examples():
    assert fg.log_scale(0.0) == 0.0
    assert math.isclose(fg.log_scale(math.e - 1), 1.0, rel_tol=0, abs_tol=1e-15)
    assert math.isclose(fg.log_scale(-(math.e - 1)), -1.0, rel_tol=0, abs_tol=1e-15)


@given(st.floats(min_value=-1e12, max_value=1e12, allow_nan=False), st.floats(min_value=-1e12, max_value=1e12, allow_nan=False))
def test_log_scale_odd_and_monotone(a, b):
    assert fg.log_scale(-a) == -fg.log_scale(a)
    if a < b:
        assert fg.log_scale(a) <= fg.log_scale(b)


def test_scale_features_leaves_one_hot_and_mask():
    nf = np.zeros((1, 1, 22))
    nf[0, 0, 3] = 1.0
    nf[0, 0, 8] = math.e - 1
    nf[0, 0, 15] = 1.0
    ef = np.zeros((1, 1, 14))
    ef[0, 0, 0] = math.e - 1
    ef[0, 0, 7] = 1.0
    snf, sef = fg.scale_features(nf, ef)
    assert snf[0, 0, 3] == 1.0 and snf[0, 0, 15] == 1.0 and math.isclose(snf[0, 0, 8], 1.0)
    assert sef[0, 0, 7] == 1.0 and math.isclose(sef[0, 0, 0], 1.0)


# -- windows and splits


def test_window_counts():
    assert len(fg.assemble_windows(toy_dataset(5), 5)) == 1
    assert len(fg.assemble_windows(toy_dataset(3), 5)) == 0
    w = fg.assemble_windows(toy_dataset(10), 5)
    assert len(w) == 6
    assert [f.time for f in w[0].frames] == [0.0, 36.0, 72.0, 108.0, 144.0]
    assert w[-1].target == pytest.approx(0.9)


@settings(max_examples=30)
@given(st.integers(min_value=0, max_value=60), st.integers(min_value=1, max_value=8))
def test_window_count_property(n, L):
    d = toy_dataset(n, (1, 1, 1)) if n else Dataset(two_node(), (), (1, 1, 1))
    assert len(fg.assemble_windows(d, L)) == max(0, n - L + 1)


def test_window_count_for_full_scenario_length():
    t = two_node()
    frames = tuple(SnapshotFrame(float(i), {}, 0.0) for i in range(8000))
    assert len(fg.assemble_windows(Dataset(t, frames), 5)) == 7996


def test_split_examples():
    assert fg.chronological_split(toy_dataset(100)) == [(0, 80), (80, 90), (90, 100)]
    assert fg.chronological_split(toy_dataset(10, (0.5, 0.25, 0.25))) == [(0, 5), (5, 7), (7, 10)]
    d = toy_dataset(12, (8, 2, 2))
    assert fg.normalize_fractions(d.split_fractions) == pytest.approx((2 / 3, 1 / 6, 1 / 6))
    assert fg.chronological_split(d) == [(0, 8), (8, 10), (10, 12)]


def test_split_empty_range_is_error():
    with pytest.raises(fg.FlowgraphError):
        fg.chronological_split(toy_dataset(3))


@given(st.integers(min_value=10, max_value=5000), st.floats(0.05, 1), st.floats(0.05, 1), st.floats(0.05, 1))
def test_split_partitions(n, a, b, c):
    d = Dataset(two_node(), tuple(SnapshotFrame(float(i), {}) for i in range(n)), (a, b, c))
    try:
        ranges = fg.chronological_split(d)
    except fg.FlowgraphError:
        return
    assert ranges[0][0] == 0 and ranges[-1][1] == n
    assert ranges[0][1] == ranges[1][0] and ranges[1][1] == ranges[2][0]


def test_dataset_rejects_unordered_frames():
    with pytest.raises(ValueError):
        Dataset(two_node(), (SnapshotFrame(1.0, {}), SnapshotFrame(0.0, {})))


# -- serialization


def test_round_trip(tmp_path, data_a):
    p = tmp_path / "a.json"
    fg.save_dataset(data_a, p)
    back = fg.load_dataset(p)
    assert back == data_a
    assert fg.dumps_dataset(back) == p.read_text()


def test_unknown_version_rejected():
    doc = fg.dataset_to_dict(toy_dataset())
    doc["version"] = "flowsense-dataset/999"
    with pytest.raises(fg.FlowgraphError, match="version"):
        fg.dataset_from_dict(doc)


def test_unbound_sensor_rejected():
    doc = fg.dataset_to_dict(toy_dataset())
    doc["frames"][0]["readings"]["ghost"] = 1.0
    with pytest.raises(fg.FlowgraphError, match="unbound"):
        fg.dataset_from_dict(doc)


def test_malformed_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(fg.FlowgraphError):
        fg.load_dataset(p)
    p.write_text(json.dumps({"version": fg.SCHEMA_VERSION}))
    with pytest.raises(fg.FlowgraphError):
        fg.load_dataset(p)


def test_csv_export(tmp_path):
    d = toy_dataset(4)
    p = tmp_path / "f.csv"
    fg.export_frames_csv(d, p)
    lines = p.read_text().splitlines()
    assert lines[0].split(",")[0] == "t" and lines[0].split(",")[-1] == "target"
    assert len(lines) == 5
