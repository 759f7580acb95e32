"""Flowsheet graphs, sensor snapshots, feature encoding and dataset I/O.

A plant is a directed graph: unit operations are nodes, material streams are
edges pointing along the flow.  Sensors are bound to a node or an edge and
carry one of a fixed vocabulary of kinds, so every plant encodes into rows of
the same width no matter how many units or streams it has.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

SCHEMA_VERSION = "flowsense-dataset/1"


class UnitKind(enum.IntEnum):
    FEED = 0
    PRODUCT = 1
    COMPRESSOR = 2
    FLASH_VESSEL = 3
    HEATER_COOLER = 4
    REACTOR = 5
    MIXER = 6
    PURGE_SPLITTER = 7


class SensorKind(enum.IntEnum):
    FLOW = 0
    TEMPERATURE = 1
    PRESSURE = 2
    LEVEL = 3
    COMPOSITION = 4
    DUTY = 5
    POWER = 6


N_UNIT_KINDS = len(UnitKind)
N_SENSOR_KINDS = len(SensorKind)
NODE_FEAT_DIM = N_UNIT_KINDS + 2 * N_SENSOR_KINDS
EDGE_FEAT_DIM = 2 * N_SENSOR_KINDS


class FlowgraphError(ValueError):
    """Raised for malformed topologies, frames or dataset files."""


@dataclass(frozen=True)
class Node:
    node_id: str
    kind: UnitKind


@dataclass(frozen=True)
class Edge:
    edge_id: str
    src: str
    dst: str


@dataclass(frozen=True)
class SensorBinding:
    sensor_id: str
    location: str
    kind: SensorKind


@dataclass(frozen=True)
class FlowsheetTopology:
    """Directed flowsheet graph with sensor bindings.

    ``target`` names the sensor that measures the soft-sensor quantity.  It is
    bound like any other sensor (so it can be validated and documented) but is
    never written into input feature matrices.
    """

    name: str
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    sensors: tuple[SensorBinding, ...]
    target: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "sensors", tuple(self.sensors))

    @property
    def node_index(self) -> dict[str, int]:
        return {n.node_id: i for i, n in enumerate(self.nodes)}

    @property
    def edge_index(self) -> dict[str, int]:
        return {e.edge_id: i for i, e in enumerate(self.edges)}

    @property
    def sensor_map(self) -> dict[str, SensorBinding]:
        return {s.sensor_id: s for s in self.sensors}

    @property
    def input_sensors(self) -> tuple[SensorBinding, ...]:
        return tuple(s for s in self.sensors if s.sensor_id != self.target)

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) node indices, one entry per edge."""
        idx = self.node_index
        src = np.array([idx[e.src] for e in self.edges], dtype=np.int64)
        dst = np.array([idx[e.dst] for e in self.edges], dtype=np.int64)
        return src, dst

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "nodes": [{"id": n.node_id, "kind": n.kind.name} for n in self.nodes],
            "edges": [{"id": e.edge_id, "src": e.src, "dst": e.dst} for e in self.edges],
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, topo: Mapping, sensors: Sequence[Mapping]) -> "FlowsheetTopology":
        try:
            return cls(
                name=topo["name"],
                nodes=tuple(Node(n["id"], UnitKind[n["kind"]]) for n in topo["nodes"]),
                edges=tuple(Edge(e["id"], e["src"], e["dst"]) for e in topo["edges"]),
                sensors=tuple(
                    SensorBinding(s["id"], s["location"], SensorKind[s["kind"]]) for s in sensors
                ),
                target=topo.get("target"),
            )
        except (KeyError, TypeError) as exc:
            raise FlowgraphError(f"malformed topology section: {exc!r}") from exc


def validate_topology(t: FlowsheetTopology) -> list[str]:
    """Return every invariant violation found in ``t`` (empty list means ok)."""
    errors = []
    node_ids = [n.node_id for n in t.nodes]
    edge_ids = [e.edge_id for e in t.edges]
    for dup in sorted({x for x in node_ids if node_ids.count(x) > 1}):
        errors.append(f"duplicate node id {dup}")
    for dup in sorted({x for x in edge_ids if edge_ids.count(x) > 1}):
        errors.append(f"duplicate edge id {dup}")
    nodes = set(node_ids)
    for e in t.edges:
        for end in (e.src, e.dst):
            if end not in nodes:
                errors.append(f"unknown endpoint {end}")
    locations = nodes | set(edge_ids)
    overlap = nodes & set(edge_ids)
    for x in sorted(overlap):
        errors.append(f"id {x} used for both a node and an edge")
    seen_ids = set()
    seen_slots = set()
    for s in t.sensors:
        if s.sensor_id in seen_ids:
            errors.append(f"duplicate sensor id {s.sensor_id}")
        seen_ids.add(s.sensor_id)
        if s.location not in locations:
            errors.append(f"sensor {s.sensor_id} bound to unknown location {s.location}")
        slot = (s.location, s.kind)
        if slot in seen_slots:
            errors.append(f"duplicate sensor kind at location {s.location} ({s.kind.name})")
        seen_slots.add(slot)
    if t.target is not None and t.target not in seen_ids:
        errors.append(f"target sensor {t.target} is not bound")
    return errors


def check_topology(t: FlowsheetTopology) -> FlowsheetTopology:
    errors = validate_topology(t)
    if errors:
        raise FlowgraphError("; ".join(errors))
    return t


@dataclass(frozen=True)
class SnapshotFrame:
    time: float
    readings: Mapping[str, float]
    target: float | None = None


@dataclass(frozen=True)
class GraphSample:
    topology: FlowsheetTopology
    frames: tuple[SnapshotFrame, ...]
    target: float


def _slot_layout(t: FlowsheetTopology):
    """Map input sensor ids to (is_node, row, kind) triples."""
    nidx, eidx = t.node_index, t.edge_index
    layout = {}
    for s in t.input_sensors:
        if s.location in nidx:
            layout[s.sensor_id] = (True, nidx[s.location], int(s.kind))
        else:
            layout[s.sensor_id] = (False, eidx[s.location], int(s.kind))
    return layout


def _encode(t: FlowsheetTopology, f: SnapshotFrame):
    sensors = t.sensor_map
    layout = _slot_layout(t)
    node_vals = np.zeros((len(t.nodes), 2 * N_SENSOR_KINDS))
    edge_vals = np.zeros((len(t.edges), 2 * N_SENSOR_KINDS))
    for sid, value in f.readings.items():
        if sid not in sensors:
            raise FlowgraphError(f"reading for unknown sensor {sid}")
        if sid not in layout:  # target sensor: never an input
            continue
        is_node, row, k = layout[sid]
        block = node_vals if is_node else edge_vals
        block[row, k] = value
        block[row, N_SENSOR_KINDS + k] = 1.0
    return node_vals, edge_vals


def unit_one_hot(t: FlowsheetTopology) -> np.ndarray:
    onehot = np.zeros((len(t.nodes), N_UNIT_KINDS))
    onehot[np.arange(len(t.nodes)), [int(n.kind) for n in t.nodes]] = 1.0
    return onehot


def encode_node_features(t: FlowsheetTopology, f: SnapshotFrame) -> np.ndarray:
    """Node rows ``[one-hot kind (8) | sensor values (7) | presence mask (7)]``."""
    node_vals, _ = _encode(t, f)
    return np.concatenate([unit_one_hot(t), node_vals], axis=1)


def encode_edge_features(t: FlowsheetTopology, f: SnapshotFrame) -> np.ndarray:
    """Edge rows ``[sensor values (7) | presence mask (7)]``."""
    return _encode(t, f)[1]


def encode_frames(t: FlowsheetTopology, frames: Sequence[SnapshotFrame]) -> tuple[np.ndarray, np.ndarray]:
    """Stack node and edge features for many frames: ``(T, N, 22)`` and ``(T, E, 14)``.

    Row-for-row identical to calling the single-frame encoders in a loop.
    """
    sensors = t.sensor_map
    layout = _slot_layout(t)
    nf = np.zeros((len(frames), len(t.nodes), NODE_FEAT_DIM))
    ef = np.zeros((len(frames), len(t.edges), EDGE_FEAT_DIM))
    nf[:, :, :N_UNIT_KINDS] = unit_one_hot(t)
    for i, f in enumerate(frames):
        for sid, value in f.readings.items():
            if sid not in sensors:
                raise FlowgraphError(f"reading for unknown sensor {sid}")
            slot = layout.get(sid)
            if slot is None:
                continue
            is_node, row, k = slot
            if is_node:
                nf[i, row, N_UNIT_KINDS + k] = value
                nf[i, row, N_UNIT_KINDS + N_SENSOR_KINDS + k] = 1.0
            else:
                ef[i, row, k] = value
                ef[i, row, N_SENSOR_KINDS + k] = 1.0
    return nf, ef


def log_scale(x):
    """Signed log transform ``sign(x) * ln(1 + |x|)``; odd, monotone, fixes 0."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.log1p(np.abs(x))


def scale_features(node_feats: np.ndarray, edge_feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply :func:`log_scale` to the sensor value slots only (not one-hot, not masks)."""
    nf = node_feats.copy()
    ef = edge_feats.copy()
    v0 = N_UNIT_KINDS
    nf[..., v0 : v0 + N_SENSOR_KINDS] = log_scale(nf[..., v0 : v0 + N_SENSOR_KINDS])
    ef[..., :N_SENSOR_KINDS] = log_scale(ef[..., :N_SENSOR_KINDS])
    return nf, ef


@dataclass(frozen=True)
class Dataset:
    topology: FlowsheetTopology
    frames: tuple[SnapshotFrame, ...]
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        times = [f.time for f in self.frames]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise FlowgraphError("frames must be strictly increasing in time")
        fr = tuple(float(x) for x in self.split_fractions)
        if len(fr) != 3 or any(x <= 0 or not math.isfinite(x) for x in fr):
            raise FlowgraphError(f"split fractions must be three positive numbers, got {fr}")
        object.__setattr__(self, "split_fractions", fr)

    def __len__(self):
        return len(self.frames)

    @property
    def targets(self) -> np.ndarray:
        return np.array([np.nan if f.target is None else f.target for f in self.frames])

    def subset(self, start: int, stop: int) -> "Dataset":
        return Dataset(self.topology, self.frames[start:stop], self.split_fractions, self.meta)

    def split(self) -> tuple["Dataset", "Dataset", "Dataset"]:
        return tuple(self.subset(a, b) for a, b in chronological_split(self))


def assemble_windows(d: Dataset, L: int) -> list[GraphSample]:
    """All length-``L`` lookback windows; the newest frame carries the target."""
    if L < 1:
        raise ValueError("lookback must be >= 1")
    out = []
    for t in range(L - 1, len(d.frames)):
        frames = d.frames[t - L + 1 : t + 1]
        if frames[-1].target is None:
            raise FlowgraphError(f"frame {t} has no target")
        out.append(GraphSample(d.topology, frames, frames[-1].target))
    return out


def normalize_fractions(fractions: Sequence[float]) -> tuple[float, float, float]:
    total = float(sum(fractions))
    return tuple(float(x) / total for x in fractions)


def chronological_split(d: Dataset) -> list[tuple[int, int]]:
    """Contiguous ``[start, stop)`` ranges for train, validation and test.

    Boundaries sit at ``floor(N * cumulative_fraction)``; an empty split is an error.
    """
    n = len(d.frames)
    fr = normalize_fractions(d.split_fractions)
    # rounding first keeps e.g. 0.7 + 0.2 from flooring one frame short
    b1 = math.floor(round(n * fr[0], 9))
    b2 = math.floor(round(n * (fr[0] + fr[1]), 9))
    ranges = [(0, b1), (b1, b2), (b2, n)]
    if n > 0 and any(stop <= start for start, stop in ranges):
        raise FlowgraphError(f"split {fr} of {n} frames leaves an empty range: {ranges}")
    return ranges


# -- serialization ----------------------------------------------------------


def dataset_to_dict(d: Dataset) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "topology": d.topology.to_dict(),
        "sensors": [
            {"id": s.sensor_id, "location": s.location, "kind": s.kind.name}
            for s in d.topology.sensors
        ],
        "split_fractions": list(d.split_fractions),
        "meta": dict(d.meta),
        "frames": [
            {"t": f.time, "readings": dict(f.readings), "target": f.target} for f in d.frames
        ],
    }


def dataset_from_dict(doc: Mapping) -> Dataset:
    if not isinstance(doc, Mapping):
        raise FlowgraphError("dataset document must be a JSON object")
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        raise FlowgraphError(f"unsupported dataset version {version!r} (expected {SCHEMA_VERSION})")
    try:
        topo = check_topology(FlowsheetTopology.from_dict(doc["topology"], doc["sensors"]))
        bound = topo.sensor_map
        frames = []
        for i, raw in enumerate(doc["frames"]):
            readings = {str(k): float(v) for k, v in raw["readings"].items()}
            unknown = sorted(set(readings) - set(bound))
            if unknown:
                raise FlowgraphError(f"frame {i} references unbound sensor(s) {unknown}")
            target = raw.get("target")
            frames.append(SnapshotFrame(float(raw["t"]), readings, None if target is None else float(target)))
        return Dataset(topo, tuple(frames), tuple(doc["split_fractions"]), dict(doc.get("meta", {})))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FlowgraphError):
            raise
        raise FlowgraphError(f"malformed dataset document: {exc!r}") from exc


def dumps_dataset(d: Dataset) -> str:
    # repr-exact floats keep the round trip bit-identical
    return json.dumps(dataset_to_dict(d), separators=(",", ":"), allow_nan=False)


def save_dataset(d: Dataset, path: str | Path) -> None:
    Path(path).write_text(dumps_dataset(d), encoding="utf-8")


def load_dataset(path: str | Path) -> Dataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FlowgraphError(f"{path}: not valid JSON ({exc})") from exc
    return dataset_from_dict(doc)


def export_frames_csv(d: Dataset, path: str | Path) -> None:
    """Flat table of frames for inspection: ``t, <sensor ids...>, target``."""
    ids = [s.sensor_id for s in d.topology.sensors]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *ids, "target"])
        for f in d.frames:
            w.writerow([repr(f.time), *(repr(f.readings[i]) if i in f.readings else "" for i in ids),
                        "" if f.target is None else repr(f.target)])
