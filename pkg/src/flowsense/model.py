"""Spatio-temporal soft-sensor network.

Each snapshot of the plant graph is embedded by a message-passing network
(sum aggregation over incoming streams, residual node updates, mean readout).
The sequence of embeddings over the lookback window goes through a small
pre-norm transformer encoder, is averaged over time, and a three-layer MLP
maps the result to a scalar prediction in normalized target units.

Parameters are plain ``{name: ndarray}`` dicts.  Names carry their group as a
prefix (``gnn.``, ``tf.``, ``head.``) so fine-tuning can freeze by group.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from . import flowgraph as fg
from .neural import ArchiveError, glorot_uniform, load_tensors, save_tensors
from .neural import ops
from .neural.tensor import Tensor
from .rng import Xoshiro256

PARAM_GROUPS = ("gnn", "tf", "head")


@dataclass(frozen=True)
class ModelConfig:
    node_feat_dim: int = fg.NODE_FEAT_DIM
    edge_feat_dim: int = fg.EDGE_FEAT_DIM
    hidden_dim: int = 64
    mp_rounds: int = 2
    embed_dim: int = 64
    tf_layers: int = 2
    tf_heads: int = 4
    tf_model_dim: int = 64
    tf_ff_dim: int = 128
    lookback: int = 5
    head_hidden: int = 64

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1 and f.name not in ("mp_rounds", "tf_layers"):
                raise ValueError(f"{f.name} must be >= 1")
        if self.mp_rounds < 0 or self.tf_layers < 0:
            raise ValueError("mp_rounds and tf_layers must be >= 0")
        if self.tf_model_dim % self.tf_heads:
            raise ValueError("tf_model_dim must be divisible by tf_heads")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Reduced sizes for CPU experiments."""
        base = dict(hidden_dim=32, embed_dim=32, tf_model_dim=32, tf_ff_dim=64, head_hidden=32)
        base.update(overrides)
        return cls(**base)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, D = cfg.hidden_dim, cfg.tf_model_dim
    shapes: dict[str, tuple[int, ...]] = {
        "gnn.in.W": (cfg.node_feat_dim, H),
        "gnn.in.b": (H,),
    }
    for k in range(cfg.mp_rounds):
        shapes |= {
            f"gnn.msg{k}.W1": (2 * H + cfg.edge_feat_dim, H),
            f"gnn.msg{k}.b1": (H,),
            f"gnn.msg{k}.W2": (H, H),
            f"gnn.msg{k}.b2": (H,),
            f"gnn.upd{k}.W1": (2 * H, H),
            f"gnn.upd{k}.b1": (H,),
            f"gnn.upd{k}.W2": (H, H),
            f"gnn.upd{k}.b2": (H,),
        }
    shapes |= {"gnn.out.W": (H, cfg.embed_dim), "gnn.out.b": (cfg.embed_dim,)}
    shapes |= {"tf.in.W": (cfg.embed_dim, D), "tf.in.b": (D,)}
    for l in range(cfg.tf_layers):
        p = f"tf.{l}."
        shapes |= {
            p + "ln1.g": (D,), p + "ln1.b": (D,),
            p + "Wq": (D, D), p + "bq": (D,),
            p + "Wk": (D, D), p + "bk": (D,),
            p + "Wv": (D, D), p + "bv": (D,),
            p + "Wo": (D, D), p + "bo": (D,),
            p + "ln2.g": (D,), p + "ln2.b": (D,),
            p + "ff.W1": (D, cfg.tf_ff_dim), p + "ff.b1": (cfg.tf_ff_dim,),
            p + "ff.W2": (cfg.tf_ff_dim, D), p + "ff.b2": (D,),
        }
    shapes |= {"tf.lnf.g": (D,), "tf.lnf.b": (D,)}
    hh = cfg.head_hidden
    shapes |= {
        "head.W1": (D, hh), "head.b1": (hh,),
        "head.W2": (hh, hh), "head.b2": (hh,),
        "head.W3": (hh, 1), "head.b3": (1,),
    }
    return shapes


def param_group(name: str) -> str:
    return name.split(".", 1)[0]


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights from the seeded generator; zero biases, unit norm gains."""
    rng = Xoshiro256(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if len(shape) == 2:
            params[name] = glorot_uniform(rng, shape[0], shape[1])
        elif leaf == "g":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def zero_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    return {k: np.zeros(s) for k, s in param_shapes(cfg).items()}


def positional_table(L: int, d: int) -> np.ndarray:
    """Fixed sinusoidal encodings, one row per window position."""
    pos = np.arange(L)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class GraphStructure:
    """Dense gather/scatter operators for one topology.

    ``src_sel @ h`` picks source-node rows per edge, ``dst_sel @ h`` picks
    destination rows and ``scatter @ m`` sums edge messages into their
    destination nodes.
    """

    def __init__(self, src, dst, n_nodes: int):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if src.shape != dst.shape or src.ndim != 1:
            raise ValueError("src and dst must be 1-D arrays of equal length")
        for arr in (src, dst):
            if arr.size and (arr.min() < 0 or arr.max() >= n_nodes):
                raise IndexError(f"edge index out of range for {n_nodes} nodes: {arr.tolist()}")
        E = src.size
        self.n_nodes, self.n_edges = n_nodes, E
        self.src_sel = np.zeros((E, n_nodes))
        self.dst_sel = np.zeros((E, n_nodes))
        self.src_sel[np.arange(E), src] = 1.0
        self.dst_sel[np.arange(E), dst] = 1.0
        self.scatter = self.dst_sel.T.copy()

    @classmethod
    def of(cls, t: fg.FlowsheetTopology) -> "GraphStructure":
        src, dst = t.edge_arrays()
        return cls(src, dst, len(t.nodes))


def _linear(x, P, prefix, w="W", b="b"):
    return ops.add(ops.matmul(x, P[f"{prefix}.{w}"]), P[f"{prefix}.{b}"])


def _two_layer(x, P, prefix):
    hid = ops.tanh(_linear(x, P, prefix, "W1", "b1"))
    return _linear(hid, P, prefix, "W2", "b2")


def _as_tensors(params: Mapping) -> dict[str, Tensor]:
    return {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}


def embed_graphs(cfg: ModelConfig, P: Mapping[str, Tensor], graph: GraphStructure, node_feats, edge_feats) -> Tensor:
    """Flowsheet embeddings for a stack of snapshots: ``(S, N, F)`` -> ``(S, embed_dim)``."""
    x = ops.as_tensor(node_feats)
    e = ops.as_tensor(edge_feats)
    if x.value.ndim != 3 or x.shape[1] != graph.n_nodes or x.shape[2] != cfg.node_feat_dim:
        raise ValueError(f"node features {x.shape} do not match graph with {graph.n_nodes} nodes")
    if e.value.ndim != 3 or e.shape[1] != graph.n_edges or e.shape[2] != cfg.edge_feat_dim:
        raise ValueError(f"edge features {e.shape} do not match graph with {graph.n_edges} edges")
    h = _linear(x, P, "gnn.in")
    for k in range(cfg.mp_rounds):
        hs = ops.matmul(graph.src_sel, h)
        hd = ops.matmul(graph.dst_sel, h)
        msg = _two_layer(ops.concat([hs, hd, e], axis=-1), P, f"gnn.msg{k}")
        agg = ops.matmul(graph.scatter, msg)
        h = ops.add(h, _two_layer(ops.concat([h, agg], axis=-1), P, f"gnn.upd{k}"))
    return _linear(ops.mean(h, axis=1), P, "gnn.out")


def embed_snapshot(cfg: ModelConfig, params: Mapping, node_feats, edge_feats, edges) -> np.ndarray:
    """Embedding of one snapshot; ``edges`` is a ``(src, dst)`` pair of index arrays."""
    node_feats = np.asarray(node_feats, dtype=np.float64)
    graph = GraphStructure(edges[0], edges[1], node_feats.shape[0])
    out = embed_graphs(cfg, _as_tensors(params), graph, node_feats[None], np.asarray(edge_feats)[None])
    return out.value[0]


def _attention(cfg, P, x, prefix):
    B, L, D = x.shape
    nh = cfg.tf_heads
    dk = D // nh

    def heads(t, axes):
        return ops.transpose(ops.reshape(t, (B, L, nh, dk)), axes)

    q = heads(_linear(x, P, prefix, "Wq", "bq"), (0, 2, 1, 3))
    kT = heads(_linear(x, P, prefix, "Wk", "bk"), (0, 2, 3, 1))
    v = heads(_linear(x, P, prefix, "Wv", "bv"), (0, 2, 1, 3))
    att = ops.softmax(ops.scale(ops.matmul(q, kT), 1.0 / math.sqrt(dk)), axis=-1)
    o = ops.reshape(ops.transpose(ops.matmul(att, v), (0, 2, 1, 3)), (B, L, D))
    return _linear(o, P, prefix, "Wo", "bo")


def _norm(x, P, prefix):
    return ops.add(ops.mul(ops.layer_norm(x), P[prefix + ".g"]), P[prefix + ".b"])


def forward_windows(
    cfg: ModelConfig,
    params: Mapping,
    graph: GraphStructure,
    frame_nf: np.ndarray,
    frame_ef: np.ndarray,
    window_idx: np.ndarray,
    positional: bool = True,
) -> Tensor:
    """Predictions for windows given as rows of frame indices.

    Each distinct snapshot in ``frame_nf``/``frame_ef`` (``(F, N, .)``, log-scaled)
    is embedded once; ``window_idx`` (``(B, L)``, oldest first) then selects the
    embeddings that make up each window.  Returns shape ``(B,)``.
    """
    P = _as_tensors(params)
    window_idx = np.asarray(window_idx, dtype=np.int64)
    B, L = window_idx.shape
    if L != cfg.lookback:
        raise ValueError(f"expected {cfg.lookback} frames per window, got {L}")
    return temporal_head(cfg, P, embed_graphs(cfg, P, graph, frame_nf, frame_ef), window_idx, positional)


def temporal_head(cfg: ModelConfig, params: Mapping, emb, window_idx: np.ndarray, positional: bool = True) -> Tensor:
    """Transformer, time averaging and MLP head applied to per-frame embeddings ``emb`` (``(F, d_g)``)."""
    P = _as_tensors(params)
    window_idx = np.asarray(window_idx, dtype=np.int64)
    B, L = window_idx.shape
    z = _linear(ops.take(emb, window_idx), P, "tf.in")
    if positional:
        z = ops.add(z, positional_table(L, cfg.tf_model_dim))
    for l in range(cfg.tf_layers):
        p = f"tf.{l}"
        z = ops.add(z, _attention(cfg, P, _norm(z, P, p + ".ln1"), p))
        ff = _norm(z, P, p + ".ln2")
        ff = _linear(ops.tanh(_linear(ff, P, p + ".ff", "W1", "b1")), P, p + ".ff", "W2", "b2")
        z = ops.add(z, ff)
    pooled = ops.mean(_norm(z, P, "tf.lnf"), axis=1)
    hid = ops.tanh(_linear(pooled, P, "head", "W1", "b1"))
    hid = ops.tanh(_linear(hid, P, "head", "W2", "b2"))
    out = _linear(hid, P, "head", "W3", "b3")
    return ops.reshape(out, (B,))


def forward_batch(cfg, params, graph, node_feats, edge_feats, positional: bool = True) -> Tensor:
    """Predictions for stacked windows ``(B, L, N, .)`` / ``(B, L, E, .)``."""
    B, L = node_feats.shape[:2]
    return forward_windows(
        cfg, params, graph,
        node_feats.reshape((B * L,) + node_feats.shape[2:]),
        edge_feats.reshape((B * L,) + edge_feats.shape[2:]),
        np.arange(B * L).reshape(B, L),
        positional=positional,
    )


class EncodedSeries:
    """Log-scaled feature tensors for a run of frames on one topology."""

    def __init__(self, topology: fg.FlowsheetTopology, frames):
        nf, ef = fg.encode_frames(topology, frames)
        self.node_feats, self.edge_feats = fg.scale_features(nf, ef)
        self.times = np.array([f.time for f in frames], dtype=np.float64)
        self.targets = np.array([np.nan if f.target is None else f.target for f in frames])
        self.graph = GraphStructure.of(topology)

    def __len__(self):
        return len(self.times)

    def n_windows(self, L: int) -> int:
        return max(0, len(self) - L + 1)

    def window_batch(self, ends: np.ndarray, L: int) -> tuple[np.ndarray, np.ndarray]:
        """Stacked features ``(B, L, .)`` for windows ending at frame indices ``ends``."""
        idx = np.asarray(ends)[:, None] + np.arange(-L + 1, 1)[None, :]
        return self.node_feats[idx], self.edge_feats[idx]

    def window_frames(self, ends: np.ndarray, L: int):
        """Distinct frames used by the windows ending at ``ends``.

        Returns ``(node_feats, edge_feats, window_idx)`` suitable for
        :func:`forward_windows`.
        """
        idx = np.asarray(ends)[:, None] + np.arange(-L + 1, 1)[None, :]
        uniq, inverse = np.unique(idx, return_inverse=True)
        return self.node_feats[uniq], self.edge_feats[uniq], inverse.reshape(idx.shape)


def predict_windows(cfg: ModelConfig, params: Mapping, series: EncodedSeries, ends=None, chunk: int = 512) -> np.ndarray:
    L = cfg.lookback
    if ends is None:
        ends = np.arange(L - 1, len(series))
    ends = np.asarray(ends, dtype=np.int64)
    P = _as_tensors(params)
    out = np.empty(len(ends))
    for i in range(0, len(ends), chunk):
        nf, ef, widx = series.window_frames(ends[i : i + chunk], L)
        out[i : i + chunk] = forward_windows(cfg, P, series.graph, nf, ef, widx).value
    return out


def forward(cfg: ModelConfig, params: Mapping, sample: fg.GraphSample, positional: bool = True) -> float:
    """Prediction for one lookback window (normalized target units)."""
    if len(sample.frames) != cfg.lookback:
        raise ValueError(f"expected {cfg.lookback} frames, got {len(sample.frames)}")
    series = EncodedSeries(sample.topology, sample.frames)
    nf, ef = series.window_batch(np.array([cfg.lookback - 1]), cfg.lookback)
    return float(forward_batch(cfg, params, series.graph, nf, ef, positional=positional).value[0])


def predict_series(cfg: ModelConfig, params: Mapping, split: fg.Dataset) -> list[tuple[float, float]]:
    """``(t, y_hat)`` for every window of ``split``, stamped with the newest frame's time."""
    if len(split) < cfg.lookback:
        raise ValueError(f"split has {len(split)} frames, need at least {cfg.lookback}")
    series = EncodedSeries(split.topology, split.frames)
    preds = predict_windows(cfg, params, series)
    return list(zip(series.times[cfg.lookback - 1 :].tolist(), preds.tolist()))


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(path: str | Path, cfg: ModelConfig, params: Mapping[str, np.ndarray], extra: Mapping | None = None) -> None:
    meta = {"model_config": asdict(cfg)}
    if extra:
        meta["extra"] = dict(extra)
    save_tensors(path, {k: params[k] for k in param_shapes(cfg)}, meta)


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    tensors, meta = load_tensors(path)
    try:
        cfg = ModelConfig(**meta["model_config"])
    except (KeyError, TypeError) as exc:
        raise ArchiveError(f"checkpoint has no usable model_config: {exc!r}") from exc
    expected = param_shapes(cfg)
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise ArchiveError(f"checkpoint tensors disagree with config (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise ArchiveError(f"{name}: shape {tensors[name].shape} but config implies {shape}")
    return cfg, tensors, meta.get("extra", {})
