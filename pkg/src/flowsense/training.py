"""Target scaling, the Adam training loop with early stopping, and RMSE evaluation."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import flowgraph as fg
from .flowgraph import log_scale
from .model import (
    PARAM_GROUPS,
    EncodedSeries,
    ModelConfig,
    embed_graphs,
    forward_windows,
    init_params,
    param_group,
    predict_windows,
    temporal_head,
    _as_tensors,
)
from .neural import AdamState, Tape, Tensor, adam_step, ops
from .rng import Xoshiro256

__all__ = [
    "log_scale",
    "TargetScaler",
    "fit_target_scaler",
    "rmse",
    "TrainConfig",
    "TrainingDiverged",
    "HistoryRow",
    "SplitSeries",
    "train",
    "evaluate",
    "write_history_csv",
]


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, detail: str = ""):
        super().__init__(f"non-finite loss at epoch {epoch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch


@dataclass(frozen=True)
class TargetScaler:
    mean: float
    std: float

    def __post_init__(self):
        if not (self.std > 0 and math.isfinite(self.std) and math.isfinite(self.mean)):
            raise ValueError(f"target scaler needs a finite positive std, got {self.std}")

    def apply(self, y):
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def fit_target_scaler(targets: Iterable[float]) -> TargetScaler:
    """Mean and population standard deviation of the training targets."""
    y = np.asarray(list(targets), dtype=np.float64)
    if y.size < 2:
        raise ValueError("need at least two targets to fit a scaler")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    std = float(y.std())
    # a constant series can leave rounding residue in the std
    if std <= 1e-12 * max(1.0, abs(float(y.mean()))):
        raise ValueError("degenerate target: zero variance")
    return TargetScaler(float(y.mean()), std)


def rmse(y: Sequence[float], y_hat: Sequence[float]) -> float:
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.size != y_hat.size:
        raise ValueError(f"length mismatch: {y.size} vs {y_hat.size}")
    if y.size == 0:
        raise ValueError("rmse of an empty series")
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 200
    batch_size: int = 64
    patience: int = 20
    seed: int = 0
    full_batch_limit: int = 1024
    frozen: tuple[str, ...] = ()

    def __post_init__(self):
        if self.learning_rate <= 0 or self.max_epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("learning_rate, max_epochs, batch_size and patience must be positive")
        unknown = set(self.frozen) - set(PARAM_GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups: {sorted(unknown)}")


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    train_loss: float
    val_rmse: float


@dataclass
class SplitSeries:
    """One split's encoded frames plus scaled window targets."""

    series: EncodedSeries
    ends: np.ndarray
    y: np.ndarray
    _emb: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, split: fg.Dataset, scaler: TargetScaler, L: int) -> "SplitSeries":
        if len(split.frames) < L:
            raise ValueError(f"split has {len(split.frames)} frames, fewer than the lookback {L}")
        series = EncodedSeries(split.topology, split.frames)
        ends = np.arange(L - 1, len(series), dtype=np.int64)
        y = scaler.apply(series.targets[ends])
        if not np.all(np.isfinite(y)):
            raise ValueError("every frame needs a finite target")
        return cls(series, ends, y)

    def prefix(self, n: int) -> "SplitSeries":
        if n > len(self.ends):
            raise ValueError(f"requested {n} windows, only {len(self.ends)} available")
        return SplitSeries(self.series, self.ends[:n], self.y[:n], self._emb)

    def frozen_embeddings(self, cfg: ModelConfig, params: Mapping) -> np.ndarray:
        """Per-frame embeddings under fixed GNN weights, cached by weight content."""
        gnn = {k: np.asarray(params[k]) for k in sorted(params) if param_group(k) == "gnn"}
        digest = hashlib.sha256()
        for k, v in gnn.items():
            digest.update(k.encode())
            digest.update(np.ascontiguousarray(v).tobytes())
        key = digest.hexdigest()
        if key not in self._emb:
            emb = embed_graphs(cfg, _as_tensors(gnn), self.series.graph, self.series.node_feats, self.series.edge_feats)
            self._emb[key] = emb.value
        return self._emb[key]


def _windows(ends: np.ndarray, L: int) -> np.ndarray:
    return ends[:, None] + np.arange(-L + 1, 1)[None, :]


def _predict(cfg: ModelConfig, params: Mapping, data: SplitSeries, emb: np.ndarray | None) -> np.ndarray:
    if emb is None:
        return predict_windows(cfg, params, data.series, data.ends)
    return temporal_head(cfg, params, Tensor(emb), _windows(data.ends, cfg.lookback)).value


def train(
    cfg: ModelConfig,
    tc: TrainConfig,
    dataset: fg.Dataset,
    *,
    init: Mapping[str, np.ndarray] | None = None,
    n_windows: int | None = None,
    scaler: TargetScaler | None = None,
) -> tuple[dict[str, np.ndarray], list[HistoryRow]]:
    """Fit the model on the training split, early-stopping on the validation split.

    Only the train and validation splits are encoded; the test split is never
    touched.  ``init`` continues from existing weights (fine-tuning), otherwise
    weights are drawn from ``tc.seed``.  ``n_windows`` restricts training to the
    chronologically earliest windows of the train split.  The returned
    parameters are those with the lowest validation RMSE seen.
    """
    train_split, val_split, _ = dataset.split()
    if scaler is None:
        scaler = fit_target_scaler(f.target for f in train_split.frames)
    L = cfg.lookback
    tr = SplitSeries.build(train_split, scaler, L)
    va = SplitSeries.build(val_split, scaler, L)
    if n_windows is not None:
        tr = tr.prefix(n_windows)
    if len(tr.ends) == 0:
        raise ValueError("no training windows")
    return _fit(cfg, tc, tr, va, init)


def _fit(cfg, tc, tr: SplitSeries, va: SplitSeries, init):
    L = cfg.lookback
    params = {k: np.array(v, dtype=np.float64) for k, v in (init if init is not None else init_params(cfg, tc.seed)).items()}
    trainable = [k for k in params if param_group(k) not in tc.frozen]
    gnn_fixed = "gnn" in tc.frozen
    if gnn_fixed:
        emb_tr = tr.frozen_embeddings(cfg, params)
        emb_va = va.frozen_embeddings(cfg, params)
    else:
        emb_tr = emb_va = None

    rng = Xoshiro256(tc.seed).spawn(1)
    state = AdamState(learning_rate=tc.learning_rate)
    n = len(tr.ends)
    full = n <= tc.full_batch_limit

    best = {k: v.copy() for k, v in params.items()}
    best_val = rmse(va.y, _predict(cfg, params, va, emb_va))
    history: list[HistoryRow] = []
    stale = 0
    for epoch in range(1, tc.max_epochs + 1):
        order = np.arange(n) if full else np.asarray(rng.permutation(n))
        step = n if full else tc.batch_size
        total = 0.0
        try:
            for i in range(0, n, step):
                sel = order[i : i + step]
                tensors = {k: Tensor(v, requires_grad=k in trainable) for k, v in params.items()}
                with Tape() as tape:
                    if gnn_fixed:
                        pred = temporal_head(cfg, tensors, Tensor(emb_tr), _windows(tr.ends[sel], L))
                    else:
                        nf, ef, widx = tr.series.window_frames(tr.ends[sel], L)
                        pred = forward_windows(cfg, tensors, tr.series.graph, nf, ef, widx)
                    loss = ops.mse(pred, tr.y[sel])
                if not math.isfinite(float(loss.value)):
                    raise FloatingPointError("non-finite training loss")
                grads = tape.gradient(loss, {k: tensors[k] for k in trainable})
                total += float(loss.value) * len(sel)
                params, state = adam_step(params, grads, state)
            val = rmse(va.y, _predict(cfg, params, va, emb_va))
            if not math.isfinite(val):
                raise FloatingPointError("non-finite validation RMSE")
        except FloatingPointError as exc:
            raise TrainingDiverged(epoch, str(exc)) from exc
        history.append(HistoryRow(epoch, total / n, val))
        if val < best_val:
            best_val, stale = val, 0
            best = {k: v.copy() for k, v in params.items()}
        else:
            stale += 1
            if stale >= tc.patience:
                break
    return best, history


def evaluate(cfg: ModelConfig, params: Mapping, split: fg.Dataset, scaler: TargetScaler) -> float:
    """RMSE in normalized target units over every window of ``split``."""
    data = SplitSeries.build(split, scaler, cfg.lookback)
    return rmse(data.y, predict_windows(cfg, params, data.series, data.ends))


def write_history_csv(path: str | Path, history: Sequence[HistoryRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_rmse"])
        for row in history:
            w.writerow([row.epoch, repr(row.train_loss), repr(row.val_rmse)])
