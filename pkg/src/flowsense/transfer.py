"""Pretrain on one plant, then zero-shot and few-shot transfer to another.

The experiment grid crosses few-shot sizes with seeds.  Each (n, seed) cell
records the test RMSE of two arms on the target plant:

* ``pretrained``: the source-trained model fine-tuned on the earliest ``n``
  target training windows (``n = 0`` is the zero-shot evaluation);
* ``scratch``: a fresh model trained on the same ``n`` windows (``n = 0`` is
  the untrained initialization).

Results are written cell by cell so an interrupted run can be resumed.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import flowgraph as fg
from .model import ModelConfig, PARAM_GROUPS, init_params, load_checkpoint, predict_windows, save_checkpoint
from .training import SplitSeries, TargetScaler, TrainConfig, _fit, fit_target_scaler, rmse

N_GRID = (0, 1, 11, 21, 31, 41, 51)
ARMS = ("pretrained", "scratch")


@dataclass(frozen=True)
class FinetunePolicy:
    n_points: int = 0
    freeze: tuple[str, ...] = ("gnn",)
    learning_rate: float = 1e-4

    def __post_init__(self):
        if self.n_points < 0:
            raise ValueError("n_points must be >= 0")
        if set(self.freeze) - set(PARAM_GROUPS):
            raise ValueError(f"unknown parameter groups in {self.freeze}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    seeds: tuple[int, ...] = tuple(range(9))
    n_grid: tuple[int, ...] = N_GRID
    pretrain_lr: float = 1e-3
    pretrain_epochs: int = 200
    pretrain_patience: int = 20
    finetune_lr: float = 1e-4
    finetune_freeze: tuple[str, ...] = ("gnn",)
    scratch_lr: float = 1e-3
    finetune_epochs: int = 200
    finetune_patience: int = 20
    batch_size: int = 64
    full_batch_limit: int = 1024

    def pretrain_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.pretrain_lr, self.pretrain_epochs, self.batch_size, self.pretrain_patience, seed, self.full_batch_limit)

    def policy(self, n: int) -> FinetunePolicy:
        return FinetunePolicy(n, tuple(self.finetune_freeze), self.finetune_lr)


class Prepared:
    """Encoded train/val splits and the scaler of one dataset.

    The test split is held apart and only encoded on the first call to
    :meth:`test`, which training code never makes.
    """

    def __init__(self, dataset: fg.Dataset, L: int):
        self.dataset = dataset
        self.L = L
        tr, va, te = dataset.split()
        self.scaler = fit_target_scaler(f.target for f in tr.frames)
        self.train = SplitSeries.build(tr, self.scaler, L)
        self.val = SplitSeries.build(va, self.scaler, L)
        self._test_split = te
        self._test: SplitSeries | None = None

    def test(self) -> SplitSeries:
        if self._test is None:
            self._test = SplitSeries.build(self._test_split, self.scaler, self.L)
        return self._test


def _prep(d, L) -> Prepared:
    return d if isinstance(d, Prepared) else Prepared(d, L)


def pretrain(cfg: ModelConfig, source, seeds: Sequence[int], ecfg: ExperimentConfig | None = None) -> list[dict[str, np.ndarray]]:
    """One trained parameter set per seed (the seed drives init and batch order)."""
    ecfg = ecfg or ExperimentConfig(model=cfg)
    src = _prep(source, cfg.lookback)
    return [_fit(cfg, ecfg.pretrain_config(s), src.train, src.val, None)[0] for s in seeds]


def test_rmse(cfg: ModelConfig, params: Mapping, target) -> float:
    tgt = _prep(target, cfg.lookback)
    te = tgt.test()
    return rmse(te.y, predict_windows(cfg, params, te.series, te.ends))


def zero_shot_eval(cfg: ModelConfig, params: Mapping, target) -> float:
    """Target test RMSE (target's own scaler) with no parameter update."""
    return test_rmse(cfg, params, target)


def finetune(
    cfg: ModelConfig,
    params: Mapping[str, np.ndarray],
    target,
    policy: FinetunePolicy,
    seed: int,
    max_epochs: int = 200,
    patience: int = 20,
) -> Mapping[str, np.ndarray]:
    """Partial retraining on the earliest ``policy.n_points`` target training windows."""
    if policy.n_points == 0:
        return params
    tgt = _prep(target, cfg.lookback)
    tc = TrainConfig(policy.learning_rate, max_epochs, patience=patience, seed=seed, frozen=tuple(policy.freeze))
    return _fit(cfg, tc, tgt.train.prefix(policy.n_points), tgt.val, params)[0]


def train_scratch(cfg: ModelConfig, target, n: int, seed: int, learning_rate: float = 1e-3,
                  max_epochs: int = 200, patience: int = 20) -> dict[str, np.ndarray]:
    init = init_params(cfg, seed)
    if n == 0:
        return init
    tgt = _prep(target, cfg.lookback)
    tc = TrainConfig(learning_rate, max_epochs, patience=patience, seed=seed)
    return _fit(cfg, tc, tgt.train.prefix(n), tgt.val, init)[0]


# ---------------------------------------------------------------- reporting


@dataclass(frozen=True)
class Cell:
    n: int
    seed: int
    pretrained: float
    scratch: float


@dataclass
class TransferReport:
    config: ExperimentConfig
    cells: list[Cell]
    series: list[tuple[float, float, float, float]] = field(default_factory=list)

    def raw_rows(self) -> list[tuple[int, int, str, float]]:
        rows = []
        for c in sorted(self.cells, key=lambda c: (c.n, c.seed)):
            rows.append((c.n, c.seed, "pretrained", c.pretrained))
            rows.append((c.n, c.seed, "scratch", c.scratch))
        return rows

    def aggregate(self) -> list[dict]:
        return aggregate_rows(self.raw_rows())

    def trend(self) -> dict:
        agg = {a["n"]: a for a in self.aggregate()}
        shots = [n for n in self.config.n_grid if n > 0]
        wins = [n for n in shots if agg[n]["mean_pretrained"] < agg[n]["mean_scratch"]]
        zero = agg.get(0)
        return {
            "zero_shot_mean": zero["mean_pretrained"] if zero else None,
            "untrained_mean": zero["mean_scratch"] if zero else None,
            "zero_shot_beats_untrained": bool(zero and zero["mean_pretrained"] < zero["mean_scratch"]),
            "finetune_wins": wins,
            "n_finetune_wins": len(wins),
        }

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "raw.csv", ["n", "seed", "arm", "rmse"], self.raw_rows())
        _write_csv(out / "aggregate.csv", AGG_FIELDS, [[a[k] for k in AGG_FIELDS] for a in self.aggregate()])
        _write_csv(out / "series.csv", ["t", "y", "y_hat_zero_shot", "y_hat_finetuned"], self.series)
        summary = {
            "config": experiment_config_dict(self.config),
            "aggregate": self.aggregate(),
            "trend": self.trend(),
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


AGG_FIELDS = ["n", "mean_pretrained", "std_pretrained", "mean_scratch", "std_scratch",
              "reduction_per_seed_avg", "reduction_of_means"]


def aggregate_rows(rows: Sequence[tuple[int, int, str, float]]) -> list[dict]:
    """Per-n mean and population std for each arm plus both reduction figures (percent)."""
    table: dict[int, dict[str, dict[int, float]]] = {}
    for n, seed, arm, value in rows:
        table.setdefault(int(n), {a: {} for a in ARMS})[arm][int(seed)] = float(value)
    out = []
    for n in sorted(table):
        pre, scr = table[n]["pretrained"], table[n]["scratch"]
        seeds = sorted(set(pre) & set(scr))
        p = np.array([pre[s] for s in seeds])
        s = np.array([scr[s] for s in seeds])
        out.append({
            "n": n,
            "mean_pretrained": float(p.mean()),
            "std_pretrained": float(p.std()),
            "mean_scratch": float(s.mean()),
            "std_scratch": float(s.std()),
            "reduction_per_seed_avg": float(np.mean((s - p) / s * 100.0)),
            "reduction_of_means": float((s.mean() - p.mean()) / s.mean() * 100.0),
        })
    return out


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


def experiment_config_dict(e: ExperimentConfig) -> dict:
    d = asdict(e)
    d["seeds"] = list(e.seeds)
    d["n_grid"] = list(e.n_grid)
    d["finetune_freeze"] = list(e.finetune_freeze)
    return d


# ---------------------------------------------------------------- the grid


def _cell_path(out: Path, n: int, seed: int) -> Path:
    return out / "cells" / f"n{n:03d}_seed{seed}.json"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _run_seed(ecfg: ExperimentConfig, src: Prepared, tgt: Prepared, seed: int, out: Path | None,
              keep_series: bool) -> tuple[list[Cell], dict | None]:
    cfg = ecfg.model
    pending = [n for n in ecfg.n_grid if out is None or not _cell_path(out, n, seed).exists()]
    cells = []
    series_params = None
    n_max = max(ecfg.n_grid)
    if pending or keep_series:
        ckpt = out / "pretrain" / f"seed{seed}.fsta" if out is not None else None
        if ckpt is not None and ckpt.exists():
            _, pre, _ = load_checkpoint(ckpt)
        else:
            pre = _fit(cfg, ecfg.pretrain_config(seed), src.train, src.val, None)[0]
            if ckpt is not None:
                ckpt.parent.mkdir(parents=True, exist_ok=True)
                save_checkpoint(ckpt, cfg, pre, {"seed": seed, "role": "pretrained"})
        for n in ecfg.n_grid:
            need_series = keep_series and n == n_max
            if n not in pending and not need_series:
                continue
            tuned = finetune(cfg, pre, tgt, ecfg.policy(n), seed, ecfg.finetune_epochs, ecfg.finetune_patience)
            if need_series:
                series_params = {"zero_shot": pre, "finetuned": tuned}
            if n not in pending:
                continue
            scratch = train_scratch(cfg, tgt, n, seed, ecfg.scratch_lr, ecfg.finetune_epochs, ecfg.finetune_patience)
            cell = Cell(n, seed, test_rmse(cfg, tuned, tgt), test_rmse(cfg, scratch, tgt))
            if out is not None:
                _atomic_write(_cell_path(out, n, seed), json.dumps(asdict(cell), sort_keys=True) + "\n")
            cells.append(cell)
    return cells, series_params


def _seed_job(args):
    ecfg, source, target, seed, out, keep_series = args
    L = ecfg.model.lookback
    return _run_seed(ecfg, Prepared(source, L), Prepared(target, L), seed, out, keep_series)


def load_cells(out_dir: str | Path) -> list[Cell]:
    cells = []
    for p in sorted((Path(out_dir) / "cells").glob("n*_seed*.json")):
        cells.append(Cell(**json.loads(p.read_text(encoding="utf-8"))))
    return cells


def run_experiment(
    source: fg.Dataset,
    target: fg.Dataset,
    ecfg: ExperimentConfig = ExperimentConfig(),
    out_dir: str | Path | None = None,
    jobs: int = 1,
    log=None,
) -> TransferReport:
    """Run (or resume) the full grid and, if ``out_dir`` is given, write the report files there."""
    out = Path(out_dir) if out_dir is not None else None
    if not ecfg.seeds:
        raise ValueError("need at least one seed")
    for n in ecfg.n_grid:
        if n < 0:
            raise ValueError("n values must be >= 0")
    L = ecfg.model.lookback
    src, tgt = Prepared(source, L), Prepared(target, L)
    n_max = max(ecfg.n_grid)
    if n_max > len(tgt.train.ends):
        raise ValueError(f"n={n_max} exceeds the {len(tgt.train.ends)} target training windows")

    first = ecfg.seeds[0]
    results: dict[int, tuple[list[Cell], dict | None]] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            args = [(ecfg, source, target, s, out, s == first) for s in ecfg.seeds]
            for s, res in zip(ecfg.seeds, pool.map(_seed_job, args)):
                results[s] = res
                if log:
                    log(f"seed {s} done")
    else:
        for s in ecfg.seeds:
            results[s] = _run_seed(ecfg, src, tgt, s, out, s == first)
            if log:
                log(f"seed {s} done")

    if out is not None:
        cells = [c for c in load_cells(out) if c.seed in ecfg.seeds and c.n in ecfg.n_grid]
    else:
        cells = [c for s in ecfg.seeds for c in results[s][0]]
    report = TransferReport(ecfg, cells, prediction_series(ecfg.model, results[first][1], tgt))
    if out is not None:
        report.write(out)
    return report


def prediction_series(cfg: ModelConfig, models: dict | None, tgt: Prepared) -> list[tuple[float, float, float, float]]:
    """Target test split in target units: (t, y, zero-shot prediction, fine-tuned prediction)."""
    if not models:
        return []
    te = tgt.test()
    zs = tgt.scaler.invert(predict_windows(cfg, models["zero_shot"], te.series, te.ends))
    ft = tgt.scaler.invert(predict_windows(cfg, models["finetuned"], te.series, te.ends))
    y = te.series.targets[te.ends]
    t = te.series.times[te.ends]
    return [(float(a), float(b), float(c), float(d)) for a, b, c, d in zip(t, y, zs, ft)]
