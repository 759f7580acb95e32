"""``flowsense`` command line: simulate, train, experiment, report.

All numeric settings live in one flat ``key = value`` file (``--print-config``
lists every key with its default).  Paths, the plant variant and the seed are
the only things given on the command line.  Each command writes a manifest
before starting work and completes it with output hashes at the end.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from . import flowgraph as fg
from .model import ModelConfig, save_checkpoint
from .procsim import ScenarioConfig, SimulationError, run_scenario
from .training import TrainConfig, TrainingDiverged, fit_target_scaler, train, write_history_csv
from .transfer import AGG_FIELDS, ExperimentConfig, N_GRID, aggregate_rows, run_experiment


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class Key:
    name: str
    default: object
    help: str


def _scenario_keys():
    doc = {
        "duration_h": "simulated hours recorded after warm-up",
        "sample_interval": "seconds between recorded frames",
        "integration_step": "explicit Euler step in seconds",
        "perturbation_min": "smallest relative setpoint move",
        "perturbation_max": "largest relative setpoint move",
        "steady_state_tolerance": "relative band for steady-state detection",
        "steady_state_hold": "seconds the band must hold",
        "max_phase_h": "hours before a phase is ended without steady state",
        "warmup_h": "unrecorded warm-up hours",
        "split_train": "train fraction of frames",
        "split_val": "validation fraction",
        "split_test": "test fraction",
    }
    base = ScenarioConfig()
    return [Key(k, getattr(base, k), v) for k, v in doc.items()]


def _model_keys():
    base = ModelConfig()
    doc = {
        "hidden_dim": "GNN hidden width",
        "mp_rounds": "message-passing rounds",
        "embed_dim": "flowsheet embedding width",
        "tf_layers": "transformer layers",
        "tf_heads": "attention heads",
        "tf_model_dim": "transformer width",
        "tf_ff_dim": "transformer feed-forward width",
        "lookback": "frames per window",
        "head_hidden": "head MLP width",
    }
    return [Key(k, getattr(base, k), v) for k, v in doc.items()]


def _train_keys():
    base = TrainConfig()
    return [
        Key("learning_rate", base.learning_rate, "Adam step size for `train`"),
        Key("max_epochs", base.max_epochs, "epoch cap for `train`"),
        Key("batch_size", base.batch_size, "mini-batch size when windows exceed full_batch_limit"),
        Key("patience", base.patience, "epochs without validation improvement before stopping"),
        Key("full_batch_limit", base.full_batch_limit, "train full-batch at or below this many windows"),
    ]


def _experiment_keys():
    e = ExperimentConfig()
    return [
        Key("n_seeds", len(e.seeds), "seeds 0..n_seeds-1 (offset by --seed)"),
        Key("n_grid", ",".join(map(str, e.n_grid)), "few-shot window counts"),
        Key("pretrain_lr", e.pretrain_lr, "source training step size"),
        Key("pretrain_epochs", e.pretrain_epochs, "source training epoch cap"),
        Key("pretrain_patience", e.pretrain_patience, "source early-stopping patience"),
        Key("finetune_lr", e.finetune_lr, "fine-tuning step size"),
        Key("finetune_freeze", ",".join(e.finetune_freeze), "groups frozen while fine-tuning (gnn, tf, head; empty = none)"),
        Key("scratch_lr", e.scratch_lr, "step size of the from-scratch arm"),
        Key("finetune_epochs", e.finetune_epochs, "epoch cap of both target-side arms"),
        Key("finetune_patience", e.finetune_patience, "target-side early-stopping patience"),
    ]


SECTIONS = {
    "scenario": _scenario_keys(),
    "model": _model_keys(),
    "training": _train_keys(),
    "experiment": _experiment_keys(),
}
KEYS = {k.name: k for ks in SECTIONS.values() for k in ks}


def default_config_text() -> str:
    out = io.StringIO()
    for section, keys in SECTIONS.items():
        out.write(f"# --- {section}\n")
        for k in keys:
            out.write(f"# {k.help}\n{k.name} = {k.default}\n")
        out.write("\n")
    return out.getvalue()


def _coerce(key: Key, raw: str):
    d = key.default
    try:
        if isinstance(d, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(d, int):
            return int(raw)
        if isinstance(d, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"config key {key.name}: cannot parse {raw!r}") from None
    return raw.strip()


def load_config(path: str | Path | None) -> dict:
    """Defaults overlaid with the file's values; unknown keys are an error."""
    values = {k: v.default for k, v in KEYS.items()}
    if path is None:
        return values
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[_]\n" + p.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise UsageError(f"{p}: {exc}") from None
    for name, raw in parser["_"].items():
        if name not in KEYS:
            raise UsageError(f"{p}: unknown config key {name!r}")
        values[name] = _coerce(KEYS[name], raw)
    return values


def _int_list(raw: str, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in str(raw).split(",") if x.strip())
    except ValueError:
        raise UsageError(f"{key}: expected comma-separated integers") from None


def _build(factory, values: dict, **extra):
    names = {f.name for f in fields(factory)}
    try:
        return factory(**{k: v for k, v in values.items() if k in names}, **extra)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def scenario_config(values, seed: int) -> ScenarioConfig:
    return _build(ScenarioConfig, values, seed=seed)


def model_config(values) -> ModelConfig:
    return _build(ModelConfig, values)


def train_config(values, seed: int) -> TrainConfig:
    return _build(TrainConfig, values, seed=seed)


def experiment_config(values, seed: int) -> ExperimentConfig:
    freeze = tuple(x.strip() for x in str(values["finetune_freeze"]).split(",") if x.strip())
    try:
        return ExperimentConfig(
            model=model_config(values),
            seeds=tuple(range(seed, seed + int(values["n_seeds"]))),
            n_grid=_int_list(values["n_grid"], "n_grid"),
            pretrain_lr=values["pretrain_lr"],
            pretrain_epochs=values["pretrain_epochs"],
            pretrain_patience=values["pretrain_patience"],
            finetune_lr=values["finetune_lr"],
            finetune_freeze=freeze,
            scratch_lr=values["scratch_lr"],
            finetune_epochs=values["finetune_epochs"],
            finetune_patience=values["finetune_patience"],
            batch_size=values["batch_size"],
            full_batch_limit=values["full_batch_limit"],
        )
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


# ---------------------------------------------------------------- manifest


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    config: dict
    seeds: list[int]
    output: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    status: str = "started"
    tool_version: str = __version__

    def write(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def finish(self, path: Path, produced: list[Path], root: Path) -> None:
        self.outputs = {str(p.relative_to(root)) if p.is_relative_to(root) else str(p): sha256_file(p) for p in produced}
        self.status = "complete"
        self.write(path)


def _hash_inputs(paths: dict[str, Path]) -> dict[str, str]:
    return {name: sha256_file(p) for name, p in paths.items()}


def _require_file(p: str) -> Path:
    path = Path(p)
    if not path.is_file():
        raise UsageError(f"no such file: {p}")
    return path


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    values = load_config(args.config)
    cfg = scenario_config(values, args.seed)
    out = Path(args.out)
    manifest_path = out.with_name(out.name + ".manifest.json")
    manifest = RunManifest("simulate", args.config, values, [args.seed], str(out), {"variant": args.variant})
    manifest.write(manifest_path)
    dataset = run_scenario(args.variant, cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    fg.save_dataset(dataset, out)
    produced = [out]
    if args.csv:
        fg.export_frames_csv(dataset, args.csv)
        produced.append(Path(args.csv))
    manifest.finish(manifest_path, produced, out.parent)
    _say(args, f"wrote {len(dataset.frames)} frames to {out}")
    return 0


def cmd_train(args) -> int:
    ds_path = _require_file(args.dataset)
    values = load_config(args.config)
    cfg, tc = model_config(values), train_config(values, args.seed)
    out = Path(args.out)
    manifest = RunManifest("train", args.config, values, [args.seed], str(out), _hash_inputs({"dataset": ds_path}))
    manifest.write(out / "manifest.json")
    dataset = fg.load_dataset(ds_path)
    params, history = train(cfg, tc, dataset)
    scaler = fit_target_scaler(f.target for f in dataset.split()[0].frames)
    ckpt, hist = out / "checkpoint.fsta", out / "history.csv"
    save_checkpoint(ckpt, cfg, params, {"seed": args.seed, "scaler": {"mean": scaler.mean, "std": scaler.std}})
    write_history_csv(hist, history)
    manifest.finish(out / "manifest.json", [ckpt, hist], out)
    best = min(r.val_rmse for r in history)
    _say(args, f"{len(history)} epochs, best val RMSE {best:.6f}; checkpoint {ckpt}")
    return 0


def cmd_experiment(args) -> int:
    src_path, tgt_path = _require_file(args.source), _require_file(args.target)
    values = load_config(args.config)
    ecfg = experiment_config(values, args.seed)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    out = Path(args.out)
    manifest = RunManifest("experiment", args.config, values, list(ecfg.seeds), str(out),
                           _hash_inputs({"source": src_path, "target": tgt_path}))
    manifest.write(out / "manifest.json")
    source, target = fg.load_dataset(src_path), fg.load_dataset(tgt_path)
    report = run_experiment(source, target, ecfg, out, jobs=args.jobs, log=lambda m: _say(args, m))
    produced = [out / n for n in ("raw.csv", "aggregate.csv", "series.csv", "summary.json")]
    manifest.finish(out / "manifest.json", produced, out)
    t = report.trend()
    _say(args, f"{len(report.raw_rows())} RMSE entries; zero-shot beats untrained: {t['zero_shot_beats_untrained']}; "
               f"fine-tuned beats scratch at n = {t['finetune_wins']}")
    return 0


def _read_raw(path: Path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.append((int(r["n"]), int(r["seed"]), r["arm"], float(r["rmse"])))
    return rows


def cmd_report(args) -> int:
    rdir = Path(args.report_dir)
    raw_path, summary_path = rdir / "raw.csv", rdir / "summary.json"
    for p in (raw_path, summary_path):
        if not p.is_file():
            raise UsageError(f"not a completed report directory (missing {p.name}): {rdir}")
    rows = _read_raw(raw_path)
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    seeds, n_grid = summary["config"]["seeds"], summary["config"]["n_grid"]
    present = {(n, s, a) for n, s, a, _ in rows}
    missing = [(n, s, a) for n in n_grid for s in seeds for a in ("pretrained", "scratch") if (n, s, a) not in present]
    if missing:
        listing = "\n".join(f"  n={n} seed={s} arm={a}" for n, s, a in missing)
        print(f"report incomplete, {len(missing)} missing cells:\n{listing}", file=sys.stderr)
        return 1
    out = Path(args.out) if args.out else rdir / "plots"
    out.mkdir(parents=True, exist_ok=True)
    agg = aggregate_rows(rows)

    def fmt(v):
        return repr(float(v)) if isinstance(v, float) else str(v)

    def write(name, header, body):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows([[fmt(v) for v in r] for r in body])
        (out / name).write_text(buf.getvalue(), encoding="utf-8")

    curve = []
    for a in agg:
        curve.append([a["n"], a["mean_pretrained"], a["std_pretrained"], a["mean_scratch"], a["std_scratch"]])
    write("curves.csv", ["n", "mean_pretrained", "std_pretrained", "mean_scratch", "std_scratch"], curve)
    shots = [a for a in agg if a["n"] in N_GRID[1:]]
    header = ["aggregation"] + [f"n={a['n']}" for a in shots]
    write("reduction_table.csv", header, [
        ["per_seed_average"] + [a["reduction_per_seed_avg"] for a in shots],
        ["of_means"] + [a["reduction_of_means"] for a in shots],
    ])
    series = rdir / "series.csv"
    if series.is_file():
        (out / "series.csv").write_text(series.read_text(encoding="utf-8"), encoding="utf-8")
    _say(args, f"wrote plot data to {out}")
    return 0


# ---------------------------------------------------------------- entry


def _say(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowsense", description="Graph soft-sensor transfer toolkit.")
    p.add_argument("--print-config", action="store_true", help="print every config key with its default and exit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", help="flat key = value file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--quiet", action="store_true")

    s = sub.add_parser("simulate", help="generate a plant dataset")
    s.add_argument("variant", choices=["A", "B"])
    s.add_argument("--out", required=True, help="dataset JSON path")
    s.add_argument("--csv", help="also write a flat frame table here")
    common(s)

    t = sub.add_parser("train", help="train on one dataset")
    t.add_argument("dataset")
    t.add_argument("--out", required=True, help="output directory")
    common(t)

    e = sub.add_parser("experiment", help="pretrain on SOURCE, transfer to TARGET")
    e.add_argument("source")
    e.add_argument("target")
    e.add_argument("--out", required=True, help="report directory (resumable)")
    e.add_argument("--jobs", type=int, default=1, help="parallel seeds")
    common(e)

    r = sub.add_parser("report", help="plot-ready tables from a finished experiment")
    r.add_argument("report_dir")
    r.add_argument("--out", help="output directory (default REPORT_DIR/plots)")
    r.add_argument("--quiet", action="store_true")
    return p


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "experiment": cmd_experiment, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.print_config:
        sys.stdout.write(default_config_text())
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"flowsense: error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, TrainingDiverged, fg.FlowgraphError, ValueError, OSError) as exc:
        print(f"flowsense: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
