"""A miniature transfer experiment: pretrain on A, adapt to B with a few windows.

Run from the repository root:  python3 demos/03_transfer.py
Takes well under a minute.  The full grid is `flowsense experiment` with configs/desk.cfg.
"""

# %% data
from flowsense.model import ModelConfig, init_params
from flowsense.procsim import ScenarioConfig, run_scenario
from flowsense.transfer import ExperimentConfig, FinetunePolicy, finetune, pretrain, run_experiment, zero_shot_eval

source = run_scenario("A", ScenarioConfig(duration_h=6.0, seed=1))
target = run_scenario("B", ScenarioConfig(duration_h=6.0, seed=2))
cfg = ModelConfig.desk(hidden_dim=16, embed_dim=16, tf_model_dim=16, tf_ff_dim=32, head_hidden=16)
ecfg = ExperimentConfig(model=cfg, seeds=(0, 1, 2), n_grid=(0, 1, 11, 51), pretrain_epochs=15, finetune_epochs=40)

# %% one seed by hand
(pre,) = pretrain(cfg, source, [0], ecfg)
print("untrained on B :", round(zero_shot_eval(cfg, init_params(cfg, 0), target), 4))
print("zero-shot on B :", round(zero_shot_eval(cfg, pre, target), 4))
tuned = finetune(cfg, pre, target, FinetunePolicy(51, ("gnn",), 1e-4), seed=0, max_epochs=40)
print("51-shot on B   :", round(zero_shot_eval(cfg, tuned, target), 4))

# %% the grid over seeds and shot counts
report = run_experiment(source, target, ecfg)
print(f"\n{'n':>3} {'pretrained':>18} {'scratch':>18} {'reduction %':>12}")
for row in report.aggregate():
    print(f"{row['n']:>3} {row['mean_pretrained']:>10.4f} ± {row['std_pretrained']:.3f}"
          f" {row['mean_scratch']:>10.4f} ± {row['std_scratch']:.3f} {row['reduction_per_seed_avg']:>12.1f}")
