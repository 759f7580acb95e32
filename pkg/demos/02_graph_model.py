"""From a plant snapshot to a soft-sensor prediction.

Run from the repository root:  python3 demos/02_graph_model.py
"""

# %% encode one frame of each process as fixed-width node and edge features
import numpy as np

from flowsense import flowgraph as fg
from flowsense.model import EncodedSeries, ModelConfig, embed_snapshot, init_params, predict_series
from flowsense.procsim import ScenarioConfig, run_scenario

cfg = ModelConfig.desk()
params = init_params(cfg, seed=0)
runs = {v: run_scenario(v, ScenarioConfig(duration_h=1.0, warmup_h=3.0, seed=1)) for v in ("A", "B")}

for v, d in runs.items():
    nf, ef = fg.encode_frames(d.topology, d.frames[:1])
    print(f"{v}: node features {nf.shape[1:]}, edge features {ef.shape[1:]}")

# %% the flowsheet embedding ignores how nodes are numbered
d = runs["A"]
series = EncodedSeries(d.topology, d.frames[:1])
nf, ef = series.node_feats[0], series.edge_feats[0]
src, dst = d.topology.edge_arrays()
emb = embed_snapshot(cfg, params, nf, ef, (src, dst))

perm = np.random.default_rng(3).permutation(len(nf))
inv = np.argsort(perm)
emb_perm = embed_snapshot(cfg, params, nf[inv], ef, (perm[src], perm[dst]))
print("\nembedding size", emb.shape, "| max change under relabelling", np.abs(emb - emb_perm).max())

# %% one parameter set, two plants
for v, d in runs.items():
    preds = predict_series(cfg, params, d)
    vals = np.array([p for _, p in preds])
    print(f"{v}: {len(preds)} windows of {cfg.lookback} frames, untrained predictions {vals.mean():+.3f} +/- {vals.std():.3f}")
