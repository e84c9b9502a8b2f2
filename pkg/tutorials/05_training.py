# Training on molecules
# =====================
#
# This walks through a short run on the bundled ZINC-like graphs, first
# with the library pieces and then through the config-driven runner that
# the `gps train` command uses. A few hundred graphs and ten epochs keep
# it to about a minute on one core.

from dataclasses import replace
from pathlib import Path
import tempfile

import numpy as np

from gpsnet.experiments import RunConfig, format_config, parse_config, run_config
from gpsnet.model import GPSModel, ModelConfig
from gpsnet.molecules import make_zinc_like
from gpsnet.train import (TrainSettings, TrainState, evaluate, fit, make_dataset,
                          warmup_cosine_lr)

graphs = make_zinc_like(300, seed=0)
data = make_dataset(graphs, rwse_m=16)
train, val = data.subset(range(240)), data.subset(range(240, 300))
print("targets: mean %.3f, sd %.3f" % (np.mean([g.y for g in graphs]), np.std([g.y for g in graphs])))

# The learning rate warms up linearly, then follows a half cosine to zero.
print("lr by step:", [round(warmup_cosine_lr(t, 1e-3, 10, 100), 6) for t in (0, 5, 9, 10, 55, 100)])

model = GPSModel(ModelConfig(layers=2, hidden_dim=32, rwse_m=16, pe_dim=8, attn_dropout=0.2))
state = TrainState(model)
settings = TrainSettings(batch_size=32, lr=2e-3, epochs=10, warmup_epochs=1)
print("MAE of predicting the mean:",
      np.mean(np.abs([g.y for g in graphs[240:]] - np.mean([g.y for g in graphs[:240]]))))


def show(row):
    print(f"epoch {row['epoch']:2d}  lr {row['lr']:.2e}  loss {row['train_loss']:.3f}  "
          f"train {row['train_metric']:.3f}  val {row['val_metric']:.3f}")

rows = fit(state, train, val, None, settings, on_epoch=show)

# fit leaves the best-validation parameters in the model.
print("best epoch", state.best.epoch, "val MAE", evaluate(model, val))


# The config-driven path
# ----------------------
# A run is described by flat key=value text; every key is a RunConfig
# field. The JSON record echoes the parsed config in canonical form.

text = """
train_size = 200
val_size = 50
test_size = 50
layers = 2
hidden_dim = 32
pe_dim = 8
rwse_m = 16
epochs = 4
warmup_epochs = 1
"""
cfg = parse_config(text)
print(format_config(cfg).splitlines()[:4], "...")

with tempfile.TemporaryDirectory() as tmp:
    rec = run_config(replace(cfg, out_dir=tmp), graphs=graphs, log=print)
    print(sorted(p.name for p in Path(tmp).iterdir()))
    print({k: rec[k] for k in ("num_params", "best_epoch", "val_metric", "test_metric")})
