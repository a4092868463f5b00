"""Pilot: DVBPR vs VBPR margin with a denser corpus and longer training."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from vpre.corpus import split_leave_one_out
from vpre.evalmetrics import ClassifierConfig, auc, train_classifier
from vpre.rank import RankConfig, make_scorer, train, tune_lambda
from vpre.synth import SyntheticStyleSpec, generate_synthetic

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 11
extra = float(sys.argv[2]) if len(sys.argv) > 2 else 2.5
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 90

spec = SyntheticStyleSpec(extra_positives_mean=extra)
corpus = split_leave_one_out(generate_synthetic(spec, 200, 500, seed=seed), seed=seed)
print(f"interactions={corpus.n_interactions} per-item={corpus.n_interactions/500:.2f}", flush=True)

clf, _ = train_classifier(corpus, ClassifierConfig(epochs=20, seed=seed))
feats = clf.features(corpus.float_images())

t0 = time.time()
vb = tune_lambda(RankConfig(model="vbpr", epochs=30, lr=0.01, seed=seed), corpus,
                 item_features=feats)
vrep = auc(corpus, make_scorer(vb.model, corpus))
print(f"vbpr: val={vb.best_val_auc:.4f} test={vrep.auc:.4f} cold={vrep.cold_auc:.4f} "
      f"({time.time()-t0:.0f}s)", flush=True)

t0 = time.time()
dv = train(RankConfig(model="dvbpr", epochs=epochs, lr=1e-3, lr_factors=1e-2, seed=seed),
           corpus, log=lambda e: print(f"  {e['epoch']:3d} val={e['val_auc']:.4f}", flush=True)
           if e["epoch"] % 10 == 9 else None)
drep = auc(corpus, make_scorer(dv.model, corpus))
print(f"dvbpr: val={dv.best_val_auc:.4f}@{dv.best_epoch} test={drep.auc:.4f} "
      f"cold={drep.cold_auc:.4f} ({time.time()-t0:.0f}s)", flush=True)
print(f"margin: all={drep.auc - vrep.auc:+.4f} cold={drep.cold_auc - vrep.cold_auc:+.4f}")
