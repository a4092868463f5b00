"""Pilot: DVBPR hyperparameter probe on the 200x500 corpus."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from vpre.corpus import split_leave_one_out
from vpre.evalmetrics import auc
from vpre.rank import RankConfig, make_scorer, train
from vpre.synth import SyntheticStyleSpec, generate_synthetic

seed = 11
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 60
lr = float(sys.argv[2]) if len(sys.argv) > 2 else 1e-3
lrf = float(sys.argv[3]) if len(sys.argv) > 3 else 1e-2

corpus = split_leave_one_out(generate_synthetic(SyntheticStyleSpec(), 200, 500, seed=seed), seed=seed)
t0 = time.time()
res = train(RankConfig(model="dvbpr", epochs=epochs, lr=lr, lr_factors=lrf, seed=seed),
            corpus, log=lambda e: print(f"  {e['epoch']:3d} loss={e['loss']:8.2f} "
                                        f"sig={e['mean_sigmoid']:.3f} val={e['val_auc']:.4f}", flush=True))
rep = auc(corpus, make_scorer(res.model, corpus))
print(f"epochs={epochs} lr={lr} lrf={lrf}: best_val={res.best_val_auc:.4f}@{res.best_epoch} "
      f"test={rep.auc:.4f} cold={rep.cold_auc:.4f} time={time.time()-t0:.0f}s")
