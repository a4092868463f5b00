"""Pilot: method ordering on the 200x500 synthetic corpus (one seed)."""
import json
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from vpre.corpus import split_leave_one_out
from vpre.evalmetrics import ClassifierConfig, auc, train_classifier
from vpre.rank import (RankConfig, make_scorer, rank_popularity, rank_random,
                       rank_visrank, train, tune_lambda)
from vpre.synth import SyntheticStyleSpec, generate_synthetic

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 11
t_start = time.time()
corpus = split_leave_one_out(generate_synthetic(SyntheticStyleSpec(), 200, 500, seed=seed), seed=seed)
print(f"[{time.time()-t_start:6.1f}s] corpus: {corpus.n_interactions} interactions, "
      f"cold items: {int(corpus.cold_items().sum())}/{corpus.n_items}", flush=True)

clf, _ = train_classifier(corpus, ClassifierConfig(epochs=20, seed=seed))
feats = clf.features(corpus.float_images())
labels = np.array([it.category_id for it in corpus.items])
print(f"[{time.time()-t_start:6.1f}s] classifier acc={clf.accuracy(corpus.float_images(), labels):.3f}", flush=True)

results = {}
results["rand"] = auc(corpus, rank_random(corpus, seed))
results["pop"] = auc(corpus, rank_popularity(corpus))
results["visrank"] = auc(corpus, rank_visrank(corpus, feats))
print(f"[{time.time()-t_start:6.1f}s] baselines done", flush=True)

mf = tune_lambda(RankConfig(model="mf", epochs=30, lr=0.01, seed=seed), corpus,
                 log=lambda e: print("  mf", e, flush=True))
results["mf"] = auc(corpus, make_scorer(mf.model, corpus))
print(f"[{time.time()-t_start:6.1f}s] mf best lambda={mf.config.reg_lambda if mf.config else '?'} "
      f"val={mf.best_val_auc:.3f}", flush=True)

vbpr = tune_lambda(RankConfig(model="vbpr", epochs=30, lr=0.01, seed=seed), corpus,
                   item_features=feats, log=lambda e: print("  vbpr", e, flush=True))
results["vbpr"] = auc(corpus, make_scorer(vbpr.model, corpus))
print(f"[{time.time()-t_start:6.1f}s] vbpr val={vbpr.best_val_auc:.3f}", flush=True)

dv = train(RankConfig(model="dvbpr", epochs=30, lr=1e-3, seed=seed), corpus,
           log=lambda e: print("  dvbpr", e, flush=True))
results["dvbpr"] = auc(corpus, make_scorer(dv.model, corpus))
print(f"[{time.time()-t_start:6.1f}s] dvbpr val={dv.best_val_auc:.3f}", flush=True)

print("\n=== seed", seed, "===")
for name, rep in results.items():
    print(f"{name:8s} auc={rep.auc:.4f} cold={rep.cold_auc:.4f}")
print(f"total {time.time()-t_start:.0f}s")
with open(f"/tmp/pilot_rank_{seed}.json", "w") as f:
    json.dump({k: {"auc": v.auc, "cold": v.cold_auc} for k, v in results.items()}, f)
