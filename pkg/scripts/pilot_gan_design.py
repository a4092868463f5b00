"""Pilot: GAN sanity at 25 epochs, design directions, inversion rate."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from vpre.corpus import split_leave_one_out
from vpre.designer import DesignQuery, invert_prototype, retrieve_best, synthesize_best
from vpre.evalmetrics import ClassifierConfig, quality_score, train_classifier
from vpre.gan import GanConfig, train_gan
from vpre.rank import RankConfig, train
from vpre.synth import SyntheticStyleSpec, generate_synthetic

seed = 11
t0 = time.time()
spec = SyntheticStyleSpec()
corpus = split_leave_one_out(generate_synthetic(spec, 200, 500, seed=seed), seed=seed)
clf, _ = train_classifier(corpus, ClassifierConfig(epochs=20, seed=seed))
labels = np.array([it.category_id for it in corpus.items])
print(f"[{time.time()-t0:5.0f}s] classifier acc "
      f"{clf.accuracy(corpus.float_images(), labels):.3f}", flush=True)

gres = train_gan(corpus, GanConfig(image_side=32, batch_size=8, epochs=25, lr=1e-3, seed=seed),
                 log=lambda e: print("   gan", e, flush=True) if e["step"] % 100 == 0 else None)
pair = gres.pair
hold = gres.holdout_indices
images = corpus.float_images()
d_real = pair.discriminate(images[hold], labels[hold]).data
rng = np.random.default_rng(0)
z = pair.sample_latent(rng, len(hold))
fake = pair.generate(z, labels[hold]).data
d_fake = pair.discriminate(fake, labels[hold]).data
print(f"[{time.time()-t0:5.0f}s] GAN 25ep: D(real)={d_real.mean():.3f} "
      f"D(fake)={d_fake.mean():.3f} gap={d_real.mean()-d_fake.mean():+.3f}", flush=True)

# category purity: generate per category, classify
n_per = 50
purity_hits = 0
gen_pool = []
for c in range(corpus.n_categories):
    z = pair.sample_latent(rng, n_per)
    gen = pair.generate(z, np.full(n_per, c)).data
    gen_pool.append(gen)
    preds = np.argmax(clf.predict_proba(gen), axis=1)
    purity_hits += int(np.sum(preds == c))
purity = purity_hits / (n_per * corpus.n_categories)
gen_all = np.concatenate(gen_pool)
is_gen = quality_score(gen_all, clf)
noise = rng.uniform(-1, 1, size=gen_all.shape).astype(np.float32)
is_noise = quality_score(noise, clf)
print(f"[{time.time()-t0:5.0f}s] purity={purity:.3f} (need > {1/corpus.n_categories + 0.2:.2f}) "
      f"IS(gen)={is_gen:.3f} IS(noise)={is_noise:.3f}", flush=True)

# DVBPR for the design stage
dres = train(RankConfig(model="dvbpr", epochs=60, lr=1e-3, lr_factors=1e-2, seed=seed), corpus)
dv = dres.model
print(f"[{time.time()-t0:5.0f}s] dvbpr val={dres.best_val_auc:.4f}", flush=True)

# design: 30 queries, delta-hat vs delta, then eta sweep on 30 queries
qrng = np.random.default_rng(123)
n_q = 30
queries = []
for _ in range(n_q):
    ui = int(qrng.integers(corpus.n_users))
    u = corpus.users[ui]
    cat = corpus.items[corpus.item_index[corpus.test[u]]].category_id
    queries.append((u, cat))

t1 = time.time()
deltas, delta_hats = [], []
for qi, (u, cat) in enumerate(queries):
    _, dscore = retrieve_best(u, cat, corpus, dv)
    deltas.append(dscore)
    cands = synthesize_best(DesignQuery(user_id=u, category_id=cat, n_starts=6,
                                        k=1, iterations=30, seed=qi), corpus, dv, pair)
    delta_hats.append(cands[0].objective)
    assert all(b >= a for a, b in zip(cands[0].trace, cands[0].trace[1:]))
per_q = (time.time() - t1) / n_q
print(f"[{time.time()-t0:5.0f}s] mean delta={np.mean(deltas):.4f} "
      f"mean delta_hat={np.mean(delta_hats):.4f} ({per_q:.2f}s/query m=6 it=30)", flush=True)

t1 = time.time()
etas = [0.0, 0.5, 1.0, 5.0, 10.0]
prefs = {e: [] for e in etas}
pens = {e: [] for e in etas}
for qi, (u, cat) in enumerate(queries):
    for eta in etas:
        cands = synthesize_best(DesignQuery(user_id=u, category_id=cat, n_starts=4,
                                            k=1, iterations=20, quality_weight=eta,
                                            seed=1000 + qi), corpus, dv, pair)
        prefs[eta].append(cands[0].preference)
        pens[eta].append(cands[0].quality_penalty)
per_cell = (time.time() - t1) / (n_q * len(etas))
print(f"[{time.time()-t0:5.0f}s] eta sweep ({per_cell:.2f}s/cell m=4 it=20):", flush=True)
for eta in etas:
    print(f"   eta={eta:4.1f}: pref={np.mean(prefs[eta]):8.4f} pen={np.mean(pens[eta]):.4f}")

# inversion success rate on 20 samples
t1 = time.time()
errs = []
for k in range(20):
    z0 = pair.sample_latent(np.random.default_rng(500 + k), 1)[0]
    cat = int(np.random.default_rng(600 + k).integers(corpus.n_categories))
    target = pair.generate(z0, cat).data[0]
    res = invert_prototype(target, cat, pair, starts=4, iterations=120, seed=k)
    errs.append(res.error)
errs = np.array(errs)
print(f"[{time.time()-t0:5.0f}s] inversion: median={np.median(errs):.4f} "
      f"frac<=0.1={np.mean(errs <= 0.1):.2f} ({(time.time()-t1)/20:.1f}s/sample)", flush=True)
print("TOTAL", round(time.time() - t0), "s")
