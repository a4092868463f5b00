"""Pilot: GAN sanity sweep over (batch, lr) at fixed 25 epochs."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from vpre.corpus import split_leave_one_out
from vpre.evalmetrics import ClassifierConfig, quality_score, train_classifier
from vpre.gan import GanConfig, train_gan
from vpre.synth import SyntheticStyleSpec, generate_synthetic

seed = 11
corpus = split_leave_one_out(generate_synthetic(SyntheticStyleSpec(), 200, 500, seed=seed), seed=seed)
clf, _ = train_classifier(corpus, ClassifierConfig(epochs=20, seed=seed))
labels = np.array([it.category_id for it in corpus.items])
images = corpus.float_images()

for batch, lr in [(8, 1e-3), (8, 5e-4), (16, 1e-3)]:
    t0 = time.time()
    res = train_gan(corpus, GanConfig(image_side=32, batch_size=batch, epochs=25,
                                      lr=lr, seed=seed))
    pair = res.pair
    hold = res.holdout_indices
    d_real = pair.discriminate(images[hold], labels[hold]).data
    rng = np.random.default_rng(0)
    fake = pair.generate(pair.sample_latent(rng, len(hold)), labels[hold]).data
    d_fake = pair.discriminate(fake, labels[hold]).data
    hits = 0
    pool = []
    for c in range(corpus.n_categories):
        gen = pair.generate(pair.sample_latent(rng, 50), np.full(50, c)).data
        pool.append(gen)
        hits += int(np.sum(np.argmax(clf.predict_proba(gen), axis=1) == c))
    purity = hits / 200
    gen_all = np.concatenate(pool)
    is_gen = quality_score(gen_all, clf)
    is_noise = quality_score(rng.uniform(-1, 1, gen_all.shape).astype(np.float32), clf)
    print(f"batch={batch} lr={lr}: steps={len(res.history)} gap={d_real.mean()-d_fake.mean():+.3f} "
          f"purity={purity:.3f} IS(gen)={is_gen:.3f} IS(noise)={is_noise:.3f} "
          f"({time.time()-t0:.0f}s)", flush=True)
