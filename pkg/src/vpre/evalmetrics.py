"""Ranking and image metrics: AUC (all / cold items), pairwise-diversity
via one-minus-mean-SSIM, and an exp-mean-KL quality score computed over an
internally trained category classifier (which also provides the frozen
visual features used by the feature-based rankers)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import Corpus
from .nn import Adam, Conv2d, Dense, MaxPool2d, Network
from .tensor import Tape, Tensor

LUMA = np.array([0.299, 0.587, 0.114])  # ITU-R 601


# ---------------------------------------------------------------------------
# AUC

@dataclass
class AucReport:
    auc: float
    cold_auc: float
    per_user: np.ndarray
    cold_per_user: np.ndarray
    n_users_skipped: int = 0
    n_users_skipped_cold: int = 0

    def summary(self) -> dict:
        def stats(arr):
            if arr.size == 0:
                return {"mean": None, "std": None, "min": None, "max": None}
            return {"mean": float(arr.mean()), "std": float(arr.std()),
                    "min": float(arr.min()), "max": float(arr.max())}
        return {"auc": self.auc, "cold_auc": self.cold_auc,
                "per_user": stats(self.per_user), "cold_per_user": stats(self.cold_per_user)}


def auc(corpus: Corpus, scorer, target: str = "test") -> AucReport:
    """Fraction of (held-out item, unobserved item) pairs ranked correctly.

    `scorer(user_id)` returns one score per catalog item. For each user the
    held-out item competes against every item outside the user's positive
    set; ties count as failures. The cold variant keeps only pairs where
    both items are cold (under 5 training interactions), skipping users
    whose held-out item is not cold.
    """
    if not corpus.has_split():
        raise ValueError("corpus has no split assigned")
    held_map = corpus.val if target == "val" else corpus.test
    cold = corpus.cold_items()
    per_user, cold_per_user = [], []
    skipped = skipped_cold = 0
    for u in corpus.users:
        scores = np.asarray(scorer(u), dtype=np.float64)
        if scores.shape != (corpus.n_items,):
            raise ValueError(f"scorer returned shape {scores.shape}, expected ({corpus.n_items},)")
        target_idx = corpus.item_index[held_map[u]]
        candidates = np.ones(corpus.n_items, dtype=bool)
        candidates[corpus.positive_indices(u)] = False
        n = int(candidates.sum())
        if n == 0:
            warnings.warn(f"user {u} has no comparison candidates; skipped")
            skipped += 1
            continue
        wins = int(np.sum(scores[target_idx] > scores[candidates]))
        per_user.append(wins / n)
        cold_candidates = candidates & cold
        n_cold = int(cold_candidates.sum())
        if not cold[target_idx] or n_cold == 0:
            skipped_cold += 1
            continue
        cold_wins = int(np.sum(scores[target_idx] > scores[cold_candidates]))
        cold_per_user.append(cold_wins / n_cold)
    per_user = np.array(per_user)
    cold_per_user = np.array(cold_per_user)
    return AucReport(
        auc=float(np.mean(per_user)) if per_user.size else float("nan"),
        cold_auc=float(np.mean(cold_per_user)) if cold_per_user.size else float("nan"),
        per_user=per_user, cold_per_user=cold_per_user,
        n_users_skipped=skipped, n_users_skipped_cold=skipped_cold)


# ---------------------------------------------------------------------------
# SSIM diversity

def _to_luma(img: np.ndarray) -> tuple[np.ndarray, float]:
    """Accepts uint8 (H,W,3) or float (3,H,W) in [-1,1]; returns (gray, data_range)."""
    if img.dtype == np.uint8:
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"expected (H,W,3) uint8 image, got {img.shape}")
        return img.astype(np.float64) @ LUMA, 255.0
    if img.ndim == 3 and img.shape[0] == 3:
        return np.tensordot(LUMA, img.astype(np.float64), axes=(0, 0)), 2.0
    raise ValueError(f"unrecognized image layout {img.shape} ({img.dtype})")


def ssim(a: np.ndarray, b: np.ndarray, window: int = 8,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity over dense uniform windows, on luma."""
    ga, ra = _to_luma(a)
    gb, rb = _to_luma(b)
    if ga.shape != gb.shape:
        raise ValueError(f"image shapes differ: {ga.shape} vs {gb.shape}")
    if min(ga.shape) < window:
        raise ValueError(f"images smaller than the {window}x{window} SSIM window")
    data_range = max(ra, rb)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    wa = np.lib.stride_tricks.sliding_window_view(ga, (window, window))
    wb = np.lib.stride_tricks.sliding_window_view(gb, (window, window))
    n = window * window
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    # sample (n-1) statistics, as in the reference uniform-window formulation
    va = (wa.var(axis=(-1, -2)) * n) / (n - 1)
    vb = (wb.var(axis=(-1, -2)) * n) / (n - 1)
    cov = ((wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b) * n / (n - 1)
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)
    return float(np.mean(num / den))


def opposite_mean_ssim(image_sets) -> float:
    """1 - mean pairwise SSIM across queries; higher means more diverse."""
    set_means = []
    for images in image_sets:
        images = list(images)
        if len(images) < 2:
            raise ValueError("each image set needs at least 2 images")
        vals = [ssim(images[i], images[j])
                for i in range(len(images)) for j in range(i + 1, len(images))]
        set_means.append(np.mean(vals))
    if not set_means:
        raise ValueError("no image sets given")
    return float(1.0 - np.mean(set_means))


# ---------------------------------------------------------------------------
# quality score

def quality_score(images: np.ndarray, classifier: "CategoryClassifier") -> float:
    """exp of the mean KL between per-image class posteriors and their marginal."""
    probs = classifier.predict_proba(images)
    if probs.shape[0] < 2:
        raise ValueError("quality_score needs at least 2 images")
    marginal = probs.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = probs * (np.log(probs) - np.log(marginal)[None, :])
    kl = np.where(probs > 0, terms, 0.0).sum(axis=1)
    return float(np.exp(kl.mean()))


# ---------------------------------------------------------------------------
# proxy category classifier

class CategoryClassifier(Network):
    """Small convnet over item images; the penultimate layer doubles as the
    frozen feature extractor for the feature-based rankers."""

    def __init__(self, n_categories: int, image_side: int = 32,
                 feature_dim: int = 64, seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC1A55)))
        if image_side % 8 != 0:
            raise ValueError("classifier image side must be a multiple of 8")
        self.image_side = image_side
        self.n_categories = n_categories
        self.feature_dim = feature_dim
        he = lambda fan_in: float(np.sqrt(2.0 / fan_in))
        self.conv1 = Conv2d(3, 16, 3, 1, 1, rng, std=he(27))
        self.conv2 = Conv2d(16, 32, 3, 1, 1, rng, std=he(144))
        self.conv3 = Conv2d(32, 32, 3, 1, 1, rng, std=he(288))
        self.pool = MaxPool2d(2)
        flat = 32 * (image_side // 8) ** 2
        self.fc1 = Dense(flat, feature_dim, rng, std=he(flat))
        self.fc2 = Dense(feature_dim, n_categories, rng, std=he(feature_dim))

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = self.pool(T.relu(self.conv1(x)))
        h = self.pool(T.relu(self.conv2(h)))
        h = self.pool(T.relu(self.conv3(h)))
        feats = T.relu(self.fc1(T.reshape(h, (h.shape[0], -1))))
        return self.fc2(feats), feats

    def _batched(self, images: np.ndarray, batch: int = 256):
        for k in range(0, len(images), batch):
            logits, feats = self.forward(Tensor(images[k:k + batch]))
            yield logits.data, feats.data

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        outs = []
        for logits, _ in self._batched(images):
            z = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(z)
            p = e / e.sum(axis=1, keepdims=True)
            outs.append(p)
        return np.concatenate(outs, axis=0)

    def features(self, images: np.ndarray) -> np.ndarray:
        return np.concatenate([f for _, f in self._batched(images)], axis=0)

    def accuracy(self, images: np.ndarray, labels: np.ndarray) -> float:
        preds = np.argmax(self.predict_proba(images), axis=1)
        return float(np.mean(preds == np.asarray(labels)))


@dataclass
class ClassifierConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    feature_dim: int = 64
    seed: int = 0


# ---------------------------------------------------------------------------
# four-source comparison harness

def compare_sources(corpus: Corpus, dvbpr, gan, classifier: "CategoryClassifier",
                    n_trials: int = 100, k: int = 3, quality_weight: float = 1.0,
                    n_starts: int = 8, iterations: int = 30, seed: int = 0,
                    log=None) -> dict:
    """Random real / random generated / retrieval / synthesis, compared on
    preference score, quality score, and pairwise diversity.

    Each trial draws a user and takes the category of their held-out test
    item; every source returns k images for that (user, category) query.
    """
    from .designer import DesignQuery, select_top_k, synthesize_best
    from .rank import upscale_images_np
    from .tensor import Tensor

    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC04472)))
    images_all = corpus.float_images()
    cnn_side = dvbpr.net.input_side
    embs = np.concatenate(
        [dvbpr.embed_images(Tensor(upscale_images_np(images_all, cnn_side)[j:j + 256]),
                            mode="eval").data
         for j in range(0, corpus.n_items, 256)], axis=0)

    sources = ["real_random", "generated_random", "retrieval", "synthesis"]
    prefs = {s: [] for s in sources}
    pooled = {s: [] for s in sources}
    per_query_ssim_sets = {s: [] for s in sources}

    def record(source, imgs, pref_values):
        prefs[source].extend(float(v) for v in pref_values)
        pooled[source].extend(np.asarray(imgs, dtype=np.float32))
        if k >= 2:
            per_query_ssim_sets[source].append(np.asarray(imgs, dtype=np.float32))

    for trial in range(n_trials):
        ui = int(rng.integers(corpus.n_users))
        user_id = corpus.users[ui]
        cat = corpus.items[corpus.item_index[corpus.test[user_id]]].category_id
        member = np.array(corpus.category_items(cat))
        theta = dvbpr.visual_factors.data[ui]

        take = min(k, len(member))
        pick = member[rng.choice(len(member), size=take, replace=len(member) < k)]
        record("real_random", upscale_images_np(images_all[pick], gan.image_side)
               if corpus.image_side != gan.image_side else images_all[pick],
               embs[pick] @ theta)

        z = gan.sample_latent(rng, k)
        gen = gan.generate(z, cat).data
        gen_pref = (dvbpr.embed_images(
            Tensor(upscale_images_np(gen, cnn_side)), mode="eval").data @ theta)
        record("generated_random", gen, gen_pref)

        scores = embs[member] @ theta
        top = member[np.argsort(-scores)[:k]]
        record("retrieval", images_all[top] if corpus.image_side == gan.image_side
               else upscale_images_np(images_all[top], gan.image_side), embs[top] @ theta)

        q = DesignQuery(user_id=user_id, category_id=cat,
                        quality_weight=quality_weight, n_starts=max(n_starts, k),
                        k=k, mode="sample", iterations=iterations,
                        seed=int(rng.integers(2 ** 31)))
        cands = synthesize_best(q, corpus, dvbpr, gan)
        chosen = select_top_k(cands, min(k, len(cands)), mode="sample", rng=rng)
        record("synthesis", np.stack([c.image for c in chosen]),
               [c.preference for c in chosen])
        if log is not None:
            log({"trial": trial, "user": user_id, "category": cat})

    report = {}
    for s in sources:
        vals = np.array(prefs[s])
        entry = {
            "preference_mean": float(vals.mean()),
            "preference_std": float(vals.std()),
            "quality": quality_score(np.stack(pooled[s]), classifier),
            "n_images": len(pooled[s]),
            "diversity": None,
        }
        if k >= 2:
            entry["diversity"] = opposite_mean_ssim(per_query_ssim_sets[s])
        report[s] = entry
    return report


def format_auc_table(results: dict[str, "AucReport"]) -> str:
    """Aligned-column text table of AUC results (all-items and cold rows)."""
    headers = ["Setting"] + list(results)
    rows = [["All Items"] + [f"{r.auc:.4f}" for r in results.values()],
            ["Cold Items"] + [f"{r.cold_auc:.4f}" for r in results.values()]]
    widths = [max(len(headers[i]), *(len(r[i]) for r in rows)) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(r[i].ljust(widths[i]) for i in range(len(headers))) for r in rows]
    return "\n".join(lines)


def format_comparison_table(report: dict) -> str:
    """Aligned-column text rendering of a compare_sources report."""
    headers = ["Item Source", "Preference Score", "Quality", "Diversity"]
    rows = []
    for name, e in report.items():
        div = "-" if e["diversity"] is None else f"{e['diversity']:.4f}"
        rows.append([name, f"{e['preference_mean']:.4f} +/- {e['preference_std']:.2f}",
                     f"{e['quality']:.4f}", div])
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines)


def save_classifier(path: str, clf: CategoryClassifier, seed: int = 0) -> None:
    import json
    import os
    from . import checkpoint
    checkpoint.save(path, clf.state_arrays())
    tmp = path + ".json.tmp"
    with open(tmp, "w") as f:
        json.dump({"kind": "classifier", "n_categories": clf.n_categories,
                   "image_side": clf.image_side, "feature_dim": clf.feature_dim,
                   "seed": seed}, f, sort_keys=True, indent=1)
    os.replace(tmp, path + ".json")


def load_classifier(path: str) -> CategoryClassifier:
    import json
    from . import checkpoint
    with open(path + ".json") as f:
        sc = json.load(f)
    clf = CategoryClassifier(sc["n_categories"], sc["image_side"],
                             sc["feature_dim"], seed=sc.get("seed", 0))
    clf.load_state_arrays(checkpoint.load(path))
    return clf


def train_classifier(corpus: Corpus, config: ClassifierConfig | None = None):
    """Fit the proxy classifier on (item image, category) pairs."""
    config = config or ClassifierConfig()
    clf = CategoryClassifier(corpus.n_categories, corpus.image_side,
                             config.feature_dim, seed=config.seed)
    images = corpus.float_images()
    labels = np.array([it.category_id for it in corpus.items], dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xC1A55, 1)))
    opt = Adam(lr=config.lr)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(images))
        losses = []
        for k in range(0, len(order), config.batch_size):
            idx = order[k:k + config.batch_size]
            with Tape() as tape:
                logits, _ = clf.forward(Tensor(images[idx]))
                loss = T.softmax_cross_entropy(logits, labels[idx])
            opt.step(clf.params(), tape.gradients(loss))
            losses.append(loss.item())
        history.append({"epoch": epoch, "loss": float(np.mean(losses))})
    return clf, history
