"""Preference predictors and pairwise ranking training.

Three learned predictors share one training loop:
  * mf     — bias + latent-factor dot product
  * vbpr   — mf plus a visual term over frozen precomputed image features
  * dvbpr  — per-user visual factors against a convolutional extractor
             trained end to end; positive and negative images go through
             the same weight set (two forward passes, summed gradients)

Pairwise differences drop the global offset and user bias, which cancel
between the two arms, so ranking never depends on them. Plus the
non-learned baselines: random, popularity, and feature-distance ranking.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import Corpus
from .nn import Adam, Conv2d, Dense, Dropout, MaxPool2d, Network, gaussian_init
from .tensor import NonFiniteError, Tape, Tensor


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# convolutional feature extractor

CNN_PRESETS = {
    # (out_ch, kernel, stride, pad, pool_after) per conv; dense hidden widths
    "full": {
        "input_side": 224,
        "convs": [(64, 11, 4, 0, True), (256, 5, 1, 2, True), (256, 3, 1, 1, False),
                  (256, 3, 1, 1, False), (256, 3, 1, 1, True)],
        "hidden": [4096, 4096],
    },
    "desk": {
        "input_side": 64,
        "convs": [(32, 5, 2, 2, True), (64, 3, 1, 1, True), (64, 3, 1, 1, True)],
        "hidden": [128],
    },
    "tiny": {
        "input_side": 16,
        "convs": [(8, 3, 1, 1, True), (16, 3, 1, 1, True)],
        "hidden": [32],
    },
}


class FeatureNet(Network):
    """Convolutional image scorer backbone with a latent-width final layer."""

    def __init__(self, latent_dim: int, preset: str = "desk",
                 input_side: int | None = None, dropout: float = 0.5,
                 init_std: float = 0.01, rng: np.random.Generator | None = None,
                 conv_init: str = "he"):
        cfg = CNN_PRESETS[preset]
        rng = rng if rng is not None else np.random.default_rng(0)
        self.preset = preset
        self.latent_dim = latent_dim
        self.input_side = input_side or cfg["input_side"]
        self._convs = []
        side = self.input_side
        c_in = 3
        for k, (c_out, ks, st, pd, pool) in enumerate(cfg["convs"]):
            std = init_std if conv_init == "gaussian" \
                else float(np.sqrt(2.0 / (c_in * ks * ks)))
            layer = Conv2d(c_in, c_out, ks, st, pd, rng, std=std)
            setattr(self, f"conv{k + 1}", layer)
            self._convs.append((layer, pool))
            side = (side + 2 * pd - ks) // st + 1
            if pool:
                side //= 2
            c_in = c_out
        if side < 1:
            raise ValueError(f"input side {self.input_side} too small for preset {preset!r}")
        self.pool = MaxPool2d(2)
        self.drop = Dropout(dropout)
        flat = c_in * side * side
        self._dense = []
        n_dense = len(cfg["hidden"]) + 1
        for k, width in enumerate(cfg["hidden"]):
            layer = Dense(flat, width, rng, std=init_std)
            setattr(self, f"full{len(cfg['convs']) + 1 + k}", layer)
            self._dense.append(layer)
            flat = width
        self.head = Dense(flat, latent_dim, rng, std=init_std)
        self.n_dense = n_dense

    def forward(self, images, mode: str = "eval",
                rng: np.random.Generator | None = None) -> Tensor:
        h = images if isinstance(images, Tensor) else Tensor(images)
        for layer, pool in self._convs:
            h = T.relu(layer(h))
            if pool:
                h = self.pool(h)
        h = T.reshape(h, (h.shape[0], -1))
        for layer in self._dense:
            h = self.drop(T.relu(layer(h)), mode, rng)
        return self.head(h)


# ---------------------------------------------------------------------------
# predictors

@dataclass
class TripletBatch:
    user_idx: np.ndarray
    pos_idx: np.ndarray
    neg_idx: np.ndarray

    def __len__(self):
        return len(self.user_idx)


def sample_triplets(corpus: Corpus, batch_size: int, rng: np.random.Generator) -> TripletBatch:
    """Uniform user, uniform training positive, rejection-sampled negative.

    The negative is drawn outside the user's full positive set, so no
    split leakage is possible by construction.
    """
    if not corpus.has_split():
        raise ValueError("corpus has no split assigned")
    users, positives, negatives = [], [], []
    n_items = corpus.n_items
    for _ in range(batch_size):
        u = int(rng.integers(corpus.n_users))
        uid = corpus.users[u]
        train_items = corpus.train[uid]
        if not train_items:
            raise ValueError(f"user {uid} has an empty training split")
        pos = corpus.item_index[train_items[int(rng.integers(len(train_items)))]]
        owned = corpus.positives[uid]
        if len(owned) >= n_items:
            raise ValueError(f"user {uid} owns every item; cannot sample a negative")
        held = set(owned)
        while True:
            j = int(rng.integers(n_items))
            if corpus.item_ids[j] not in held:
                break
        users.append(u)
        positives.append(pos)
        negatives.append(j)
    return TripletBatch(np.array(users), np.array(positives), np.array(negatives))


def bpr_difference(x_ui: float, x_uj: float) -> float:
    """Pairwise score difference; any user-constant terms cancel."""
    return x_ui - x_uj


def bpr_loss(batch: TripletBatch, predictor, mode: str = "train",
             rng: np.random.Generator | None = None) -> Tensor:
    """Negated pairwise objective: sum softplus(-(x_ui - x_uj)) + reg."""
    if len(batch) == 0:
        raise ValueError("empty triplet batch")
    diff = predictor.triplet_difference(batch, mode=mode, rng=rng)
    loss = T.sum_(T.softplus(T.neg(diff)))
    reg = predictor.regularization()
    if reg is not None:
        loss = T.add(loss, reg)
    return loss


class MfModel:
    """Offset + user/item biases + latent factor dot product."""

    kind = "mf"

    def __init__(self, n_users: int, n_items: int, latent_dim: int,
                 reg_lambda: float, rng: np.random.Generator,
                 init_std: float = 0.01):
        self.n_users, self.n_items, self.latent_dim = n_users, n_items, latent_dim
        self.reg_lambda = reg_lambda
        self.alpha = Tensor(np.zeros(()), requires_grad=True)
        self.user_bias = Tensor(np.zeros(n_users, dtype=np.float32), requires_grad=True)
        self.item_bias = Tensor(np.zeros(n_items, dtype=np.float32), requires_grad=True)
        self.user_factors = gaussian_init(rng, (n_users, latent_dim), init_std)
        self.item_factors = gaussian_init(rng, (n_items, latent_dim), init_std)

    def params(self) -> dict[str, Tensor]:
        return {"alpha": self.alpha, "user_bias": self.user_bias,
                "item_bias": self.item_bias, "user_factors": self.user_factors,
                "item_factors": self.item_factors}

    def regularization(self) -> Tensor | None:
        if self.reg_lambda == 0.0:
            return None
        sq = T.add(T.add(T.sum_(T.mul(self.item_bias, self.item_bias)),
                         T.sum_(T.mul(self.user_factors, self.user_factors))),
                   T.sum_(T.mul(self.item_factors, self.item_factors)))
        return T.mul(sq, self.reg_lambda)

    def triplet_difference(self, batch: TripletBatch, mode="train", rng=None) -> Tensor:
        gu = T.gather_rows(self.user_factors, batch.user_idx)
        gi = T.gather_rows(self.item_factors, batch.pos_idx)
        gj = T.gather_rows(self.item_factors, batch.neg_idx)
        bi = T.gather_rows(self.item_bias, batch.pos_idx)
        bj = T.gather_rows(self.item_bias, batch.neg_idx)
        latent = T.sum_(T.mul(gu, T.sub(gi, gj)), axis=1)
        return T.add(T.sub(bi, bj), latent)

    def score(self, user_idx: int, item_idx: int) -> float:
        """Full predictor value, offset and biases included."""
        return float(self.alpha.data) + float(self.user_bias.data[user_idx]) \
            + float(self.item_bias.data[item_idx]) \
            + float(self.user_factors.data[user_idx] @ self.item_factors.data[item_idx])

    def rank_scores(self, user_idx: int) -> np.ndarray:
        """Per-item scores for ranking; drops the user-constant terms."""
        return (self.item_bias.data
                + self.item_factors.data @ self.user_factors.data[user_idx]).astype(np.float64)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params().items()}

    def load_state_arrays(self, arrays):
        for k, p in self.params().items():
            p.data = np.array(arrays[k], dtype=p.data.dtype)


class VbprModel(MfModel):
    """MF plus a visual preference term over frozen image features."""

    kind = "vbpr"

    def __init__(self, n_users: int, n_items: int, latent_dim: int,
                 item_features: np.ndarray, reg_lambda: float,
                 rng: np.random.Generator, init_std: float = 0.01):
        super().__init__(n_users, n_items, latent_dim, reg_lambda, rng, init_std)
        if item_features.shape[0] != n_items:
            raise ValueError("item_features row count must match item count")
        self.item_features = item_features.astype(np.float32)  # frozen, never updated
        self.visual_factors = gaussian_init(rng, (n_users, latent_dim), init_std)
        self.projection = gaussian_init(rng, (latent_dim, item_features.shape[1]), init_std)

    def params(self):
        p = super().params()
        p.update({"visual_factors": self.visual_factors, "projection": self.projection})
        return p

    def regularization(self):
        if self.reg_lambda == 0.0:
            return None
        sq = T.add(super().regularization(),
                   T.mul(T.add(T.sum_(T.mul(self.visual_factors, self.visual_factors)),
                               T.sum_(T.mul(self.projection, self.projection))),
                         self.reg_lambda))
        return sq

    def triplet_difference(self, batch, mode="train", rng=None):
        base = super().triplet_difference(batch, mode, rng)
        fdiff = Tensor(self.item_features[batch.pos_idx] - self.item_features[batch.neg_idx])
        proj = T.matmul(fdiff, T.transpose(self.projection))
        tu = T.gather_rows(self.visual_factors, batch.user_idx)
        visual = T.sum_(T.mul(tu, proj), axis=1)
        return T.add(base, visual)

    def score(self, user_idx: int, item_idx: int) -> float:
        visual = float(self.visual_factors.data[user_idx]
                       @ (self.projection.data @ self.item_features[item_idx]))
        return super().score(user_idx, item_idx) + visual

    def rank_scores(self, user_idx: int) -> np.ndarray:
        visual = (self.item_features @ self.projection.data.T) @ self.visual_factors.data[user_idx]
        return super().rank_scores(user_idx) + visual.astype(np.float64)


class DvbprModel:
    """Per-user visual factors against an end-to-end feature extractor.

    No item bias and no non-visual item factors: the extractor output
    carries all item-side information.
    """

    kind = "dvbpr"

    def __init__(self, n_users: int, latent_dim: int, net: FeatureNet,
                 reg_visual: float = 1.0, rng: np.random.Generator | None = None,
                 init_std: float = 0.01):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_users = n_users
        self.latent_dim = latent_dim
        self.net = net
        self.reg_visual = reg_visual
        self.visual_factors = gaussian_init(rng, (n_users, latent_dim), init_std)

    def params(self):
        p = {f"net.{k}": v for k, v in self.net.params().items()}
        p["visual_factors"] = self.visual_factors
        return p

    def regularization(self):
        if self.reg_visual == 0.0:
            return None
        return T.mul(T.sum_(T.mul(self.visual_factors, self.visual_factors)), self.reg_visual)

    def embed_images(self, images, mode: str = "eval", rng=None) -> Tensor:
        return self.net.forward(images, mode=mode, rng=rng)

    def score_image(self, user_idx: int, image: np.ndarray) -> float:
        """theta_u . Phi(image) with the extractor in eval mode."""
        if image.ndim == 3:
            image = image[None]
        emb = self.embed_images(Tensor(image.astype(np.float32)), mode="eval")
        return float(self.visual_factors.data[user_idx] @ emb.data[0])

    def triplet_difference_from_images(self, batch: TripletBatch, images: np.ndarray,
                                       mode="train", rng=None) -> Tensor:
        both = np.concatenate([images[batch.pos_idx], images[batch.neg_idx]], axis=0)
        emb = self.embed_images(Tensor(both), mode=mode, rng=rng)
        b = len(batch)
        emb_i = T.gather_rows(emb, np.arange(b))
        emb_j = T.gather_rows(emb, np.arange(b, 2 * b))
        tu = T.gather_rows(self.visual_factors, batch.user_idx)
        return T.sum_(T.mul(tu, T.sub(emb_i, emb_j)), axis=1)

    def state_arrays(self):
        st = {f"net.{k}": v for k, v in self.net.state_arrays().items()}
        st["visual_factors"] = self.visual_factors.data
        return st

    def load_state_arrays(self, arrays):
        self.net.load_state_arrays({k[len("net."):]: v for k, v in arrays.items()
                                    if k.startswith("net.")})
        self.visual_factors.data = np.array(arrays["visual_factors"], dtype=np.float32)


# single-pair scoring entry points (id-level, matching the data model)

def score_mf(model: MfModel, corpus: Corpus, user_id: str, item_id: str) -> float:
    try:
        return model.score(corpus.user_index[user_id], corpus.item_index[item_id])
    except KeyError as e:
        raise KeyError(f"unknown id {e.args[0]!r}") from None


def score_vbpr(model: VbprModel, corpus: Corpus, user_id: str, item_id: str) -> float:
    return score_mf(model, corpus, user_id, item_id)


def score_dvbpr(model: DvbprModel, corpus: Corpus, user_id: str, image: np.ndarray) -> float:
    try:
        u = corpus.user_index[user_id]
    except KeyError:
        raise KeyError(f"unknown id {user_id!r}") from None
    return model.score_image(u, image)


# ---------------------------------------------------------------------------
# training

@dataclass
class RankConfig:
    model: str = "dvbpr"
    latent_dim: int = 50
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    reg_lambda: float = 0.01          # mf/vbpr factor regularizer (grid-tunable)
    reg_visual: float = 1.0           # dvbpr user visual factor regularizer
    weight_decay: float = 1e-3        # dvbpr extractor weight decay
    dropout: float = 0.5
    cnn_preset: str = "desk"
    cnn_input_side: int | None = None
    cnn_conv_init: str = "he"
    init_std: float = 0.01
    lr_factors: float | None = None   # dvbpr user-factor rate; defaults to lr
    seed: int = 0

    LAMBDA_GRID = (0.0, 0.001, 0.01, 0.1, 1.0, 10.0, 30.0)


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    best_val_auc: float = 0.0
    best_epoch: int = -1
    config: RankConfig | None = None


def upscale_images_np(images: np.ndarray, side: int) -> np.ndarray:
    """Nearest-neighbor resize of a constant (N,3,H,W) batch."""
    h, w = images.shape[2:]
    if (h, w) == (side, side):
        return images
    ridx = (np.arange(side) * h // side).astype(np.int64)
    cidx = (np.arange(side) * w // side).astype(np.int64)
    return np.ascontiguousarray(images[:, :, ridx][:, :, :, cidx])


def _val_auc(corpus: Corpus, scorer) -> float:
    from .evalmetrics import auc
    return auc(corpus, scorer, target="val").auc


def make_scorer(model, corpus: Corpus, cnn_side: int | None = None):
    """Per-user item-score closure for AUC evaluation."""
    if isinstance(model, DvbprModel):
        side = cnn_side or model.net.input_side
        images = upscale_images_np(corpus.float_images(), side)
        embs = np.concatenate(
            [model.embed_images(Tensor(images[k:k + 256]), mode="eval").data
             for k in range(0, len(images), 256)], axis=0)

        def scorer(user_id: str) -> np.ndarray:
            u = corpus.user_index[user_id]
            return (embs @ model.visual_factors.data[u]).astype(np.float64)

        return scorer

    def scorer(user_id: str) -> np.ndarray:
        return model.rank_scores(corpus.user_index[user_id])

    return scorer


def build_model(config: RankConfig, corpus: Corpus,
                item_features: np.ndarray | None = None):
    seq = np.random.SeedSequence((config.seed, 0x4A4E4B))
    rng_net, rng_factors = (np.random.default_rng(s) for s in seq.spawn(2))
    if config.model == "mf":
        return MfModel(corpus.n_users, corpus.n_items, config.latent_dim,
                       config.reg_lambda, rng_factors, config.init_std)
    if config.model == "vbpr":
        if item_features is None:
            raise ValueError("vbpr needs precomputed item features")
        return VbprModel(corpus.n_users, corpus.n_items, config.latent_dim,
                         item_features, config.reg_lambda, rng_factors, config.init_std)
    if config.model == "dvbpr":
        net = FeatureNet(config.latent_dim, config.cnn_preset, config.cnn_input_side,
                         config.dropout, config.init_std, rng_net,
                         conv_init=config.cnn_conv_init)
        return DvbprModel(corpus.n_users, config.latent_dim, net,
                          config.reg_visual, rng_factors, config.init_std)
    raise ValueError(f"unknown model kind {config.model!r}")


def train(config: RankConfig, corpus: Corpus,
          item_features: np.ndarray | None = None, log=None) -> TrainResult:
    """Adam-optimized pairwise training; keeps the best validation state."""
    if not corpus.has_split():
        raise ValueError("corpus has no split assigned")
    model = build_model(config, corpus, item_features)
    seq = np.random.SeedSequence((config.seed, 0x54524E))
    rng_sample, rng_drop = (np.random.default_rng(s) for s in seq.spawn(2))

    is_dvbpr = isinstance(model, DvbprModel)
    if is_dvbpr:
        side = model.net.input_side
        images = upscale_images_np(corpus.float_images(), side)
        opt_net = Adam(lr=config.lr, weight_decay=config.weight_decay)
        opt_factors = Adam(lr=config.lr_factors if config.lr_factors is not None else config.lr)
        net_params = {f"net.{k}": v for k, v in model.net.params().items()}
        factor_params = {"visual_factors": model.visual_factors}
    else:
        opt_all = Adam(lr=config.lr)
        all_params = model.params()

    n_train = sum(len(v) for v in corpus.train.values())
    batches_per_epoch = max(1, int(np.ceil(n_train / config.batch_size)))
    result = TrainResult(model=model, config=config)
    best_state = None

    for epoch in range(config.epochs):
        losses, sig_means = [], []
        for b in range(batches_per_epoch):
            batch = sample_triplets(corpus, config.batch_size, rng_sample)
            try:
                with Tape() as tape:
                    if is_dvbpr:
                        diff = model.triplet_difference_from_images(
                            batch, images, mode="train", rng=rng_drop)
                    else:
                        diff = model.triplet_difference(batch, mode="train", rng=rng_drop)
                    loss = T.sum_(T.softplus(T.neg(diff)))
                    reg = model.regularization()
                    if reg is not None:
                        loss = T.add(loss, reg)
                grads = tape.gradients(loss)
                if is_dvbpr:
                    opt_net.step(net_params, grads)
                    opt_factors.step(factor_params, grads)
                else:
                    opt_all.step(all_params, grads)
            except (NonFiniteError, FloatingPointError) as e:
                raise TrainingDiverged(
                    f"{config.model} diverged at epoch {epoch} batch {b}: {e}") from e
            losses.append(loss.item())
            sig_means.append(float(np.mean(1.0 / (1.0 + np.exp(-diff.data)))))
        val = _val_auc(corpus, make_scorer(model, corpus))
        entry = {"epoch": epoch, "loss": float(np.mean(losses)),
                 "mean_sigmoid": float(np.mean(sig_means)), "val_auc": val}
        result.history.append(entry)
        if log is not None:
            log(entry)
        if val > result.best_val_auc or best_state is None:
            result.best_val_auc = val
            result.best_epoch = epoch
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
    model.load_state_arrays(best_state)
    return result


def tune_lambda(config: RankConfig, corpus: Corpus,
                item_features: np.ndarray | None = None,
                grid=RankConfig.LAMBDA_GRID, log=None) -> TrainResult:
    """Grid-search the factor regularizer on validation AUC (mf / vbpr)."""
    best = None
    for lam in grid:
        res = train(dataclasses.replace(config, reg_lambda=lam), corpus,
                    item_features, log=None)
        if log is not None:
            log({"lambda": lam, "best_val_auc": res.best_val_auc})
        if best is None or res.best_val_auc > best.best_val_auc:
            best = res
    return best


def save_model(path: str, model, config: RankConfig) -> None:
    """Checkpoint plus JSON sidecar echoing kind and config."""
    import dataclasses as dc
    import json
    import os
    from . import checkpoint
    checkpoint.save(path, model.state_arrays())
    sidecar = {"kind": model.kind, "config": dc.asdict(config)}
    if isinstance(model, DvbprModel):
        sidecar["n_users"] = model.n_users
        sidecar["input_side"] = model.net.input_side
    else:
        sidecar.update({"n_users": model.n_users, "n_items": model.n_items})
    if isinstance(model, VbprModel):
        sidecar["feature_dim"] = int(model.item_features.shape[1])
    tmp = path + ".json.tmp"
    with open(tmp, "w") as f:
        json.dump(sidecar, f, sort_keys=True, indent=1)
    os.replace(tmp, path + ".json")


def load_model(path: str, corpus: Corpus, item_features: np.ndarray | None = None):
    """Rebuild a trained predictor from its checkpoint and sidecar."""
    import json
    from . import checkpoint
    with open(path + ".json") as f:
        sidecar = json.load(f)
    config = RankConfig(**sidecar["config"])
    if sidecar.get("n_users") != corpus.n_users:
        raise ValueError(f"checkpoint was trained for {sidecar.get('n_users')} users, "
                         f"corpus has {corpus.n_users}")
    model = build_model(config, corpus, item_features)
    model.load_state_arrays(checkpoint.load(path))
    return model, config


# ---------------------------------------------------------------------------
# non-learned baselines

def rank_random(corpus: Corpus, seed: int):
    """Deterministic per-user pseudo-random scores."""
    def scorer(user_id: str) -> np.ndarray:
        rng = np.random.default_rng(
            np.random.SeedSequence((seed, corpus.user_index[user_id])))
        return rng.random(corpus.n_items)
    return scorer


def rank_popularity(corpus: Corpus):
    """Training-split interaction counts, identical for every user."""
    counts = corpus.train_counts().astype(np.float64)

    def scorer(user_id: str) -> np.ndarray:
        return counts
    return scorer


def rank_visrank(corpus: Corpus, features: np.ndarray):
    """Negative mean feature distance to the user's training positives."""
    if features.shape[0] != corpus.n_items:
        raise ValueError("features row count must match item count")
    f = features.astype(np.float64)
    sq = np.sum(f * f, axis=1)
    dists = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * (f @ f.T), 0.0))

    def scorer(user_id: str) -> np.ndarray:
        pos = corpus.train_indices(user_id)
        return -dists[:, pos].mean(axis=1)
    return scorer
