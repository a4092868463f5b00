"""Category-conditioned least-squares GAN.

The discriminator is trained toward 1 on real images and 0 on generated
ones with squared-error penalties; the generator is trained to pull its
outputs' scores toward 1. Architectures follow the deconv/conv family:
the generator projects concat(noise, category embedding) to a 4x4 map and
doubles resolution per stage; the discriminator mirrors it with stride-2
convolutions, leaky relu, and the category embedding tiled as constant
input channels. A linear head (no sigmoid) suits the least-squares loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import Corpus
from .nn import (Adam, BatchNorm2d, Conv2d, ConvTranspose2d, Dense, Network,
                 gaussian_init)
from .tensor import NonFiniteError, Tape, Tensor

LATENT_DIM = 100
INIT_STD = 0.02


@dataclass
class GanConfig:
    latent_dim: int = LATENT_DIM
    image_side: int = 32
    base_channels: int = 32
    cat_embed_g: int = 16
    cat_embed_d: int = 8
    batch_size: int = 64
    epochs: int = 25
    lr: float = 2e-4
    beta1: float = 0.5
    holdout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("batch size and epochs must be positive")
        side = self.image_side
        if side < 8 or side & (side - 1):
            raise ValueError("image side must be a power of two >= 8")


def _stage_channels(side: int, base: int) -> list[int]:
    n_stages = int(np.log2(side)) - 2  # 4x4 seed map to full resolution
    return [min(base * 2 ** k, 512) for k in reversed(range(n_stages))]


class Generator(Network):
    def __init__(self, n_categories: int, cfg: GanConfig, rng: np.random.Generator):
        chans = _stage_channels(cfg.image_side, cfg.base_channels)
        self.latent_dim = cfg.latent_dim
        self.image_side = cfg.image_side
        self.n_categories = n_categories
        self.seed_channels = chans[0]
        self.cat_embed = gaussian_init(rng, (n_categories, cfg.cat_embed_g), INIT_STD)
        self.project = Dense(cfg.latent_dim + cfg.cat_embed_g,
                             chans[0] * 16, rng, std=INIT_STD)
        self.bn_seed = BatchNorm2d(chans[0])
        self._stages = []
        for k in range(len(chans) - 1):
            deconv = ConvTranspose2d(chans[k], chans[k + 1], 4, 2, 1, rng, std=INIT_STD)
            bn = BatchNorm2d(chans[k + 1])
            setattr(self, f"up{k + 1}", deconv)
            setattr(self, f"bn{k + 1}", bn)
            self._stages.append((deconv, bn))
        self.to_rgb = ConvTranspose2d(chans[-1], 3, 4, 2, 1, rng, std=INIT_STD)

    def forward(self, z, categories, mode: str = "eval") -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float32))
        categories = np.atleast_1d(np.asarray(categories, dtype=np.int64))
        emb = T.gather_rows(self.cat_embed, categories)
        h = self.project(T.concat([z, emb], axis=1))
        h = T.reshape(h, (z.shape[0], self.seed_channels, 4, 4))
        h = T.relu(self.bn_seed(h, mode))
        for deconv, bn in self._stages:
            h = T.relu(bn(deconv(h), mode))
        return T.tanh(self.to_rgb(h))


class Discriminator(Network):
    def __init__(self, n_categories: int, cfg: GanConfig, rng: np.random.Generator):
        chans = _stage_channels(cfg.image_side, cfg.base_channels)[::-1]
        self.image_side = cfg.image_side
        self.n_categories = n_categories
        self.cat_embed = gaussian_init(rng, (n_categories, cfg.cat_embed_d), INIT_STD)
        self._stages = []
        c_in = 3 + cfg.cat_embed_d
        for k, c_out in enumerate(chans):
            conv = Conv2d(c_in, c_out, 4, 2, 1, rng, std=INIT_STD)
            bn = BatchNorm2d(c_out) if k > 0 else None
            setattr(self, f"down{k + 1}", conv)
            if bn is not None:
                setattr(self, f"bn{k + 1}", bn)
            self._stages.append((conv, bn))
            c_in = c_out
        self.head = Dense(chans[-1] * 16, 1, rng, std=INIT_STD)

    def forward(self, images, categories, mode: str = "eval") -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float32))
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != self.image_side:
            raise ValueError(f"expected (N, 3, {self.image_side}, {self.image_side}) images, "
                             f"got {tuple(x.shape)}")
        categories = np.atleast_1d(np.asarray(categories, dtype=np.int64))
        emb = T.gather_rows(self.cat_embed, categories)
        n, side = x.shape[0], self.image_side
        maps = T.reshape(emb, (n, emb.shape[1], 1, 1))
        maps = T.upsample_nearest(maps, side, side)  # constant channel maps
        h = T.concat([x, maps], axis=1)
        for conv, bn in self._stages:
            h = conv(h)
            if bn is not None:
                h = bn(h, mode)
            h = T.leaky_relu(h, 0.2)
        out = self.head(T.reshape(h, (n, -1)))
        return T.reshape(out, (n,))


class GanPair:
    """Trained generator/discriminator pair; read-only after training."""

    def __init__(self, generator: Generator, discriminator: Discriminator,
                 config: GanConfig):
        self.generator = generator
        self.discriminator = discriminator
        self.config = config

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def image_side(self) -> int:
        return self.config.image_side

    def generate(self, z: np.ndarray, categories, mode: str = "eval") -> Tensor:
        """G(z, c); z must lie in [-1, 1]^latent_dim."""
        z = np.asarray(z, dtype=np.float32)
        if z.ndim == 1:
            z = z[None]
        if z.shape[1] != self.latent_dim:
            raise ValueError(f"latent code must have length {self.latent_dim}")
        if np.any(np.abs(z) > 1.0):
            raise ValueError("latent code outside [-1, 1]")
        cats = np.broadcast_to(np.atleast_1d(np.asarray(categories, dtype=np.int64)),
                               (z.shape[0],))
        self._check_cats(cats)
        return self.generator.forward(z, cats, mode=mode)

    def discriminate(self, images, categories, mode: str = "eval") -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float32))
        cats = np.broadcast_to(np.atleast_1d(np.asarray(categories, dtype=np.int64)),
                               (x.shape[0],))
        self._check_cats(cats)
        return self.discriminator.forward(x, cats, mode=mode)

    def _check_cats(self, cats: np.ndarray) -> None:
        if cats.size and (cats.min() < 0 or cats.max() >= self.generator.n_categories):
            raise ValueError(f"category out of range [0, {self.generator.n_categories})")

    def sample_latent(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=(n, self.latent_dim)).astype(np.float32)

    def state_arrays(self) -> dict[str, np.ndarray]:
        st = {f"g.{k}": v for k, v in self.generator.state_arrays().items()}
        st.update({f"d.{k}": v for k, v in self.discriminator.state_arrays().items()})
        return st

    def load_state_arrays(self, arrays) -> None:
        self.generator.load_state_arrays(
            {k[2:]: v for k, v in arrays.items() if k.startswith("g.")})
        self.discriminator.load_state_arrays(
            {k[2:]: v for k, v in arrays.items() if k.startswith("d.")})


def real_loss(pair: GanPair, images, categories, mode: str = "eval") -> Tensor:
    """[D(x, c) - 1]^2, averaged over the batch."""
    d = pair.discriminate(images, categories, mode=mode)
    return T.mean(T.pow_(T.sub(d, 1.0), 2.0))


def fake_loss(pair: GanPair, images, categories, mode: str = "eval") -> Tensor:
    """[D(x, c)]^2, averaged over the batch."""
    d = pair.discriminate(images, categories, mode=mode)
    return T.mean(T.pow_(d, 2.0))


@dataclass
class GanResult:
    pair: GanPair
    history: list = field(default_factory=list)
    holdout_indices: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))


def _set_requires(params: dict[str, Tensor], flag: bool) -> None:
    for p in params.values():
        p.requires_grad = flag


def save_pair(path: str, pair: GanPair, n_categories: int) -> None:
    import dataclasses as dc
    import json
    import os
    from . import checkpoint
    checkpoint.save(path, pair.state_arrays())
    tmp = path + ".json.tmp"
    with open(tmp, "w") as f:
        json.dump({"kind": "gan", "config": dc.asdict(pair.config),
                   "n_categories": n_categories}, f, sort_keys=True, indent=1)
    os.replace(tmp, path + ".json")


def load_pair(path: str) -> GanPair:
    import json
    from . import checkpoint
    with open(path + ".json") as f:
        sidecar = json.load(f)
    config = GanConfig(**sidecar["config"])
    n_categories = sidecar["n_categories"]
    seq = np.random.SeedSequence((config.seed, 0x47414E))
    rng_g, rng_d, _ = (np.random.default_rng(s) for s in seq.spawn(3))
    pair = GanPair(Generator(n_categories, config, rng_g),
                   Discriminator(n_categories, config, rng_d), config)
    pair.load_state_arrays(checkpoint.load(path))
    return pair


def discriminator_step(pair: GanPair, opt_d: Adam, d_params: dict,
                       real: np.ndarray, cats: np.ndarray, z: np.ndarray) -> float:
    """One D update: real scores toward 1, detached fake scores toward 0."""
    fake = pair.generator.forward(z, cats, mode="train").data  # no tape: detached
    with Tape() as tape:
        loss_d = T.add(real_loss(pair, real, cats, mode="train"),
                       fake_loss(pair, fake, cats, mode="train"))
    opt_d.step(d_params, tape.gradients(loss_d))
    return loss_d.item()


def generator_step(pair: GanPair, opt_g: Adam, g_params: dict, d_params: dict,
                   cats: np.ndarray, z: np.ndarray) -> float:
    """One G update: generated scores pulled toward 1; D weights untouched."""
    _set_requires(d_params, False)
    try:
        with Tape() as tape:
            gen_images = pair.generator.forward(z, cats, mode="train")
            loss_g = real_loss(pair, gen_images, cats, mode="train")
        opt_g.step(g_params, tape.gradients(loss_g))
    finally:
        _set_requires(d_params, True)
    return loss_g.item()


def train_gan(corpus: Corpus, config: GanConfig | None = None, log=None) -> GanResult:
    """Alternating least-squares training on category-matched batches."""
    config = config or GanConfig(image_side=corpus.image_side)
    if config.image_side != corpus.image_side:
        raise ValueError(f"corpus images are {corpus.image_side}px, config wants "
                         f"{config.image_side}px")
    seq = np.random.SeedSequence((config.seed, 0x47414E))
    rng_g, rng_d, rng_data = (np.random.default_rng(s) for s in seq.spawn(3))
    gen = Generator(corpus.n_categories, config, rng_g)
    disc = Discriminator(corpus.n_categories, config, rng_d)
    pair = GanPair(gen, disc, config)

    images = corpus.float_images()
    labels = np.array([it.category_id for it in corpus.items], dtype=np.int64)
    order = rng_data.permutation(corpus.n_items)
    n_hold = int(round(config.holdout_fraction * corpus.n_items))
    holdout, trainset = order[:n_hold], order[n_hold:]

    opt_g = Adam(lr=config.lr, beta1=config.beta1)
    opt_d = Adam(lr=config.lr, beta1=config.beta1)
    g_params, d_params = gen.params(), disc.params()
    result = GanResult(pair=pair, holdout_indices=np.sort(holdout))
    step = 0
    for epoch in range(config.epochs):
        perm = rng_data.permutation(trainset)
        for k in range(0, len(perm) - config.batch_size + 1, config.batch_size):
            idx = perm[k:k + config.batch_size]
            real = images[idx]
            cats = labels[idx]
            try:
                z = pair.sample_latent(rng_data, len(idx))
                d_loss = discriminator_step(pair, opt_d, d_params, real, cats, z)
                z = pair.sample_latent(rng_data, len(idx))
                g_loss = generator_step(pair, opt_g, g_params, d_params, cats, z)
            except (NonFiniteError, FloatingPointError) as e:
                raise RuntimeError(f"GAN training diverged at epoch {epoch} "
                                   f"step {step}: {e}") from e
            entry = {"step": step, "epoch": epoch, "d_loss": d_loss, "g_loss": g_loss}
            result.history.append(entry)
            if log is not None:
                log(entry)
            step += 1
    return result
