"""Personalized design: retrieval, latent-space preference ascent,
probabilistic top-k selection, and prototype inversion/tailoring.

Synthesis maximizes  pref(z) - quality_weight * [D(G(z,c), c) - 1]^2  over
the generator's latent cube, where pref is the trained ranker's score of
the upscaled generated image. The box constraint z in [-1,1]^L is enforced
by optimizing an unconstrained code through tanh, never by clipping. Every
step is accepted only if it does not lower the objective, so each trace is
monotone by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import Corpus
from .gan import GanPair
from .rank import DvbprModel, upscale_images_np
from .tensor import Tape, Tensor

ATANH_CLIP = 1.0 - 1e-6


@dataclass
class DesignQuery:
    user_id: str
    category_id: int
    quality_weight: float = 1.0  # trade-off between preference and realism
    n_starts: int = 64
    k: int = 3
    mode: str = "rank"           # or "sample"
    iterations: int = 50
    lr: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.k > self.n_starts:
            raise ValueError(f"k ({self.k}) must not exceed n_starts ({self.n_starts})")
        if self.quality_weight < 0:
            raise ValueError("quality_weight must be >= 0")
        if self.mode not in ("rank", "sample"):
            raise ValueError(f"mode must be 'rank' or 'sample', got {self.mode!r}")


@dataclass
class Candidate:
    latent: np.ndarray            # z in [-1,1]^L, final accepted point
    image: np.ndarray             # float32 (3, S, S) = G(z, c) exactly
    objective: float              # preference - quality_weight * penalty
    preference: float
    quality_penalty: float        # [D(image, c) - 1]^2
    trace: list[float] = field(default_factory=list)  # objective per iteration
    start_index: int = -1


# ---------------------------------------------------------------------------
# tanh reparameterization

def to_unconstrained(z: np.ndarray) -> np.ndarray:
    """Inverse tanh, elementwise: 0.5*[ln(1+z) - ln(1-z)]. Requires |z| < 1."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(np.abs(z) >= 1.0):
        raise ValueError("latent code components must satisfy |z| < 1")
    return 0.5 * (np.log1p(z) - np.log1p(-z))


def to_constrained(zp: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(zp, dtype=np.float64))


def init_unconstrained(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Uniform starts in the open cube, clipped before inversion."""
    z0 = rng.uniform(-1.0, 1.0, size=(n, dim))
    return to_unconstrained(np.clip(z0, -ATANH_CLIP, ATANH_CLIP))


# ---------------------------------------------------------------------------
# scale operators

def upscale_nearest(images, side: int):
    """Differentiable nearest-neighbor upscale (Tensor in, Tensor out)."""
    if isinstance(images, Tensor):
        return T.upsample_nearest(images, side, side)
    return Tensor(upscale_images_np(np.asarray(images, dtype=np.float32), side))


def downscale_area(image: np.ndarray, side: int) -> np.ndarray:
    """Area-average downscale of a constant (3, H, W) image."""
    c, h, w = image.shape
    if h == side and w == side:
        return np.asarray(image, dtype=np.float32)
    if h % side == 0 and w % side == 0:
        fh, fw = h // side, w // side
        return image.reshape(c, side, fh, side, fw).mean(axis=(2, 4)).astype(np.float32)
    from PIL import Image as PILImage
    planes = [np.asarray(PILImage.fromarray(p.astype(np.float32), mode="F")
                         .resize((side, side), PILImage.BOX)) for p in image]
    return np.stack(planes).astype(np.float32)


# ---------------------------------------------------------------------------
# retrieval

def retrieve_best(user_id: str, category_id: int, corpus: Corpus,
                  dvbpr: DvbprModel) -> tuple[str, float]:
    """Exhaustive argmax of the ranker score over the category's items.

    Ties break toward the smaller item id.
    """
    member = corpus.category_items(category_id)
    if not member:
        raise ValueError(f"category {category_id} has no items")
    u = corpus.user_index[user_id]
    images = upscale_images_np(corpus.float_images()[member], dvbpr.net.input_side)
    embs = np.concatenate(
        [dvbpr.embed_images(Tensor(images[k:k + 256]), mode="eval").data
         for k in range(0, len(images), 256)], axis=0)
    scores = embs @ dvbpr.visual_factors.data[u]
    order = sorted(range(len(member)), key=lambda k: (-scores[k], corpus.item_ids[member[k]]))
    best = order[0]
    return corpus.item_ids[member[best]], float(scores[best])


# ---------------------------------------------------------------------------
# latent ascent

class _AdamState:
    def __init__(self, shape, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def direction(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _design_objective(zp: np.ndarray, user_vec: np.ndarray, category_id: int,
                      dvbpr: DvbprModel, gan: GanPair, quality_weight: float,
                      compute_grad: bool):
    """Batched objective f(z') and optionally df/dz' for all starts."""
    n = zp.shape[0]
    cats = np.full(n, category_id, dtype=np.int64)
    zp_t = Tensor(zp.astype(np.float32), requires_grad=compute_grad)
    tape_ctx = Tape() if compute_grad else _NullCtx()
    with tape_ctx as tape:
        z = T.tanh(zp_t)
        images = gan.generator.forward(z, cats, mode="eval")
        up = upscale_nearest(images, dvbpr.net.input_side)
        emb = dvbpr.embed_images(up, mode="eval")
        pref = T.sum_(T.mul(emb, Tensor(np.tile(user_vec, (n, 1)))), axis=1)
        d = gan.discriminator.forward(images, cats, mode="eval")
        penalty = T.pow_(T.sub(d, 1.0), 2.0)
        objective = T.sub(pref, T.mul(penalty, quality_weight))
        total = T.sum_(objective)
    grad = tape.gradients(total).get(zp_t).astype(np.float64) if compute_grad else None
    return (objective.data.astype(np.float64), pref.data.astype(np.float64),
            penalty.data.astype(np.float64), images.data, grad)


class _NullCtx:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


def synthesize_best(query: DesignQuery, corpus: Corpus, dvbpr: DvbprModel,
                    gan: GanPair, snapshot_hook=None) -> list[Candidate]:
    """Multi-start gradient ascent over the latent cube; candidates sorted
    by final objective, best first. A proposed step that lowers a start's
    objective is reverted for that start, so traces never decrease.
    """
    u = corpus.user_index[query.user_id]
    if not 0 <= query.category_id < corpus.n_categories:
        raise ValueError(f"category {query.category_id} out of range")
    user_vec = dvbpr.visual_factors.data[u].astype(np.float32)
    rng = np.random.default_rng(np.random.SeedSequence((query.seed, 0xDE516E)))
    zp = init_unconstrained(rng, query.n_starts, gan.latent_dim)
    adam = _AdamState(zp.shape, lr=query.lr)

    obj, pref, pen, images, grad = _design_objective(
        zp, user_vec, query.category_id, dvbpr, gan, query.quality_weight, True)
    alive = np.isfinite(obj)
    traces = [[float(v)] for v in obj]
    for it in range(query.iterations):
        step = adam.direction(np.where(np.isfinite(grad), grad, 0.0))
        proposal = zp + step  # ascent
        new_obj, new_pref, new_pen, new_images, new_grad = _design_objective(
            proposal, user_vec, query.category_id, dvbpr, gan,
            query.quality_weight, True)
        accept = alive & np.isfinite(new_obj) & (new_obj >= obj)
        zp = np.where(accept[:, None], proposal, zp)
        obj = np.where(accept, new_obj, obj)
        pref = np.where(accept, new_pref, pref)
        pen = np.where(accept, new_pen, pen)
        images = np.where(accept[:, None, None, None], new_images, images)
        grad = np.where(accept[:, None], new_grad, grad)
        for s in range(query.n_starts):
            if alive[s]:
                traces[s].append(float(obj[s]))
        if snapshot_hook is not None:
            snapshot_hook(it + 1, obj.copy(), images)

    z_final = to_constrained(zp).astype(np.float32)
    candidates = [
        Candidate(latent=z_final[s], image=images[s].copy(), objective=float(obj[s]),
                  preference=float(pref[s]), quality_penalty=float(pen[s]),
                  trace=traces[s], start_index=s)
        for s in range(query.n_starts) if alive[s]
    ]
    if not candidates:
        raise RuntimeError("every ascent start produced a non-finite objective")
    candidates.sort(key=lambda c: -c.objective)
    return candidates


def recompute_objective(candidate: Candidate, category_id: int, corpus: Corpus,
                        dvbpr: DvbprModel, gan: GanPair, user_id: str,
                        quality_weight: float) -> float:
    """Re-derive the stored objective from the stored latent code."""
    u = corpus.user_index[user_id]
    zp = to_unconstrained(np.clip(candidate.latent, -ATANH_CLIP, ATANH_CLIP))[None]
    obj, _, _, _, _ = _design_objective(
        zp, dvbpr.visual_factors.data[u].astype(np.float32), category_id,
        dvbpr, gan, quality_weight, False)
    return float(obj[0])


def select_top_k(candidates: list[Candidate], k: int, mode: str = "rank",
                 rng: np.random.Generator | None = None) -> list[Candidate]:
    """Deterministic top-k by objective, or softmax sampling without
    replacement (iterated renormalized draws) for diverse returns."""
    if k > len(candidates):
        raise ValueError(f"k ({k}) exceeds candidate count ({len(candidates)})")
    ordered = sorted(candidates, key=lambda c: -c.objective)
    if mode == "rank":
        return ordered[:k]
    if mode != "sample":
        raise ValueError(f"unknown selection mode {mode!r}")
    if rng is None:
        raise ValueError("sample mode needs an rng")
    pool = list(ordered)
    objs = np.array([c.objective for c in pool])
    picked = []
    for _ in range(k):
        logits = objs - objs.max()
        probs = np.exp(logits)
        probs /= probs.sum()
        j = int(rng.choice(len(pool), p=probs))
        picked.append(pool.pop(j))
        objs = np.delete(objs, j)
    return picked


def softmax_selection_probabilities(objectives) -> np.ndarray:
    """Single-draw probabilities exp(obj) / sum exp(obj)."""
    objs = np.asarray(objectives, dtype=np.float64)
    e = np.exp(objs - objs.max())
    return e / e.sum()


# ---------------------------------------------------------------------------
# inversion and tailoring

@dataclass
class InversionResult:
    latent: np.ndarray       # best z
    error: float             # mean absolute pixel error in [-1,1] space
    per_start_error: np.ndarray
    image: np.ndarray        # G(z, c)
    latent_unconstrained: np.ndarray | None = None  # exact optimizer state


def _l1_and_grad(zp: np.ndarray, target: np.ndarray, category_id: int,
                 gan: GanPair, compute_grad: bool):
    n = zp.shape[0]
    cats = np.full(n, category_id, dtype=np.int64)
    zp_t = Tensor(zp.astype(np.float32), requires_grad=compute_grad)
    ctx = Tape() if compute_grad else _NullCtx()
    with ctx as tape:
        images = gan.generator.forward(T.tanh(zp_t), cats, mode="eval")
        diff = T.sub(images, Tensor(np.tile(target[None], (n, 1, 1, 1))))
        err = T.mean(T.abs_(T.reshape(diff, (n, -1))), axis=1)
        total = T.sum_(err)
    grad = tape.gradients(total).get(zp_t).astype(np.float64) if compute_grad else None
    return err.data.astype(np.float64), images.data, grad


def invert_prototype(image: np.ndarray, category_id: int, gan: GanPair,
                     starts: int = 8, iterations: int = 200, lr: float = 0.05,
                     seed: int = 0) -> InversionResult:
    """Best-of-starts minimizer of mean |G(z, c) - target| by monotone descent.

    The target is area-downscaled to the generator's resolution first.
    """
    target = downscale_area(np.asarray(image, dtype=np.float32), gan.image_side)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x1E5C)))
    zp = init_unconstrained(rng, starts, gan.latent_dim)
    adam = _AdamState(zp.shape, lr=lr)
    err, images, grad = _l1_and_grad(zp, target, category_id, gan, True)
    for _ in range(iterations):
        step = adam.direction(np.where(np.isfinite(grad), grad, 0.0))
        proposal = zp - step  # descent
        new_err, new_images, new_grad = _l1_and_grad(proposal, target, category_id, gan, True)
        accept = np.isfinite(new_err) & (new_err <= err)
        zp = np.where(accept[:, None], proposal, zp)
        err = np.where(accept, new_err, err)
        images = np.where(accept[:, None, None, None], new_images, images)
        grad = np.where(accept[:, None], new_grad, grad)
    best = int(np.argmin(err))
    return InversionResult(latent=to_constrained(zp[best]).astype(np.float32),
                           error=float(err[best]), per_start_error=err,
                           image=images[best].copy(),
                           latent_unconstrained=zp[best].copy())


@dataclass
class TailorCheckpoint:
    step: int
    preference: float
    objective: float
    image: np.ndarray


@dataclass
class TailorResult:
    inversion: InversionResult
    checkpoints: list[TailorCheckpoint]
    final: Candidate


def tailor(prototype_image: np.ndarray, user_id: str, category_id: int,
           corpus: Corpus, dvbpr: DvbprModel, gan: GanPair,
           iterations: int = 50, quality_weight: float = 1.0, lr: float = 0.05,
           inversion_starts: int = 8, inversion_iterations: int = 200,
           snapshot_every: int = 5, seed: int = 0,
           snapshot_hook=None) -> TailorResult:
    """Approximate the prototype in latent space, then ascend the design
    objective from the recovered code, checkpointing along the way."""
    inv = invert_prototype(prototype_image, category_id, gan,
                           starts=inversion_starts, iterations=inversion_iterations,
                           lr=lr, seed=seed)
    u = corpus.user_index[user_id]
    user_vec = dvbpr.visual_factors.data[u].astype(np.float32)
    zp = inv.latent_unconstrained[None].copy()
    adam = _AdamState(zp.shape, lr=lr)
    obj, pref, pen, images, grad = _design_objective(
        zp, user_vec, category_id, dvbpr, gan, quality_weight, True)
    trace = [float(obj[0])]
    checkpoints = [TailorCheckpoint(0, float(pref[0]), float(obj[0]), images[0].copy())]
    if snapshot_hook is not None:
        snapshot_hook(0, obj.copy(), images)
    for it in range(1, iterations + 1):
        step = adam.direction(np.where(np.isfinite(grad), grad, 0.0))
        proposal = zp + step
        new = _design_objective(proposal, user_vec, category_id, dvbpr, gan,
                                quality_weight, True)
        new_obj, new_pref, new_pen, new_images, new_grad = new
        if np.isfinite(new_obj[0]) and new_obj[0] >= obj[0]:
            zp, obj, pref, pen, images, grad = proposal, new_obj, new_pref, new_pen, new_images, new_grad
        trace.append(float(obj[0]))
        if it % snapshot_every == 0 or it == iterations:
            checkpoints.append(TailorCheckpoint(it, float(pref[0]), float(obj[0]),
                                                images[0].copy()))
            if snapshot_hook is not None:
                snapshot_hook(it, obj.copy(), images)
    final = Candidate(latent=to_constrained(zp[0]).astype(np.float32),
                      image=images[0].copy(), objective=float(obj[0]),
                      preference=float(pref[0]), quality_penalty=float(pen[0]),
                      trace=trace, start_index=0)
    return TailorResult(inversion=inv, checkpoints=checkpoints, final=final)
