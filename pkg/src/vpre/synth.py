"""Deterministic synthetic garment corpus with known ground truth.

Items carry latent style attributes (silhouette class, hue, saturation,
stripe frequency, sleeve/leg length). Images are rendered procedurally
from those attributes alone, so two runs with one seed are byte-identical.
Users carry a latent preference vector over an attribute feature encoding,
and purchase proposals are accepted with probability
sigmoid(sharpness * <preference, features>), which makes the generating
model itself an oracle scorer for ranking tests.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import Corpus, Item

SILHOUETTES = ["dress", "pants", "shoe", "tee"]  # sorted; category_id indexes this
FEATURE_DIM = 9  # 4 silhouette one-hots + hue cos/sin + saturation + stripes + length


@dataclass
class SyntheticStyleSpec:
    n_categories: int = 4
    image_side: int = 32
    saturation_range: tuple[float, float] = (0.35, 1.0)
    stripe_max: int = 3
    # relative weight of each attribute block in user preferences
    attribute_weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.3, 1.3, 0.6, 0.6, 0.6)
    preference_scale: float = 1.0
    preference_sharpness: float = 4.0
    # acceptance is centered on this per-user score quantile, so positives
    # concentrate in each user's top tail instead of their whole upper half
    selectivity_quantile: float = 0.9
    min_positives: int = 5
    extra_positives_mean: float = 2.5  # sparsity knob: mean positives = min + this

    def __post_init__(self):
        if not 1 <= self.n_categories <= len(SILHOUETTES):
            raise ValueError(f"n_categories must be in [1, {len(SILHOUETTES)}]")
        self.saturation_range = tuple(self.saturation_range)
        self.attribute_weights = tuple(self.attribute_weights)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticStyleSpec":
        return cls(**json.loads(text))


@dataclass
class GroundTruth:
    """The generating preference model, kept for oracle tests."""

    user_vectors: np.ndarray  # (n_users, FEATURE_DIM)
    item_vectors: np.ndarray  # (n_items, FEATURE_DIM)
    attributes: list[dict]    # raw per-item attributes
    sharpness: float
    proposals: int = 0
    accepts: int = 0

    def scores(self, user_idx: int) -> np.ndarray:
        return self.item_vectors @ self.user_vectors[user_idx]

    @property
    def acceptance_rate(self) -> float:
        return self.accepts / max(self.proposals, 1)


# ---------------------------------------------------------------------------
# rendering

def _hsv_to_rgb(h: float, s: float, v: np.ndarray) -> np.ndarray:
    """Scalar hue/saturation, array value -> (H, W, 3) in [0, 1]."""
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    order = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return np.stack(order, axis=-1)


def _silhouette_mask(kind: int, length: float, side: int) -> np.ndarray:
    ys, xs = np.meshgrid(np.linspace(0, 1, side), np.linspace(0, 1, side), indexing="ij")
    if kind == 3:  # tee: torso plus sleeves whose drop varies with length
        torso = (0.30 <= xs) & (xs <= 0.70) & (0.20 <= ys) & (ys <= 0.80)
        drop = 0.30 + 0.38 * length
        sleeves = (((0.12 <= xs) & (xs < 0.30)) | ((0.70 < xs) & (xs <= 0.88))) \
            & (0.20 <= ys) & (ys <= drop)
        return torso | sleeves
    if kind == 1:  # pants: waist band plus two legs of varying length
        waist = (0.30 <= xs) & (xs <= 0.70) & (0.15 <= ys) & (ys <= 0.32)
        hem = 0.32 + 0.55 * (0.35 + 0.65 * length)
        legs = (((0.30 <= xs) & (xs <= 0.45)) | ((0.55 <= xs) & (xs <= 0.70))) \
            & (0.32 <= ys) & (ys <= hem)
        return waist | legs
    if kind == 0:  # dress: trapezoid flaring toward a variable hem
        hem = 0.45 + 0.45 * length
        span = np.clip((ys - 0.15) / max(hem - 0.15, 1e-6), 0.0, 1.0)
        half = 0.10 + 0.28 * span
        return (np.abs(xs - 0.5) <= half) & (0.15 <= ys) & (ys <= hem)
    # shoe: fixed sole, shaft height varies with length
    sole = (0.15 <= xs) & (xs <= 0.82) & (0.58 <= ys) & (ys <= 0.78)
    top = 0.58 - 0.34 * length
    shaft = (0.15 <= xs) & (xs <= 0.40) & (top <= ys) & (ys <= 0.58)
    return sole | shaft


def render_item(attrs: dict, side: int) -> np.ndarray:
    """Render one garment image (uint8 RGB) from its attributes."""
    mask = _silhouette_mask(attrs["silhouette"], attrs["length"], side)
    ys = np.linspace(0, 1, side)[:, None] * np.ones((1, side))
    value = np.full((side, side), 0.72)
    freq = attrs["stripes"]
    if freq > 0:
        bands = np.sin(2.0 * np.pi * freq * 2.0 * ys) >= 0
        value = np.where(bands, 0.72, 0.42)
    garment = _hsv_to_rgb(attrs["hue"], attrs["saturation"], value)
    canvas = np.full((side, side, 3), 0.92)
    canvas[mask] = garment[mask]
    return np.clip(np.rint(canvas * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# feature encoding and generation

def attribute_features(attrs: dict, spec: SyntheticStyleSpec) -> np.ndarray:
    lo, hi = spec.saturation_range
    phi = np.zeros(FEATURE_DIM)
    phi[attrs["silhouette"]] = 1.0
    phi[4] = np.cos(2.0 * np.pi * attrs["hue"])
    phi[5] = np.sin(2.0 * np.pi * attrs["hue"])
    phi[6] = 2.0 * (attrs["saturation"] - lo) / max(hi - lo, 1e-9) - 1.0
    phi[7] = 2.0 * attrs["stripes"] / max(spec.stripe_max, 1) - 1.0
    phi[8] = 2.0 * attrs["length"] - 1.0
    return phi


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x)) if x >= 0 else np.exp(x) / (1.0 + np.exp(x))


def generate_synthetic(spec: SyntheticStyleSpec, n_users: int, n_items: int,
                       seed: int) -> Corpus:
    """Render n_items garments and sample implicit feedback for n_users."""
    if n_users <= 0 or n_items <= 0:
        raise ValueError("n_users and n_items must be positive")
    root = np.random.SeedSequence(seed)
    item_rng, user_rng, inter_rng = (np.random.default_rng(s) for s in root.spawn(3))

    lo, hi = spec.saturation_range
    attributes = []
    items: list[Item] = []
    width = max(4, len(str(n_items - 1)))
    for k in range(n_items):
        attrs = {
            "silhouette": int(item_rng.integers(spec.n_categories)),
            "hue": float(item_rng.random()),
            "saturation": float(item_rng.uniform(lo, hi)),
            "stripes": int(item_rng.integers(spec.stripe_max + 1)),
            "length": float(item_rng.random()),
        }
        attributes.append(attrs)
        items.append(Item(f"i{k:0{width}d}", attrs["silhouette"],
                          render_item(attrs, spec.image_side)))
    item_vectors = np.stack([attribute_features(a, spec) for a in attributes])

    weights = np.asarray(spec.attribute_weights)
    user_vectors = (user_rng.normal(size=(n_users, FEATURE_DIM)) * weights
                    * spec.preference_scale)

    truth = GroundTruth(user_vectors, item_vectors, attributes, spec.preference_sharpness)
    positives: dict[str, tuple[str, ...]] = {}
    uwidth = max(4, len(str(n_users - 1)))
    budget_per_user = 400 * n_items
    for u in range(n_users):
        target = spec.min_positives + int(inter_rng.poisson(spec.extra_positives_mean))
        target = min(target, n_items)
        raw = item_vectors @ user_vectors[u]
        center = float(np.quantile(raw, spec.selectivity_quantile))
        scores = spec.preference_sharpness * (raw - center)
        chosen: dict[int, None] = {}
        proposals = 0
        while len(chosen) < target and proposals < budget_per_user:
            cand = int(inter_rng.integers(n_items))
            proposals += 1
            truth.proposals += 1
            if inter_rng.random() < _sigmoid(scores[cand]):
                truth.accepts += 1
                chosen.setdefault(cand, None)
        if len(chosen) < target:  # pathological preferences: fill deterministically
            for cand in np.argsort(-scores):
                chosen.setdefault(int(cand), None)
                if len(chosen) >= target:
                    break
        positives[f"u{u:0{uwidth}d}"] = tuple(sorted(items[k].item_id for k in chosen))

    # SILHOUETTES is alphabetically sorted, so category ids match a reload from TSV
    names = SILHOUETTES[:spec.n_categories]
    return Corpus(items, positives, names, spec.image_side, ground_truth=truth)
