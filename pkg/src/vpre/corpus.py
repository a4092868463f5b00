"""Users, items, implicit feedback, and leave-one-out splits.

Interchange formats:
    interactions.tsv  user_id <TAB> item_id [<TAB> timestamp]
    items.tsv         item_id <TAB> category <TAB> image_relpath
    images            PNG, decoded to 8-bit RGB and resized square at ingest
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

MIN_POSITIVES = 5  # users with fewer positive interactions are discarded
COLD_THRESHOLD = 5  # items with fewer training interactions count as cold


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    timestamp: int | None = None


@dataclass
class Item:
    item_id: str
    category_id: int
    image: np.ndarray  # uint8 (side, side, 3)


class Corpus:
    """Immutable view of users, items, positives and (optionally) splits."""

    def __init__(self, items: list[Item], positives: dict[str, tuple[str, ...]],
                 category_names: list[str], image_side: int,
                 train: dict[str, tuple[str, ...]] | None = None,
                 val: dict[str, str] | None = None,
                 test: dict[str, str] | None = None,
                 ground_truth=None):
        self.items = items
        self.item_ids = [it.item_id for it in items]
        self.item_index = {iid: k for k, iid in enumerate(self.item_ids)}
        self.users = sorted(positives)
        self.user_index = {u: k for k, u in enumerate(self.users)}
        self.positives = positives
        self.category_names = category_names
        self.image_side = image_side
        self.train = train
        self.val = val
        self.test = test
        self.ground_truth = ground_truth
        self._float_images: np.ndarray | None = None

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_categories(self) -> int:
        return len(self.category_names)

    @property
    def n_interactions(self) -> int:
        return sum(len(v) for v in self.positives.values())

    def has_split(self) -> bool:
        return self.train is not None

    def category_items(self, category_id: int) -> list[int]:
        return [k for k, it in enumerate(self.items) if it.category_id == category_id]

    def positive_indices(self, user_id: str) -> np.ndarray:
        return np.array([self.item_index[i] for i in self.positives[user_id]], dtype=np.int64)

    def train_indices(self, user_id: str) -> np.ndarray:
        return np.array([self.item_index[i] for i in self.train[user_id]], dtype=np.int64)

    def float_images(self) -> np.ndarray:
        """All item images as float32 (N, 3, side, side) in [-1, 1], cached."""
        if self._float_images is None:
            stack = np.stack([to_float(it.image) for it in self.items])
            self._float_images = stack
        return self._float_images

    def train_counts(self) -> np.ndarray:
        """Per-item interaction count over the training split."""
        if not self.has_split():
            raise CorpusError("corpus has no split assigned")
        counts = np.zeros(self.n_items, dtype=np.int64)
        for u in self.users:
            for iid in self.train[u]:
                counts[self.item_index[iid]] += 1
        return counts

    def cold_items(self) -> np.ndarray:
        """Boolean mask of cold items, recomputed from the training split only."""
        return self.train_counts() < COLD_THRESHOLD


# ---------------------------------------------------------------------------
# image codec

def decode_png(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as e:  # Pillow raises a zoo of types for corrupt data
        raise CorpusError(f"cannot decode PNG: {e}") from e


def encode_png(raster: np.ndarray) -> bytes:
    if raster.dtype != np.uint8 or raster.ndim != 3 or raster.shape[2] != 3:
        raise CorpusError(f"expected uint8 (H, W, 3) raster, got {raster.dtype} {raster.shape}")
    buf = io.BytesIO()
    Image.fromarray(raster, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def to_float(raster: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) -> float32 (3, H, W) in [-1, 1]."""
    t = raster.astype(np.float32) * (2.0 / 255.0) - 1.0
    return np.ascontiguousarray(t.transpose(2, 0, 1))


def from_float(t: np.ndarray) -> np.ndarray:
    """float (3, H, W) in [-1, 1] -> uint8 (H, W, 3); inverse of to_float up to quantization."""
    arr = np.asarray(t)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise CorpusError(f"expected (3, H, W) tensor, got shape {arr.shape}")
    if arr.min() < -1.0 - 1e-5 or arr.max() > 1.0 + 1e-5:
        raise CorpusError("tensor values outside [-1, 1]")
    x = np.clip((arr + 1.0) * (255.0 / 2.0), 0.0, 255.0)
    return np.rint(x).astype(np.uint8).transpose(1, 2, 0)


def resize_raster(raster: np.ndarray, side: int) -> np.ndarray:
    """Bilinear resize to side x side."""
    if raster.shape[0] == side and raster.shape[1] == side:
        return raster
    im = Image.fromarray(raster, mode="RGB").resize((side, side), Image.BILINEAR)
    return np.asarray(im, dtype=np.uint8)


# ---------------------------------------------------------------------------
# loading and splitting

def _parse_tsv(path: str, n_min: int, n_max: int, what: str):
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if not n_min <= len(fields) <= n_max or any(not x for x in fields[:n_min]):
                raise CorpusError(f"{path}:{lineno}: malformed {what} row: {line!r}")
            rows.append((lineno, fields))
    return rows


def load_corpus(interactions_path: str, items_path: str, images_dir: str,
                image_side: int = 32) -> Corpus:
    """Load a corpus from TSV files, dropping users with < 5 positives."""
    item_rows = _parse_tsv(items_path, 3, 3, "item")
    categories = sorted({fields[1] for _, fields in item_rows})
    cat_index = {c: k for k, c in enumerate(categories)}
    items: list[Item] = []
    seen_items: set[str] = set()
    for lineno, (item_id, category, relpath) in ((ln, f) for ln, f in item_rows):
        if item_id in seen_items:
            raise CorpusError(f"{items_path}:{lineno}: duplicate item id {item_id!r}")
        seen_items.add(item_id)
        img_path = os.path.join(images_dir, relpath)
        if not os.path.exists(img_path):
            raise CorpusError(f"{items_path}:{lineno}: missing image file {img_path}")
        with open(img_path, "rb") as f:
            raster = decode_png(f.read())
        items.append(Item(item_id, cat_index[category], resize_raster(raster, image_side)))
    items.sort(key=lambda it: it.item_id)

    inter_rows = _parse_tsv(interactions_path, 2, 3, "interaction")
    if not inter_rows:
        raise CorpusError(f"{interactions_path}: no interactions")
    by_user: dict[str, dict[str, None]] = {}
    for lineno, fields in inter_rows:
        user_id, item_id = fields[0], fields[1]
        if len(fields) == 3 and fields[2]:
            try:
                int(fields[2])
            except ValueError:
                raise CorpusError(f"{interactions_path}:{lineno}: bad timestamp {fields[2]!r}")
        if item_id not in seen_items:
            raise CorpusError(f"{interactions_path}:{lineno}: unknown item {item_id!r}")
        by_user.setdefault(user_id, {})[item_id] = None  # dedupe, keep insertion order

    positives = {u: tuple(sorted(d)) for u, d in by_user.items() if len(d) >= MIN_POSITIVES}
    if not positives:
        raise CorpusError("no users remain after dropping those with fewer than "
                          f"{MIN_POSITIVES} interactions")
    return Corpus(items, positives, categories, image_side)


def split_leave_one_out(corpus: Corpus, seed: int) -> Corpus:
    """Withhold one positive per user for validation and one for testing."""
    rng = np.random.default_rng(seed)
    train: dict[str, tuple[str, ...]] = {}
    val: dict[str, str] = {}
    test: dict[str, str] = {}
    for u in corpus.users:
        pos = list(corpus.positives[u])
        if len(pos) < MIN_POSITIVES:
            raise CorpusError(f"user {u!r} has fewer than {MIN_POSITIVES} positives")
        perm = rng.permutation(len(pos))
        val[u] = pos[perm[0]]
        test[u] = pos[perm[1]]
        train[u] = tuple(sorted(pos[k] for k in perm[2:]))
    return Corpus(corpus.items, corpus.positives, corpus.category_names,
                  corpus.image_side, train=train, val=val, test=test,
                  ground_truth=corpus.ground_truth)


# ---------------------------------------------------------------------------
# writing (the synthetic pipeline and tests use this to produce the TSV format)

def write_corpus(corpus: Corpus, out_dir: str) -> None:
    images_dir = os.path.join(out_dir, "images")
    os.makedirs(images_dir, exist_ok=True)
    with open(os.path.join(out_dir, "items.tsv"), "w", encoding="utf-8") as f:
        for it in corpus.items:
            rel = f"{it.item_id}.png"
            with open(os.path.join(images_dir, rel), "wb") as imf:
                imf.write(encode_png(it.image))
            f.write(f"{it.item_id}\t{corpus.category_names[it.category_id]}\t{rel}\n")
    with open(os.path.join(out_dir, "interactions.tsv"), "w", encoding="utf-8") as f:
        for u in corpus.users:
            for iid in corpus.positives[u]:
                f.write(f"{u}\t{iid}\n")
