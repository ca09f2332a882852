"""Synthetic long-tailed scene generator with confusable category pairs,
dataset persistence, and shared-category batch construction.

Scenes are rendered 3-channel float images with parameterized shapes
(rectangle, ellipse, cross, ring). A confusable pair shares a shape
family and differs only by a small color/texture delta, standing in for
visually-similar distractor categories.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BBox, iou

FAMILIES = ("rectangle", "ellipse", "cross", "ring")
PIXEL_MAGIC = b"NDPX"


class PlacementError(RuntimeError):
    pass


class BatchConstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Annotation:
    instance_id: int
    category_id: int
    bbox: BBox


@dataclass
class Scene:
    image_id: int
    width: int
    height: int
    pixels: np.ndarray | None  # [3, H, W] in [0,1]; None when not rendered
    annotations: list

    def category_counts(self) -> dict:
        counts: dict = {}
        for a in self.annotations:
            counts[a.category_id] = counts.get(a.category_id, 0) + 1
        return counts


@dataclass
class Category:
    id: int
    name: str
    family: str
    color: tuple
    stripe_freq: float
    stripe_phase: float
    confusable_with: int | None = None
    bucket: str = "frequent"


@dataclass
class DataConfig:
    num_scenes: int = 120
    num_categories: int = 20
    confusable_pairs: tuple = ()  # pairs of category ids; () -> auto from count
    num_confusable_pairs: int = 4
    zipf_exponent: float = 1.1
    image_size: int = 64
    seed: int = 0
    min_instances: int = 6
    max_instances: int = 9
    dominant_count: int = 4  # instances of the dominant category per scene
    partner_bias: float = 0.35  # chance an extra instance is the dominant's pair
    render: bool = True
    val_fraction: float = 0.2
    rare_max: int = 10
    common_max: int = 100


@dataclass
class DatasetManifest:
    config: DataConfig
    scenes: list
    categories: list
    train_ids: list = field(default_factory=list)
    val_ids: list = field(default_factory=list)

    def scene(self, image_id: int) -> Scene:
        return self._by_id[image_id]

    def __post_init__(self):
        self._by_id = {s.image_id: s for s in self.scenes}

    @property
    def category_by_id(self) -> dict:
        return {c.id: c for c in self.categories}


# -- category + signature synthesis --------------------------------------

def _hsv_to_rgb(h, s, v):
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def default_confusable_pairs(num_categories: int, n_pairs: int) -> tuple:
    """Pair up the first 2*n_pairs categories: (0,1), (2,3), ..."""
    if 2 * n_pairs > num_categories:
        raise ValueError("not enough categories for requested confusable pairs")
    return tuple((2 * i, 2 * i + 1) for i in range(n_pairs))


def _make_categories(cfg: DataConfig, rng: np.random.Generator) -> list:
    pairs = cfg.confusable_pairs or default_confusable_pairs(
        cfg.num_categories, cfg.num_confusable_pairs
    )
    partner: dict = {}
    for a, b in pairs:
        if not (0 <= a < cfg.num_categories and 0 <= b < cfg.num_categories):
            raise ValueError(f"confusable pair ({a},{b}) references missing category")
        partner[a], partner[b] = b, a
    cats: list = []
    for cid in range(cfg.num_categories):
        if cid in partner and partner[cid] < cid:
            base = cats[partner[cid]]
            # same shape family, nudged signature: the hard-negative analogue
            color = tuple(np.clip(np.array(base.color) + rng.uniform(-0.08, 0.08, 3), 0.05, 1.0))
            cats.append(Category(cid, f"{base.family}_{cid:02d}", base.family, color,
                                 base.stripe_freq + rng.uniform(-0.5, 0.5),
                                 rng.uniform(0, 2 * np.pi), confusable_with=base.id))
            cats[base.id].confusable_with = cid
            continue
        family = FAMILIES[int(rng.integers(len(FAMILIES)))]
        color = tuple(_hsv_to_rgb(rng.random(), 0.5 + 0.5 * rng.random(), 0.5 + 0.5 * rng.random()))
        cats.append(Category(cid, f"{family}_{cid:02d}", family, color,
                             rng.uniform(1.5, 4.0), rng.uniform(0, 2 * np.pi)))
    return cats


def _zipf_probs(n: int, exponent: float) -> np.ndarray:
    w = (np.arange(n) + 1.0) ** (-exponent)
    return w / w.sum()


# -- rendering ------------------------------------------------------------

def _shape_mask(family: str, h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    u = (xs + 0.5) / w * 2 - 1  # [-1, 1]
    v = (ys + 0.5) / h * 2 - 1
    if family == "rectangle":
        return np.ones((h, w), bool)
    if family == "ellipse":
        return u**2 + v**2 <= 1.0
    if family == "cross":
        return (np.abs(u) <= 1 / 3) | (np.abs(v) <= 1 / 3)
    if family == "ring":
        r2 = u**2 + v**2
        return (r2 <= 1.0) & (r2 >= 0.30)
    raise ValueError(family)


def render_scene(scene: Scene, categories: list, rng: np.random.Generator) -> np.ndarray:
    size_h, size_w = scene.height, scene.width
    img = np.empty((3, size_h, size_w))
    img[:] = 0.12 + 0.05 * rng.random((3, size_h, size_w))
    by_id = {c.id: c for c in categories}
    for ann in scene.annotations:
        cat = by_id[ann.category_id]
        b = ann.bbox
        x0, y0 = int(round(b.x)), int(round(b.y))
        x1, y1 = int(round(b.x2)), int(round(b.y2))
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, size_w), min(y1, size_h)
        h, w = y1 - y0, x1 - x0
        if h <= 0 or w <= 0:
            continue
        mask = _shape_mask(cat.family, h, w)
        ys = np.arange(h)[:, None] / max(h, 1)
        stripes = 0.12 * np.sin(2 * np.pi * cat.stripe_freq * ys + cat.stripe_phase)
        shade = 1.0 + rng.uniform(-0.06, 0.06)
        for ch in range(3):
            patch = img[ch, y0:y1, x0:x1]
            value = np.clip(cat.color[ch] * shade + stripes, 0.0, 1.0)
            patch[mask] = np.broadcast_to(value, (h, w))[mask]
    return np.clip(img, 0.0, 1.0)


# -- dataset synthesis -----------------------------------------------------

def _place_box(rng: np.random.Generator, size: int, existing: list,
               attempts: int = 50, max_overlap: float = 0.3) -> BBox:
    scale = size / 64.0
    for _ in range(attempts):
        w = float(rng.uniform(9, 24) * scale)
        h = float(rng.uniform(9, 24) * scale)
        x = float(rng.uniform(0, size - w))
        y = float(rng.uniform(0, size - h))
        cand = BBox(x, y, w, h)
        if all(iou(cand, b) < max_overlap for b in existing):
            return cand
    raise PlacementError(f"no placement after {attempts} attempts")


def synthesize_dataset(cfg: DataConfig) -> DatasetManifest:
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0xDA7A]))
    cats = _make_categories(cfg, rng)
    probs = _zipf_probs(cfg.num_categories, cfg.zipf_exponent)
    partner = {c.id: c.confusable_with for c in cats}

    # dominant categories by quota (largest remainder, shuffled): rank
    # frequencies then track the Zipf weights tightly instead of wobbling
    # with multinomial noise amplified by the per-scene instance block
    quota = np.floor(probs * cfg.num_scenes).astype(int)
    remainder = probs * cfg.num_scenes - quota
    for cid in np.argsort(-remainder)[: cfg.num_scenes - quota.sum()]:
        quota[cid] += 1
    dominants = rng.permutation(np.repeat(np.arange(cfg.num_categories), quota))

    scenes: list = []
    next_ann = 0
    for sid in range(cfg.num_scenes):
        n_total = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
        dominant = int(dominants[sid])
        anns: list = []
        boxes: list = []
        for k in range(n_total):
            if k < cfg.dominant_count:
                cid = dominant
            elif partner.get(dominant) is not None and rng.random() < cfg.partner_bias:
                cid = partner[dominant]
            else:
                cid = int(rng.choice(cfg.num_categories, p=probs))
            try:
                box = _place_box(rng, cfg.image_size, boxes)
            except PlacementError:
                if k >= cfg.min_instances:
                    break
                raise
            boxes.append(box)
            anns.append(Annotation(next_ann, cid, box))
            next_ann += 1
        scenes.append(Scene(sid, cfg.image_size, cfg.image_size, None, anns))

    # coverage: every category must appear in >= 1 scene
    present = {a.category_id for s in scenes for a in s.annotations}
    for cid in range(cfg.num_categories):
        if cid in present:
            continue
        target = scenes[cid % len(scenes)]
        boxes = [a.bbox for a in target.annotations]
        box = _place_box(rng, cfg.image_size, boxes, max_overlap=0.5)
        target.annotations.append(Annotation(next_ann, cid, box))
        next_ann += 1

    manifest = DatasetManifest(cfg, scenes, cats)
    _assign_split(manifest, rng)
    buckets = frequency_buckets(manifest, {"rare_max": cfg.rare_max, "common_max": cfg.common_max})
    for c in cats:
        c.bucket = buckets[c.id]
    if cfg.render:
        for s in scenes:
            s.pixels = render_scene(s, cats, rng)
    return manifest


def _assign_split(manifest: DatasetManifest, rng: np.random.Generator):
    """80/20 scene split, then repair so every category appears in val."""
    ids = [s.image_id for s in manifest.scenes]
    n_val = max(1, int(round(len(ids) * manifest.config.val_fraction)))
    order = list(rng.permutation(ids))
    val = set(order[:n_val])
    cat_scenes: dict = {}
    for s in manifest.scenes:
        for a in s.annotations:
            cat_scenes.setdefault(a.category_id, []).append(s.image_id)
    for cid, owners in sorted(cat_scenes.items()):
        if not any(o in val for o in owners):
            # move the category's least annotation-rich scene into val
            pick = min(set(owners), key=lambda i: (len(manifest.scene(i).annotations), i))
            val.add(pick)
    manifest.val_ids = sorted(val)
    manifest.train_ids = sorted(set(ids) - val)


# -- hash-table batching ---------------------------------------------------

def build_category_index(manifest: DatasetManifest, train_only: bool = True) -> dict:
    """category_id -> image ids containing more than three instances of it."""
    pool = set(manifest.train_ids) if train_only else {s.image_id for s in manifest.scenes}
    index: dict = {}
    for s in manifest.scenes:
        if s.image_id not in pool:
            continue
        for cid, n in s.category_counts().items():
            if n > 3:
                index.setdefault(cid, []).append(s.image_id)
    for v in index.values():
        v.sort()
    return index


def link_category(scene: Scene) -> int:
    """Second-most-frequent category; ties by lower id; single-category
    scenes fall back to their only category."""
    counts = scene.category_counts()
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[1][0] if len(ranked) > 1 else ranked[0][0]


def construct_batch(manifest: DatasetManifest, index: dict, batch_size: int,
                    rng: np.random.Generator, log=None, return_link: bool = False):
    """Seed image + fill images all sharing the seed's link category."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    if not index:
        raise BatchConstructionError("category index is empty")
    train = manifest.train_ids
    seed_id = int(train[rng.integers(len(train))])
    scene = manifest.scene(seed_id)
    counts = scene.category_counts()
    ranked = [c for c, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]
    candidates = [link_category(scene)]
    candidates += [c for c in ranked if c not in candidates]
    link = None
    for i, cid in enumerate(candidates):
        if index.get(cid):
            link = cid
            if i > 0 and log is not None:
                log(f"batch link fallback: scene {seed_id} -> category {cid}")
            break
    if link is None:
        raise BatchConstructionError(f"no indexed category reachable from scene {seed_id}")
    pool = [i for i in index[link] if i != seed_id] or list(index[link])
    batch = [seed_id]
    avail = list(pool)
    while len(batch) < batch_size:
        if avail:
            pick = avail.pop(int(rng.integers(len(avail))))
        else:  # with replacement once distinct images run out
            pick = pool[int(rng.integers(len(pool)))]
        batch.append(int(pick))
    return (batch, link) if return_link else batch


def shared_categories(manifest: DatasetManifest, batch: list) -> set:
    sets = [set(manifest.scene(i).category_counts()) for i in batch]
    out = sets[0]
    for s in sets[1:]:
        out = out & s
    return out


def frequency_buckets(manifest: DatasetManifest, thresholds: dict) -> dict:
    rare_max, common_max = thresholds["rare_max"], thresholds["common_max"]
    if rare_max >= common_max:
        raise ValueError("need rare_max < common_max")
    counts = {c.id: 0 for c in manifest.categories}
    train = set(manifest.train_ids)
    for s in manifest.scenes:
        if s.image_id not in train:
            continue
        for a in s.annotations:
            counts[a.category_id] += 1
    out = {}
    for cid, n in counts.items():
        out[cid] = "rare" if n <= rare_max else ("common" if n <= common_max else "frequent")
    return out


# -- persistence -----------------------------------------------------------

def pixels_to_bytes(pixels: np.ndarray) -> bytes:
    c, h, w = pixels.shape
    return PIXEL_MAGIC + struct.pack("<III", c, h, w) + pixels.astype("<f4").tobytes()


def _write_pixels(path: Path, pixels: np.ndarray):
    with open(path, "wb") as f:
        f.write(pixels_to_bytes(pixels))


def read_pixels(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != PIXEL_MAGIC:
        raise ValueError(f"{path} is not a pixel file")
    c, h, w = struct.unpack("<III", raw[4:16])
    return np.frombuffer(raw[16:], dtype="<f4").reshape(c, h, w).astype(np.float64)


def save_dataset(manifest: DatasetManifest, out_dir) -> Path:
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    images, annotations = [], []
    for s in manifest.scenes:
        fname = f"scenes/scene_{s.image_id:05d}.bin"
        images.append({
            "id": s.image_id, "width": s.width, "height": s.height, "file": fname,
            "split": "val" if s.image_id in set(manifest.val_ids) else "train",
        })
        if s.pixels is not None:
            _write_pixels(out / fname, s.pixels)
        for a in s.annotations:
            annotations.append({
                "id": a.instance_id, "image_id": s.image_id,
                "category_id": a.category_id,
                "bbox": [round(v, 4) for v in a.bbox.as_xywh()],
            })
    categories = [{
        "id": c.id, "name": c.name, "family": c.family, "bucket": c.bucket,
        "color": [round(v, 6) for v in c.color],
        "stripe_freq": round(c.stripe_freq, 6), "stripe_phase": round(c.stripe_phase, 6),
        "confusable_with": c.confusable_with,
    } for c in manifest.categories]
    doc = {
        "format_version": 1,
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in vars(manifest.config).items()},
        "images": images, "annotations": annotations, "categories": categories,
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return out


def load_dataset(in_dir, load_pixels: bool = True) -> DatasetManifest:
    root = Path(in_dir)
    doc = json.loads((root / "manifest.json").read_text())
    cfg_raw = dict(doc["config"])
    cfg_raw["confusable_pairs"] = tuple(tuple(p) for p in cfg_raw.get("confusable_pairs", []))
    cfg = DataConfig(**cfg_raw)
    cats = [Category(c["id"], c["name"], c["family"], tuple(c["color"]),
                     c["stripe_freq"], c["stripe_phase"], c["confusable_with"], c["bucket"])
            for c in doc["categories"]]
    anns_by_img: dict = {}
    for a in doc["annotations"]:
        anns_by_img.setdefault(a["image_id"], []).append(
            Annotation(a["id"], a["category_id"], BBox(*a["bbox"]))
        )
    scenes, train_ids, val_ids = [], [], []
    for im in doc["images"]:
        pixels = read_pixels(root / im["file"]) if load_pixels and (root / im["file"]).exists() else None
        scenes.append(Scene(im["id"], im["width"], im["height"], pixels,
                            anns_by_img.get(im["id"], [])))
        (val_ids if im["split"] == "val" else train_ids).append(im["id"])
    m = DatasetManifest(cfg, scenes, cats, sorted(train_ids), sorted(val_ids))
    return m
