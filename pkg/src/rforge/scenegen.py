"""Procedural "natural" scenes with ground-truth object masks and a known
scene-wide affine colour cast.

A scene is a two-band background (light sky over darker ground) with
low-frequency value noise, plus a few disjoint convex objects (ellipses,
rounded rectangles, regular polygons). Base colours are close to neutral so
the cast shows up as a shared tint over the whole frame; an object pasted
from a scene with a different cast carries a visibly different tint.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imgcore import BBox, bbox_of, write_image, write_mask

log = logging.getLogger(__name__)

CATEGORIES = ("ellipse", "roundrect", "triangle", "diamond", "pentagon", "hexagon")
_POLY_SIDES = {"triangle": 3, "diamond": 4, "pentagon": 5, "hexagon": 6}

GAIN_RANGE = (0.6, 1.4)
BIAS_RANGE = (-0.15, 0.15)
AREA_RANGE = (0.05, 0.50)


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Cast:
    """Per-channel affine illumination cast ``v -> gain * v + bias``."""

    gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    biases: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        g = np.asarray(self.gains)
        b = np.asarray(self.biases)
        if g.shape != (3,) or b.shape != (3,):
            raise ValueError("cast needs three gains and three biases")
        if np.any(g < GAIN_RANGE[0] - 1e-12) or np.any(g > GAIN_RANGE[1] + 1e-12):
            raise ValueError(f"cast gains {self.gains} outside {GAIN_RANGE}")
        if np.any(b < BIAS_RANGE[0] - 1e-12) or np.any(b > BIAS_RANGE[1] + 1e-12):
            raise ValueError(f"cast biases {self.biases} outside {BIAS_RANGE}")

    def apply(self, img: np.ndarray) -> np.ndarray:
        return img * np.asarray(self.gains) + np.asarray(self.biases)

    def to_json(self) -> dict:
        return {"gains": [float(v) for v in self.gains], "biases": [float(v) for v in self.biases]}

    @classmethod
    def from_json(cls, d: dict) -> "Cast":
        return cls(tuple(d["gains"]), tuple(d["biases"]))


def correction_between(target: Cast, source: Cast) -> tuple[np.ndarray, np.ndarray]:
    """Gains/biases of ``target o source^-1``: maps source-cast pixels to the target cast."""
    gt, bt = np.asarray(target.gains), np.asarray(target.biases)
    gs, bs = np.asarray(source.gains), np.asarray(source.biases)
    lam = gt / gs
    return lam, bt - lam * bs


@dataclass(frozen=True)
class ObjectSpec:
    category: str
    center: tuple[float, float]  # (x, y) in pixels
    radii: tuple[float, float]
    angle: float
    albedo: tuple[float, float, float]
    stripe_period: float  # 0 = flat
    stripe_angle: float
    stripe_level: float  # neutral value of the alternate stripes
    highlight: tuple[float, float]  # offset of the highlight in unit radii


@dataclass(frozen=True)
class Background:
    sky: tuple[float, float, float]
    ground: tuple[float, float, float]
    horizon: float  # fraction of height
    noise_amp: float
    noise_seed: int


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    size: int
    cast: Cast
    background: Background
    objects: tuple[ObjectSpec, ...] = field(default_factory=tuple)


@dataclass
class ObjectRecord:
    """A segmented object instance or proposal (``category`` None for proposals)."""

    image_id: str
    index: int
    mask: np.ndarray
    category: str | None
    bbox: BBox
    area_frac: float
    _descriptor: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_mask(cls, image_id: str, index: int, mask: np.ndarray, category: str | None) -> "ObjectRecord":
        mask = (np.asarray(mask) > 0).astype(np.float64)
        return cls(image_id, index, mask, category, bbox_of(mask), float(mask.mean()))


@dataclass
class LabeledScene:
    scene_id: str
    image: np.ndarray
    instances: list[ObjectRecord]
    cast: Cast
    base: np.ndarray | None = None
    spec: SceneSpec | None = None


# ---------------------------------------------------------------- rasterizing

def _pixel_grid(size: int):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    return xs + 0.0, ys + 0.0


def _local_coords(obj: ObjectSpec, xs, ys):
    c, s = np.cos(obj.angle), np.sin(obj.angle)
    dx, dy = xs - obj.center[0], ys - obj.center[1]
    u = (c * dx + s * dy) / obj.radii[0]
    v = (-s * dx + c * dy) / obj.radii[1]
    return u, v


def object_mask(obj: ObjectSpec, size: int) -> np.ndarray:
    xs, ys = _pixel_grid(size)
    u, v = _local_coords(obj, xs, ys)
    if obj.category == "ellipse":
        inside = u * u + v * v <= 1.0
    elif obj.category == "roundrect":
        r = 0.35
        qu = np.maximum(np.abs(u) - (1 - r), 0.0)
        qv = np.maximum(np.abs(v) - (1 - r), 0.0)
        inside = (np.abs(u) <= 1) & (np.abs(v) <= 1) & (qu * qu + qv * qv <= r * r)
    else:
        n = _POLY_SIDES[obj.category]
        inside = np.ones_like(u, dtype=bool)
        # regular polygon, vertex up; half-plane per edge
        apothem = np.cos(np.pi / n)
        for k in range(n):
            a = -np.pi / 2 + np.pi / n + 2 * np.pi * k / n
            inside &= u * np.cos(a) + v * np.sin(a) <= apothem
    return inside.astype(np.float64)


def _value_noise(size: int, seed: int, cells: int = 5) -> np.ndarray:
    rng = np.random.default_rng(seed)
    grid = rng.uniform(-1.0, 1.0, (cells + 1, cells + 1))
    t = np.linspace(0, cells, size, endpoint=False) + 0.5 * cells / size
    i = np.floor(t).astype(int)
    f = t - i
    f = f * f * (3 - 2 * f)
    top = grid[i][:, i] * (1 - f)[None, :] + grid[i][:, i + 1] * f[None, :]
    bot = grid[i + 1][:, i] * (1 - f)[None, :] + grid[i + 1][:, i + 1] * f[None, :]
    return top * (1 - f)[:, None] + bot * f[:, None]


def render_base(spec: SceneSpec) -> tuple[np.ndarray, list[np.ndarray]]:
    """Un-cast render and the object masks, in object order."""
    size = spec.size
    bg = spec.background
    xs, ys = _pixel_grid(size)
    yf = (ys + 0.5) / size
    sky_shade = 1.0 - 0.25 * yf / max(bg.horizon, 1e-6)
    sky = np.asarray(bg.sky)[None, None, :] * sky_shade[..., None]
    ground = np.asarray(bg.ground)[None, None, :] * (0.8 + 0.3 * yf)[..., None]
    img = np.where((yf < bg.horizon)[..., None], sky, ground)
    img = img + bg.noise_amp * _value_noise(size, bg.noise_seed)[..., None]

    masks = []
    for obj in spec.objects:
        m = object_mask(obj, size)
        u, v = _local_coords(obj, xs, ys)
        shade = 0.65 + 0.35 * np.clip(0.5 - 0.5 * (0.6 * u + 0.8 * v), 0.0, 1.0)
        albedo = np.broadcast_to(np.asarray(obj.albedo), img.shape).copy()
        if obj.stripe_period > 0:
            phase = (np.cos(obj.stripe_angle) * xs + np.sin(obj.stripe_angle) * ys) / obj.stripe_period
            alt = (np.floor(phase) % 2) == 1
            albedo[alt] = obj.stripe_level
        col = albedo * shade[..., None]
        hu, hv = u - obj.highlight[0], v - obj.highlight[1]
        spot = np.exp(-(hu * hu + hv * hv) / 0.06)
        col = col + (0.8 - col) * 0.8 * spot[..., None]
        img = np.where(m[..., None] > 0, col, img)
        masks.append(m)
    return np.clip(img, 0.0, 1.0), masks


def render_scene(spec: SceneSpec, scene_id: str | None = None) -> LabeledScene:
    """Rasterize a scene, then apply its cast to every pixel (clamped to [0, 1])."""
    base, masks = render_base(spec)
    total = spec.size * spec.size
    union = np.zeros((spec.size, spec.size))
    instances = []
    sid = scene_id if scene_id is not None else f"s{spec.seed}"
    for k, (obj, m) in enumerate(zip(spec.objects, masks)):
        frac = m.sum() / total
        if not AREA_RANGE[0] <= frac <= AREA_RANGE[1]:
            raise SceneGenerationError(f"object {k} ({obj.category}) covers {frac:.3f} of the image")
        if np.any(union * m):
            raise SceneGenerationError(f"object {k} ({obj.category}) overlaps an earlier object")
        union += m
        instances.append(ObjectRecord.from_mask(sid, k, m, obj.category))
    image = np.clip(spec.cast.apply(base), 0.0, 1.0)
    return LabeledScene(sid, image, instances, spec.cast, base=base, spec=spec)


def recast(scene: LabeledScene, cast: Cast) -> np.ndarray:
    """The same scene under a different cast."""
    if scene.base is None:
        raise ValueError("scene has no base render")
    return np.clip(cast.apply(scene.base), 0.0, 1.0)


# ---------------------------------------------------------------- sampling

def _neutral(rng, lo, hi, tint=0.04):
    v = rng.uniform(lo, hi)
    return tuple(float(np.clip(v + rng.uniform(-tint, tint), 0.0, 1.0)) for _ in range(3))


def sample_cast(rng, spread: float = 0.35, bias_spread: float = 0.10) -> Cast:
    gains = tuple(float(v) for v in np.clip(1.0 + rng.uniform(-spread, spread, 3), *GAIN_RANGE))
    biases = tuple(float(v) for v in np.clip(rng.uniform(-bias_spread, bias_spread, 3), *BIAS_RANGE))
    return Cast(gains, biases)


def sample_object(rng, category: str, size: int, max_area: float = 0.2) -> ObjectSpec:
    area = rng.uniform(0.065, max(0.066, max_area)) * size * size
    aspect = rng.uniform(0.65, 1.5)
    # area of the unit shape relative to its bounding ellipse
    k = {"ellipse": np.pi, "roundrect": 3.9, "triangle": 1.3, "diamond": 2.0, "pentagon": 2.38, "hexagon": 2.6}[category]
    r = np.sqrt(area / (k * aspect))
    radii = (float(r * aspect), float(r))
    reach = max(radii) + 2
    cx = rng.uniform(reach, size - reach) if size > 2 * reach else size / 2
    cy = rng.uniform(reach, size - reach) if size > 2 * reach else size / 2
    striped = rng.random() < 0.5
    return ObjectSpec(
        category=category,
        center=(float(cx), float(cy)),
        radii=radii,
        angle=float(rng.uniform(-0.35, 0.35)),
        albedo=_neutral(rng, 0.3, 0.7, tint=0.1),
        stripe_period=float(rng.uniform(4.0, 9.0)) if striped else 0.0,
        stripe_angle=float(rng.uniform(0, np.pi)),
        stripe_level=float(rng.choice([0.12, 0.85])),
        highlight=(float(rng.uniform(-0.5, 0.0)), float(rng.uniform(-0.5, 0.0))),
    )


def sample_scene_spec(seed: int, categories: list[str], size: int = 128, max_tries: int = 100,
                      restarts: int = 20) -> SceneSpec:
    """Random scene with one object per entry of ``categories``.

    Object placement is retried until every mask passes the area filter and
    masks are pairwise disjoint (with a 1-pixel gap); the whole layout is
    restarted a bounded number of times before giving up.
    """
    rng = np.random.default_rng(seed)
    cast = sample_cast(rng)
    background = Background(
        sky=_neutral(rng, 0.55, 0.75),
        ground=_neutral(rng, 0.22, 0.42),
        horizon=float(rng.uniform(0.35, 0.6)),
        noise_amp=float(rng.uniform(0.02, 0.06)),
        noise_seed=int(rng.integers(2**31)),
    )
    cap = min(0.2, 0.34 / max(1, len(categories)))
    total = size * size
    for restart in range(restarts):
        objects: list[ObjectSpec] = []
        occupied = np.zeros((size, size), dtype=bool)
        failed = None
        for k, cat in enumerate(categories):
            for attempt in range(max_tries):
                # shrink the size range as placement keeps failing
                obj = sample_object(rng, cat, size, max_area=cap - (cap - 0.066) * attempt / max_tries)
                m = object_mask(obj, size) > 0
                if not AREA_RANGE[0] <= m.sum() / total <= AREA_RANGE[1]:
                    continue
                grown = m.copy()
                grown[1:] |= m[:-1]
                grown[:-1] |= m[1:]
                grown[:, 1:] |= grown[:, :-1]
                grown[:, :-1] |= grown[:, 1:]
                if np.any(grown & occupied):
                    continue
                occupied |= grown
                objects.append(obj)
                break
            else:
                failed = (k, cat)
                break
        if failed is None:
            break
    else:
        raise SceneGenerationError(f"could not place object {failed[0]} ({failed[1]}) in scene seed {seed}")
    return SceneSpec(seed, size, cast, background, tuple(objects))


# ---------------------------------------------------------------- corpus

@dataclass(frozen=True)
class CorpusConfig:
    scenes: int = 600
    categories: tuple[str, ...] = CATEGORIES
    size: int = 128
    min_objects: int = 1
    max_objects: int = 3


def scene_seed(seed: int, index: int) -> int:
    return int(seed) ^ int(index)


def _object_counts(cfg: CorpusConfig, seed: int) -> list[int]:
    return [int(np.random.default_rng([scene_seed(seed, i), 1]).integers(cfg.min_objects, cfg.max_objects + 1))
            for i in range(cfg.scenes)]


def corpus_plan(cfg: CorpusConfig, seed: int) -> list[list[str]]:
    """Category list per scene; categories are dealt round-robin over all instances."""
    counts = _object_counts(cfg, seed)
    plan, ordinal = [], 0
    for n in counts:
        plan.append([cfg.categories[(ordinal + j) % len(cfg.categories)] for j in range(n)])
        ordinal += n
    return plan


def make_scene(cfg: CorpusConfig, seed: int, index: int, categories: list[str]) -> LabeledScene:
    spec = sample_scene_spec(scene_seed(seed, index), categories, cfg.size)
    return render_scene(spec, scene_id=f"scene{index:05d}")


def generate_corpus(out_dir, cfg: CorpusConfig = CorpusConfig(), seed: int = 0, workers: int = 1) -> Path:
    """Render ``cfg.scenes`` scenes into ``out_dir`` and write ``index.jsonl``."""
    if cfg.scenes < 1:
        raise ValueError("scene count must be >= 1")
    if not cfg.categories:
        raise ValueError("category list is empty")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    plan = corpus_plan(cfg, seed)

    def one(i):
        scene = make_scene(cfg, seed, i, plan[i])
        img_rel = f"images/{scene.scene_id}.png"
        write_image(out / img_rel, scene.image)
        insts = []
        for rec in scene.instances:
            mask_rel = f"masks/{scene.scene_id}_{rec.index}.png"
            write_mask(out / mask_rel, rec.mask)
            insts.append({"mask_path": mask_rel, "category": rec.category,
                          "bbox": rec.bbox.as_list(), "area_frac": rec.area_frac})
        return {"scene_id": scene.scene_id, "image_path": img_rel, "cast": scene.cast.to_json(),
                "instances": insts, "seed": scene_seed(seed, i)}

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, range(cfg.scenes)))
    else:
        rows = [one(i) for i in range(cfg.scenes)]
    index = out / "index.jsonl"
    with open(index, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    meta = {"scenes": cfg.scenes, "categories": list(cfg.categories), "size": cfg.size,
            "min_objects": cfg.min_objects, "max_objects": cfg.max_objects, "seed": seed}
    (out / "corpus.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    log.info("wrote %d scenes to %s", cfg.scenes, out)
    return index


def read_index(corpus_dir) -> list[dict]:
    path = Path(corpus_dir) / "index.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"no corpus index at {path}")
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_corpus(corpus_dir) -> list[LabeledScene]:
    """Scenes as stored on disk (8-bit images, no base render)."""
    from .imgcore import read_image, read_mask

    corpus_dir = Path(corpus_dir)
    scenes = []
    for row in read_index(corpus_dir):
        insts = [ObjectRecord.from_mask(row["scene_id"], k, read_mask(corpus_dir / inst["mask_path"]), inst["category"])
                 for k, inst in enumerate(row["instances"])]
        scenes.append(LabeledScene(row["scene_id"], read_image(corpus_dir / row["image_path"]), insts,
                                   Cast.from_json(row["cast"])))
    return scenes


def rebuild_scene(corpus_dir, scene_id: str) -> LabeledScene:
    """Re-render a corpus scene (with its base) from its stored seed and categories."""
    for row in read_index(corpus_dir):
        if row["scene_id"] == scene_id:
            meta = json.loads((Path(corpus_dir) / "corpus.json").read_text(encoding="utf-8"))
            spec = sample_scene_spec(row["seed"], [i["category"] for i in row["instances"]], meta["size"])
            return render_scene(spec, scene_id=scene_id)
    raise KeyError(scene_id)


def cpu_workers() -> int:
    env = os.environ.get("RFORGE_THREADS")
    return max(1, int(env)) if env else 1
