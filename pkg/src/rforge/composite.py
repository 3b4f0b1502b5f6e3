"""Composite generation by shape-matched object replacement.

Regimes:

* ``FullySupervised``: annotated masks for target and source.
* ``PartiallySupervised``: annotated targets, proposal sources.
* ``Unsupervised``: proposals for both roles.
* ``RandomPaste``: a random annotated object pasted at a random spot, no
  shape matching.
"""

from __future__ import annotations

import heapq
import json
import logging
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgcore import (DEFAULT_FEATHER_BAND, BBox, alpha_composite, feather_mask, read_image,
                      read_mask, resize_bilinear, warp_to_bbox, write_image)
from .scenegen import LabeledScene, ObjectRecord, read_index

log = logging.getLogger(__name__)

REGIMES = ("FullySupervised", "PartiallySupervised", "Unsupervised", "RandomPaste")
DESCRIPTOR_SIZE = 64
DESCRIPTOR_SIGMA = 2.0
NATURAL, COMPOSITE = "natural", "composite"


# ---------------------------------------------------------------- shape matching

def mask_descriptor(mask: np.ndarray) -> np.ndarray:
    """Blurred tight crop of a mask, resampled to 64x64."""
    m = np.asarray(mask, dtype=np.float64)
    ys, xs = np.nonzero(m)
    if ys.size == 0:
        raise ValueError("cannot describe an empty mask")
    crop = m[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    blurred = ndimage.gaussian_filter(crop, DESCRIPTOR_SIGMA, mode="constant", cval=0.0)
    return np.clip(resize_bilinear(blurred, DESCRIPTOR_SIZE, DESCRIPTOR_SIZE), 0.0, 1.0)


def descriptor_of(rec: ObjectRecord) -> np.ndarray:
    if rec._descriptor is None:
        rec._descriptor = mask_descriptor(rec.mask)
    return rec._descriptor


def shape_ssd(a: np.ndarray, b: np.ndarray) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sum(d * d))


class CandidateIndex:
    """A pool with its descriptors stacked once, for repeated queries."""

    def __init__(self, pool: list[ObjectRecord]):
        self.pool = list(pool)
        self.desc = (np.stack([descriptor_of(r) for r in self.pool]) if self.pool
                     else np.zeros((0, DESCRIPTOR_SIZE, DESCRIPTOR_SIZE)))
        self.image_ids = np.array([r.image_id for r in self.pool], dtype=object)
        self.categories = np.array([r.category for r in self.pool], dtype=object)

    def query(self, target: ObjectRecord, k: int) -> list[ObjectRecord]:
        if k < 1 or not self.pool:
            return []
        ok = self.image_ids != target.image_id
        if target.category is not None:
            ok &= self.categories == target.category
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            return []
        ssd = np.sum((self.desc[idx] - descriptor_of(target)) ** 2, axis=(1, 2))
        order = sorted(range(len(idx)), key=lambda i: (ssd[i], self.pool[idx[i]].image_id, self.pool[idx[i]].index))
        return [self.pool[idx[i]] for i in order[:k]]


def find_source_candidates(target: ObjectRecord, pool, k: int) -> list[ObjectRecord]:
    """Up to ``k`` shape-nearest records from other images.

    Same category only when the target has one. Ties break on
    ``(image_id, index)``. ``pool`` may be a list or a :class:`CandidateIndex`.
    """
    index = pool if isinstance(pool, CandidateIndex) else CandidateIndex(
        [r for r in pool if r.image_id != target.image_id
         and (target.category is None or r.category == target.category)])
    return index.query(target, k)


# ---------------------------------------------------------------- composites

def composite_layers(bg_image: np.ndarray, target: ObjectRecord, source_image: np.ndarray,
                     source: ObjectRecord, feather_band: float = DEFAULT_FEATHER_BAND):
    """Warped source pixels and feathered alpha, aligned to the target bbox."""
    h, w = bg_image.shape[:2]
    fg, mask = warp_to_bbox(source_image, source.mask, source.bbox, target.bbox, (h, w))
    return fg, feather_mask(mask, feather_band)


def make_composite(bg_scene: LabeledScene, target: ObjectRecord, source_scene: LabeledScene,
                   source: ObjectRecord, feather_band: float = DEFAULT_FEATHER_BAND) -> np.ndarray:
    """Replace ``target`` in the background scene by the warped ``source`` object."""
    fg, alpha = composite_layers(bg_scene.image, target, source_scene.image, source, feather_band)
    return np.clip(alpha_composite(fg, bg_scene.image, alpha), 0.0, 1.0)


def paste_at(bg_image: np.ndarray, source_image: np.ndarray, source: ObjectRecord, x0: int, y0: int,
             feather_band: float = DEFAULT_FEATHER_BAND) -> np.ndarray:
    """Paste a source object unscaled with its bbox corner at ``(x0, y0)``."""
    h, w = bg_image.shape[:2]
    dst = BBox(x0, y0, x0 + source.bbox.width, y0 + source.bbox.height)
    fg, mask = warp_to_bbox(source_image, source.mask, source.bbox, dst, (h, w))
    return np.clip(alpha_composite(fg, bg_image, feather_mask(mask, feather_band)), 0.0, 1.0)


# ---------------------------------------------------------------- proposals

def propose_regions(image: np.ndarray, seed: int = 0, levels: int = 8,
                    min_merge: float = 0.01, area_range=(0.05, 0.50)) -> list[np.ndarray]:
    """Colour-quantization region proposals.

    Quantize each channel to ``levels`` bins (bin edges shifted by a
    seed-dependent offset), take 4-connected components, merge components
    under ``min_merge`` of the pixels into their largest neighbour, and keep
    the regions passing the area filter.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    total = h * w
    offset = np.random.default_rng(seed).uniform(0.0, 1.0)
    q = np.clip(np.floor(img * levels + offset), 0, levels).astype(np.int64)
    code = (q[..., 0] * (levels + 1) + q[..., 1]) * (levels + 1) + q[..., 2]

    labels = np.zeros((h, w), dtype=np.int64)
    n = 0
    for c in np.unique(code):
        lab, k = ndimage.label(code == c)
        sel = lab > 0
        labels[sel] = lab[sel] + n
        n += k
    labels -= 1  # 0-based component ids

    labels = _merge_small(labels, n, int(np.ceil(min_merge * total)))
    out = []
    seen = set()
    for comp in np.unique(labels):
        m = labels == comp
        frac = m.sum() / total
        if not area_range[0] <= frac <= area_range[1]:
            continue
        key = m.tobytes()
        if key in seen:
            continue
        seen.add(key)
        out.append(m.astype(np.float64))
    return out


def _merge_small(labels: np.ndarray, n: int, min_size: int) -> np.ndarray:
    """Merge under-size components, smallest first, into their largest 4-neighbour."""
    sizes = np.bincount(labels.ravel(), minlength=n).astype(np.int64)
    adj: list[set[int]] = [set() for _ in range(n)]
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        diff = a != b
        pairs = np.unique(np.stack([a[diff], b[diff]], axis=1), axis=0)
        for u, v in pairs.tolist():
            adj[u].add(v)
            adj[v].add(u)
    parent = np.arange(n)
    heap = [(int(sizes[c]), c) for c in range(n) if sizes[c] < min_size]
    heapq.heapify(heap)
    alive = n
    while heap and alive > 1:
        size, c = heapq.heappop(heap)
        if parent[c] != c or size != sizes[c] or size >= min_size or not adj[c]:
            continue
        t = max(adj[c], key=lambda a: (sizes[a], -a))
        parent[c] = t
        sizes[t] += sizes[c]
        for nb in adj[c]:
            adj[nb].discard(c)
            if nb != t:
                adj[nb].add(t)
                adj[t].add(nb)
        adj[c] = set()
        alive -= 1
        if sizes[t] < min_size:
            heapq.heappush(heap, (int(sizes[t]), t))
    # resolve merge chains
    root = parent.copy()
    for c in range(n):
        r = c
        while root[r] != r:
            r = root[r]
        root[c] = r
    return root[labels]


def proposal_records(image_id: str, image: np.ndarray, seed: int) -> list[ObjectRecord]:
    return [ObjectRecord.from_mask(image_id, k, m, None) for k, m in enumerate(propose_regions(image, seed))]


# ---------------------------------------------------------------- datasets

@dataclass
class DatasetManifest:
    """Ordered natural/composite records; paths are relative to ``base_dir``."""

    records: list[dict]
    base_dir: Path = field(default_factory=lambda: Path("."))
    meta: dict = field(default_factory=dict)

    def write(self, path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        meta_path = path.with_name(path.stem + ".meta.json")
        meta_path.write_text(json.dumps(self.meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        meta_path = path.with_name(path.stem + ".meta.json")
        meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
        return cls(records, path.parent, meta)

    def counts(self) -> dict[str, int]:
        out = {NATURAL: 0, COMPOSITE: 0}
        for rec in self.records:
            out[rec["label"]] += 1
        return out

    def split_by_scene(self, holdout: float, seed: int) -> tuple["DatasetManifest", "DatasetManifest"]:
        """Split by the scene that supplies the background (target) image."""
        scenes = sorted({r["target"]["scene"] for r in self.records})
        rng = np.random.default_rng(seed)
        held = set(rng.permutation(scenes)[: int(round(holdout * len(scenes)))].tolist())
        a = [r for r in self.records if r["target"]["scene"] not in held]
        b = [r for r in self.records if r["target"]["scene"] in held]
        return (DatasetManifest(a, self.base_dir, self.meta), DatasetManifest(b, self.base_dir, self.meta))


def _sub_seed(seed: int, *parts) -> int:
    return (int(seed) ^ zlib.crc32("/".join(str(p) for p in parts).encode())) & 0x7FFFFFFF


@dataclass(frozen=True)
class DatasetOptions:
    per_target: int = 1
    feather_band: float = DEFAULT_FEATHER_BAND
    proposal_targets: int = 2  # Unsupervised: proposals sampled per image


def generate_dataset(corpus_dir, regime: str, seed: int, out_dir, opts: DatasetOptions = DatasetOptions()) -> DatasetManifest:
    """Build a natural-vs-composite manifest from a corpus directory."""
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    corpus_dir = Path(corpus_dir)
    out_dir = Path(out_dir)
    rows = read_index(corpus_dir)
    (out_dir / "composites").mkdir(parents=True, exist_ok=True)

    images = {r["scene_id"]: read_image(corpus_dir / r["image_path"]) for r in rows}
    annotated = {
        r["scene_id"]: [ObjectRecord.from_mask(r["scene_id"], k, read_mask(corpus_dir / inst["mask_path"]), inst["category"])
                        for k, inst in enumerate(r["instances"])]
        for r in rows
    }
    proposals: dict[str, list[ObjectRecord]] = {}
    if regime in ("PartiallySupervised", "Unsupervised"):
        proposals = {sid: proposal_records(sid, img, _sub_seed(seed, "proposals", sid)) for sid, img in images.items()}

    all_annotated = [rec for sid in sorted(annotated) for rec in annotated[sid]]
    all_proposals = [rec for sid in sorted(proposals) for rec in proposals[sid]]
    annotated_index = CandidateIndex(all_annotated)
    proposal_index = CandidateIndex(all_proposals)

    records: list[dict] = []
    rel = os.path.relpath(corpus_dir, out_dir)
    for row in rows:
        sid = row["scene_id"]
        records.append({"path": f"{rel}/{row['image_path']}", "label": NATURAL, "regime": regime,
                        "target": {"scene": sid}, "source": None, "seed": int(seed)})
        bg = images[sid]
        jobs = []  # (target record, target kind, [(source, source kind)], rec seed)
        if regime == "FullySupervised":
            for t in annotated[sid]:
                jobs.append((t, "instance", [(s, "instance") for s in find_source_candidates(t, annotated_index, opts.per_target)]))
        elif regime == "PartiallySupervised":
            for t in annotated[sid]:
                jobs.append((t, "instance", [(s, "proposal") for s in find_source_candidates(t, proposal_index, opts.per_target)]))
        elif regime == "Unsupervised":
            own = proposals[sid]
            if own:
                rng = np.random.default_rng(_sub_seed(seed, "targets", sid))
                picks = sorted(rng.choice(len(own), size=min(opts.proposal_targets, len(own)), replace=False).tolist())
                for i in picks:
                    t = own[i]
                    jobs.append((t, "proposal", [(s, "proposal") for s in find_source_candidates(t, proposal_index, opts.per_target)]))
        else:
            others = [r for r in all_annotated if r.image_id != sid]
            for t in annotated[sid]:
                rng = np.random.default_rng(_sub_seed(seed, "paste", sid, t.index))
                if others:
                    jobs.append((t, "instance", [(others[int(rng.integers(len(others)))], "instance")]))

        for t, tkind, sources in jobs:
            for rank, (s, skind) in enumerate(sources):
                rseed = _sub_seed(seed, sid, tkind, t.index, rank)
                if regime == "RandomPaste":
                    rng = np.random.default_rng(rseed)
                    h, w = bg.shape[:2]
                    x0 = int(rng.integers(0, w - s.bbox.width + 1))
                    y0 = int(rng.integers(0, h - s.bbox.height + 1))
                    img = paste_at(bg, images[s.image_id], s, x0, y0, opts.feather_band)
                else:
                    fg, alpha = composite_layers(bg, t, images[s.image_id], s, opts.feather_band)
                    img = np.clip(alpha_composite(fg, bg, alpha), 0.0, 1.0)
                name = f"composites/{sid}_{tkind[0]}{t.index}_{rank}.png"
                write_image(out_dir / name, img)
                records.append({"path": name, "label": COMPOSITE, "regime": regime,
                                "target": {"scene": sid, tkind: t.index},
                                "source": {"scene": s.image_id, skind: s.index}, "seed": rseed})

    meta = {"corpus": os.path.relpath(corpus_dir, out_dir), "regime": regime, "seed": int(seed),
            "per_target": opts.per_target, "feather_band": opts.feather_band,
            "proposal_targets": opts.proposal_targets}
    manifest = DatasetManifest(records, out_dir, meta)
    manifest.write(out_dir / "manifest.jsonl")
    log.info("%s: %d natural, %d composite", regime, *manifest.counts().values())
    return manifest


class CorpusLayers:
    """Rebuilds the (fg, bg, alpha) layers behind shape-matched composite
    records, reading each corpus image and mask once."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self.corpus_dir = Path(manifest.base_dir) / manifest.meta["corpus"]
        self.seed = int(manifest.meta.get("seed", 0))
        self.band = float(manifest.meta.get("feather_band", DEFAULT_FEATHER_BAND))
        self.rows = {r["scene_id"]: r for r in read_index(self.corpus_dir)}
        self._images: dict[str, np.ndarray] = {}
        self._objects: dict[tuple, list[ObjectRecord]] = {}

    def image(self, sid: str) -> np.ndarray:
        if sid not in self._images:
            self._images[sid] = read_image(self.corpus_dir / self.rows[sid]["image_path"])
        return self._images[sid]

    def objects(self, sid: str, kind: str) -> list[ObjectRecord]:
        key = (sid, kind)
        if key not in self._objects:
            if kind == "instance":
                self._objects[key] = [
                    ObjectRecord.from_mask(sid, k, read_mask(self.corpus_dir / inst["mask_path"]), inst["category"])
                    for k, inst in enumerate(self.rows[sid]["instances"])]
            else:
                self._objects[key] = proposal_records(sid, self.image(sid), _sub_seed(self.seed, "proposals", sid))
        return self._objects[key]

    @staticmethod
    def _pick(ref: dict):
        kind = "instance" if "instance" in ref else "proposal"
        return ref["scene"], kind, ref[kind]

    def layers(self, rec: dict):
        if rec["label"] != COMPOSITE or rec["regime"] == "RandomPaste":
            raise ValueError("only shape-matched composite records have layers")
        tsid, tkind, ti = self._pick(rec["target"])
        ssid, skind, si = self._pick(rec["source"])
        bg = self.image(tsid)
        fg, alpha = composite_layers(bg, self.objects(tsid, tkind)[ti], self.image(ssid),
                                     self.objects(ssid, skind)[si], self.band)
        return fg, bg, alpha
