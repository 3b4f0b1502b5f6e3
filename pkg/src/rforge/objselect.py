"""Best-fitting object selection: pick the source object whose composite has
the lowest energy at a given background location."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coloropt import (DEFAULT_WEIGHT, ColorAdjust, CompositeProblem, OptimizeOptions, energy,
                       optimize_color)
from .composite import composite_layers, descriptor_of, find_source_candidates, shape_ssd
from .imgcore import DEFAULT_FEATHER_BAND
from .realnet import NetworkParams
from .scenegen import ObjectRecord

MODES = ("RealismCNN", "Shape", "Random")
DEFAULT_POOL_SIZE = 25


@dataclass(frozen=True)
class Candidate:
    """A source object together with the image it is cut from."""

    image: np.ndarray
    record: ObjectRecord

    @property
    def candidate_id(self) -> str:
        return f"{self.record.image_id}:{self.record.index}"


@dataclass
class SelectionRequest:
    background: np.ndarray
    target: ObjectRecord
    pool: list[Candidate]
    mode: str = "RealismCNN"
    adjust: bool = False
    seed: int = 0
    w: float = DEFAULT_WEIGHT
    feather_band: float = DEFAULT_FEATHER_BAND
    optimize: OptimizeOptions = field(default_factory=OptimizeOptions)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown selection mode {self.mode!r}; expected one of {MODES}")
        if not self.pool:
            raise ValueError("candidate pool is empty")


@dataclass(frozen=True)
class Ranked:
    candidate: Candidate
    value: float | None  # energy (RealismCNN), SSD (Shape) or None (Random)
    rank: int
    adjust: ColorAdjust | None = None

    def row(self) -> dict:
        return {"candidate_id": self.candidate.candidate_id, "energy_or_ssd": self.value, "rank": self.rank}


def build_pool(target: ObjectRecord, records: list[ObjectRecord], images: dict[str, np.ndarray],
               k: int = DEFAULT_POOL_SIZE) -> list[Candidate]:
    """The ``k`` shape-nearest candidates, in shape order."""
    return [Candidate(images[r.image_id], r) for r in find_source_candidates(target, records, k)]


def candidate_problem(request: SelectionRequest, cand: Candidate) -> CompositeProblem:
    fg, alpha = composite_layers(request.background, request.target, cand.image, cand.record,
                                 request.feather_band)
    return CompositeProblem(fg, request.background, alpha, request.w)


def candidate_energy(params: NetworkParams, request: SelectionRequest, cand: Candidate):
    """``(energy, adjustment)`` of one candidate under the request's settings."""
    problem = candidate_problem(request, cand)
    if request.adjust:
        res = optimize_color(params, problem, request.optimize)
        return res.energy, res.adjust
    g = ColorAdjust.identity()
    return energy(params, g, problem), g


def select_best_object(params: NetworkParams | None, request: SelectionRequest) -> tuple[Candidate, list[Ranked]]:
    """Chosen candidate and the full ranking, best first."""
    pool = request.pool
    if request.mode == "Random":
        order = np.random.default_rng(request.seed).permutation(len(pool))
        ranking = [Ranked(pool[i], None, r + 1) for r, i in enumerate(order)]
        return ranking[0].candidate, ranking

    if request.mode == "Shape":
        tdesc = descriptor_of(request.target)
        values = [shape_ssd(tdesc, descriptor_of(c.record)) for c in pool]
        order = sorted(range(len(pool)),
                       key=lambda i: (values[i], pool[i].record.image_id, pool[i].record.index))
        ranking = [Ranked(pool[i], values[i], r + 1) for r, i in enumerate(order)]
        return ranking[0].candidate, ranking

    if params is None:
        raise ValueError("RealismCNN selection needs network parameters")
    scored = [candidate_energy(params, request, c) for c in pool]
    order = sorted(range(len(pool)), key=lambda i: (scored[i][0], i))
    ranking = [Ranked(pool[i], float(scored[i][0]), r + 1, scored[i][1]) for r, i in enumerate(order)]
    return ranking[0].candidate, ranking
