import pytest

from rforge.coloropt import ColorAdjust, OptimizeOptions, energy
from rforge.objselect import (DEFAULT_POOL_SIZE, SelectionRequest, build_pool, candidate_problem,
                              select_best_object)
from rforge.composite import find_source_candidates
from rforge.realnet import init_params
from rforge.scenegen import load_corpus

SMALL = "in8x8x3|conv3-4|relu|pool2|fc6|relu|fc1"


@pytest.fixture(scope="module")
def scenes(small_corpus):
    return {s.scene_id: s for s in load_corpus(small_corpus)}


def request_for(scenes, mode, k=DEFAULT_POOL_SIZE, **kw):
    ids = sorted(scenes)
    bg = scenes[ids[0]]
    target = bg.instances[0]
    records = [r for sid in ids for r in scenes[sid].instances]
    pool = build_pool(target, records, {sid: s.image for sid, s in scenes.items()}, k)
    return SelectionRequest(bg.image, target, pool, mode, **kw)


def test_default_pool_size():
    assert DEFAULT_POOL_SIZE == 25


def test_empty_pool_rejected(scenes):
    with pytest.raises(ValueError):
        request_for(scenes, "Shape", k=0)


def test_unknown_mode_rejected(scenes):
    with pytest.raises(ValueError):
        request_for(scenes, "Magic")


@pytest.mark.parametrize("mode", ["RealismCNN", "Shape", "Random"])
def test_single_candidate(scenes, mode):
    req = request_for(scenes, mode, k=1)
    chosen, ranking = select_best_object(init_params(SMALL, seed=0), req)
    assert chosen is req.pool[0] and len(ranking) == 1


def test_realism_choice_is_brute_force_argmin(scenes):
    params = init_params(SMALL, seed=1)
    req = request_for(scenes, "RealismCNN", k=6)
    chosen, ranking = select_best_object(params, req)
    energies = [energy(params, ColorAdjust.identity(), candidate_problem(req, c)) for c in req.pool]
    best = min(range(len(energies)), key=lambda i: (energies[i], i))
    assert chosen is req.pool[best]
    vals = [r.value for r in ranking]
    assert vals == sorted(vals)
    assert [r.rank for r in ranking] == list(range(1, len(vals) + 1))


def test_realism_with_adjustment_not_worse(scenes):
    params = init_params(SMALL, seed=2)
    base = request_for(scenes, "RealismCNN", k=3)
    adj = request_for(scenes, "RealismCNN", k=3, adjust=True, optimize=OptimizeOptions(starts=2, max_iterations=10))
    _, r0 = select_best_object(params, base)
    _, r1 = select_best_object(params, adj)
    assert r1[0].value <= r0[0].value + 1e-12


def test_shape_top1_matches_candidate_search(scenes):
    req = request_for(scenes, "Shape", k=5)
    chosen, ranking = select_best_object(None, req)
    records = [r for sid in sorted(scenes) for r in scenes[sid].instances]
    assert chosen.record is find_source_candidates(req.target, records, 1)[0]
    assert [r.value for r in ranking] == sorted(r.value for r in ranking)


def test_random_is_seeded(scenes):
    a = select_best_object(None, request_for(scenes, "Random", k=5, seed=3))[1]
    b = select_best_object(None, request_for(scenes, "Random", k=5, seed=3))[1]
    assert [r.candidate.candidate_id for r in a] == [r.candidate.candidate_id for r in b]
    assert sorted(r.candidate.candidate_id for r in a) == sorted(c.candidate_id for c in request_for(scenes, "Random", k=5).pool)


def test_report_rows(scenes):
    _, ranking = select_best_object(None, request_for(scenes, "Shape", k=3))
    row = ranking[0].row()
    assert set(row) == {"candidate_id", "energy_or_ssd", "rank"} and row["rank"] == 1
