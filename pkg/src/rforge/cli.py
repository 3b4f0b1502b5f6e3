"""Command-line entry point: one ``rforge`` binary with verb-style subcommands,
key=value configuration handling and the end-to-end pipeline."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger("rforge")

ENV_KEYS = {"RFORGE_SEED": "seed", "RFORGE_THREADS": "workers"}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def stage_seed(seed: int, stage: str) -> int:
    """Named sub-seed: hash of the stage name xor the global seed."""
    return (zlib.crc32(stage.encode()) ^ int(seed)) & 0x7FFFFFFF


# ---------------------------------------------------------------- configuration

@dataclass
class RunConfig:
    values: dict
    sources: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def __getitem__(self, key):
        return self.values[key]

    def dump(self) -> str:
        return json.dumps({"values": self.values, "sources": self.sources}, sort_keys=True, indent=1) + "\n"


def parse_kv_lines(text: str, origin: str = "<config>") -> dict[str, tuple[str, int]]:
    """``key=value`` lines with ``#`` comments -> ``{key: (value, line number)}``."""
    out = {}
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{origin}:{num}: malformed line {raw.strip()!r} (expected key=value)")
        out[key] = (value.strip(), num)
    return out


def _coerce(key: str, value, default, where: str):
    if value is None or not isinstance(value, str) or isinstance(default, str) or default is None:
        return value
    try:
        if isinstance(default, bool):
            low = value.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(value)
            return low in ("1", "true", "yes")
        return type(default)(value)
    except ValueError:
        raise ConfigError(f"{where}: bad value {value!r} for key {key!r}") from None


def resolve_config(defaults: dict, file=None, flags: dict | None = None, env: dict | None = None) -> RunConfig:
    """Merge defaults < config file < environment < flags.

    ``file`` is a path or ``None``; ``flags`` entries that are ``None`` count
    as not given. Only ``RFORGE_*`` variables listed in ``ENV_KEYS`` are read
    from ``env``. Values are coerced to the default's type.
    """
    values = dict(defaults)
    values.setdefault("seed", 0)
    sources = {k: "default" for k in values}

    if file is not None:
        path = Path(file)
        for key, (value, num) in parse_kv_lines(path.read_text(encoding="utf-8"), str(path)).items():
            where = f"{path}:{num}"
            if key not in values:
                raise ConfigError(f"{where}: unknown key {key!r}")
            values[key] = _coerce(key, value, defaults.get(key, 0), where)
            sources[key] = f"file:{num}"

    for var, key in ENV_KEYS.items():
        if env and env.get(var, "") != "" and key in values:
            values[key] = _coerce(key, env[var], defaults.get(key, 0), f"env {var}")
            sources[key] = f"env:{var}"

    for key, value in (flags or {}).items():
        if value is None:
            continue
        if key not in values:
            raise ConfigError(f"flag: unknown key {key!r}")
        values[key] = _coerce(key, value, defaults.get(key, 0), "flag")
        sources[key] = "flag"

    cfg = RunConfig(values, sources)
    log.info("resolved config: %s", json.dumps(values, sort_keys=True))
    return cfg


# ---------------------------------------------------------------- pipeline

PIPELINE_DEFAULTS = {
    "seed": 0,
    "profile": "desk",
    "scenes": 600,
    "size": 128,
    "regime": "FullySupervised",
    "per_target": 1,
    "preset": "desk",
    "holdout": 0.2,
    "workers": 1,
    "corpus": "",
    "out": "run",
}

PROFILES = {
    "desk": {},
    "smoke": {"scenes": 60, "preset": "smoke"},
}


def pipeline_defaults(profile: str) -> dict:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    return {**PIPELINE_DEFAULTS, "profile": profile, **PROFILES[profile]}


@dataclass
class PipelineResult:
    status: int
    run_dir: Path
    artifacts: dict
    error: str | None = None


def _check_paths(cfg: RunConfig) -> None:
    from .composite import REGIMES
    from .realnet import PRESETS

    if cfg["corpus"]:
        index = Path(cfg["corpus"]) / "index.jsonl"
        if not index.exists():
            raise FileNotFoundError(f"corpus path {cfg['corpus']!r} has no index.jsonl")
    if cfg["preset"] not in PRESETS and not Path(cfg["preset"]).exists():
        raise FileNotFoundError(f"training preset {cfg['preset']!r} is neither a preset name nor a file")
    if cfg["regime"] not in REGIMES:
        raise ConfigError(f"unknown regime {cfg['regime']!r}")
    if not 0 < cfg["holdout"] < 1:
        raise ConfigError("holdout must lie in (0, 1)")


def run_pipeline(cfg: RunConfig) -> PipelineResult:
    """gen-corpus -> gen-dataset -> train -> evaluate into ``cfg['out']``.

    Paths are validated before the run directory is created. A failing stage
    leaves its partial outputs plus a ``FAILED`` marker naming the stage.
    """
    from . import composite, evalkit, realnet, scenegen

    _check_paths(cfg)
    run = Path(cfg["out"])
    run.mkdir(parents=True, exist_ok=True)
    marker = run / "FAILED"
    if marker.exists():
        marker.unlink()
    (run / "config.json").write_text(cfg.dump(), encoding="utf-8")
    seed = cfg.seed
    art: dict[str, str] = {}
    state: dict = {}

    def gen_corpus():
        if cfg["corpus"]:
            state["corpus"] = Path(cfg["corpus"])
            return
        ccfg = scenegen.CorpusConfig(scenes=cfg["scenes"], size=cfg["size"])
        index = scenegen.generate_corpus(run / "corpus", ccfg, stage_seed(seed, "corpus"), cfg["workers"])
        state["corpus"] = index.parent
        art["corpus_index"] = str(index)

    def gen_dataset():
        opts = composite.DatasetOptions(per_target=cfg["per_target"])
        man = composite.generate_dataset(state["corpus"], cfg["regime"], stage_seed(seed, "dataset"),
                                         run / "dataset", opts)
        train_m, test_m = man.split_by_scene(cfg["holdout"], stage_seed(seed, "split"))
        train_m.write(run / "dataset" / "train.jsonl")
        test_m.write(run / "dataset" / "test.jsonl")
        state["train"], state["test"] = train_m, test_m
        art["manifest"] = str(run / "dataset" / "manifest.jsonl")
        art["train_manifest"] = str(run / "dataset" / "train.jsonl")
        art["test_manifest"] = str(run / "dataset" / "test.jsonl")

    def train():
        tseed = stage_seed(seed, "train")
        tcfg = realnet.load_preset(cfg["preset"], seed=tseed)
        params0 = realnet.init_params(realnet.DEFAULT_ARCH, seed=tseed)
        res = realnet.train(params0, state["train"], tcfg)
        realnet.save_params(res.params, run / "model.rlnw")
        state["params"] = res.params
        art["model"] = str(run / "model.rlnw")

    def evaluate():
        test = state["test"]
        images, labels = realnet.load_manifest_images(test.records, test.base_dir, state["params"])
        scores = realnet.forward_scores(state["params"], images)
        auc = evalkit.roc_auc(scores, labels)
        (run / "reports").mkdir(exist_ok=True)
        summary = {"auc": auc, "n_test": len(labels), "n_natural": int(labels.sum())}
        (run / "reports" / "auc.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n",
                                                  encoding="utf-8")
        meta = [{"path": r["path"], "label": r["label"]} for r in test.records]
        evalkit.write_jsonl(run / "reports" / "ranking.jsonl", evalkit.rank_report(scores, meta))
        art["auc"] = str(run / "reports" / "auc.json")
        art["ranking"] = str(run / "reports" / "ranking.jsonl")
        state["auc"] = auc

    for name, stage in (("gen-corpus", gen_corpus), ("gen-dataset", gen_dataset),
                        ("train", train), ("evaluate", evaluate)):
        t0 = time.perf_counter()
        try:
            stage()
        except Exception as exc:  # noqa: BLE001 - every stage failure is reported the same way
            err = StageError(name, exc)
            marker.write_text(f"{name}: {type(exc).__name__}: {exc}\n", encoding="utf-8")
            log.error("%s", err)
            return PipelineResult(1, run, art, str(err))
        log.info("stage %s done in %.1fs", name, time.perf_counter() - t0)
    art["auc_value"] = state["auc"]
    return PipelineResult(0, run, art)


# ---------------------------------------------------------------- subcommands

def _emit(args, payload: dict, human: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(human)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("RFORGE_SEED", "")
    return int(env) if env else 0


def _workers(args) -> int:
    from .scenegen import cpu_workers

    return args.workers if getattr(args, "workers", None) else cpu_workers()


def cmd_gen_corpus(args) -> int:
    from .scenegen import CATEGORIES, CorpusConfig, generate_corpus

    cats = tuple(args.categories.split(",")) if args.categories else CATEGORIES
    cfg = CorpusConfig(scenes=args.scenes, categories=cats, size=args.size,
                       min_objects=args.min_objects, max_objects=args.max_objects)
    index = generate_corpus(args.out, cfg, _seed(args), _workers(args))
    _emit(args, {"index": str(index), "scenes": args.scenes}, f"wrote {args.scenes} scenes: {index}")
    return 0


def cmd_gen_dataset(args) -> int:
    from .composite import DatasetOptions, generate_dataset

    if not (Path(args.corpus) / "index.jsonl").exists():
        raise FileNotFoundError(f"no corpus index under {args.corpus}")
    man = generate_dataset(args.corpus, args.regime, _seed(args), args.out,
                           DatasetOptions(per_target=args.per_target))
    counts = man.counts()
    path = Path(args.out) / "manifest.jsonl"
    _emit(args, {"manifest": str(path), **counts},
          f"{path}: {counts['natural']} natural, {counts['composite']} composite")
    return 0


def cmd_train(args) -> int:
    from .composite import DatasetManifest
    from .realnet import DEFAULT_ARCH, init_params, load_preset, save_params, train

    seed = _seed(args)
    overrides = {"seed": seed}
    if args.iterations is not None:
        overrides["max_iterations"] = args.iterations
    cfg = load_preset(args.preset, **overrides)
    man = DatasetManifest.read(args.manifest)
    res = train(init_params(args.arch or DEFAULT_ARCH, seed=seed), man, cfg)
    save_params(res.params, args.out)
    tail = float(np.mean(res.losses[-100:])) if res.losses else float("nan")
    _emit(args, {"model": args.out, "iterations": len(res.losses), "final_loss": tail},
          f"saved {args.out} after {len(res.losses)} iterations (loss {tail:.4f})")
    return 0


def cmd_score(args) -> int:
    from .imgcore import read_image
    from .realnet import forward_score, load_params

    s = forward_score(load_params(args.model), read_image(args.image))
    _emit(args, {"image": args.image, "score": s}, repr(s))
    return 0


def cmd_features(args) -> int:
    from .composite import DatasetManifest
    from .evalkit import write_jsonl
    from .realnet import extract_features_batch, load_manifest_images, load_params

    params = load_params(args.model)
    man = DatasetManifest.read(args.manifest)
    images, _ = load_manifest_images(man.records, man.base_dir, params)
    feats = extract_features_batch(params, images)
    write_jsonl(args.out, [{"path": r["path"], "label": r["label"], "features": f.tolist()}
                           for r, f in zip(man.records, feats)])
    _emit(args, {"features": args.out, "rows": len(feats), "dim": int(feats.shape[1])},
          f"wrote {len(feats)} feature rows to {args.out}")
    return 0


def cmd_adjust(args) -> int:
    from .coloropt import CompositeProblem, OptimizeOptions, apply_adjust, optimize_color, reinhard_match
    from .coloropt import ColorAdjust, energy
    from .imgcore import read_alpha, read_image, write_image

    fg, bg, alpha = read_image(args.fg), read_image(args.bg), read_alpha(args.alpha)
    problem = CompositeProblem(fg, bg, alpha, args.w)
    params = None
    if args.model:
        from .realnet import load_params
        params = load_params(args.model)
    if args.baseline == "cnn":
        res = optimize_color(params, problem, OptimizeOptions(starts=args.starts, seed=_seed(args)))
        g, report = res.adjust, res.report()
    else:
        g = ColorAdjust.identity() if args.baseline == "cutpaste" else reinhard_match(problem)
        report = {"g": g.to_json(), "starts": 0, "iterations": 0}
        if params is not None:
            report["E_identity"] = energy(params, ColorAdjust.identity(), problem)
            report["E_star"] = energy(params, g, problem)
    write_image(args.out, apply_adjust(g, problem, clamp=True))
    if args.report:
        Path(args.report).write_text(json.dumps(report, sort_keys=True) + "\n", encoding="utf-8")
    _emit(args, {"out": args.out, **report}, f"wrote {args.out}: {json.dumps(report['g'])}")
    return 0


def cmd_mine(args) -> int:
    from .coloropt import CompositeProblem, MiningConfig, mine_hard_negatives
    from .composite import COMPOSITE, CorpusLayers, DatasetManifest
    from .imgcore import write_image
    from .realnet import forward_scores, load_manifest_images, load_params, load_preset, preprocess, save_params

    params = load_params(args.model)
    man = DatasetManifest.read(args.manifest)
    layers = CorpusLayers(man)
    problems = [CompositeProblem(*layers.layers(r), w=args.w) for r in man.records
                if r["label"] == COMPOSITE and r["regime"] != "RandomPaste"]
    images, labels = load_manifest_images(man.records, man.base_dir, params)
    seed = _seed(args)
    mcfg = MiningConfig(samples=args.samples, w=args.w, retrain_iterations=args.retrain_iterations,
                        seed=stage_seed(seed, "mine"))
    rounds = mine_hard_negatives(params, problems, images, labels, args.rounds, mcfg, load_preset(args.preset))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for k in range(1, len(rounds)):
        save_params(rounds[k].params, out / f"iter{k}.rlnw")
        (out / f"round{k}").mkdir(exist_ok=True)
        for j, img in enumerate(rounds[k].mined):
            write_image(out / f"round{k}" / f"neg{j:03d}.png", img)
        small = np.stack([preprocess(m, params) for m in rounds[k].mined])
        before = float(forward_scores(rounds[k - 1].params, small).mean())
        after = float(forward_scores(rounds[k].params, small).mean())
        summary.append({"round": k, "mined": len(small), "score_before": before, "score_after": after})
    (out / "mining.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    _emit(args, {"rounds": summary},
          "\n".join(f"round {s['round']}: {s['score_before']:+.3f} -> {s['score_after']:+.3f}" for s in summary))
    return 0


def cmd_select(args) -> int:
    from .coloropt import OptimizeOptions
    from .evalkit import write_jsonl
    from .objselect import SelectionRequest, build_pool, select_best_object
    from .scenegen import load_corpus

    corpus = Path(args.pool)
    corpus = corpus.parent if corpus.name == "index.jsonl" else corpus
    scenes = {s.scene_id: s for s in load_corpus(corpus)}
    if args.scene not in scenes:
        raise KeyError(f"scene {args.scene!r} not in the pool corpus")
    bg = scenes[args.scene]
    target = bg.instances[args.instance]
    records = [r for sid in sorted(scenes) for r in scenes[sid].instances]
    pool = build_pool(target, records, {sid: s.image for sid, s in scenes.items()}, args.k)
    mode = {"realism": "RealismCNN", "shape": "Shape", "random": "Random"}[args.mode]
    params = None
    if mode == "RealismCNN":
        from .realnet import load_params
        params = load_params(args.model)
    req = SelectionRequest(bg.image, target, pool, mode, args.adjust, _seed(args),
                           optimize=OptimizeOptions(seed=_seed(args)))
    chosen, ranking = select_best_object(params, req)
    rows = [r.row() for r in ranking]
    if args.out_report:
        write_jsonl(args.out_report, rows)
    _emit(args, {"chosen": chosen.candidate_id, "ranking": rows}, f"chosen: {chosen.candidate_id}")
    return 0


def _scores_for(model, manifest_path):
    from .composite import DatasetManifest
    from .realnet import forward_scores, load_manifest_images, load_params

    params = load_params(model)
    man = DatasetManifest.read(manifest_path)
    images, labels = load_manifest_images(man.records, man.base_dir, params)
    return man, params, images, forward_scores(params, images), labels


def cmd_evaluate(args) -> int:
    from . import evalkit

    if args.what == "auc":
        _, _, _, scores, labels = _scores_for(args.model, args.manifest)
        auc = evalkit.roc_auc(scores, labels)
        _emit(args, {"auc": auc, "n": len(labels)}, f"AUC {auc:.4f} over {len(labels)} images")
    elif args.what == "cv":
        from .realnet import extract_features_batch

        _, params, images, _, labels = _scores_for(args.model, args.manifest)
        res = evalkit.kfold_eval(extract_features_batch(params, images), labels, args.folds, _seed(args), args.C)
        _emit(args, {"fold_auc": res.fold_auc, "mean_auc": res.mean_auc},
              f"{args.folds}-fold mean AUC {res.mean_auc:.4f}")
    elif args.what == "thurstone":
        with open(args.table, encoding="utf-8") as fh:
            table = evalkit.PairwiseTable.from_rows([json.loads(l) for l in fh if l.strip()])
        scores = evalkit.thurstone_case_v(table)
        out = {str(it): float(s) for it, s in zip(table.items, scores)}
        _emit(args, {"scores": out}, "\n".join(f"{k}\t{v:+.4f}" for k, v in out.items()))
    else:
        man, _, _, scores, _ = _scores_for(args.model, args.manifest)
        meta = [{"path": r["path"], "label": r["label"]} for r in man.records]
        rows = evalkit.rank_report(scores, meta)
        if args.out:
            evalkit.write_jsonl(args.out, rows)
        _emit(args, {"rows": rows}, evalkit.format_table(rows, ["rank", "score", "percentile", "band", "label", "path"]))
    return 0


def cmd_report(args) -> int:
    from .evalkit import format_table

    with open(args.input, encoding="utf-8") as fh:
        rows = [json.loads(l) for l in fh if l.strip()]
    cols = args.columns.split(",") if args.columns else None
    _emit(args, {"rows": rows}, format_table(rows, cols).rstrip("\n"))
    return 0


def cmd_pipeline(args) -> int:
    defaults = pipeline_defaults(args.profile or "desk")
    flags = {"seed": args.seed, "scenes": args.scenes, "size": args.size, "regime": args.regime,
             "per_target": args.per_target, "preset": args.preset, "holdout": args.holdout,
             "workers": args.workers, "corpus": args.corpus, "out": args.out}
    if args.set:
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            flags[key.strip()] = value.strip()
    cfg = resolve_config(defaults, args.config, flags, dict(os.environ))
    res = run_pipeline(cfg)
    payload = {"status": res.status, "run_dir": str(res.run_dir), "artifacts": res.artifacts, "error": res.error}
    human = res.error or f"pipeline done: {res.run_dir} (AUC {res.artifacts.get('auc_value', float('nan')):.4f})"
    _emit(args, payload, human)
    return res.status


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rforge", description="Visual-realism toolkit for synthetic composites.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        sp.add_argument("--seed", type=int, default=None)
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-corpus", cmd_gen_corpus, "render a labeled synthetic corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--scenes", type=int, default=600)
    sp.add_argument("--size", type=int, default=128)
    sp.add_argument("--categories", default="")
    sp.add_argument("--min-objects", type=int, default=1)
    sp.add_argument("--max-objects", type=int, default=3)
    sp.add_argument("--workers", type=int, default=None)

    sp = add("gen-dataset", cmd_gen_dataset, "build a natural-vs-composite manifest")
    sp.add_argument("--regime", required=True,
                    choices=["FullySupervised", "PartiallySupervised", "Unsupervised", "RandomPaste"])
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--per-target", type=int, default=1)

    sp = add("train", cmd_train, "train the realism network")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--preset", default="desk")
    sp.add_argument("--out", required=True)
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--arch", default=None)

    sp = add("score", cmd_score, "print the realism score of one image")
    sp.add_argument("--model", required=True)
    sp.add_argument("--image", required=True)

    sp = add("features", cmd_features, "dump penultimate-layer features")
    sp.add_argument("--model", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)

    sp = add("adjust", cmd_adjust, "recolour a composite foreground")
    sp.add_argument("--model", default=None)
    sp.add_argument("--bg", required=True)
    sp.add_argument("--fg", required=True)
    sp.add_argument("--alpha", required=True)
    sp.add_argument("--w", type=float, default=50.0)
    sp.add_argument("--starts", type=int, default=8)
    sp.add_argument("--baseline", choices=["cutpaste", "reinhard", "cnn"], default="cnn")
    sp.add_argument("--out", required=True)
    sp.add_argument("--report", default=None, help="write the adjustment report JSON here")

    sp = add("mine", cmd_mine, "hard-negative mining rounds")
    sp.add_argument("--model", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--rounds", type=int, default=3)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--samples", type=int, default=40)
    sp.add_argument("--w", type=float, default=0.0)
    sp.add_argument("--retrain-iterations", type=int, default=1000)
    sp.add_argument("--preset", default="desk")

    sp = add("select", cmd_select, "choose the best-fitting source object")
    sp.add_argument("--model", default=None)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--instance", type=int, required=True)
    sp.add_argument("--pool", required=True, help="corpus directory or its index.jsonl")
    sp.add_argument("--mode", choices=["realism", "shape", "random"], default="realism")
    sp.add_argument("--k", type=int, default=25)
    sp.add_argument("--adjust", action="store_true")
    sp.add_argument("--out-report", default=None)

    sp = add("evaluate", cmd_evaluate, "AUC, cross-validation, Thurstone scaling, ranked report")
    sp.add_argument("what", choices=["auc", "cv", "thurstone", "report"])
    sp.add_argument("--model", default=None)
    sp.add_argument("--manifest", default=None)
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--C", type=float, default=1.0)
    sp.add_argument("--table", default=None, help="pairwise JSON-lines table")
    sp.add_argument("--out", default=None)

    sp = add("report", cmd_report, "render a JSON-lines report as a table")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--columns", default="")

    sp = add("pipeline", cmd_pipeline, "corpus -> dataset -> train -> evaluate")
    sp.add_argument("--config", default=None, help="key=value config file")
    sp.add_argument("--profile", choices=sorted(PROFILES), default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--scenes", type=int, default=None)
    sp.add_argument("--size", type=int, default=None)
    sp.add_argument("--regime", default=None)
    sp.add_argument("--per-target", type=int, default=None)
    sp.add_argument("--preset", default=None)
    sp.add_argument("--holdout", type=float, default=None)
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--corpus", default=None, help="reuse an existing corpus instead of generating one")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    return p


_REQUIRED = {
    ("evaluate", "auc"): ("model", "manifest"),
    ("evaluate", "cv"): ("model", "manifest"),
    ("evaluate", "report"): ("model", "manifest"),
    ("evaluate", "thurstone"): ("table",),
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    need = _REQUIRED.get((args.command, getattr(args, "what", None)), ())
    missing = [f"--{n}" for n in need if getattr(args, n) is None]
    if args.command == "select" and args.mode == "realism" and not args.model:
        missing.append("--model")
    if args.command == "adjust" and args.baseline == "cnn" and not args.model:
        missing.append("--model")
    if missing:
        parser.error(f"{args.command} needs {', '.join(missing)}")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"rforge {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
