import json

import numpy as np
import pytest

from rforge import cli
from rforge.cli import ConfigError, parse_kv_lines, pipeline_defaults, resolve_config, stage_seed
from rforge.imgcore import write_image, write_mask

DEFAULTS = {"seed": 0, "scenes": 600, "regime": "FullySupervised", "holdout": 0.2, "fast": False}


def test_defaults_only():
    cfg = resolve_config(DEFAULTS)
    assert cfg.values == DEFAULTS and set(cfg.sources.values()) == {"default"}


def test_precedence_file_env_flags(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nscenes = 50\nseed=3\nfast=yes\n")
    cfg = resolve_config(DEFAULTS, f)
    assert (cfg["scenes"], cfg.seed, cfg["fast"]) == (50, 3, True)
    assert cfg.sources["scenes"] == "file:2"
    cfg = resolve_config(DEFAULTS, f, env={"RFORGE_SEED": "7"})
    assert cfg.seed == 7
    cfg = resolve_config(DEFAULTS, f, {"seed": 9, "scenes": None}, {"RFORGE_SEED": "7"})
    assert cfg.seed == 9 and cfg["scenes"] == 50


def test_env_seed_alone():
    assert resolve_config(DEFAULTS, env={"RFORGE_SEED": "7", "OTHER": "1"}).seed == 7


def test_seed_defaults_to_zero():
    assert resolve_config({"scenes": 1}).seed == 0


def test_unknown_key_reports_line(tmp_path):
    f = tmp_path / "bad.cfg"
    f.write_text("scenes=5\n\nbogus=1\n")
    with pytest.raises(ConfigError, match=r"bad\.cfg:3.*bogus"):
        resolve_config(DEFAULTS, f)
    with pytest.raises(ConfigError, match="bogus"):
        resolve_config(DEFAULTS, flags={"bogus": 1})


def test_malformed_line_and_bad_value(tmp_path):
    with pytest.raises(ConfigError, match=":2:"):
        parse_kv_lines("a=1\njust words\n")
    f = tmp_path / "c.cfg"
    f.write_text("scenes=many\n")
    with pytest.raises(ConfigError, match="scenes"):
        resolve_config(DEFAULTS, f)


def test_stage_seeds_distinct_and_stable():
    names = ["corpus", "dataset", "split", "train"]
    seeds = [stage_seed(0, n) for n in names]
    assert len(set(seeds)) == 4 and seeds == [stage_seed(0, n) for n in names]
    assert stage_seed(1, "corpus") != stage_seed(0, "corpus")


def test_profiles():
    assert pipeline_defaults("smoke")["scenes"] == 60
    assert pipeline_defaults("desk")["scenes"] == 600
    with pytest.raises(ConfigError):
        pipeline_defaults("huge")


# ---------------------------------------------------------------- pipeline

@pytest.fixture(scope="module")
def tiny_preset(tmp_path_factory):
    p = tmp_path_factory.mktemp("preset") / "tiny.cfg"
    p.write_text("base=smoke\nmax_iterations=15\nbatch_size=8\n")
    return p


def _pipeline(out, preset, *extra):
    return cli.main(["pipeline", "--out", str(out), "--scenes", "10", "--preset", str(preset), "--json", *extra])


def test_pipeline_runs_and_is_reproducible(tmp_path, tiny_preset, capsys):
    assert _pipeline(tmp_path / "a", tiny_preset) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["status"] == 0 and 0 <= payload["artifacts"]["auc_value"] <= 1
    for rel in ("corpus/index.jsonl", "dataset/manifest.jsonl", "model.rlnw", "reports/auc.json",
                "reports/ranking.jsonl", "config.json"):
        assert (tmp_path / "a" / rel).exists(), rel
    assert _pipeline(tmp_path / "b", tiny_preset) == 0
    for rel in ("corpus/index.jsonl", "dataset/manifest.jsonl", "dataset/train.jsonl", "model.rlnw",
                "reports/ranking.jsonl"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_pipeline_missing_corpus_creates_nothing(tmp_path, tiny_preset, capsys):
    out = tmp_path / "run"
    code = _pipeline(out, tiny_preset, "--corpus", str(tmp_path / "nowhere"))
    assert code != 0
    assert not out.exists()
    assert "nowhere" in capsys.readouterr().err


def test_pipeline_stage_failure_marker(tmp_path, capsys):
    bad = tmp_path / "broken.cfg"
    bad.write_text("base=smoke\nbatch_size=0\n")
    code = _pipeline(tmp_path / "run", bad)
    assert code == 1
    assert (tmp_path / "run" / "FAILED").read_text().startswith("train:")
    assert (tmp_path / "run" / "dataset" / "manifest.jsonl").exists()


def test_pipeline_set_overrides_and_unknown_key(tmp_path, tiny_preset):
    assert _pipeline(tmp_path / "r", tiny_preset, "--set", "nonsense=1") == 2
    assert not (tmp_path / "r").exists()


# ---------------------------------------------------------------- subcommands

def test_gen_corpus_and_dataset(tmp_path, capsys):
    assert cli.main(["gen-corpus", "--out", str(tmp_path / "c"), "--scenes", "4", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["scenes"] == 4
    assert cli.main(["gen-dataset", "--regime", "RandomPaste", "--corpus", str(tmp_path / "c"),
                     "--out", str(tmp_path / "d"), "--json"]) == 0
    assert (tmp_path / "d" / "manifest.jsonl").exists()


def test_adjust_reinhard_writes_image_and_report(tmp_path):
    rng = np.random.default_rng(0)
    write_image(tmp_path / "bg.png", rng.random((16, 16, 3)))
    write_image(tmp_path / "fg.png", rng.random((16, 16, 3)))
    a = np.zeros((16, 16))
    a[4:10, 4:10] = 1
    write_mask(tmp_path / "a.png", a)
    code = cli.main(["adjust", "--bg", str(tmp_path / "bg.png"), "--fg", str(tmp_path / "fg.png"),
                     "--alpha", str(tmp_path / "a.png"), "--baseline", "reinhard",
                     "--out", str(tmp_path / "o.png"), "--report", str(tmp_path / "r.json")])
    assert code == 0 and (tmp_path / "o.png").exists()
    assert "g" in json.loads((tmp_path / "r.json").read_text())


def test_evaluate_requires_model():
    with pytest.raises(SystemExit) as e:
        cli.main(["evaluate", "auc", "--manifest", "x.jsonl"])
    assert e.value.code == 2


def test_thurstone_from_table(tmp_path, capsys):
    rows = [{"item_a": "a", "item_b": "b", "wins_a": 8, "wins_b": 2},
            {"item_a": "a", "item_b": "c", "wins_a": 6, "wins_b": 4},
            {"item_a": "b", "item_b": "c", "wins_a": 3, "wins_b": 7}]
    (tmp_path / "t.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    assert cli.main(["evaluate", "thurstone", "--table", str(tmp_path / "t.jsonl"), "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["scores"]["a"] > out["scores"]["c"] > out["scores"]["b"]
