import numpy as np
import pytest

from matdnn import pipeline
from matdnn.granularity import LayerGrid
from matdnn.pipeline import (ConfigMismatch, PipelineConfig, RunArtifacts, desk_config, load_corpus, mdnn_input,
                             parse_config, run_iteration, run_pipeline, validate_run)
from matdnn.synth import SynthConfig, generate_corpus, write_corpus

from conftest import make_seq

FAST = """
iterations = 2
grid.temporal = 3
grid.phonetic = 4, 8
tokenizer.max_iters = 3
mr.lda_iters = 20
mdnn.hidden = 16
mdnn.bottleneck = 6
mdnn.epochs = 2
eval.abx_cap = 5
"""


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    write_corpus(d, generate_corpus(SynthConfig(num_utterances=10, seed=4)))
    return d


def fast_config(corpus_dir, out, extra=""):
    return parse_config(f"corpus = {corpus_dir}\noutput = {out}\n{FAST}\n{extra}")


class TestConfig:
    def test_defaults(self):
        cfg = PipelineConfig()
        assert cfg.iterations == 2 and cfg.mr_rounds == 1 and len(cfg.grid) == 16
        assert cfg.mdnn.bottleneck == 39

    def test_desk_config(self):
        cfg = desk_config()
        assert cfg.grid == LayerGrid((3, 5), (8, 16)) and cfg.mdnn.epochs == 40

    def test_parse_and_render_round_trip(self):
        cfg = parse_config("seed = 7  # comment\nmr_rounds = 2\ngrid.phonetic = 4, 8\nmr.threshold = 0.5\n"
                           "mdnn.hidden = 32, 16\neval.abx = false\nmr.alpha = 0.5\n")
        assert (cfg.seed, cfg.mr_rounds, cfg.grid.phonetic, cfg.mr.peaks.threshold) == (7, 2, (4, 8), 0.5)
        assert cfg.mdnn.hidden == (32, 16) and cfg.eval.abx is False and cfg.mr.alpha == 0.5
        again = parse_config(cfg.to_text())
        assert again.to_text() == cfg.to_text() and again.hash() == cfg.hash()

    @pytest.mark.parametrize("text, msg", [("bogus = 1", "unknown"), ("seed 4", "key = value"),
                                           ("iterations = 0", "iterations"), ("mr_rounds = -1", "mr_rounds"),
                                           ("summary = maybe", "boolean")])
    def test_errors(self, text, msg):
        with pytest.raises(ValueError, match=msg):
            parse_config(text)

    def test_seed_env_override(self, monkeypatch):
        monkeypatch.setenv("MATDNN_SEED", "42")
        assert parse_config("seed = 3").seed == 42

    def test_hash_ignores_paths(self):
        a = parse_config("corpus = /a\noutput = /b")
        b = parse_config("corpus = /c\noutput = /d")
        assert a.hash() == b.hash() != parse_config("seed = 1").hash()


class TestRecipe:
    def test_iteration_one_dims(self):
        f = make_seq(np.zeros((5, 39)))
        out = mdnn_input([f], None, PipelineConfig())
        assert out[0].dim == 351 + 78

    def test_iteration_two_dims(self):
        f = make_seq(np.zeros((5, 39)))
        b = make_seq(np.zeros((5, 39)), kind="bottleneck")
        assert mdnn_input([f], [b], PipelineConfig())[0].dim == 351 + 351 + 78

    def test_no_summary(self):
        f = make_seq(np.zeros((5, 8)))
        assert mdnn_input([f], None, PipelineConfig(context=1, summary=False))[0].dim == 24


class TestRun:
    def test_control_flow_without_reinforcement(self, corpus_dir, tmp_path, monkeypatch):
        calls = {"grid": 0, "mr": 0, "mdnn": 0}

        def counting(name, fn):
            def wrapped(*a, **kw):
                calls[name] += 1
                return fn(*a, **kw)
            return wrapped

        monkeypatch.setattr(pipeline, "train_grid", counting("grid", pipeline.train_grid))
        monkeypatch.setattr(pipeline, "reinforce_detailed", counting("mr", pipeline.reinforce_detailed))
        monkeypatch.setattr(pipeline, "train", counting("mdnn", pipeline.train))
        cfg = fast_config(corpus_dir, tmp_path / "run", "iterations = 1\nmr_rounds = 0")
        run_pipeline(cfg)
        assert calls == {"grid": 1, "mr": 0, "mdnn": 1}

    def test_second_iteration_uses_bnf(self, corpus_dir, tmp_path):
        state = run_pipeline(fast_config(corpus_dir, tmp_path / "run"))
        assert state.iterations[0].mat_input[0].feature_kind == "synthetic"
        assert state.iterations[1].mat_input[0].feature_kind == "bottleneck"
        assert state.iterations[1].mat_input[0].dim == 6
        assert len(state.iterations[1].layer_sets) == 2
        reports = tmp_path / "run" / "reports"
        assert (reports / "track1.csv").exists() and (reports / "track2.csv").exists()
        assert "Track 2" in (reports / "summary.txt").read_text()
        assert validate_run(tmp_path / "run") == []

    def test_missing_previous_iteration(self, corpus_dir, tmp_path):
        cfg = fast_config(corpus_dir, tmp_path / "run")
        initial, _ = load_corpus(corpus_dir)
        state = RunArtifacts(tmp_path / "run", cfg, initial)
        with pytest.raises(FileNotFoundError, match="iter1"):
            run_iteration(state, cfg, 2)

    def test_deterministic_and_resumable(self, corpus_dir, tmp_path):
        runs = []
        for name in ("a", "b"):
            run_pipeline(fast_config(corpus_dir, tmp_path / name))
            runs.append(tmp_path / name)
        files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(runs[1]) for p in runs[1].rglob("*") if p.is_file())
        for rel in files:
            if rel.name != "config.txt":
                assert (runs[0] / rel).read_bytes() == (runs[1] / rel).read_bytes(), rel
        # drop the second iteration's network and downstream outputs, then resume
        a = runs[0]
        for p in [a / "mdnn" / "iter2.matn", a / "mdnn" / "iter2" / "DONE", *(a / "bnf" / "iter2").iterdir(),
                  *(a / "reports").iterdir()]:
            p.unlink()
        run_pipeline(fast_config(corpus_dir, a), resume=True)
        for rel in files:
            if rel.name != "config.txt":
                assert (a / rel).read_bytes() == (runs[1] / rel).read_bytes(), rel

    def test_config_mismatch_rejected(self, corpus_dir, tmp_path):
        run_pipeline(fast_config(corpus_dir, tmp_path / "run", "iterations = 1"))
        with pytest.raises(ConfigMismatch):
            run_pipeline(fast_config(corpus_dir, tmp_path / "run", "iterations = 1\nseed = 5"))

    def test_validate_reports_corruption(self, corpus_dir, tmp_path):
        run_pipeline(fast_config(corpus_dir, tmp_path / "run", "iterations = 1\nmr_rounds = 0"))
        target = next((tmp_path / "run" / "bnf" / "iter1").glob("*.matf"))
        target.write_bytes(target.read_bytes()[:-2])
        labels = tmp_path / "run" / "layers" / "iter1" / "round0" / "m3_n4" / "labels.csv"
        labels.write_text(labels.read_text().replace("\n", "\nzzz,0,1,0\n", 1))
        problems = validate_run(tmp_path / "run")
        assert any("truncated" in p for p in problems)
        assert any("labels.csv" in p for p in problems)
