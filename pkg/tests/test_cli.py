"""End-to-end command-line workflows via main(argv)."""

import json

import numpy as np
import pytest

from sslasr.cli import main
from sslasr.data import load_corpus
from sslasr.io import load_checkpoint, read_jsonl, read_manifest

TINY = """\
n_train = 16
n_eval = 6
d_feat = 4
vocab_size = 5
proto_len = 8
min_tokens = 3
max_tokens = 4
d_model = 16
n_heads = 2
n_blocks = 1
d_ffn = 32
apc_lags = 1
pretrain_steps = 2
adapt_steps = 2
finetune_steps = 2
batch_size = 4
noam_warmup = 2
d_adapter = 4
"""


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return str(path)


def last_line(capsys):
    return capsys.readouterr().out.strip().splitlines()[-1]


class TestCorpusCommands:
    def test_gen_corpus_prints_manifest(self, tmp_path, capsys):
        rc = main(["gen-corpus", "--out", str(tmp_path / "c"), "--n", "4",
                   "--domain", "target", "--seed", "3"])
        assert rc == 0
        manifest = last_line(capsys)
        corpus = load_corpus(manifest)
        assert len(corpus) == 4
        assert all(u.domain == "target" for u in corpus)

    def test_flag_beats_set_beats_config(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("n_utterances = 3\n")
        main(["gen-corpus", "--out", str(tmp_path / "a"), "--config", str(cfg)])
        assert len(read_manifest(last_line(capsys))) == 3
        main(["gen-corpus", "--out", str(tmp_path / "b"), "--config", str(cfg),
              "--set", "n_utterances=5"])
        assert len(read_manifest(last_line(capsys))) == 5
        main(["gen-corpus", "--out", str(tmp_path / "c"), "--config", str(cfg),
              "--set", "n_utterances=5", "--n", "2"])
        assert len(read_manifest(last_line(capsys))) == 2

    def test_featurize_wav_corpus(self, tmp_path, capsys):
        main(["gen-corpus", "--out", str(tmp_path / "wav"), "--n", "2",
              "--emit", "waveform"])
        wav_manifest = last_line(capsys)
        rc = main(["featurize", "--manifest", wav_manifest,
                   "--out", str(tmp_path / "feat")])
        assert rc == 0
        corpus = load_corpus(last_line(capsys))
        assert len(corpus) == 2
        assert corpus[0].feats.shape[1] == 40

    def test_featurize_rejects_feature_manifest(self, tmp_path, capsys):
        main(["gen-corpus", "--out", str(tmp_path / "f"), "--n", "1"])
        manifest = last_line(capsys)
        rc = main(["featurize", "--manifest", manifest, "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "expects .wav" in capsys.readouterr().err


class TestTrainingCommands:
    def test_full_stage_chain(self, tmp_path, tiny_config, capsys):
        work = str(tmp_path / "run")
        assert main(["pretrain", "--config", tiny_config, "--out", work]) == 0
        pre = last_line(capsys)
        assert main(["adapt", "--config", tiny_config, "--init", pre,
                     "--out", work, "--mode", "draft"]) == 0
        ada = last_line(capsys)
        assert main(["finetune", "--config", tiny_config, "--init", ada,
                     "--out", work, "--mode", "full"]) == 0
        fin = last_line(capsys)

        report_path = tmp_path / "report.json"
        assert main(["evaluate", "--config", tiny_config, "--init", fin,
                     "--report", str(report_path)]) == 0
        on_stdout = json.loads(capsys.readouterr().out)
        on_disk = json.loads(report_path.read_text())
        assert on_stdout == on_disk
        assert np.isfinite(on_disk["ter"])
        assert on_disk["provenance"] == {"f": 4, "ada": 4, "g": 4}

    def test_checkpoint_carries_objective_forward(self, tmp_path, tiny_config, capsys):
        work = str(tmp_path / "run")
        main(["pretrain", "--config", tiny_config, "--out", work,
              "--objective", "apc"])
        pre = last_line(capsys)
        # no objective mentioned here: it must come from the checkpoint
        main(["adapt", "--config", tiny_config, "--init", pre, "--out", work])
        ada = last_line(capsys)
        assert load_checkpoint(ada).config["objective"] == "apc"

    def test_steps_flag_overrides_config(self, tmp_path, tiny_config, capsys):
        work = str(tmp_path / "run")
        main(["pretrain", "--config", tiny_config, "--out", work, "--steps", "1"])
        assert load_checkpoint(last_line(capsys)).provenance["f"] == 1

    def test_pretrain_from_manifest(self, tmp_path, tiny_config, capsys):
        main(["gen-corpus", "--out", str(tmp_path / "c"), "--n", "8",
              "--set", "d_feat=4", "--set", "proto_len=8",
              "--set", "min_tokens=3", "--set", "max_tokens=4",
              "--set", "vocab_size=5"])
        manifest = last_line(capsys)
        rc = main(["pretrain", "--config", tiny_config, "--out",
                   str(tmp_path / "run"), "--manifest", manifest, "--steps", "1"])
        assert rc == 0

    def test_feature_dim_mismatch_fails(self, tmp_path, tiny_config, capsys):
        main(["gen-corpus", "--out", str(tmp_path / "c"), "--n", "4"])  # d_feat 8
        manifest = last_line(capsys)
        rc = main(["pretrain", "--config", tiny_config, "--out",
                   str(tmp_path / "run"), "--manifest", manifest])
        assert rc == 1
        assert "d_feat" in capsys.readouterr().err

    def test_evaluate_empty_manifest(self, tmp_path, tiny_config, capsys):
        work = str(tmp_path / "run")
        main(["pretrain", "--config", tiny_config, "--out", work, "--steps", "1"])
        pre = last_line(capsys)
        main(["finetune", "--config", tiny_config, "--init", pre,
              "--out", work, "--steps", "1"])
        fin = last_line(capsys)
        empty = tmp_path / "empty.tsv"
        empty.write_text("# id\tpath\ttranscript\tdomain\n")
        rc = main(["evaluate", "--config", tiny_config, "--init", fin,
                   "--manifest", str(empty)])
        assert rc == 1
        assert "no utterances" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_pass_exit_zero(self, capsys):
        rc = main(["gradcheck", "--seeds", "1", "--verbose"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "PASS" in out and "seed 0" in out

    def test_fail_exit_one(self, capsys):
        rc = main(["gradcheck", "--seeds", "1", "--threshold", "1e-30"])
        assert rc == 1
        assert "FAIL" in capsys.readouterr().out


class TestSweepCommand:
    def test_sweep_writes_results(self, tmp_path, tiny_config, capsys):
        out = tmp_path / "sweep"
        rc = main(["sweep", "--config", tiny_config, "--key", "d_adapter",
                   "--values", "2,4", "--out", str(out), "--variant", "no_adapt",
                   "--set", "pretrain_steps=1", "--set", "finetune_steps=1"])
        assert rc == 0
        records = read_jsonl(out / "sweep.jsonl")
        assert [r["value"] for r in records] == [2, 4]
        assert all(r["key"] == "d_adapter" and "ter" in r for r in records)
        assert (out / "d_adapter=2").is_dir() and (out / "d_adapter=4").is_dir()

    def test_unknown_sweep_key(self, tmp_path, capsys):
        rc = main(["sweep", "--key", "nonesuch", "--values", "1",
                   "--out", str(tmp_path)])
        assert rc == 1
        assert "unknown sweep key" in capsys.readouterr().err


class TestErrorHandling:
    def test_unknown_set_key(self, tmp_path, capsys):
        rc = main(["gen-corpus", "--out", str(tmp_path), "--set", "volume=11"])
        assert rc == 1
        assert "unknown config key 'volume'" in capsys.readouterr().err

    def test_missing_checkpoint(self, tmp_path, capsys):
        rc = main(["adapt", "--init", str(tmp_path / "nope.ckpt"),
                   "--out", str(tmp_path)])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_usage_errors_exit_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["no-such-command"])
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            main(["pretrain"])  # missing required --out
        assert exc.value.code == 2

    def test_malformed_set_value(self):
        with pytest.raises(SystemExit) as exc:
            main(["gen-corpus", "--out", "x", "--set", "novalue"])
        assert exc.value.code == 2
