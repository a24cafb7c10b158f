import json
import struct

import numpy as np
import pytest
from scipy.io import wavfile

from gztech import cli, viz
from gztech.data import load_events
from gztech.models import load_detector
from gztech.nncore import load_checkpoint

TINY_CONFIG = {
    "seed": 9,
    "data": {
        "train_clips_per_class": 3,
        "test_clips_per_class": 3,
        "clip_duration": [0.6, 1.0],
        "f0_range": [150.0, 500.0],
        "train_sequences": 6,
        "test_sequences": 2,
    },
    "ipt": {"encoder_channels": [2, 3, 4, 5, 6], "dropout": 0.1},
    "onset": {"first_layer_channels": 2, "conv_channels": [3, 3], "hidden_fc": 5},
    "train": {"lr": 0.002, "batch": 4, "epochs": 2, "seed": 9},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny end-to-end workspace: corpus + both checkpoints."""
    root = tmp_path_factory.mktemp("cli")
    config = dict(TINY_CONFIG)
    config["corpus_dir"] = str(root / "corpus")
    config["checkpoint_dir"] = str(root / "ckpts")
    config["report_path"] = str(root / "report.json")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(config))
    assert cli.main(["generate", "--config", str(cfg_path)]) == 0
    assert cli.main(["train", "ipt", "--config", str(cfg_path)]) == 0
    assert cli.main(["train", "onset", "--config", str(cfg_path)]) == 0
    return root, cfg_path


class TestGenerate:
    def test_layout_and_lengths(self, workspace):
        root, _ = workspace
        corpus = root / "corpus"
        assert (corpus / "clips" / "train" / "manifest.jsonl").exists()
        train_files = sorted((corpus / "train").glob("seq_*.wav"))
        assert len(train_files) == 6
        for wav in train_files:
            rate, samples = wavfile.read(wav)
            assert rate == 44100 and samples.size == 564480
            blob = wav.with_suffix(".labels.bin").read_bytes()
            assert struct.unpack("<I", blob[:4])[0] == 256
        for wav in sorted((corpus / "test").glob("seq_*.wav")):
            _, samples = wavfile.read(wav)
            assert samples.size > 564480

    def test_meta_embeds_provenance(self, workspace):
        root, _ = workspace
        meta = json.loads((root / "corpus" / "meta.json").read_text())
        assert meta["seed"] == 9
        assert len(meta["config_hash"]) == 16
        assert meta["train_sequences"] == 6


class TestTrain:
    def test_loss_csv_has_one_row_per_epoch(self, workspace):
        root, _ = workspace
        for name in ("ipt", "onset"):
            lines = (root / "ckpts" / f"{name}_loss.csv").read_text().strip().splitlines()
            assert lines[0] == "epoch,train_loss,val_loss"
            assert len(lines) == 1 + TINY_CONFIG["train"]["epochs"]

    def test_checkpoint_headers(self, workspace):
        root, _ = workspace
        header, _ = load_checkpoint(root / "ckpts" / "ipt.ckpt")
        assert header["detector"] == "ipt"
        assert header["seed"] == 9
        assert len(header["config_hash"]) == 16
        header, _ = load_checkpoint(root / "ckpts" / "onset.ckpt")
        assert header["beta"] == pytest.approx(1.94)

    def test_beta_flag_recorded(self, workspace, tmp_path):
        root, cfg_path = workspace
        out = tmp_path / "beta_ckpts"
        assert cli.main(["train", "onset", "--config", str(cfg_path),
                         "--checkpoints", str(out), "--beta", "1.0"]) == 0
        header, _ = load_checkpoint(out / "onset.ckpt")
        assert header["beta"] == 1.0
        assert header["config"]["beta"] == 1.0

    def test_no_skip_omits_skip_edge(self, workspace, tmp_path):
        root, cfg_path = workspace
        out = tmp_path / "noskip_ckpts"
        assert cli.main(["train", "ipt", "--config", str(cfg_path),
                         "--checkpoints", str(out), "--no-skip"]) == 0
        header, _ = load_checkpoint(out / "ipt.ckpt")
        kinds = [s["kind"] for s in header["layer_specs"]]
        assert "skip_add" not in kinds
        baseline, _ = load_checkpoint(root / "ckpts" / "ipt.ckpt")
        assert "skip_add" in [s["kind"] for s in baseline["layer_specs"]]

    def test_cnn_ipt_flag_swaps_topology(self, workspace, tmp_path):
        root, cfg_path = workspace
        out = tmp_path / "cnn_ckpts"
        assert cli.main(["train", "ipt", "--config", str(cfg_path),
                         "--checkpoints", str(out), "--cnn-ipt"]) == 0
        det, header = load_detector(out / "ipt.ckpt")
        assert header["detector"] == "cnn_ipt"
        x = np.random.default_rng(0).uniform(-20, 2, (1, 1, 128, 30)).astype(np.float32)
        assert det.forward(x).shape == (1, 8, 30)

    def test_divergent_training_exits_3(self, workspace, tmp_path):
        root, cfg_path = workspace
        config = json.loads(cfg_path.read_text())
        config["train"]["lr"] = 1e20
        config["checkpoint_dir"] = str(tmp_path / "div")
        bad_cfg = tmp_path / "bad.json"
        bad_cfg.write_text(json.dumps(config))
        with np.errstate(all="ignore"):
            assert cli.main(["train", "ipt", "--config", str(bad_cfg)]) == 3


class TestEval:
    def test_fused_and_raw_reports(self, workspace, tmp_path):
        root, cfg_path = workspace
        fused_path = tmp_path / "fused.json"
        raw_path = tmp_path / "raw.json"
        assert cli.main(["eval", "--config", str(cfg_path),
                         "--out", str(fused_path)]) == 0
        assert cli.main(["eval", "--config", str(cfg_path),
                         "--out", str(raw_path), "--no-fusion"]) == 0
        fused = json.loads(fused_path.read_text())
        raw = json.loads(raw_path.read_text())
        assert fused["use_fusion"] is True and raw["use_fusion"] is False
        assert len(fused["per_piece"]) == 2 == fused["n_pieces"]
        assert fused["seed"] == 9 and len(fused["config_hash"]) == 16
        assert fused_path.with_suffix(".csv").exists()

    def test_rerun_is_deterministic(self, workspace, tmp_path):
        root, cfg_path = workspace
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        cli.main(["eval", "--config", str(cfg_path), "--out", str(a)])
        cli.main(["eval", "--config", str(cfg_path), "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_missing_checkpoints_exit_2(self, workspace, tmp_path):
        root, cfg_path = workspace
        assert cli.main(["eval", "--config", str(cfg_path),
                         "--checkpoints", str(tmp_path / "nowhere"),
                         "--out", str(tmp_path / "r.json")]) == 2


class TestInfer:
    def test_silence_yields_partitioning_events(self, workspace, tmp_path):
        root, cfg_path = workspace
        wav = tmp_path / "silence.wav"
        wavfile.write(wav, 44100, np.zeros(2 * 44100, dtype=np.float32))
        out = tmp_path / "events.jsonl"
        assert cli.main(["infer", str(wav), "--config", str(cfg_path),
                         "--out", str(out)]) == 0
        events = load_events(out)
        assert events, "expected at least one event"
        assert events[0].onset == 0.0
        for a, b in zip(events, events[1:]):
            assert a.offset == pytest.approx(b.onset)
        n_frames = (2 * 44100) // 2205
        assert events[-1].offset == pytest.approx(n_frames * 0.05)

    def test_wrong_sample_rate_exits_2(self, workspace, tmp_path):
        root, cfg_path = workspace
        wav = tmp_path / "wrong.wav"
        wavfile.write(wav, 22050, np.zeros(22050, dtype=np.float32))
        assert cli.main(["infer", str(wav), "--config", str(cfg_path),
                         "--out", str(tmp_path / "e.jsonl")]) == 2


class TestFuse:
    def test_known_probability_files(self, tmp_path):
        onset_path = tmp_path / "onset.json"
        ipt_path = tmp_path / "ipt.json"
        onset_path.write_text(json.dumps([0.9, 0.1, 0.8, 0.2]))
        ipt_path.write_text(json.dumps([[0.9, 0.2, 0.1, 0.4],
                                        [0.1, 0.8, 0.9, 0.6]]))
        out = tmp_path / "fused.jsonl"
        assert cli.main(["fuse", str(onset_path), str(ipt_path),
                         "--out", str(out)]) == 0
        events = load_events(out)
        assert len(events) == 2
        assert [int(e.technique) for e in events] == [0, 1]
        assert events[0].onset == 0.0
        assert events[1].onset == pytest.approx(0.10)


class TestVisualize:
    def test_png_written_and_rerender_identical(self, workspace, tmp_path):
        root, cfg_path = workspace
        corpus = root / "corpus"
        wav = sorted((corpus / "test").glob("seq_*.wav"))[0]
        out_a = tmp_path / "a.png"
        out_b = tmp_path / "b.png"
        labels = wav.with_suffix(".events.jsonl")
        for out in (out_a, out_b):
            assert cli.main(["visualize", str(wav), "--config", str(cfg_path),
                             "--labels", str(labels), "--out", str(out)]) == 0
        assert out_a.read_bytes() == out_b.read_bytes()
        assert out_a.stat().st_size > 1000
        assert b"config_hash=" in out_a.read_bytes()  # provenance text chunk

    def test_panel_counts(self):
        t = 50
        rng = np.random.default_rng(0)
        log_mel = rng.uniform(-23, 5, (128, t))
        mask = (rng.random(t) < 0.1).astype(np.uint8)
        classes = rng.integers(0, 8, t)
        fig = viz.render_pipeline_figure(log_mel, mask, classes, classes)
        assert len(fig.axes) == 4
        fig = viz.render_pipeline_figure(log_mel, mask, classes, classes,
                                         target_classes=classes)
        assert len(fig.axes) == 5


class TestConfig:
    def test_toml_config(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(
            'seed = 3\ncorpus_dir = "x"\n\n[train]\nepochs = 5\n'
        )
        from gztech.config import load_config

        parsed = load_config(cfg)
        assert parsed.seed == 3
        assert parsed.train.epochs == 5

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"sede": 3}))
        assert cli.main(["generate", "--config", str(cfg)]) == 2

    def test_unknown_section_key_rejected(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"train": {"epoch": 2}}))
        assert cli.main(["generate", "--config", str(cfg)]) == 2

    def test_missing_config_file(self):
        assert cli.main(["generate", "--config", "/nonexistent/cfg.json"]) == 2
