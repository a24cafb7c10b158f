"""Command-line surface: generate | train | eval | infer | fuse | visualize.

Exit codes: 0 on success, 2 on validation errors (bad inputs, missing
files, malformed config), 3 on numeric failures (training divergence).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import data, metrics, models, training, viz
from .config import RunConfig, config_hash, load_config
from .data import TechniqueClass
from .dsp import read_wav
from .errors import DivergenceError, ValidationError
from .fusion import (
    decision_fusion,
    segments_to_events,
    suppress_close_onsets,
    threshold_onsets,
)


def _resolve_config(args) -> tuple[RunConfig, str]:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if getattr(args, "no_skip", False):
        cfg.ipt.skip_connection = False
    if getattr(args, "no_multi_shape", False):
        cfg.onset.multi_shape = False
    if getattr(args, "beta", None) is not None:
        cfg.onset = dataclasses.replace(cfg.onset, beta=args.beta)
    if getattr(args, "cnn_ipt", False):
        cfg.cnn_ipt = True
    if getattr(args, "threshold", None) is not None:
        cfg.fusion_threshold = args.threshold
    return cfg, config_hash(cfg)


def _synth_pool(gen_cfg, rng: np.random.Generator, per_class: int) -> list[data.Clip]:
    pool = []
    for tech in TechniqueClass:
        for _ in range(per_class):
            f0 = rng.uniform(*gen_cfg.f0_range)
            duration = rng.uniform(*gen_cfg.clip_duration)
            pool.append(data.synth_clip(tech, f0, duration, rng))
    return pool


def _write_split(directory: Path, sequences: list[data.SequenceExample]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "manifest.jsonl", "w") as fh:
        for i, ex in enumerate(sequences):
            name = f"seq_{i:04d}.wav"
            data.save_sequence(ex, directory / name)
            fh.write(json.dumps({
                "file": name,
                "n_frames": int(ex.n_frames),
                "duration": ex.duration,
            }, sort_keys=True) + "\n")


def _load_split(directory: Path) -> list[data.SequenceExample]:
    manifest = directory / "manifest.jsonl"
    if not manifest.exists():
        raise ValidationError(f"no manifest at {manifest}; run `generate` first")
    out = []
    with open(manifest) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(data.load_sequence(directory / json.loads(line)["file"]))
    return out


def cmd_generate(args) -> int:
    cfg, chash = _resolve_config(args)
    corpus = Path(args.out or cfg.corpus_dir)
    gen = cfg.data

    train_pool = _synth_pool(gen, np.random.default_rng([cfg.seed, 1]), gen.train_clips_per_class)
    test_pool = _synth_pool(gen, np.random.default_rng([cfg.seed, 2]), gen.test_clips_per_class)
    data.save_clip_pool(train_pool, corpus / "clips" / "train")
    data.save_clip_pool(test_pool, corpus / "clips" / "test")

    train_seqs = data.generate_split(train_pool, gen.train_sequences, "train",
                                     np.random.default_rng([cfg.seed, 3]))
    test_seqs = data.generate_split(test_pool, gen.test_sequences, "test",
                                    np.random.default_rng([cfg.seed, 4]))
    _write_split(corpus / "train", train_seqs)
    _write_split(corpus / "test", test_seqs)

    with open(corpus / "meta.json", "w") as fh:
        json.dump({
            "config_hash": chash,
            "seed": cfg.seed,
            "train_sequences": len(train_seqs),
            "test_sequences": len(test_seqs),
            "train_clips": len(train_pool),
            "test_clips": len(test_pool),
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote corpus to {corpus} ({len(train_seqs)} train / {len(test_seqs)} test)")
    return 0


def cmd_train(args) -> int:
    cfg, chash = _resolve_config(args)
    corpus = Path(args.corpus or cfg.corpus_dir)
    ckpt_dir = Path(args.checkpoints or cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    kind = args.detector
    if kind == "ipt" and cfg.cnn_ipt:
        kind = "cnn_ipt"
    examples = _load_split(corpus / "train")
    name = "ipt" if kind != "onset" else "onset"
    ckpt_path = ckpt_dir / f"{name}.ckpt"
    csv_path = ckpt_dir / f"{name}_loss.csv"
    _, history = training.train_detector(
        kind, examples, cfg.train, ckpt_path, loss_csv_path=csv_path,
        ipt_cfg=cfg.ipt, onset_cfg=cfg.onset,
        extra_header={"config_hash": chash},
    )
    final = history[-1]
    print(f"trained {kind}: {len(history)} epochs, "
          f"final train loss {final[1]:.4f}, val loss {final[2]:.4f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def _load_outputs(ckpt_dir: Path, pieces: list[data.SequenceExample]):
    ipt_det, ipt_header = models.load_detector(ckpt_dir / "ipt.ckpt")
    onset_det, _ = models.load_detector(ckpt_dir / "onset.ckpt")
    outputs = []
    for ex in pieces:
        feats = training.sequence_features(ex)[None]
        ipt_probs = ipt_det.forward(feats)[0]
        onset_probs = onset_det.forward(feats)[0]
        outputs.append(models.DetectorOutput(ipt_probs=ipt_probs,
                                             onset_probs=onset_probs))
    return outputs, ipt_header


def cmd_eval(args) -> int:
    cfg, chash = _resolve_config(args)
    corpus = Path(args.corpus or cfg.corpus_dir)
    ckpt_dir = Path(args.checkpoints or cfg.checkpoint_dir)
    for name in ("ipt.ckpt", "onset.ckpt"):
        if not (ckpt_dir / name).exists():
            raise ValidationError(f"missing checkpoint {ckpt_dir / name}; run `train` first")

    pieces = _load_split(corpus / "test")
    outputs, _ = _load_outputs(ckpt_dir, pieces)
    triples = [(ex.events, ex.ipt_labels, out) for ex, out in zip(pieces, outputs)]
    report = metrics.evaluate_corpus(triples, use_fusion=not args.no_fusion,
                                     threshold=cfg.fusion_threshold)

    report_path = Path(args.out or cfg.report_path)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_report(report, report_path, extra={
        "config_hash": chash,
        "seed": cfg.seed,
        "use_fusion": not args.no_fusion,
        "threshold": cfg.fusion_threshold,
        "n_pieces": len(pieces),
    })
    metrics.write_summary_csv(report, report_path.with_suffix(".csv"),
                              label="no-fusion" if args.no_fusion else "fused")
    ns = report.mean_note_score
    print(f"frame accuracy {report.mean_frame_accuracy:.4f} | "
          f"note P {ns.precision:.4f} R {ns.recall:.4f} F1 {ns.f1:.4f}")
    print(f"report: {report_path}")
    return 0


def _infer_events(audio_path, ckpt_dir: Path, threshold: float, min_gap: int = 0):
    audio = read_wav(audio_path)
    ipt_det, _ = models.load_detector(ckpt_dir / "ipt.ckpt")
    onset_det, _ = models.load_detector(ckpt_dir / "onset.ckpt")
    from .dsp import log_mel

    spec = log_mel(audio)
    feats = spec.values.astype(np.float32)[None, None]
    ipt_probs = ipt_det.forward(feats)[0]
    onset_probs = onset_det.forward(feats)[0]
    mask = threshold_onsets(onset_probs, threshold)
    if min_gap > 0:
        mask = suppress_close_onsets(mask, min_gap)
    fused = decision_fusion(mask, ipt_probs)
    return spec, mask, ipt_probs, fused


def cmd_infer(args) -> int:
    cfg, _ = _resolve_config(args)
    ckpt_dir = Path(args.checkpoints or cfg.checkpoint_dir)
    _, _, _, fused = _infer_events(args.audio, ckpt_dir, cfg.fusion_threshold,
                                   min_gap=args.onset_min_gap)
    events = segments_to_events(fused)
    events.sort(key=lambda ev: ev.onset)
    out = Path(args.out or (Path(args.audio).with_suffix(".events.jsonl")))
    data.save_events(events, out)
    print(f"{len(events)} events -> {out}")
    return 0


def cmd_fuse(args) -> int:
    cfg, _ = _resolve_config(args)
    with open(args.onset_probs) as fh:
        onset_probs = np.asarray(json.load(fh), dtype=np.float64)
    with open(args.ipt_probs) as fh:
        ipt_probs = np.asarray(json.load(fh), dtype=np.float64)
    mask = threshold_onsets(onset_probs, cfg.fusion_threshold)
    if args.onset_min_gap > 0:
        mask = suppress_close_onsets(mask, args.onset_min_gap)
    fused = decision_fusion(mask, ipt_probs)
    events = segments_to_events(fused)
    data.save_events(events, args.out)
    print(f"{len(events)} events -> {args.out}")
    return 0


def cmd_visualize(args) -> int:
    cfg, chash = _resolve_config(args)
    ckpt_dir = Path(args.checkpoints or cfg.checkpoint_dir)
    spec, mask, ipt_probs, fused = _infer_events(args.audio, ckpt_dir,
                                                 cfg.fusion_threshold,
                                                 min_gap=args.onset_min_gap)
    target = None
    if args.labels:
        events = data.load_events(args.labels)
        _, target = data.quantize_labels(events, spec.n_frames)
    fig = viz.render_pipeline_figure(
        spec.values,
        mask,
        ipt_probs.argmax(axis=0),
        fused.frame_classes(),
        target_classes=target,
    )
    viz.save_figure(fig, args.out, config_hash=chash, seed=cfg.seed)
    print(f"figure -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gztech",
        description="Guzheng playing-technique detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threshold=False, min_gap=False):
        p.add_argument("--config", help="JSON or TOML run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        if threshold:
            p.add_argument("--threshold", type=float,
                           help="onset decision threshold (default 0.5)")
        if min_gap:
            p.add_argument("--onset-min-gap", type=int, default=0,
                           help="suppress onsets closer than this many frames "
                                "after a kept one (0 = off)")

    p = sub.add_parser("generate", help="synthesize the clip pools and sequence corpus")
    common(p)
    p.add_argument("--out", help="corpus directory (default from config)")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train one detector")
    common(p)
    p.add_argument("detector", choices=["ipt", "onset"])
    p.add_argument("--corpus", help="corpus directory")
    p.add_argument("--checkpoints", help="checkpoint directory")
    p.add_argument("--no-skip", action="store_true",
                   help="drop the encoder-to-decoder skip connection")
    p.add_argument("--no-multi-shape", action="store_true",
                   help="use only 3x3 kernels in the onset detector's first layer")
    p.add_argument("--beta", type=float,
                   help="positive-class weight of the onset loss (1.0 = plain BCE)")
    p.add_argument("--cnn-ipt", action="store_true",
                   help="swap the FCN technique detector for the onset-style CNN")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score the test split")
    common(p, threshold=True)
    p.add_argument("--corpus", help="corpus directory")
    p.add_argument("--checkpoints", help="checkpoint directory")
    p.add_argument("--out", help="report path (default from config)")
    p.add_argument("--no-fusion", action="store_true",
                   help="score the raw per-frame argmax without onset fusion")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="detect technique events in one WAV")
    common(p, threshold=True, min_gap=True)
    p.add_argument("audio")
    p.add_argument("--checkpoints", help="checkpoint directory")
    p.add_argument("--out", help="output events.jsonl")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("fuse", help="fuse two probability files into events")
    common(p, threshold=True, min_gap=True)
    p.add_argument("onset_probs", help="JSON array [T] of onset probabilities")
    p.add_argument("ipt_probs", help="JSON array [n][T] of class probabilities")
    p.add_argument("--out", required=True, help="output events.jsonl")
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("visualize", help="render the stacked pipeline panels")
    common(p, threshold=True, min_gap=True)
    p.add_argument("audio")
    p.add_argument("--checkpoints", help="checkpoint directory")
    p.add_argument("--labels", help="events.jsonl with ground truth for a target panel")
    p.add_argument("--out", required=True, help="output PNG")
    p.set_defaults(fn=cmd_visualize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 2
    except (DivergenceError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def entry() -> None:  # console_scripts hook
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
