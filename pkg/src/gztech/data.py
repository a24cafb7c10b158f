"""Clip data model, synthetic technique clips, and sequence assembly.

Real Guzheng sound banks are proprietary, so the corpus here is synthetic:
each of the eight playing techniques is rendered as a decaying plucked tone
whose pitch/amplitude trajectory realizes the technique (vibrato wobbles the
fundamental, portamento glides it, tremolo re-attacks the envelope, ...).
The acoustic definitions are contracts checked by signal-level oracles in
the tests, not attempts to imitate real timbre.

Sequences are built by concatenating clips with a 50 ms linear cross-fade
per boundary, then quantizing the event times onto the 0.05 s frame grid.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, AudioBuffer, read_wav, write_wav
from .errors import ValidationError

FRAME_DURATION = 0.05
CROSSFADE = 0.05
MIN_SEQUENCE_LEN = 12.8
TRAIN_FRAMES = 256


class TechniqueClass(IntEnum):
    """The eight playing techniques; ids are stable across the whole system."""

    vibrato = 0
    up_portamento = 1
    down_portamento = 2
    return_portamento = 3
    glissando = 4
    tremolo = 5
    harmonic = 6
    plucks = 7


@dataclass
class Clip:
    """A single-technique audio clip."""

    audio: AudioBuffer
    technique: TechniqueClass

    def __post_init__(self):
        if not 0.3 <= self.duration <= 15.0:
            raise ValidationError(f"clip duration {self.duration:.3f}s outside [0.3, 15.0]")

    @property
    def duration(self) -> float:
        return self.audio.duration

    @property
    def n_samples(self) -> int:
        return self.audio.samples.size


@dataclass
class NoteEvent:
    onset: float
    offset: float
    technique: TechniqueClass

    def __post_init__(self):
        if not 0.0 <= self.onset < self.offset:
            raise ValidationError(
                f"invalid event times: onset {self.onset}, offset {self.offset}"
            )


@dataclass
class SequenceExample:
    """One concatenated sequence: audio, its note events, and frame labels."""

    audio: AudioBuffer
    events: list[NoteEvent]
    onset_labels: np.ndarray  # uint8 [T], one 1 per event
    ipt_labels: np.ndarray  # uint8 [T], technique id of the covering event

    def __post_init__(self):
        self.onset_labels = np.asarray(self.onset_labels, dtype=np.uint8)
        self.ipt_labels = np.asarray(self.ipt_labels, dtype=np.uint8)
        if self.onset_labels.shape != self.ipt_labels.shape:
            raise ValidationError("onset and technique labels must have equal length")
        for prev, cur in zip(self.events, self.events[1:]):
            if cur.onset < prev.offset - 1e-9:
                raise ValidationError("events overlap or are unsorted")
        if int(self.onset_labels.sum()) != len(self.events):
            raise ValidationError("expected exactly one onset label per event")

    @property
    def n_frames(self) -> int:
        return self.onset_labels.size

    @property
    def duration(self) -> float:
        return self.audio.duration


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------

_PENTATONIC = (0, 2, 4, 7, 9)  # semitone steps within one octave


def _tone(freq_hz: np.ndarray, envelope: np.ndarray, rng: np.random.Generator,
          n_harmonics: int = 6, brightness: float = 1.4) -> np.ndarray:
    """Additive harmonic tone following a per-sample frequency trajectory.

    Higher harmonics decay faster, as on a plucked string. Harmonics that
    would alias (beyond 0.45 * sample rate) are dropped.
    """
    n = freq_hz.size
    t = np.arange(n) / SAMPLE_RATE
    phase = 2.0 * np.pi * np.cumsum(freq_hz) / SAMPLE_RATE
    f_max = float(freq_hz.max())
    out = np.zeros(n)
    for k in range(1, n_harmonics + 1):
        if k * f_max >= 0.45 * SAMPLE_RATE:
            break
        amp = k ** (-brightness)
        decay = np.exp(-(k - 1) * 1.5 * t)  # upper partials die off sooner
        out += amp * decay * np.sin(k * phase + rng.uniform(0.0, 2.0 * np.pi))
    return out * envelope


def _attack_decay(n: int, attack_s: float, tau_s: float) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    rise = np.minimum(t / max(attack_s, 1e-4), 1.0)
    return rise * np.exp(-t / tau_s)


def _glide(n: int, rise_from: float, rise_to: float) -> np.ndarray:
    """Smooth monotone 0->1 between the given fractions of the clip."""
    t = np.linspace(0.0, 1.0, n)
    u = np.clip((t - rise_from) / (rise_to - rise_from), 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)  # smoothstep


def synth_clip(technique: TechniqueClass, f0: float, duration: float,
               rng: np.random.Generator) -> Clip:
    """Render one synthetic clip of the given technique.

    f0 must lie in [60, 1200] Hz and duration in [0.5, 3.0] s. The returned
    clip peaks somewhere in [0.55, 0.85] full scale.
    """
    if not 60.0 <= f0 <= 1200.0:
        raise ValidationError(f"f0 {f0} Hz outside [60, 1200]")
    if not 0.5 <= duration <= 3.0:
        raise ValidationError(f"duration {duration} s outside [0.5, 3.0]")

    n = int(round(duration * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    const_f0 = np.full(n, f0)
    technique = TechniqueClass(technique)

    if technique == TechniqueClass.plucks:
        env = _attack_decay(n, 0.005, rng.uniform(0.4, 0.8))
        sig = _tone(const_f0, env, rng)

    elif technique == TechniqueClass.vibrato:
        rate = rng.uniform(4.5, 6.5)  # Hz
        depth_cents = rng.uniform(70.0, 120.0)
        wobble = depth_cents * np.sin(2.0 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
        freq = f0 * 2.0 ** (wobble / 1200.0)
        env = _attack_decay(n, 0.005, rng.uniform(0.9, 1.5))
        sig = _tone(freq, env, rng)

    elif technique in (TechniqueClass.up_portamento, TechniqueClass.down_portamento):
        semis = rng.uniform(2.5, 4.0)  # at most a major third
        if technique == TechniqueClass.down_portamento:
            semis = -semis
        freq = f0 * 2.0 ** (semis * _glide(n, 0.05, 0.95) / 12.0)
        env = _attack_decay(n, 0.005, rng.uniform(0.8, 1.4))
        sig = _tone(freq, env, rng)

    elif technique == TechniqueClass.return_portamento:
        semis = rng.uniform(2.5, 4.0)
        up = _glide(n, 0.05, 0.48)
        down = _glide(n, 0.52, 0.95)
        freq = f0 * 2.0 ** (semis * (up - down) / 12.0)
        env = _attack_decay(n, 0.005, rng.uniform(0.8, 1.4))
        sig = _tone(freq, env, rng)

    elif technique == TechniqueClass.glissando:
        n_notes = max(5, int(round(duration / 0.15)))
        direction = 1 if rng.random() < 0.5 else -1
        ladder = [_PENTATONIC[i % 5] + 12 * (i // 5) for i in range(n_notes)]
        sig = np.zeros(n)
        note_len = n // n_notes
        for i, step in enumerate(ladder):
            start = i * note_len
            stop = n if i == n_notes - 1 else start + note_len
            m = stop - start
            note_f0 = float(np.clip(f0 * 2.0 ** (direction * step / 12.0), 40.0, 4000.0))
            env = _attack_decay(m, 0.003, 0.25)
            sig[start:stop] = _tone(np.full(m, note_f0), env, rng, n_harmonics=4)

    elif technique == TechniqueClass.tremolo:
        rate = rng.uniform(9.0, 13.0)  # re-attacks per second
        period = 1.0 / rate
        env = _attack_decay(n, 0.003, rng.uniform(0.8, 1.3))
        phase_in_stroke = np.mod(t, period)
        stroke = np.minimum(phase_in_stroke / 0.003, 1.0) * np.exp(-phase_in_stroke / (0.5 * period))
        sig = _tone(const_f0, env * stroke, rng)

    elif technique == TechniqueClass.harmonic:
        # Flageolet-like: the octave partial alone, dying quickly.
        env = _attack_decay(n, 0.004, rng.uniform(0.22, 0.38))
        sig = _tone(2.0 * const_f0, env, rng, n_harmonics=2, brightness=3.0)

    else:  # pragma: no cover - exhaustive over the enum
        raise ValidationError(f"unknown technique {technique!r}")

    peak = float(np.max(np.abs(sig)))
    if peak > 0:
        sig = sig * (rng.uniform(0.55, 0.85) / peak)
    return Clip(audio=AudioBuffer(samples=sig), technique=technique)


# ---------------------------------------------------------------------------
# Sequence assembly
# ---------------------------------------------------------------------------

def quantize_labels(events: list[NoteEvent], n_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Quantize event times onto the 0.05 s frame grid.

    onset_labels[floor(onset/0.05)] = 1, one frame per event. Every frame
    between consecutive onsets belongs to the earlier event, so ipt_labels
    partition [0, n_frames) with no unlabeled frames. Leading frames before
    the first onset frame take the first event's class.
    """
    if n_frames < 1:
        raise ValidationError("n_frames must be >= 1")
    if not events:
        raise ValidationError("cannot quantize an empty event list")
    onset_labels = np.zeros(n_frames, dtype=np.uint8)
    ipt_labels = np.zeros(n_frames, dtype=np.uint8)
    horizon = n_frames * FRAME_DURATION
    frames = []
    for prev, cur in zip(events, events[1:]):
        if cur.onset < prev.offset - 1e-9:
            raise ValidationError("overlapping events cannot be quantized")
    for ev in events:
        if ev.onset < 0 or ev.onset >= horizon:
            raise ValidationError(
                f"event onset {ev.onset:.4f}s outside the labeled span [0, {horizon:.4f})"
            )
        k = math.floor(ev.onset / FRAME_DURATION)
        if onset_labels[k]:
            raise ValidationError(f"two events quantize to the same frame {k}")
        onset_labels[k] = 1
        frames.append(k)
    for i, (k, ev) in enumerate(zip(frames, events)):
        stop = frames[i + 1] if i + 1 < len(frames) else n_frames
        ipt_labels[k:stop] = int(ev.technique)
    ipt_labels[: frames[0]] = int(events[0].technique)
    return onset_labels, ipt_labels


def concat_clips(clips: list[Clip], crossfade: float = CROSSFADE,
                 min_len: float = MIN_SEQUENCE_LEN) -> SequenceExample:
    """Concatenate clips into one sequence with linear cross-fades.

    Adjacent clips overlap by `crossfade` seconds (fade-out against fade-in,
    summing to 1), so k clips lose exactly (k-1)*crossfade of total length.
    Each clip contributes one event whose onset is the start of its
    cross-fade; events partition the sequence.
    """
    if not clips:
        raise ValidationError("no clips to concatenate")
    xf = int(round(crossfade * SAMPLE_RATE))
    for c in clips:
        if c.n_samples < 2 * xf:
            raise ValidationError(
                f"clip of {c.duration:.3f}s is shorter than two cross-fades"
            )
    total = sum(c.n_samples for c in clips) - (len(clips) - 1) * xf
    if total / SAMPLE_RATE <= min_len:
        raise ValidationError(
            f"concatenated duration {total / SAMPLE_RATE:.2f}s does not exceed {min_len}s"
        )

    fade_in = np.arange(xf) / xf
    fade_out = 1.0 - fade_in
    out = np.zeros(total)
    starts = []
    pos = 0
    for i, c in enumerate(clips):
        samples = c.audio.samples.copy()
        if i > 0:
            samples[:xf] *= fade_in
        if i < len(clips) - 1:
            samples[-xf:] *= fade_out
        out[pos : pos + samples.size] += samples
        starts.append(pos)
        pos += samples.size - xf

    onsets = [s / SAMPLE_RATE for s in starts]
    duration = total / SAMPLE_RATE
    events = []
    for i, c in enumerate(clips):
        offset = onsets[i + 1] if i + 1 < len(clips) else duration
        events.append(NoteEvent(onset=onsets[i], offset=offset, technique=c.technique))

    n_frames = total // int(round(FRAME_DURATION * SAMPLE_RATE))
    onset_labels, ipt_labels = quantize_labels(events, n_frames)
    return SequenceExample(
        audio=AudioBuffer(samples=out),
        events=events,
        onset_labels=onset_labels,
        ipt_labels=ipt_labels,
    )


def truncate_example(ex: SequenceExample, seconds: float = MIN_SEQUENCE_LEN) -> SequenceExample:
    """Cut a sequence to exactly `seconds`, dropping/clamping late events."""
    n_samples = int(round(seconds * SAMPLE_RATE))
    n_frames = int(round(seconds / FRAME_DURATION))
    if ex.audio.samples.size < n_samples:
        raise ValidationError("sequence shorter than the truncation target")
    events = [
        NoteEvent(ev.onset, min(ev.offset, seconds), ev.technique)
        for ev in ex.events
        if ev.onset < seconds - 1e-12
    ]
    return SequenceExample(
        audio=AudioBuffer(samples=ex.audio.samples[:n_samples].copy()),
        events=events,
        onset_labels=ex.onset_labels[:n_frames].copy(),
        ipt_labels=ex.ipt_labels[:n_frames].copy(),
    )


def generate_split(pool: list[Clip], count: int, mode: str,
                   rng: np.random.Generator, crossfade: float = CROSSFADE,
                   min_len: float = MIN_SEQUENCE_LEN) -> list[SequenceExample]:
    """Generate `count` unique sequences by random concatenation.

    Each sequence draws clips from the pool without replacement (a shuffled
    prefix) until the cross-faded length exceeds `min_len`. 'train' sequences
    are then cut to exactly 12.8 s (256 frames); 'test' sequences keep their
    full variable length. No two sequences share a clip-order signature.
    """
    if mode not in ("train", "test"):
        raise ValidationError(f"mode must be 'train' or 'test', got {mode!r}")
    if not pool:
        raise ValidationError("clip pool is empty")
    if count < 1:
        raise ValidationError("count must be >= 1")

    seen: set[tuple[int, ...]] = set()
    out: list[SequenceExample] = []
    attempts_left = 200 * count + 1000
    while len(out) < count:
        if attempts_left <= 0:
            raise ValidationError(
                f"requested {count} sequences but only {len(seen)} distinct "
                "clip orderings could be generated from this pool"
            )
        attempts_left -= 1
        order = rng.permutation(len(pool))
        signature: list[int] = []
        cum = 0.0
        for idx in order:
            signature.append(int(idx))
            cum += pool[idx].duration
            if cum - (len(signature) - 1) * crossfade > min_len:
                break
        else:
            raise ValidationError(
                f"clip pool too short: even all {len(pool)} clips cross-faded "
                f"together do not exceed {min_len}s"
            )
        key = tuple(signature)
        if key in seen:
            continue
        seen.add(key)
        ex = concat_clips([pool[i] for i in signature], crossfade, min_len)
        if mode == "train":
            ex = truncate_example(ex, min_len)
        out.append(ex)
    return out


# ---------------------------------------------------------------------------
# On-disk formats
# ---------------------------------------------------------------------------

def save_events(events: list[NoteEvent], path) -> None:
    """One JSON record per line: onset_s, offset_s, technique (by name)."""
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps({
                "onset_s": ev.onset,
                "offset_s": ev.offset,
                "technique": ev.technique.name,
            }, sort_keys=True) + "\n")


def load_events(path) -> list[NoteEvent]:
    events = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            events.append(NoteEvent(
                onset=float(rec["onset_s"]),
                offset=float(rec["offset_s"]),
                technique=TechniqueClass[rec["technique"]],
            ))
    return events


def save_labels(onset_labels: np.ndarray, ipt_labels: np.ndarray, path) -> None:
    """Binary label cache: little-endian u32 T, then T onset bytes, T class bytes."""
    t = onset_labels.size
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", t))
        fh.write(onset_labels.astype(np.uint8).tobytes())
        fh.write(ipt_labels.astype(np.uint8).tobytes())


def load_labels(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        (t,) = struct.unpack("<I", fh.read(4))
        onset = np.frombuffer(fh.read(t), dtype=np.uint8).copy()
        ipt = np.frombuffer(fh.read(t), dtype=np.uint8).copy()
    if onset.size != t or ipt.size != t:
        raise ValidationError(f"truncated label file {path}")
    return onset, ipt


def save_sequence(ex: SequenceExample, wav_path) -> None:
    """WAV plus `.events.jsonl` and `.labels.bin` sidecars."""
    wav_path = Path(wav_path)
    write_wav(wav_path, ex.audio)
    save_events(ex.events, wav_path.with_suffix(".events.jsonl"))
    save_labels(ex.onset_labels, ex.ipt_labels, wav_path.with_suffix(".labels.bin"))


def load_sequence(wav_path) -> SequenceExample:
    wav_path = Path(wav_path)
    audio = read_wav(wav_path)
    events = load_events(wav_path.with_suffix(".events.jsonl"))
    labels_path = wav_path.with_suffix(".labels.bin")
    if labels_path.exists():
        onset_labels, ipt_labels = load_labels(labels_path)
    else:
        n_frames = audio.samples.size // int(round(FRAME_DURATION * SAMPLE_RATE))
        onset_labels, ipt_labels = quantize_labels(events, n_frames)
    return SequenceExample(audio=audio, events=events,
                           onset_labels=onset_labels, ipt_labels=ipt_labels)


def save_clip_pool(clips: list[Clip], directory) -> None:
    """Directory of WAVs plus a manifest.jsonl (file, technique, duration)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "manifest.jsonl", "w") as fh:
        for i, clip in enumerate(clips):
            name = f"clip_{i:04d}.wav"
            write_wav(directory / name, clip.audio)
            fh.write(json.dumps({
                "file": name,
                "technique": clip.technique.name,
                "duration": clip.duration,
            }, sort_keys=True) + "\n")


def load_clip_pool(directory) -> list[Clip]:
    directory = Path(directory)
    clips = []
    with open(directory / "manifest.jsonl") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            audio = read_wav(directory / rec["file"])
            clips.append(Clip(audio=audio, technique=TechniqueClass[rec["technique"]]))
    return clips
