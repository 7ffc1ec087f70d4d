"""Pair generation by audio time-shifting and adaptive impostor selection.

Genuine pairs couple a visual cube with the time-aligned audio window of the
same clip; impostors reuse the visual cube but draw the audio window at a
random forward shift (quantized to the 20 ms feature hop, 0.5 s at most by
default). Streams are never wrapped.

During training, every mini-batch is first evaluated with frozen weights;
all genuine pairs are kept and an impostor survives only if its distance is
within an adaptive margin of the hardest genuine distance:

    eta = eta0 * |max_gen / min_gen|,  keep impostor i iff d_i <= max_gen + eta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .speech import AudioClip, SpeechConfig, SpeechCube, build_speech_cube
from .visual import FRAME_COUNT, VisualCube, build_visual_cube

FEATURE_HOP_S = 0.02
WINDOW_S = 0.3
MIN_GEN_EPS = 1e-12


@dataclass
class SelectionConfig:
    eta0: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ConfigError("eta0 must be > 0")


@dataclass
class Clip:
    subject_id: str
    clip_id: str
    audio: AudioClip
    frames: list          # grayscale arrays at a fixed frame rate
    fps: float = 30.0


@dataclass
class LabeledPair:
    speech: SpeechCube
    visual: VisualCube
    label: int            # 1 genuine, 0 impostor
    subject_id: str
    shift_s: float = 0.0

    def __post_init__(self):
        if self.label == 1 and self.shift_s != 0.0:
            raise ContractError("genuine pairs must have zero shift")
        if self.label == 0 and self.shift_s <= 0.0:
            raise ContractError("impostor pairs need a positive shift")


@dataclass
class PairConfig:
    max_shift_s: float = 0.5
    min_shift_s: float = 0.1
    impostor_ratio: float = 1.0   # impostors per genuine window
    window_stride_s: float = 0.3  # spacing of genuine windows inside a clip
    fixed_shift_s: float | None = None  # pin all impostor shifts (test-set replicas)
    speech: SpeechConfig = field(default_factory=SpeechConfig)

    def __post_init__(self):
        hop = FEATURE_HOP_S
        if self.min_shift_s < hop:
            raise ConfigError(f"min shift must be at least one feature hop ({hop} s)")
        if self.max_shift_s < self.min_shift_s:
            raise ConfigError("max shift must be >= min shift")
        if self.fixed_shift_s is not None and not (
                self.min_shift_s <= self.fixed_shift_s <= self.max_shift_s):
            raise ConfigError("fixed shift outside [min, max] shift range")
        if self.impostor_ratio < 0:
            raise ConfigError("impostor ratio must be >= 0")


@dataclass
class PairGenStats:
    genuine: int = 0
    impostor: int = 0
    skipped: int = 0      # windows whose shifted audio did not fit


def _shift_choices(cfg: PairConfig):
    lo = int(np.ceil(round(cfg.min_shift_s / FEATURE_HOP_S, 9)))
    hi = int(np.floor(round(cfg.max_shift_s / FEATURE_HOP_S, 9)))
    return lo, hi


def generate_pairs(clips, cfg: PairConfig | None = None, seed: int = 0):
    """Produce labeled pairs from aligned clips.

    Returns (pairs, stats). Window starts advance by ``window_stride_s`` from
    zero; each start yields one genuine pair plus ``impostor_ratio`` impostors
    whose shifts are drawn uniformly over whole feature hops in
    [min_shift_s, max_shift_s]. Deterministic for a given seed.
    """
    cfg = cfg or PairConfig()
    lo_hop, hi_hop = _shift_choices(cfg)
    pairs: list[LabeledPair] = []
    stats = PairGenStats()

    for clip_idx, clip in enumerate(clips):
        rng = np.random.default_rng([seed, clip_idx])
        video_dur = len(clip.frames) / clip.fps
        audio_dur = clip.audio.duration_s
        start = 0.0
        while start + WINDOW_S <= min(video_dur, audio_dur) + 1e-9:
            frame_start = int(round(start * clip.fps))
            if frame_start + FRAME_COUNT > len(clip.frames):
                break
            visual = build_visual_cube(clip.frames, start=frame_start, clip_id=clip.clip_id)
            speech = build_speech_cube(clip.audio.window(start, WINDOW_S), cfg.speech,
                                       clip_id=clip.clip_id, start_s=start)
            pairs.append(LabeledPair(speech, visual, 1, clip.subject_id, 0.0))
            stats.genuine += 1

            n_imp = int(round(cfg.impostor_ratio))
            for _ in range(n_imp):
                if cfg.fixed_shift_s is not None:
                    shift = round(cfg.fixed_shift_s / FEATURE_HOP_S) * FEATURE_HOP_S
                else:
                    shift = int(rng.integers(lo_hop, hi_hop + 1)) * FEATURE_HOP_S
                if start + shift + WINDOW_S > audio_dur + 1e-9:
                    stats.skipped += 1
                    continue
                shifted = build_speech_cube(clip.audio.window(start + shift, WINDOW_S),
                                            cfg.speech, clip_id=clip.clip_id,
                                            start_s=start + shift)
                pairs.append(LabeledPair(shifted, visual, 0, clip.subject_id, shift))
                stats.impostor += 1
            start = round(start + cfg.window_stride_s, 9)

    if not pairs:
        raise DataError("no pairs could be generated; clips too short?")
    return pairs, stats


def adaptive_threshold(genuine_distances, eta0: float) -> float:
    """eta = eta0 * |max_gen / min_gen| with the minimum guarded away from zero."""
    d = np.asarray(genuine_distances, dtype=np.float64)
    if d.size == 0:
        raise ContractError("adaptive threshold needs at least one genuine distance")
    max_gen = float(d.max())
    min_gen = max(float(d.min()), MIN_GEN_EPS)
    return eta0 * abs(max_gen / min_gen)


def select_impostors(genuine_distances, impostor_distances, eta0: float) -> np.ndarray:
    """Indices of impostors kept for the loss: d_i <= max_gen + eta.

    Genuine pairs are always kept and are not part of the returned index set.
    With no genuine distances in the batch, selection is skipped and every
    impostor is kept.
    """
    imp = np.asarray(impostor_distances, dtype=np.float64)
    gen = np.asarray(genuine_distances, dtype=np.float64)
    if gen.size == 0:
        return np.arange(imp.size)
    eta = adaptive_threshold(gen, eta0)
    return np.flatnonzero(imp <= gen.max() + eta)
