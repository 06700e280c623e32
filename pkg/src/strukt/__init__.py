"""Music structure analysis with temporally adapted (hop-scaled) inputs."""

from .annotations import ActivationTargets, Segment, SegmentTrack, Vocabulary, parse_segments, targets_from_track
from .audio import AudioClip, SongSpec, crop_window, load_wav, random_crop, synthesize_song
from .frontend import FrontendConfig, MelGram, mel_filterbank, melgram, stft_power
from .losses import LossReport, LossWeights
from .metrics import MetricsReport, evaluate_song, frame_accuracy, hit_rate_f
from .model import StruktModel
from .postprocess import PeakPickConfig, peak_pick, reconstruct_track

__version__ = "0.1.0"

__all__ = [
    "ActivationTargets", "Segment", "SegmentTrack", "Vocabulary", "parse_segments", "targets_from_track",
    "AudioClip", "SongSpec", "crop_window", "load_wav", "random_crop", "synthesize_song",
    "FrontendConfig", "MelGram", "mel_filterbank", "melgram", "stft_power",
    "LossReport", "LossWeights",
    "MetricsReport", "evaluate_song", "frame_accuracy", "hit_rate_f",
    "StruktModel",
    "PeakPickConfig", "peak_pick", "reconstruct_track",
]
