"""Semantic VAD frontend toolkit for full-duplex spoken dialogue.

Data synthesis, chunk labeling, the per-chunk token protocol, a rule-based
dialogue controller and the evaluation harness.
"""

from .errors import ConfigError, DataError, DuplexError, ProtocolViolation
from .audio import Waveform, read_wav, write_wav
from .tokens import ChunkEvent, TurnState, VadState, parse, serialize, validate_events
from .timestamps import RefineConfig, TimedTranscript, WordTiming, refine_transcript, refine_word
from .labeling import TargetEvent, TrainingSample, emit_training_sample, label_events, label_vad_chunks
from .scenarios import AssetPools, ScenarioConfig, generate_scenario, render_session
from .controller import (
    Action,
    ActionKind,
    ControllerConfig,
    ControllerState,
    FrontendOutput,
    controller_step,
    simulate_oracle,
    simulate_perturbed,
)
from .losses import LossInput, Losses, compute_losses
from .evaluation import edit_distance_wer, run_evaluation, vad_metrics
from .config import PipelineConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "Action", "ActionKind", "AssetPools", "ChunkEvent", "ConfigError", "ControllerConfig", "ControllerState",
    "DataError", "DuplexError", "FrontendOutput", "LossInput", "Losses", "PipelineConfig", "ProtocolViolation",
    "RefineConfig", "ScenarioConfig", "TargetEvent", "TimedTranscript", "TrainingSample", "TurnState",
    "VadState", "Waveform", "WordTiming", "compute_losses", "controller_step", "edit_distance_wer",
    "emit_training_sample", "generate_scenario", "label_events", "label_vad_chunks", "load_config", "parse",
    "read_wav", "refine_transcript", "refine_word", "render_session", "run_evaluation", "serialize",
    "simulate_oracle", "simulate_perturbed", "validate_events", "vad_metrics", "write_wav",
]
