"""aci: a real-time conversational-intelligence engine for call-center
transcripts: refinement, entities, intents, business rules, analytics,
search, and a streaming service layer."""

from .events import (
    CallEvent,
    DecodeError,
    EntityMatch,
    IntentMatch,
    Speaker,
    StreamViolation,
    Utterance,
    Word,
    decode_event,
    encode_event,
    validate_stream,
)
from .ingest import ReplayClock, TranscriptFile, load_transcript, replay
from .pipeline import CallPipeline, Engine, PipelineConfig

__version__ = "0.1.0"

__all__ = [
    "CallEvent",
    "CallPipeline",
    "DecodeError",
    "Engine",
    "EntityMatch",
    "IntentMatch",
    "PipelineConfig",
    "ReplayClock",
    "Speaker",
    "StreamViolation",
    "TranscriptFile",
    "Utterance",
    "Word",
    "decode_event",
    "encode_event",
    "load_transcript",
    "replay",
    "validate_stream",
    "__version__",
]
