"""Context-mixing analysis for speech transformers (Python front end)."""

from ._ctxmix import (  # noqa: F401
    Error,
    Model,
    ModelSpec,
    Utterance,
    ablate,
    cue_profile,
    encoder_forward,
    load_dataset,
    load_model,
    probe,
    render_heatmap,
    scores,
    synth,
    time_to_frame,
    transcribe,
    utterance,
)

__all__ = [name for name in dir() if not name.startswith("_")]
