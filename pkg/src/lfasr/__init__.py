"""Model-free decoding and scoring toolkit for long-form ASR with diarization."""

__version__ = "0.1.0"
