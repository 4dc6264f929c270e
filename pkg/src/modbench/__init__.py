"""Missing-modality prediction engine: baseline paradigms, agent pipeline, and harness."""

__version__ = "0.1.0"
