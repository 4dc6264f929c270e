"""Model sidecar: HTTP microservice for generation, embedding, and heavy metrics."""

__version__ = "0.1.0"
