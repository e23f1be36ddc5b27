"""Error types shared across the toolkit.

``MtiError`` covers everything caused by bad user input (files, configs,
label ranges); the CLI maps it to exit code 2. Anything else escaping to
the CLI is treated as an internal failure (exit code 3).
"""


class MtiError(Exception):
    """A user-facing error: bad input, bad config, bad file."""


class AudioError(MtiError):
    """Unreadable or unsupported audio input."""


class ManifestError(MtiError):
    """Malformed manifest file or record."""


class FeatureError(MtiError):
    """Invalid feature-extraction input or configuration."""


class MetricError(MtiError):
    """Metric undefined for the given inputs."""


class EmbeddingFormatError(MtiError):
    """Malformed embedding interchange file."""


class BadMagicError(EmbeddingFormatError):
    """File does not start with the expected magic."""


class UnsupportedVersionError(EmbeddingFormatError):
    """File declares a format version this reader does not support."""


class TruncatedFileError(EmbeddingFormatError):
    """File ends before the declared payload is complete."""


class ModelError(MtiError):
    """Invalid model configuration or input/model shape mismatch."""


class CheckpointError(MtiError):
    """Malformed checkpoint or incompatible checkpoint contents."""


class ConfigError(MtiError):
    """Invalid configuration value or file."""


class TrainingError(MtiError):
    """Invalid training inputs or configuration."""


class NonFiniteGradientError(RuntimeError):
    """A gradient tensor went non-finite during training (internal)."""

    def __init__(self, tensor_name: str):
        super().__init__(f"non-finite gradient in tensor '{tensor_name}'")
        self.tensor_name = tensor_name
