class RedboostError(Exception):
    """Base class for library errors."""


class ParseError(RedboostError):
    """Malformed input file; the message carries ``path:line``."""


class ValidationError(RedboostError):
    """Input is well-formed but violates a data contract."""


class ConfigError(RedboostError):
    """Invalid configuration value or combination."""


class TrainingDiverged(RedboostError):
    def __init__(self, message, params=None, epoch=None):
        super().__init__(message)
        self.params = params
        self.epoch = epoch


class CheckpointError(RedboostError):
    pass
