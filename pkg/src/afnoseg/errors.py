"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or shape contract, detected before any compute."""


class InputError(ValueError):
    """Structurally valid call with semantically invalid data (labels, probabilities)."""


class FormatError(ValueError):
    """Malformed or internally inconsistent on-disk artifact."""


class DivergenceError(RuntimeError):
    """Training aborted because the loss became non-finite."""

    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value
