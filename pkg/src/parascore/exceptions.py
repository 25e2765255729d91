"""Exception types shared across the package."""


class ParascoreError(Exception):
    """Base class for package-specific failures."""


class ValidationError(ParascoreError):
    """Bad user input: config values, CLI flags, malformed files."""


class TrainingDivergedError(ParascoreError):
    """Non-finite loss or gradients encountered during optimization."""

    def __init__(self, message, block_index=None, update=None):
        super().__init__(message)
        self.block_index = block_index
        self.update = update


class IntegrationBlowupError(ParascoreError):
    """Integration state became non-finite."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class PartitionRunError(ParascoreError):
    """One or more block jobs failed; the manifest flags the failed blocks."""

    def __init__(self, message, failed_blocks=()):
        super().__init__(message)
        self.failed_blocks = tuple(failed_blocks)
