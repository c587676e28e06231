"""Exception hierarchy shared across the package."""


class LipGANError(Exception):
    """Base class for all package errors."""


class DecodeError(LipGANError):
    pass


class EncodeError(LipGANError):
    pass


class NoFaceError(LipGANError):
    def __init__(self, frame_indices, message=None):
        if isinstance(frame_indices, int):
            frame_indices = [frame_indices]
        self.frame_indices = list(frame_indices)
        super().__init__(message or f"no face detected in frame(s) {self.frame_indices}")


class ConfigError(LipGANError):
    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message)


class ShapeError(LipGANError, ValueError):
    pass


class SamplingError(LipGANError):
    pass


class TrainingError(LipGANError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class MetricError(LipGANError, ValueError):
    pass


class StageError(LipGANError):
    def __init__(self, stage, message, exit_code=None, diagnostics=None):
        self.stage = stage
        self.exit_code = exit_code
        self.diagnostics = diagnostics or {}
        super().__init__(f"stage {stage!r} failed: {message}")
