"""Exception types shared across the package."""


class PoseChatError(Exception):
    """Base class for all library errors."""


class DegenerateInput(PoseChatError):
    """6D rotation input with zero or parallel columns."""


class ParseError(PoseChatError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TopologyError(PoseChatError):
    """Kinematic tree violates topological ordering."""

    def __init__(self, joint, message=None):
        super().__init__(message or f"joint {joint}")
        self.joint = joint


class AmbiguousQuery(PoseChatError):
    """Attribute query matches zero or more than one person."""


class ConfigError(PoseChatError):
    pass


class EmptyCorpus(PoseChatError):
    pass


class SequenceTooLong(PoseChatError):
    pass


class MissingPoseToken(PoseChatError):
    pass


class MultiplePoseTokens(PoseChatError):
    pass


class DegenerateGeometry(PoseChatError):
    """Ground-truth joints collapse to a point; Procrustes undefined."""


class SizeMismatch(PoseChatError):
    pass


class VocabMismatch(PoseChatError):
    pass


class NanLoss(PoseChatError):
    def __init__(self, step):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
