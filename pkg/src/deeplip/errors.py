"""Exception hierarchy shared by every deeplip module."""


class DeepLipError(Exception):
    """Base class for all toolkit errors."""


# corpus
class ParseError(DeepLipError, ValueError):
    def __init__(self, message, path=None, line_no=None):
        self.path = path
        self.line_no = line_no
        where = ""
        if path is not None:
            where = f"{path}:{line_no}: " if line_no is not None else f"{path}: "
        super().__init__(where + message)


class MissingMedia(DeepLipError, FileNotFoundError):
    pass


class DuplicateUttId(DeepLipError, ValueError):
    pass


class OverlapError(DeepLipError, ValueError):
    pass


class EmptyPartition(DeepLipError, ValueError):
    pass


class InfeasibleTrials(DeepLipError, ValueError):
    pass


# features
class TooShort(DeepLipError, ValueError):
    pass


class MissingLandmarks(DeepLipError, ValueError):
    pass


class BadShape(DeepLipError, ValueError):
    pass


class CropOutOfBounds(UserWarning):
    """Warning: crop window left the frame and was edge-padded."""


# models and training
class ConfigError(DeepLipError, ValueError):
    pass


class DataError(DeepLipError, ValueError):
    pass


class BadLabel(DeepLipError, ValueError):
    pass


class MissingCheckpoint(DeepLipError, FileNotFoundError):
    pass


# backends
class InsufficientData(DeepLipError, ValueError):
    pass


class RankTooHigh(DeepLipError, ValueError):
    pass


class ModelNotTrained(DeepLipError, RuntimeError):
    pass


class EmptyData(DeepLipError, ValueError):
    pass


class ShapeMismatch(DeepLipError, ValueError):
    pass


class DegenerateComponent(UserWarning):
    """Warning: a GMM component lost all its mass and was re-seeded."""


# evaluation
class ZeroVector(DeepLipError, ValueError):
    pass


class MissingStream(DeepLipError, KeyError):
    pass


class MissingEmbedding(DeepLipError, KeyError):
    def __init__(self, utt_id, stream=None):
        self.utt_id = utt_id
        self.stream = stream
        msg = f"no embedding for utterance {utt_id!r}"
        if stream:
            msg += f" (stream {stream!r})"
        super().__init__(msg)

    def __str__(self):
        return self.args[0]


class TrialMismatch(DeepLipError, ValueError):
    pass


class OneClassOnly(DeepLipError, ValueError):
    pass
