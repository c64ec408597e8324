"""Exception hierarchy shared by the library and the CLI."""


class CdsmError(Exception):
    exit_code = 1


class ConfigError(CdsmError, ValueError):
    exit_code = 2


class ShapeError(CdsmError, ValueError):
    exit_code = 2


class MissingInputError(CdsmError, FileNotFoundError):
    exit_code = 3


class FingerprintMismatch(CdsmError):
    exit_code = 4


class UnknownCharacter(CdsmError, KeyError):
    exit_code = 5

    def __str__(self):
        return self.args[0] if self.args else "unknown character"


class InsufficientImages(CdsmError):
    exit_code = 6


class ProjectionError(CdsmError):
    exit_code = 7


class TrainingDiverged(CdsmError):
    exit_code = 8

    def __init__(self, message, last_good=None, step=None):
        super().__init__(message)
        self.last_good = last_good
        self.step = step


class SelfcheckFailed(CdsmError):
    exit_code = 9
