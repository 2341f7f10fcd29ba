"""Exception types.

Every error carries the name of the module that raised it so the CLI can
print a category-coded message and pick an exit status.
"""


class SceneCtxError(Exception):
    module = "scenectx"
    exit_code = 1

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class UsageError(SceneCtxError, ValueError):
    exit_code = 2

    def __init__(self, message, module="cli"):
        super().__init__(message)
        self.module = module


class DomainError(SceneCtxError, ValueError):
    module = "scene_lang"
    exit_code = 3


class LookupFailure(SceneCtxError, KeyError):
    """Unknown category name."""

    module = "scene_lang"
    exit_code = 3

    def __str__(self):
        return f"[{self.module}] {self.args[0]}"


class DecodeError(SceneCtxError, ValueError):
    module = "scene_lang"
    exit_code = 3


class ParseError(SceneCtxError, ValueError):
    module = "corpus"
    exit_code = 3


class IntegrityError(SceneCtxError, ValueError):
    module = "corpus"
    exit_code = 3


class LengthError(SceneCtxError, ValueError):
    module = "model"
    exit_code = 4


class CheckpointError(SceneCtxError, IOError):
    module = "model"
    exit_code = 4


class ScoringError(SceneCtxError, ValueError):
    module = "scorer"
    exit_code = 5


class AttackInfeasible(SceneCtxError, ValueError):
    module = "attacks"
    exit_code = 6


class GenerationError(SceneCtxError, RuntimeError):
    module = "attacks"
    exit_code = 6

    def __init__(self, message, achieved):
        super().__init__(message)
        self.achieved = achieved
