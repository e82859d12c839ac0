"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and the CLI exit status
it maps to (2 usage, 3 data, 4 numerical).
"""


class RNAForgeError(Exception):
    code = "ERROR"
    exit_status = 3


class StructureError(RNAForgeError, ValueError):
    code = "BAD_STRUCTURE"


class UnbalancedBrackets(StructureError):
    code = "UNBALANCED_BRACKETS"


class IllegalCharacter(StructureError):
    code = "ILLEGAL_CHARACTER"


class HairpinTooSmall(StructureError):
    code = "HAIRPIN_TOO_SMALL"


class LengthMismatch(RNAForgeError, ValueError):
    code = "LENGTH_MISMATCH"


class InputTooLong(RNAForgeError, ValueError):
    code = "INPUT_TOO_LONG"


class EmptyTestSet(RNAForgeError, ValueError):
    code = "EMPTY_TESTSET"


class InvalidSequence(RNAForgeError, ValueError):
    code = "INVALID_SEQUENCE"


class InvalidDesign(RNAForgeError, ValueError):
    code = "INVALID_DESIGN"


class ParamsError(RNAForgeError, ValueError):
    code = "PARAMS_ERROR"


class ParseError(ParamsError):
    code = "PARSE_ERROR"


class UnknownKey(ParamsError):
    code = "UNKNOWN_KEY"


class MissingPairType(ParamsError):
    code = "MISSING_PAIR_TYPE"


class TooLong(RNAForgeError, ValueError):
    code = "TOO_LONG"


class EvaluationFailed(RNAForgeError, ArithmeticError):
    code = "EVALUATION_FAILED"
    exit_status = 4


class ContextOverflow(RNAForgeError, ValueError):
    code = "CONTEXT_OVERFLOW"


class CheckpointError(RNAForgeError, IOError):
    code = "CHECKPOINT_ERROR"


class BadMagic(CheckpointError):
    code = "BAD_MAGIC"


class VersionMismatch(CheckpointError):
    code = "VERSION_MISMATCH"


class ShapeMismatch(CheckpointError):
    code = "SHAPE_MISMATCH"


class AllMaskedLogitsNonFinite(RNAForgeError, ArithmeticError):
    code = "NONFINITE_LOGITS"
    exit_status = 4


class DivergenceDetected(RNAForgeError, ArithmeticError):
    code = "DIVERGENCE"
    exit_status = 4

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class NotFittedError(RNAForgeError, AttributeError):
    code = "NOT_FITTED"
    exit_status = 2
