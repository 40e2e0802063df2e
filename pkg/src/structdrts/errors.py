"""Exception hierarchy shared by every module of the package."""


class DrtsError(Exception):
    """Base class for all package errors."""


class InvalidTree(DrtsError):
    """A tree violates a structural rule required by the operation."""


class LinearizationError(DrtsError):
    """A symbol sequence cannot be turned back into a tree."""


class Unbalanced(LinearizationError):
    """Open/close brackets of a skeleton sequence do not pair up."""


class GroupCountMismatch(LinearizationError):
    """Number of DRU groups differs from the number of (S)DRS nodes."""


class AritySyntax(LinearizationError):
    """Variables in a DRU group do not match the arities of its relations."""


class DependencyError(DrtsError):
    """Malformed dependency tree (bad heads, no or several roots)."""


class CyclicTree(DependencyError):
    pass


class LengthMismatch(DrtsError):
    pass


class ShapeMismatch(DrtsError):
    pass


class EmptyInput(DrtsError):
    pass


class VocabularyMiss(DrtsError):
    pass


class OutOfVocabulary(DrtsError):
    pass


class EmptyCorpus(DrtsError):
    pass


class ConfigError(DrtsError):
    pass


class ParseError(DrtsError):
    """Text input could not be parsed; carries file and line when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class AlignmentError(ParseError):
    """Parallel columns (tokens, lemmas, dependencies, trees) disagree."""
