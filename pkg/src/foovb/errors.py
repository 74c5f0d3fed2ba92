"""Exception hierarchy shared by the foovb modules."""


class FooVBError(Exception):
    pass


class ShapeMismatch(FooVBError, ValueError):
    pass


# matequ
class NonSymmetric(FooVBError, ValueError):
    pass


class IndefiniteMatrix(FooVBError, ValueError):
    pass


class ConvergenceFailure(FooVBError, ArithmeticError):
    pass


class IllConditioned(FooVBError, ArithmeticError):
    pass


class GsvdFailure(FooVBError, ArithmeticError):
    pass


# posterior / trainer
class EmptyBatch(FooVBError, ValueError):
    pass


class NonFinite(FooVBError, ArithmeticError):
    pass


class SingularPrior(FooVBError, ArithmeticError):
    pass


class WrongVariant(FooVBError, ValueError):
    pass


class DimensionTooLarge(FooVBError, ValueError):
    pass


# model / stream
class EmptyDataset(FooVBError, ValueError):
    pass


class EmptyTestSet(EmptyDataset):
    pass


class BadMagic(FooVBError, ValueError):
    pass


class TruncatedFile(FooVBError, ValueError):
    pass


class CountMismatch(FooVBError, ValueError):
    pass


class ShrinkNotAllowed(FooVBError, ValueError):
    pass


class ConfigError(FooVBError, ValueError):
    """Bad run configuration; carries the offending file/line when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line
