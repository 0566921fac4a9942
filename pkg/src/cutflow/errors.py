"""Exception types shared across the toolkit."""


class CutflowError(Exception):
    """Base class for all errors raised by cutflow."""


class ExprError(CutflowError):
    pass


class ParseError(ExprError):
    pass


class UnboundSymbol(ExprError):
    def __init__(self, name: str):
        super().__init__(f"unbound symbol {name!r}")
        self.name = name


class DivisionByZero(ExprError):
    pass


class NegativeExtent(ExprError):
    pass


class RankMismatch(ExprError):
    pass


class IRError(CutflowError):
    pass


class DuplicateName(IRError):
    pass


class UnknownContainer(IRError):
    pass


class UnknownElement(IRError):
    pass


class MalformedDocument(IRError):
    pass


class UnknownVersion(MalformedDocument):
    pass


class InputShapeMismatch(CutflowError):
    pass


class SiteStale(CutflowError):
    pass


class TransformationInapplicable(CutflowError):
    pass


class EmptyChangeSet(CutflowError):
    pass


class EmptyInterval(CutflowError):
    pass
