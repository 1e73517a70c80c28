"""Exception hierarchy shared by every stage of the pipeline."""


class QCEError(Exception):
    """Base class for all library errors."""


class InvalidArgument(QCEError, ValueError):
    pass


class GeometryError(QCEError):
    pass


class OutsideDomain(GeometryError):
    pass


class DegenerateCell(GeometryError):
    pass


class InvalidLayout(GeometryError):
    pass


class GridMismatch(QCEError):
    pass


class UnderResolvedInclusion(QCEError):
    pass


class DuplicateNode(QCEError):
    pass


class CoverageError(QCEError):
    """The moment matrix at an evaluation point is singular or ill-conditioned."""

    def __init__(self, message, point=None, cell=None):
        super().__init__(message)
        self.point = point
        self.cell = cell


class IsolatedNode(QCEError):
    pass


class SingularSystem(QCEError):
    def __init__(self, message, null_dofs=None):
        super().__init__(message)
        self.null_dofs = null_dofs
