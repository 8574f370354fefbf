"""Exception types shared across the package."""


class ObjSlamError(Exception):
    pass


class InvalidInput(ObjSlamError, ValueError):
    pass


class NoVisiblePoints(ObjSlamError):
    pass


class TooFewPoints(ObjSlamError):
    pass


class DegenerateVariance(ObjSlamError):
    """Raised by the t-tests when a sample has (near) zero spread."""


class SchemaError(ObjSlamError, ValueError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        parts = []
        if line is not None:
            parts.append(f"line {line}")
        if field is not None:
            parts.append(f"field '{field}'")
        prefix = (", ".join(parts) + ": ") if parts else ""
        super().__init__(prefix + message)


class MatchFailed(ObjSlamError):
    pass
