class D2DError(Exception):
    code = "error"


class InvalidParameterError(D2DError, ValueError):
    code = "invalid-parameter"


class InvalidStateError(D2DError, ValueError):
    code = "invalid-state"


class InfeasibleError(D2DError):
    code = "infeasible"


class TooLargeError(D2DError):
    code = "too-large"
