"""Exception types shared by the pjflow modules."""


class PJFlowError(Exception):
    """Base class for every error raised by the library"""


class InvalidInputError(PJFlowError):
    """Non-finite samples, decay violations, bad parameters"""


class MonotonicityError(PJFlowError):
    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (first offending index {index})")
        self.index = index


class DomainMismatchError(PJFlowError):
    """Range of an inner map leaves the domain of the outer function"""


class UnsupportedDomainError(PJFlowError):
    pass


class BlowUpError(PJFlowError):
    def __init__(self, message: str, blowup_time: float):
        super().__init__(f"{message} (T* = {blowup_time:.17g})")
        self.blowup_time = blowup_time


class NoBlowUpError(PJFlowError):
    pass


class OutOfImageError(PJFlowError):
    """Function lies outside the image of the isometry (f <= -r)"""


class OffSphereError(PJFlowError):
    def __init__(self, norm: float, radius: float):
        super().__init__(f"L^r norm {norm:.17g} differs from sphere radius {radius:.17g}")
        self.norm = norm
        self.radius = radius


class TangencyError(PJFlowError):
    pass


class BoundaryError(PJFlowError):
    """Sphere trajectory left the open image set {f > 0}"""

    def __init__(self, message: str, hitting_time: float):
        super().__init__(f"{message} (hitting time ~ {hitting_time:.6g})")
        self.hitting_time = hitting_time


class InsufficientDataError(PJFlowError):
    pass


class ShockError(PJFlowError):
    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (crossing time {time:.6g})")
        self.time = time


class ConfigError(PJFlowError):
    pass
