# src/core/errors.py


class FastKernelsError(Exception):
    """base error; `code` is the stable kebab-case name reported to users"""

    def __init__(self, code: str, message: str = ''):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class RegistryError(FastKernelsError):
    pass


class DiscrepancyError(FastKernelsError):
    pass


class CalibrationError(FastKernelsError):
    pass


class ManifestError(FastKernelsError):
    pass


class ScoringError(FastKernelsError):
    pass


class StatisticsError(FastKernelsError):
    pass


class RoutingError(FastKernelsError):
    pass


class HarnessError(FastKernelsError):
    pass


class ReferenceFailureError(HarnessError):
    """the trusted reference itself failed; fatal to the run"""

    def __init__(self, message: str = ''):
        super().__init__('reference-failure', message)


class RecordsFormatError(FastKernelsError):
    def __init__(self, message: str = ''):
        super().__init__('malformed-records', message)


class ValidationError(FastKernelsError):
    """a domain value violated its construction invariants"""
    pass


class NonFiniteOutputError(HarnessError):
    """a kernel emitted NaN or Inf where integer ids were expected"""

    def __init__(self, message: str = ''):
        super().__init__('non-finite-output', message)
