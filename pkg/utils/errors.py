"""
Error types shared by the geometry, lattice and experiment code
"""


class ShrinkingTargetError(Exception):
    """Base class, the command line maps every subclass to exit code 2"""


class DomainError(ShrinkingTargetError, ValueError):
    pass


class RangeError(ShrinkingTargetError, OverflowError):
    pass


class CorruptionError(ShrinkingTargetError, RuntimeError):
    pass


class DependencyError(ShrinkingTargetError, RuntimeError):
    pass


class InputError(ShrinkingTargetError, ValueError):
    pass
