"""Exception types raised across the package."""


class GraspBOError(Exception):
    """Base class for package errors."""


class DegenerateGradient(GraspBOError):
    pass


class DegeneratePose(GraspBOError):
    pass


class JointLimit(GraspBOError):
    pass


class EmptyContacts(GraspBOError):
    pass


class NoContacts(GraspBOError):
    pass


class Degenerate(GraspBOError):
    """Point set is affinely dependent (no full-dimensional hull)."""


class OriginOutside(GraspBOError):
    pass


class SingularKernel(GraspBOError):
    pass


class AllZero(GraspBOError):
    pass


class ConfigError(GraspBOError):
    """Invalid campaign configuration; message names the offending field."""
