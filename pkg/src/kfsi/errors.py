"""Exception types shared by the kfsi modules."""


class KfsiError(Exception):
    """Base class for all library errors."""


class GeometryError(KfsiError):
    """Degenerate surface data or a non-injective domain map."""


class DomainDegenerationError(GeometryError):
    """The displacement reached the tubular radius.

    ``tau`` carries the degeneracy monitor, ``inf`` when the bound is hit.
    """

    def __init__(self, message, tau=float("inf")):
        super().__init__(message)
        self.tau = tau


class ConfigurationError(KfsiError):
    """Invalid parameters, basis or quadrature choices."""


class CertificationFailure(KfsiError):
    """A stress law violated one of the structure conditions."""

    def __init__(self, message, witnesses=None):
        super().__init__(message)
        self.witnesses = witnesses or []


class SolverError(KfsiError):
    """Time-step or fixed-point failure carrying diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
