"""Exception hierarchy shared by every facetlab module."""


class FacetlabError(Exception):
    """Base class for all library errors."""


class InvalidParams(FacetlabError, ValueError):
    pass


class MalformedPath(FacetlabError, ValueError):
    pass


class PointNotOnPath(FacetlabError, ValueError):
    pass


class EndpointMismatch(FacetlabError, ValueError):
    pass


class IndexOutOfRange(FacetlabError, IndexError):
    pass


class NotAHorizontalStep(FacetlabError, ValueError):
    pass


class RayMissesMajorant(FacetlabError, ValueError):
    pass


class EmptyBridgeSpace(FacetlabError, ValueError):
    pass


class BridgeEndpointsInvalid(FacetlabError, ValueError):
    pass


class EmptyIntersection(FacetlabError, ValueError):
    pass


class DegenerateChord(FacetlabError, ValueError):
    pass


class NotConnected(FacetlabError, ValueError):
    pass


class EmptyImage(FacetlabError, ValueError):
    pass


class UnknownStatistic(FacetlabError, KeyError):
    pass


class InsufficientData(FacetlabError, ValueError):
    pass


class NonPositiveMean(FacetlabError, ValueError):
    pass


class ConfigError(FacetlabError, ValueError):
    """Bad or unknown configuration keys. Maps to CLI exit code 2."""


class BudgetExceeded(FacetlabError, RuntimeError):
    """An enumeration or sampling budget ran out. Maps to CLI exit code 3."""


class AcceptanceBudgetExceeded(BudgetExceeded):
    pass


class AuditFailure(FacetlabError, AssertionError):
    """A runtime invariant audit failed. Maps to CLI exit code 4."""
