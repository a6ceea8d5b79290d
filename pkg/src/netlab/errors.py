"""Exception hierarchy shared by every netlab module."""


class NetlabError(Exception):
    """Base class for all library errors."""


class InvalidKernel(NetlabError):
    """Malformed kernel entries (empty, duplicated, non-positive mass, bad moment order)."""


class NotNormalized(InvalidKernel):
    """Kernel probabilities do not sum to one."""


class NonZeroMean(InvalidKernel):
    """Kernel has a drift."""


class PeriodicOrReducible(InvalidKernel):
    """Kernel support does not generate the whole integer lattice."""


class NoConvergence(NetlabError):
    """A root finder or extrapolation did not reach its tolerance."""


class WindowTooSmall(NetlabError):
    """Probability mass leaked past a truncated transition window."""


class UnreachableState(NetlabError):
    """A site outside the reachable sublattice was queried."""


class OutOfWindow(NetlabError):
    """A space-time site outside the configured window was queried."""


class ExplosionCap(NetlabError):
    """An enumeration exceeded its configured size cap."""


class MarginTooSmall(NetlabError):
    """The light-cone margin leaves no clean core to measure."""


class NonPositiveTime(NetlabError):
    """A continuum oracle was evaluated at t <= 0."""


class DegenerateInput(NetlabError):
    """Data cannot support the requested fit or statistic."""


class ConfigError(NetlabError):
    """Invalid experiment configuration."""


class VersionMismatch(NetlabError):
    """A manifest was produced by a different library version."""
