class AfdxNocError(Exception):
    """Base class for all afdxnoc errors."""


class OversizeMessage(AfdxNocError):
    pass


class MalformedFrame(AfdxNocError):
    pass


class UnknownVl(AfdxNocError):
    pass


class InvalidTopology(AfdxNocError):
    pass


class PastCycle(AfdxNocError):
    pass
