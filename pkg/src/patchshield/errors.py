"""Exception types shared across the package.

Plain ``ValueError`` is used for bad arguments; the classes below cover
failure modes that callers may want to catch separately.
"""


class PatchShieldError(Exception):
    """Base class for package-specific errors."""


class GeometryMismatch(PatchShieldError):
    """An image, mask, or threat model does not fit the declared geometry."""


class ConstructionFailure(PatchShieldError):
    """A generated artifact failed its mandatory self-verification."""


class ResourceLimit(PatchShieldError):
    """An enumeration would exceed its configured cap."""


class BackendUnavailable(PatchShieldError):
    """A remote classifier backend could not be reached or answered badly."""


class MalformedImage(PatchShieldError):
    """Image bytes could not be decoded into a valid image."""
