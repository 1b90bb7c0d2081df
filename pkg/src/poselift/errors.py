"""Exception types shared across the library and mapped to CLI exit codes."""

from __future__ import annotations


class InputError(ValueError):
    """Invalid argument values: bad shapes, non-finite inputs, out-of-range labels."""


class FormatError(ValueError):
    """Malformed files: bad magic bytes, truncated payloads, unparsable records."""


class NumericalError(RuntimeError):
    """Numerical failure at runtime: divergent training, undefined decode, failed check."""
