# utils.py
# Utility functions shared by the command-line front end and the query service

import hashlib

from .errors import DomainError


def file_sha256(path):
    """Hex SHA-256 digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def parse_point(text):
    """
    Parses a comma-separated point such as "0.1,0.25".

    Returns:
        tuple: The coordinates as floats.

    Raises:
        DomainError: Empty text or a coordinate that is not a number.
    """
    if text is None or not str(text).strip():
        raise DomainError("A point is required, e.g. 0.5,0.5")
    try:
        return tuple(float(part) for part in str(text).split(","))
    except ValueError:
        raise DomainError(f"Cannot parse point {text!r}; expected comma-separated numbers")


def parse_resolutions(text):
    """Parses "5,10,25" into a list of positive integers."""
    try:
        values = [int(part) for part in str(text).split(",") if part.strip()]
    except ValueError:
        raise DomainError(f"Cannot parse resolutions {text!r}; expected comma-separated integers")
    if not values or any(v < 1 for v in values):
        raise DomainError(f"Resolutions must be positive integers, got {text!r}")
    return values
